"""Initial grasp synthesis from a rendered frame: keypoints, yaw, 4-DoF pose.

No learning is involved; everything derives from mask shape and depth. The
output pose has exactly zero roll and pitch with a vertical approach, and the
pre-grasp pose stands 0.15 m back along the approach direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (CameraIntrinsics, DepthImage, EmptyMaskError,
                       HandEyeCalibration, Mask, Pose, camera_to_world,
                       mask_centroid, mask_outline, min_area_rect,
                       pixel_to_camera, quat_from_yaw)
from .scene import Gripper, SceneFrame

PRE_GRASP_OFFSET_M = 0.15
GRASP_DEPTH_OFFSET_M = 0.015
CALIPER_REJECT_FACTOR = 1.5
MIN_VALID_KEYPOINT_PIXELS = 5

KEYPOINT_KINDS = ("centroid", "bbox-center-nearest", "outline-1", "outline-2", "outline-3")


class DegenerateMaskError(ValueError):
    """Mask has fewer than five pixels with valid depth."""


@dataclass(frozen=True)
class KeyPoint:
    pixel: tuple[int, int]
    kind: str
    confidence: float


@dataclass(frozen=True, eq=False)
class InitialGrasp:
    """4-DoF grasp: world position, yaw about the plane normal, vertical approach."""

    position: np.ndarray
    yaw: float
    pre_grasp: Pose
    approach: np.ndarray  # unit vector, (0, 0, -1)

    def pose(self) -> Pose:
        return Pose(self.position, quat_from_yaw(self.yaw))


def _nearest_mask_pixel(mask: Mask, point_uv: tuple[float, float]) -> tuple[int, int]:
    px = mask.pixels().astype(float)
    d2 = (px[:, 0] - point_uv[0]) ** 2 + (px[:, 1] - point_uv[1]) ** 2
    u, v = px[int(np.argmin(d2))]
    return int(u), int(v)


def select_key_points(mask: Mask, depth: DepthImage) -> list[KeyPoint]:
    """Pick the five grasp candidate pixels for one object.

    One pixel nearest the center of mass, one nearest the bounding-box center,
    and three spread at thirds along the boundary trace. Confidence is the
    depth-validity flag times the normalized interior distance transform, so
    pixels deep inside the silhouette with a usable depth reading score
    highest.
    """
    valid = mask.bits & (depth.data > 0)
    if int(valid.sum()) < MIN_VALID_KEYPOINT_PIXELS:
        raise DegenerateMaskError(
            f"mask has {int(valid.sum())} valid-depth pixels, need {MIN_VALID_KEYPOINT_PIXELS}")

    dt = ndimage.distance_transform_edt(mask.bits)
    dt_max = float(dt.max())

    u0, v0, u1, v1 = mask.bbox
    bbox_center = ((u0 + u1) / 2.0, (v0 + v1) / 2.0)
    outline = mask_outline(mask)
    n = len(outline)
    picks = [
        (_nearest_mask_pixel(mask, mask_centroid(mask)), KEYPOINT_KINDS[0]),
        (_nearest_mask_pixel(mask, bbox_center), KEYPOINT_KINDS[1]),
        (outline[0], KEYPOINT_KINDS[2]),
        (outline[n // 3], KEYPOINT_KINDS[3]),
        (outline[(2 * n) // 3], KEYPOINT_KINDS[4]),
    ]
    points = []
    for (u, v), kind in picks:
        validity = 1.0 if depth.at(u, v) > 0 else 0.0
        conf = validity * float(dt[v, u]) / dt_max
        points.append(KeyPoint((u, v), kind, conf))
    return points


def compute_yaw(mask: Mask) -> float:
    """Gripper yaw in the image plane: the minimum-area rectangle's short-edge
    direction, so closing crosses the narrow dimension. Squares tie-break to
    the rectangle's canonical angle."""
    rect = min_area_rect(mask)
    a, b = rect.half_extents
    if abs(a - b) <= 1e-9 * max(a, b, 1.0):
        return rect.angle
    return (rect.angle + math.pi / 2.0) % math.pi


def _image_dir_to_world_yaw(theta_img: float, camera_pose: Pose) -> float:
    d_cam = np.array([math.cos(theta_img), math.sin(theta_img), 0.0])
    d_world = camera_pose.rotate(d_cam)
    return math.atan2(d_world[1], d_world[0]) % math.pi


def _mask_caliper_width_m(mask: Mask, theta_img: float, depth_m: float,
                          k: CameraIntrinsics) -> float:
    """Extent of the mask along an image direction, converted to meters at depth."""
    px = mask.pixels().astype(float)
    proj = px[:, 0] * math.cos(theta_img) + px[:, 1] * math.sin(theta_img)
    extent_px = float(proj.max() - proj.min()) + 1.0  # include pixel footprint
    return extent_px * depth_m / k.fx


def initial_grasp(frame: SceneFrame, mask: Mask, cal: HandEyeCalibration,
                  ee_pose: Pose, gripper: Gripper | None = None) -> InitialGrasp | None:
    """Back-project the best keypoint into a 4-DoF grasp, or None when the
    object offers no valid depth or is far too wide for the jaws."""
    gripper = gripper or Gripper()
    try:
        keypoints = select_key_points(mask, frame.depth)
    except (DegenerateMaskError, EmptyMaskError):
        return None

    ranked = sorted(enumerate(keypoints), key=lambda ik: (-ik[1].confidence, ik[0]))
    best = ranked[0][1]
    if best.confidence <= 0.0:
        return None

    yaw_img = compute_yaw(mask)
    u, v = best.pixel
    d = frame.depth.at(u, v)
    if _mask_caliper_width_m(mask, yaw_img, d, frame.intrinsics) \
            > CALIPER_REJECT_FACTOR * gripper.max_width:
        return None

    p_cam = pixel_to_camera(u, v, d, frame.intrinsics)
    p_world = camera_to_world(p_cam, cal, ee_pose)
    yaw_world = _image_dir_to_world_yaw(yaw_img, frame.camera_pose)

    position = p_world.copy()
    position[2] = max(position[2] - GRASP_DEPTH_OFFSET_M, 0.0)
    approach = np.array([0.0, 0.0, -1.0])
    pre_position = position - PRE_GRASP_OFFSET_M * approach
    pre = Pose(pre_position, quat_from_yaw(yaw_world))
    return InitialGrasp(position=position, yaw=yaw_world, pre_grasp=pre,
                        approach=approach)
