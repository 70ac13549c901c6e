"""Procedural tabletop scenes: analytic primitives, depth rendering, grasp oracle.

Objects are closed-form solids resting on the plane z = 0, so depth images,
masks, and grasp outcomes are exactly computable. ``size`` is a 3-vector of
full extents whose meaning varies by category:

    box / bar       (dx, dy, dz) edge lengths, base centered at the pose
    cylinder        (d, d, h) diameter and height
    sphere          (d, d, d) diameter, resting on the plane
    plate           (outer diameter, inner diameter, thickness) flat annulus
    bowl            (outer diameter, inner diameter, height) hemispherical
                    shell opening upward, rim at z = height = outer radius
    ragdoll-blob    (2a, 2b, 2c) ellipsoid axes, resting on the plane
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, DepthImage, Mask, Pose, quat_slerp

CATEGORIES = ("box", "cylinder", "sphere", "plate", "bowl", "bar", "ragdoll-blob")

SIZE_MIN_M = 0.015
SIZE_MAX_M = 0.25

DETECTION_HEIGHT_M = 0.45
SAMPLE_PERIOD_S = 1.0 / 30.0

SCENE_FILE_VERSION = 1

DEFAULT_INTRINSICS = CameraIntrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5,
                                      width=640, height=480)
# 180 degree rotation about x: camera +z looks along world -z (straight down)
CAMERA_DOWN_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


class SceneError(ValueError):
    """Invalid scene construction input."""


class PlacementError(SceneError):
    """Rejection sampling could not place all objects without overlap."""


class WorkspaceViolationError(SceneError):
    """A trajectory waypoint leaves the workspace bounds."""


class EmptyLogError(ValueError):
    """Success-rate computation needs at least one logged attempt."""


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned plan-view bounds on the table plane."""

    x_min: float = -0.20
    x_max: float = 0.20
    y_min: float = -0.15
    y_max: float = 0.15

    def contains_xy(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (self.x_min + margin <= x <= self.x_max - margin
                and self.y_min + margin <= y <= self.y_max - margin)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2.0,
                         (self.y_min + self.y_max) / 2.0, 0.0])


DEFAULT_WORKSPACE = Workspace()


@dataclass(frozen=True)
class Gripper:
    """Parallel-jaw gripper dimensions; defaults model a small two-finger unit."""

    max_width: float = 0.085
    finger_length: float = 0.05
    finger_thickness: float = 0.01

    def __post_init__(self):
        if min(self.max_width, self.finger_length, self.finger_thickness) <= 0:
            raise SceneError("gripper dimensions must be positive")


@dataclass(frozen=True, eq=False)
class SceneObject:
    id: int
    category: str
    size: np.ndarray
    pose: Pose
    graspable_width: float = field(init=False)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SceneError(f"unknown category {self.category!r}")
        size = np.asarray(self.size, dtype=float).reshape(3).copy()
        if size.min() < SIZE_MIN_M - 1e-12 or size.max() > SIZE_MAX_M + 1e-12:
            raise SceneError(f"size components must lie in [{SIZE_MIN_M}, {SIZE_MAX_M}] m")
        if abs(self.pose.position[2]) > 1e-9:
            raise SceneError("object must rest on the plane z=0")
        roll, pitch, _ = self.pose.rpy
        if abs(roll) > 1e-9 or abs(pitch) > 1e-9:
            raise SceneError("object pose may only rotate about the plane normal")
        size.setflags(write=False)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "graspable_width", _min_horizontal_caliper(self.category, size))

    @property
    def footprint_radius(self) -> float:
        dx, dy, _ = self.size
        if self.category in ("box", "bar"):
            return math.hypot(dx, dy) / 2.0
        return dx / 2.0

    @property
    def top_height(self) -> float:
        return float(self.size[2])


def _min_horizontal_caliper(category: str, size: np.ndarray) -> float:
    dx, dy, _ = size
    if category in ("box", "bar", "ragdoll-blob"):
        return float(min(dx, dy))
    # rotationally symmetric solids: the annular hole does not reduce the caliper
    return float(dx)


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple[SceneObject, ...]
    seed: int
    workspace: Workspace = DEFAULT_WORKSPACE

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def object_by_id(self, oid: int) -> SceneObject | None:
        for obj in self.objects:
            if obj.id == oid:
                return obj
        return None


@dataclass(frozen=True, eq=False)
class SceneFrame:
    depth: DepthImage
    masks: tuple[tuple[int, Mask], ...]
    intrinsics: CameraIntrinsics
    camera_pose: Pose

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))

    def mask_for(self, oid: int) -> Mask | None:
        for mid, mask in self.masks:
            if mid == oid:
                return mask
        return None


# ---------------------------------------------------------------------------
# solid geometry: point membership and vertical top surface
# ---------------------------------------------------------------------------

def _to_object_frame(obj: SceneObject, pts: np.ndarray) -> np.ndarray:
    return obj.pose.inverse().apply(pts)


def contains(obj: SceneObject, pts) -> np.ndarray:
    """Inclusive membership test for world points against the solid."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    p = _to_object_frame(obj, pts)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    dx, dy, dz = obj.size
    if obj.category in ("box", "bar"):
        return (np.abs(x) <= dx / 2) & (np.abs(y) <= dy / 2) & (z >= 0) & (z <= dz)
    if obj.category == "cylinder":
        r = dx / 2
        return (x * x + y * y <= r * r) & (z >= 0) & (z <= dz)
    if obj.category == "sphere":
        r = dx / 2
        return x * x + y * y + (z - r) ** 2 <= r * r
    if obj.category == "plate":
        r_out, r_in = dx / 2, dy / 2
        rho2 = x * x + y * y
        return (rho2 >= r_in * r_in) & (rho2 <= r_out * r_out) & (z >= 0) & (z <= dz)
    if obj.category == "bowl":
        r_out, r_in = dx / 2, dy / 2
        d2 = x * x + y * y + (z - r_out) ** 2
        return (d2 >= r_in * r_in) & (d2 <= r_out * r_out) & (z <= r_out) & (z >= 0)
    if obj.category == "ragdoll-blob":
        a, b, c = dx / 2, dy / 2, dz / 2
        return (x / a) ** 2 + (y / b) ** 2 + ((z - c) / c) ** 2 <= 1.0
    raise SceneError(obj.category)


def top_surface_height(obj: SceneObject, xy) -> np.ndarray:
    """Z of the highest material in each vertical column; NaN where the column misses."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    pts = np.column_stack([xy, np.zeros(len(xy))])
    p = _to_object_frame(obj, pts)
    x, y = p[:, 0], p[:, 1]
    dx, dy, dz = obj.size
    out = np.full(len(xy), np.nan)
    if obj.category in ("box", "bar"):
        hit = (np.abs(x) <= dx / 2) & (np.abs(y) <= dy / 2)
        out[hit] = dz
    elif obj.category == "cylinder":
        hit = x * x + y * y <= (dx / 2) ** 2
        out[hit] = dz
    elif obj.category == "sphere":
        r = dx / 2
        rho2 = x * x + y * y
        hit = rho2 <= r * r
        out[hit] = r + np.sqrt(r * r - rho2[hit])
    elif obj.category == "plate":
        r_out, r_in = dx / 2, dy / 2
        rho2 = x * x + y * y
        hit = (rho2 >= r_in * r_in) & (rho2 <= r_out * r_out)
        out[hit] = dz
    elif obj.category == "bowl":
        r_out, r_in = dx / 2, dy / 2
        rho2 = x * x + y * y
        rim = (rho2 >= r_in * r_in) & (rho2 <= r_out * r_out)
        out[rim] = r_out
        inner = rho2 < r_in * r_in
        out[inner] = r_out - np.sqrt(r_in * r_in - rho2[inner])
    elif obj.category == "ragdoll-blob":
        a, b, c = dx / 2, dy / 2, dz / 2
        q = 1.0 - (x / a) ** 2 - (y / b) ** 2
        hit = q >= 0
        out[hit] = c + c * np.sqrt(q[hit])
    else:
        raise SceneError(obj.category)
    return out


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _sample_size(rng: np.random.Generator, category: str) -> np.ndarray:
    u = rng.uniform
    if category == "box":
        dx = u(0.025, 0.065)
        dy = float(np.clip(dx * u(0.6, 1.4), 0.025, 0.065))
        return np.array([dx, dy, u(0.02, 0.06)])
    if category == "cylinder":
        d = u(0.02, 0.07)
        return np.array([d, d, u(0.03, 0.12)])
    if category == "sphere":
        d = u(0.03, 0.07)
        return np.array([d, d, d])
    if category == "plate":
        d = u(0.104, 0.124)
        return np.array([d, d * u(0.65, 0.8), u(0.015, 0.018)])
    if category == "bowl":
        d = u(0.09, 0.14)
        t = u(0.006, 0.010)
        return np.array([d, d - 2 * t, d / 2.0])
    if category == "bar":
        return np.array([u(0.10, 0.18), u(0.016, 0.025), u(0.015, 0.025)])
    if category == "ragdoll-blob":
        dx = u(0.07, 0.11)
        return np.array([dx, dx * u(0.5, 0.65), u(0.04, 0.08)])
    raise SceneError(category)


def generate_scene(seed: int, n_objects: int, categories=None,
                   workspace: Workspace = DEFAULT_WORKSPACE,
                   max_rejections: int = 1000) -> Scene:
    """Deterministically place non-overlapping objects inside the workspace.

    Poses are rejection-sampled in plan view using footprint circles; exceeding
    ``max_rejections`` total rejections raises PlacementError.
    """
    if n_objects < 1:
        raise SceneError("need at least one object")
    cats = tuple(sorted(categories)) if categories else CATEGORIES
    for c in cats:
        if c not in CATEGORIES:
            raise SceneError(f"unknown category {c!r}")
    rng = np.random.default_rng(seed)
    objects: list[SceneObject] = []
    rejections = 0
    for oid in range(n_objects):
        category = str(cats[rng.integers(len(cats))])
        size = _sample_size(rng, category)
        probe = SceneObject(oid, category, size, Pose.identity())
        radius = probe.footprint_radius
        while True:
            x = rng.uniform(workspace.x_min + radius, workspace.x_max - radius)
            y = rng.uniform(workspace.y_min + radius, workspace.y_max - radius)
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            if workspace.x_min + radius > workspace.x_max - radius or \
               workspace.y_min + radius > workspace.y_max - radius:
                raise PlacementError("object footprint exceeds the workspace")
            ok = all(math.hypot(x - o.pose.position[0], y - o.pose.position[1])
                     >= radius + o.footprint_radius for o in objects)
            if ok:
                objects.append(SceneObject(oid, category, size,
                                           Pose.from_yaw([x, y, 0.0], yaw)))
                break
            rejections += 1
            if rejections >= max_rejections:
                raise PlacementError(
                    f"gave up after {rejections} rejections placing object {oid}")
    return Scene(tuple(objects), seed=seed, workspace=workspace)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def default_camera_pose(workspace: Workspace = DEFAULT_WORKSPACE,
                        height: float = DETECTION_HEIGHT_M) -> Pose:
    pos = workspace.center + np.array([0.0, 0.0, height])
    return Pose(pos, CAMERA_DOWN_QUAT)


def _smallest_positive(*candidates: np.ndarray) -> np.ndarray:
    s = np.full(candidates[0].shape, np.inf)
    for c in candidates:
        valid = np.isfinite(c) & (c > 1e-9)
        s = np.where(valid & (c < s), c, s)
    return s


def _quadratic_roots(a, b, c):
    """Both roots of a*s^2 + b*s + c = 0 per element; NaN where there is no real root."""
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        r0 = (-b - sq) / (2.0 * a)
        r1 = (-b + sq) / (2.0 * a)
    return r0, r1


def _ray_depths(obj: SceneObject, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """First-hit ray parameter per pixel. The parameter equals camera z-depth
    because directions are scaled to unit camera-z."""
    inv = obj.pose.inverse()
    o = inv.apply(origin)
    d = inv.rotate(dirs)
    ox, oy, oz = o
    dxs, dys, dzs = d[..., 0], d[..., 1], d[..., 2]
    dx, dy, dz = obj.size

    def z_at(s):
        return oz + s * dzs

    def rho2_at(s):
        px = ox + s * dxs
        py = oy + s * dys
        return px * px + py * py

    def plane_hit(z_plane, r2_lo, r2_hi):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (z_plane - oz) / dzs
        r2 = rho2_at(s)
        return np.where((r2 >= r2_lo) & (r2 <= r2_hi), s, np.nan)

    def side_hit(radius, z_lo, z_hi, which):
        a = dxs * dxs + dys * dys
        b = 2.0 * (ox * dxs + oy * dys)
        c = ox * ox + oy * oy - radius * radius
        r0, r1 = _quadratic_roots(a, b, c)
        s = r0 if which == 0 else r1
        z = z_at(s)
        return np.where((z >= z_lo) & (z <= z_hi), s, np.nan)

    def sphere_hit(center_z, radius, z_max, which):
        czo = oz - center_z
        a = dxs * dxs + dys * dys + dzs * dzs
        b = 2.0 * (ox * dxs + oy * dys + czo * dzs)
        c = ox * ox + oy * oy + czo * czo - radius * radius
        r0, r1 = _quadratic_roots(a, b, c)
        s = r0 if which == 0 else r1
        z = z_at(s)
        return np.where((z <= z_max) & (z >= -1e-12), s, np.nan)

    if obj.category in ("box", "bar"):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-dx / 2 - ox) / dxs
            t2 = (dx / 2 - ox) / dxs
            t3 = (-dy / 2 - oy) / dys
            t4 = (dy / 2 - oy) / dys
            t5 = (0.0 - oz) / dzs
            t6 = (dz - oz) / dzs
        enter = np.maximum(np.maximum(np.minimum(t1, t2), np.minimum(t3, t4)),
                           np.minimum(t5, t6))
        exit_ = np.minimum(np.minimum(np.maximum(t1, t2), np.maximum(t3, t4)),
                           np.maximum(t5, t6))
        s = np.where((enter <= exit_) & (enter > 1e-9), enter, np.nan)
        return _smallest_positive(s)

    if obj.category == "cylinder":
        r = dx / 2
        return _smallest_positive(side_hit(r, 0.0, dz, 0),
                                  plane_hit(dz, 0.0, r * r))

    if obj.category == "sphere":
        r = dx / 2
        return _smallest_positive(sphere_hit(r, r, 2 * r + 1e-9, 0))

    if obj.category == "plate":
        r_out, r_in = dx / 2, dy / 2
        return _smallest_positive(
            plane_hit(dz, r_in * r_in, r_out * r_out),
            side_hit(r_out, 0.0, dz, 0),
            side_hit(r_in, 0.0, dz, 0),
            side_hit(r_in, 0.0, dz, 1),
        )

    if obj.category == "bowl":
        r_out, r_in = dx / 2, dy / 2
        return _smallest_positive(
            plane_hit(r_out, r_in * r_in, r_out * r_out),  # rim annulus
            sphere_hit(r_out, r_out, r_out, 0),
            sphere_hit(r_out, r_in, r_out, 0),
            sphere_hit(r_out, r_in, r_out, 1),
        )

    if obj.category == "ragdoll-blob":
        a_, b_, c_ = dx / 2, dy / 2, dz / 2
        sx, sy, sz = ox / a_, oy / b_, (oz - c_) / c_
        vx, vy, vz = dxs / a_, dys / b_, dzs / c_
        a = vx * vx + vy * vy + vz * vz
        b = 2.0 * (sx * vx + sy * vy + sz * vz)
        c = sx * sx + sy * sy + sz * sz - 1.0
        r0, _ = _quadratic_roots(a, b, c)
        z = z_at(r0)
        return _smallest_positive(np.where(z >= -1e-12, r0, np.nan))

    raise SceneError(obj.category)


def render(scene: Scene, camera_pose: Pose | None = None,
           intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS) -> SceneFrame:
    """Ray-cast the scene into a depth image plus per-object nearest-hit masks."""
    if camera_pose is None:
        camera_pose = default_camera_pose(scene.workspace)
    k = intrinsics
    forward = camera_pose.rotate(np.array([0.0, 0.0, 1.0]))
    if forward[2] >= -1e-9:
        raise SceneError("camera must look toward the plane")

    us = (np.arange(k.width) - k.cx) / k.fx
    vs = (np.arange(k.height) - k.cy) / k.fy
    uu, vv = np.meshgrid(us, vs)
    dirs_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    dirs_world = camera_pose.rotate(dirs_cam.reshape(-1, 3)).reshape(k.height, k.width, 3)
    origin = camera_pose.position

    with np.errstate(divide="ignore", invalid="ignore"):
        s_plane = (0.0 - origin[2]) / dirs_world[..., 2]
    s_plane = np.where(np.isfinite(s_plane) & (s_plane > 0), s_plane, np.inf)

    depth_stack = [s_plane]
    for obj in scene.objects:
        s_obj = np.full((k.height, k.width), np.inf)
        win = _pixel_window(obj, camera_pose, k)
        if win is not None:
            v0, v1, u0, u1 = win
            s_obj[v0:v1, u0:u1] = _ray_depths(obj, origin, dirs_world[v0:v1, u0:u1])
        depth_stack.append(s_obj)

    stack = np.stack(depth_stack)  # plane first, then objects in order
    winner = np.argmin(stack, axis=0)
    depth = np.min(stack, axis=0)
    depth = np.where(np.isfinite(depth), depth, 0.0)

    masks = []
    for i, obj in enumerate(scene.objects):
        bits = (winner == i + 1) & (depth > 0)
        if bits.any():
            masks.append((obj.id, Mask(k.width, k.height, bits)))
    return SceneFrame(DepthImage(k.width, k.height, depth), tuple(masks),
                      k, camera_pose)


def _pixel_window(obj: SceneObject, camera_pose: Pose,
                  k: CameraIntrinsics) -> tuple[int, int, int, int] | None:
    """Conservative pixel rectangle covering the object's bounding sphere."""
    center = obj.pose.position + np.array([0.0, 0.0, obj.size[2] / 2.0])
    radius = float(np.linalg.norm(obj.size)) / 2.0
    p_cam = camera_pose.inverse().apply(center)
    z_near = p_cam[2] - radius
    if z_near <= 1e-6:
        return 0, k.height, 0, k.width
    u = k.cx + p_cam[0] / p_cam[2] * k.fx
    v = k.cy + p_cam[1] / p_cam[2] * k.fy
    ru = radius / z_near * k.fx + 3
    rv = radius / z_near * k.fy + 3
    u0, u1 = int(max(0, u - ru)), int(min(k.width, u + ru + 1))
    v0, v1 = int(max(0, v - rv)), int(min(k.height, v + rv + 1))
    if u0 >= u1 or v0 >= v1:
        return None
    return v0, v1, u0, u1


# ---------------------------------------------------------------------------
# execution and evaluation
# ---------------------------------------------------------------------------

def execute(plan, speed: float, workspace: Workspace = DEFAULT_WORKSPACE,
            sample_period: float = SAMPLE_PERIOD_S) -> list[tuple[float, Pose]]:
    """Constant-speed linear interpolation through the plan's waypoints.

    ``plan`` is anything with a ``waypoints`` pose sequence (or a bare list).
    Returns (timestamp, pose) samples at the fixed period plus the exact
    endpoint.
    """
    waypoints = list(getattr(plan, "waypoints", plan))
    if not waypoints:
        raise SceneError("plan has no waypoints")
    if speed <= 0:
        raise SceneError("speed must be positive")
    for wp in waypoints:
        x, y, z = wp.position
        if not workspace.contains_xy(x, y) or z < -1e-9:
            raise WorkspaceViolationError(f"waypoint {wp.position} outside workspace")

    if len(waypoints) == 1:
        return [(0.0, waypoints[0])]

    seg_len = [float(np.linalg.norm(b.position - a.position))
               for a, b in zip(waypoints[:-1], waypoints[1:])]
    total = sum(seg_len)
    duration = total / speed
    trace: list[tuple[float, Pose]] = []
    t = 0.0
    while t < duration:
        trace.append((t, _pose_along(waypoints, seg_len, t * speed)))
        t += sample_period
    trace.append((duration, waypoints[-1]))
    return trace


def _pose_along(waypoints: list[Pose], seg_len: list[float], dist: float) -> Pose:
    acc = 0.0
    for a, b, length in zip(waypoints[:-1], waypoints[1:], seg_len):
        if dist <= acc + length:
            if length < 1e-12:
                return b
            f = min(max((dist - acc) / length, 0.0), 1.0)
            pos = a.position + f * (b.position - a.position)
            q = quat_slerp(a.orientation, b.orientation, f)
            return Pose(pos, q)
        acc += length
    return waypoints[-1]


def _closing_axis(pose: Pose) -> np.ndarray:
    return pose.rotate(np.array([1.0, 0.0, 0.0]))


def evaluate_grasp(scene: Scene, plan, gripper: Gripper,
                   target_id: int | None = None) -> str:
    """Geometric grasp oracle: one of {'success', 'miss', 'collision', 'too-wide'}.

    Success requires a clear approach segment, finger contact on both sides of
    the grasp point with the pinched span inside the jaw opening, fingertip
    reach to the material, and, for annular categories, a closing axis that
    pinches the wall radially instead of spanning the rim.
    """
    grasp: Pose = plan.grasp
    pre: Pose = plan.pre_grasp
    target = scene.object_by_id(target_id) if target_id is not None else None
    if target is None:
        target = _nearest_object(scene, grasp.position)
        if target is None:
            return "miss"

    # (a) pre-grasp to grasp segment must not sweep through other objects
    seg = grasp.position - pre.position
    seg_len = float(np.linalg.norm(seg))
    n = max(2, int(seg_len / 0.002) + 1)
    pts = pre.position + np.linspace(0.0, 1.0, n)[:, None] * seg
    for obj in scene.objects:
        if obj.id == target.id:
            continue
        if contains(obj, pts).any():
            return "collision"

    # (b) closing profile along the jaw axis through the grasp point,
    # sampled at 0.1 mm so thin walls register on both sides
    axis = _closing_axis(grasp)
    half = gripper.max_width / 2.0
    ts = np.linspace(-half, half, 851)
    line = grasp.position + ts[:, None] * axis
    inside = contains(target, line)

    if target.category in ("plate", "bowl"):
        radial = grasp.position[:2] - target.pose.position[:2]
        r = float(np.linalg.norm(radial))
        if r < 0.005:
            return "miss"  # centered pinch on an annulus closes on the hole
        axis_h = axis[:2]
        nh = float(np.linalg.norm(axis_h))
        if nh < 0.5:
            return "miss"  # near-vertical closing axis cannot reach under the rim
        alignment = abs(float(np.dot(axis_h / nh, radial / r)))
        if alignment < math.cos(math.radians(30.0)):
            return "miss"  # chord pinch across the rim, not a wall pinch

    if not (inside[ts < 0].any() and inside[ts > 0].any()):
        return "miss"
    if inside[0] or inside[-1]:
        return "too-wide"

    # (c) fingertip reach: material top at the grasp column within finger length
    top = top_surface_height(target, grasp.position[:2][None, :])[0]
    if math.isnan(top):
        contact = line[inside]
        top = float(np.nanmax(top_surface_height(target, contact[:, :2])))
    if math.isnan(top) or top - grasp.position[2] > gripper.finger_length:
        return "miss"
    return "success"


def _nearest_object(scene: Scene, point: np.ndarray) -> SceneObject | None:
    best, best_d = None, math.inf
    for obj in scene.objects:
        d = float(np.linalg.norm(point[:2] - obj.pose.position[:2]))
        if d < best_d:
            best, best_d = obj, d
    return best


def success_rates(log) -> tuple[float, float]:
    """Attempt-centric and object-centric success rates from (object id, outcome) pairs.

    Object-centric counts an object as grasped when either of its first two
    attempts succeeded.
    """
    log = list(log)
    if not log:
        raise EmptyLogError("no attempts logged")
    attempts = len(log)
    successes = sum(1 for _, outcome in log if outcome == "success")
    per_object: dict = {}
    for oid, outcome in log:
        per_object.setdefault(oid, []).append(outcome)
    grasped = sum(1 for outcomes in per_object.values()
                  if "success" in outcomes[:2])
    return successes / attempts, grasped / len(per_object)


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": SCENE_FILE_VERSION,
        "seed": int(scene.seed),
        "workspace": [scene.workspace.x_min, scene.workspace.x_max,
                      scene.workspace.y_min, scene.workspace.y_max],
        "objects": [
            {"id": int(o.id), "category": o.category,
             "size": [float(v) for v in o.size], "pose": o.pose.as_dict()}
            for o in scene.objects
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("version") != SCENE_FILE_VERSION:
        raise SceneError(f"unsupported scene file version {d.get('version')!r}")
    ws = Workspace(*d["workspace"])
    objects = tuple(
        SceneObject(o["id"], o["category"], np.asarray(o["size"], dtype=float),
                    Pose.from_dict(o["pose"]))
        for o in d["objects"]
    )
    return Scene(objects, seed=int(d["seed"]), workspace=ws)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))
