"""Shared geometric types and camera math: poses, intrinsics, depth images, masks.

Conventions:
- Quaternions are stored (x, y, z, w) and kept unit length.
- Roll/pitch/yaw follow the Z-Y-X convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
- Image coordinates are (u, v) with u to the right and v down. Depth images hold
  z-depth in meters; 0 marks an invalid reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_ATOL = 1e-9
MAX_DEPTH_M = 10.0


class GeometryError(ValueError):
    """Base class for invalid geometric input."""


class InvalidDepthError(GeometryError):
    """Depth value is zero (the invalid sentinel) or negative."""


class OutOfBoundsError(GeometryError):
    """Pixel coordinate falls outside the image."""


class EmptyMaskError(GeometryError):
    """Mask has no set bits."""


# ---------------------------------------------------------------------------
# quaternion helpers (x, y, z, w)
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = float(np.linalg.norm(q))
    if not math.isfinite(n) or n < 1e-12:
        raise GeometryError("quaternion norm must be positive and finite")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b, both (x, y, z, w)."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conjugate(q) -> np.ndarray:
    x, y, z, w = q
    return np.array([-x, -y, -z, w])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion q. v is (3,) or (..., 3)."""
    v = np.asarray(v, dtype=float)
    qv = np.asarray(q[:3], dtype=float)
    w = float(q[3])
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array([
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
        cr * cp * cy + sr * sp * sy,
    ])


def quat_to_rpy(q) -> tuple[float, float, float]:
    x, y, z, w = q
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2.0 * (w * y - z * x))))
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return roll, pitch, yaw


def quat_from_yaw(yaw: float) -> np.ndarray:
    return quat_from_rpy(0.0, 0.0, yaw)


def quat_angle_between(qa, qb) -> float:
    """Rotation angle in radians taking orientation qa to qb."""
    d = abs(float(np.dot(np.asarray(qa, dtype=float), np.asarray(qb, dtype=float))))
    return 2.0 * math.acos(max(-1.0, min(1.0, d)))


def quat_slerp(qa, qb, t: float) -> np.ndarray:
    """Spherical interpolation between unit quaternions, shortest arc."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(qa + t * (qb - qa))
    theta = math.acos(max(-1.0, min(1.0, dot)))
    s = math.sin(theta)
    return (math.sin((1.0 - t) * theta) / s) * qa + (math.sin(t * theta) / s) * qb


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotation by a unit quaternion followed by translation.

    ``compose`` follows function composition: (a.compose(b)).apply(p) equals
    a.apply(b.apply(p)).
    """

    position: np.ndarray
    orientation: np.ndarray  # (x, y, z, w)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3).copy()
        q = quat_normalize(self.orientation)
        if not np.all(np.isfinite(p)):
            raise GeometryError("pose position must be finite")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    @classmethod
    def from_rpy(cls, position, roll: float, pitch: float, yaw: float) -> "Pose":
        return cls(position, quat_from_rpy(roll, pitch, yaw))

    @classmethod
    def from_yaw(cls, position, yaw: float) -> "Pose":
        return cls(position, quat_from_yaw(yaw))

    @property
    def rpy(self) -> tuple[float, float, float]:
        return quat_to_rpy(self.orientation)

    @property
    def roll(self) -> float:
        return self.rpy[0]

    @property
    def pitch(self) -> float:
        return self.rpy[1]

    @property
    def yaw(self) -> float:
        return self.rpy[2]

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.orientation)
        return Pose(-quat_rotate(qc, self.position), qc)

    def apply(self, points) -> np.ndarray:
        """Transform point(s) from the pose's local frame to the parent frame."""
        return quat_rotate(self.orientation, points) + self.position

    def rotate(self, vectors) -> np.ndarray:
        return quat_rotate(self.orientation, vectors)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_rotate(self.orientation, np.eye(3).T).T
        m[:3, 3] = self.position
        return m

    def approx_eq(self, other: "Pose", tol: float = 1e-9) -> bool:
        if np.max(np.abs(self.position - other.position)) > tol:
            return False
        # q and -q are the same rotation
        d = min(np.max(np.abs(self.orientation - other.orientation)),
                np.max(np.abs(self.orientation + other.orientation)))
        return d <= tol

    def as_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "orientation": [float(v) for v in self.orientation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["position"], dtype=float),
                   np.asarray(d["orientation"], dtype=float))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model, zero distortion; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    def as_dict(self) -> dict:
        return {"fx": float(self.fx), "fy": float(self.fy),
                "cx": float(self.cx), "cy": float(self.cy),
                "width": int(self.width), "height": int(self.height)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


@dataclass(frozen=True)
class HandEyeCalibration:
    """Rigid transform from the camera frame to the end-effector frame."""

    transform: Pose

    @classmethod
    def identity(cls) -> "HandEyeCalibration":
        return cls(Pose.identity())


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Z-depth in meters, stored row-major as a (height, width) array; 0 = invalid."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float).reshape(self.height, self.width).copy()
        if d.min() < 0 or d.max() > MAX_DEPTH_M:
            raise GeometryError(f"depth values must lie in [0, {MAX_DEPTH_M}] m")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    def at(self, u: int, v: int) -> float:
        return float(self.data[int(v), int(u)])


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean occupancy image for one object, with a derived tight bounding box."""

    width: int
    height: int
    bits: np.ndarray
    bbox: tuple[int, int, int, int] = field(init=False)  # (u_min, v_min, u_max, v_max) inclusive

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool).reshape(self.height, self.width).copy()
        if not b.any():
            raise EmptyMaskError("mask has no set bits")
        vs, us = np.nonzero(b)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "bbox",
                           (int(us.min()), int(vs.min()), int(us.max()), int(vs.max())))

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def pixels(self) -> np.ndarray:
        """Set-bit coordinates as an (N, 2) array of (u, v)."""
        vs, us = np.nonzero(self.bits)
        return np.stack([us, vs], axis=1)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def pixel_to_camera(u: float, v: float, depth: float, k: CameraIntrinsics) -> np.ndarray:
    """Back-project a pixel with z-depth to a camera-frame point (x, y, z)."""
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise OutOfBoundsError(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    if depth <= 0:
        raise InvalidDepthError("depth must be positive (0 is the invalid sentinel)")
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth])


def project(p_cam, k: CameraIntrinsics) -> tuple[float, float, float]:
    """Project a camera-frame point to (u, v, depth). Inverse of pixel_to_camera."""
    x, y, z = np.asarray(p_cam, dtype=float)
    if z <= 0:
        raise InvalidDepthError("point must be in front of the camera")
    return (k.cx + x * k.fx / z, k.cy + y * k.fy / z, z)


def camera_to_world(p_cam, cal: HandEyeCalibration, ee_pose: Pose) -> np.ndarray:
    """Map a camera-frame point to the world via the eye-in-hand chain."""
    return ee_pose.compose(cal.transform).apply(np.asarray(p_cam, dtype=float))


def mask_centroid(m: Mask) -> tuple[float, float]:
    """Sub-pixel center of mass of the set bits, as (u, v)."""
    px = m.pixels()
    if len(px) == 0:  # unreachable through the constructor, kept defensively
        raise EmptyMaskError("mask has no set bits")
    c = px.mean(axis=0)
    return float(c[0]), float(c[1])


# Moore neighborhood in clockwise order starting west, image coords (v down).
_TRACE_DIRS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_DIR_INDEX = {d: i for i, d in enumerate(_TRACE_DIRS)}


def mask_outline(m: Mask) -> list[tuple[int, int]]:
    """Clockwise 8-connected boundary trace starting at the topmost-leftmost pixel.

    Degenerate one-pixel-wide regions may repeat interior pixels, which the
    trace legitimately walks twice.
    """
    bits = m.bits
    w, h = m.width, m.height

    vs, us = np.nonzero(bits)
    start = (int(us[0]), int(vs[0]))  # nonzero scans rows first: min v, then min u

    def occupied(u: int, v: int) -> bool:
        return 0 <= u < w and 0 <= v < h and bool(bits[v, u])

    trace = [start]
    cur = start
    back = (start[0] - 1, start[1])  # west neighbor, guaranteed unset
    first_move = None
    seen_moves: set[tuple[tuple[int, int], int]] = set()
    limit = 8 * m.count + 8

    for _ in range(limit):
        bi = _DIR_INDEX[(back[0] - cur[0], back[1] - cur[1])]
        found = None
        last_empty = back
        for step in range(1, 9):
            di = (bi + step) % 8
            nu, nv = cur[0] + _TRACE_DIRS[di][0], cur[1] + _TRACE_DIRS[di][1]
            if occupied(nu, nv):
                found = ((nu, nv), di)
                break
            last_empty = (nu, nv)
        if found is None:
            break  # isolated pixel
        nxt, di = found
        move = (cur, di)
        if move in seen_moves:
            break
        seen_moves.add(move)
        if first_move is None:
            first_move = move
        if nxt != start:
            trace.append(nxt)
        back = last_empty
        cur = nxt
    return trace


@dataclass(frozen=True)
class MinAreaRect:
    center: tuple[float, float]      # sub-pixel (u, v)
    half_extents: tuple[float, float]  # (a, b) with a >= b
    angle: float                     # direction of the a-axis, in [0, pi)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counterclockwise, no duplicate endpoint."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(m: Mask) -> MinAreaRect:
    """Minimum-area rectangle enclosing the set pixel centers.

    Rotating calipers over the convex hull; the optimal rectangle shares a side
    with some hull edge. Square ties resolve to the smallest angle in [0, pi/2).
    """
    pts = m.pixels().astype(float)
    hull = _convex_hull(pts)

    if len(hull) == 1:
        return MinAreaRect((float(hull[0, 0]), float(hull[0, 1])), (0.0, 0.0), 0.0)

    if len(hull) == 2:
        d = hull[1] - hull[0]
        c = hull.mean(axis=0)
        ang = math.atan2(d[1], d[0]) % math.pi
        return MinAreaRect((float(c[0]), float(c[1])),
                           (float(np.linalg.norm(d)) / 2.0, 0.0), ang)

    best = None  # (area, angle, lo_x, hi_x, lo_y, hi_y)
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    for e in edges:
        theta = math.atan2(e[1], e[0])
        c, s = math.cos(-theta), math.sin(-theta)
        rx = hull[:, 0] * c - hull[:, 1] * s
        ry = hull[:, 0] * s + hull[:, 1] * c
        lo_x, hi_x = float(rx.min()), float(rx.max())
        lo_y, hi_y = float(ry.min()), float(ry.max())
        area = (hi_x - lo_x) * (hi_y - lo_y)
        if best is None or area < best[0] - 1e-12:
            best = (area, theta, lo_x, hi_x, lo_y, hi_y)

    _, theta, lo_x, hi_x, lo_y, hi_y = best
    ex = (hi_x - lo_x) / 2.0
    ey = (hi_y - lo_y) / 2.0
    cx_r, cy_r = (lo_x + hi_x) / 2.0, (lo_y + hi_y) / 2.0
    c, s = math.cos(theta), math.sin(theta)
    center = (cx_r * c - cy_r * s, cx_r * s + cy_r * c)

    if ex >= ey:
        a, b = ex, ey
        long_angle = theta % math.pi
    else:
        a, b = ey, ex
        long_angle = (theta + math.pi / 2.0) % math.pi
    if abs(a - b) <= 1e-9 * max(a, b, 1.0):
        long_angle = long_angle % (math.pi / 2.0)
    return MinAreaRect((float(center[0]), float(center[1])), (a, b), long_angle)
