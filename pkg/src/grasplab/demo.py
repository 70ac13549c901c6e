"""Demonstration store and grasp-plan synthesis.

Recorded demonstrations act as prompts: a detected object's latent similarity
against the store decides whether the final plan keeps the geometric initial
grasp, transfers a scaled pseudo grasp ring, or re-anchors the demonstrated
grasp pose outright. Thresholds default to 0.7 (rotation transfer) and 0.9
(translation transfer).
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_angle_between, quat_from_yaw, quat_multiply, quat_slerp
from .grasp import InitialGrasp, PRE_GRASP_OFFSET_M
from .learner import EncoderParams, PointCloud, similarity

MAX_DEMO_WAYPOINTS = 9          # single demonstration stays under 10 waypoints
MIN_DEMO_WAYPOINTS = 2
DEFAULT_PLAN_POINTS = 10
FINETUNE_SNAP_DISTANCE_M = 0.02
FINGER_CLEARANCE_M = 0.002
ANGLE_WEIGHT_M_PER_RAD = 0.1
DEMO_FILE_VERSION = 1

PROVENANCE_ORDER = ("initial", "pseudo", "demonstrated")


class WaypointCountError(ValueError):
    """Demonstration must hold between 2 and 9 waypoints."""


class DegenerateTrajectoryError(ValueError):
    """Trajectory has zero total length."""


class NoGraspAvailableError(RuntimeError):
    """Neither an initial grasp nor a matching demonstration exists."""


class MissingMetadataError(ValueError):
    """Point cloud lacks the centroid/scale needed for grasp transfer."""


@dataclass(frozen=True)
class Thresholds:
    """Similarity gates: above ``rotation`` transfer pseudo poses, above
    ``translation`` reuse the demonstrated pose itself."""

    rotation: float = 0.7
    translation: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.rotation < self.translation <= 1.0):
            raise ValueError("need 0 < rotation < translation <= 1")


@dataclass(frozen=True, eq=False)
class DemonstrationRecord:
    category: str
    cloud: PointCloud
    waypoints: tuple[Pose, ...]
    frame_ref: int | str | None = None

    def __post_init__(self):
        wps = tuple(self.waypoints)
        if not (MIN_DEMO_WAYPOINTS <= len(wps) <= MAX_DEMO_WAYPOINTS):
            raise WaypointCountError(
                f"demonstration needs {MIN_DEMO_WAYPOINTS}..{MAX_DEMO_WAYPOINTS} waypoints, "
                f"got {len(wps)}")
        object.__setattr__(self, "waypoints", wps)

    @property
    def grasp_pose(self) -> Pose:
        return self.waypoints[-1]


@dataclass(frozen=True, eq=False)
class GraspPlan:
    pre_grasp: Pose
    waypoints: tuple[Pose, ...]
    grasp: Pose
    provenance: str
    similarity_used: float | None = None

    def __post_init__(self):
        wps = tuple(self.waypoints)
        if not wps or wps[-1] is not self.grasp:
            raise ValueError("plan's last waypoint must be its grasp pose")
        if self.provenance not in PROVENANCE_ORDER:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "waypoints", wps)

    def as_dict(self) -> dict:
        return {
            "pre_grasp": self.pre_grasp.as_dict(),
            "waypoints": [w.as_dict() for w in self.waypoints],
            "grasp": self.grasp.as_dict(),
            "provenance": self.provenance,
            "similarity": None if self.similarity_used is None else float(self.similarity_used),
        }


class DemonstrationStore:
    """Append-only record list; one writer (the session), many readers."""

    def __init__(self):
        self._records: list[DemonstrationRecord] = []
        self._lock = threading.Lock()

    def add(self, record: DemonstrationRecord) -> int:
        with self._lock:
            self._records.append(record)
            return len(self._records) - 1

    def records(self) -> tuple[DemonstrationRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def clear(self) -> None:
        with self._lock:
            self._records.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


# ---------------------------------------------------------------------------
# recording
# ---------------------------------------------------------------------------

def world_points(cloud: PointCloud) -> np.ndarray:
    """Undo normalization: the cloud's points back in the world frame."""
    return cloud.centroid + cloud.scale * np.asarray(cloud.points)


def _snap_final_waypoint(cloud: PointCloud, pose: Pose) -> Pose:
    """Pull a stray final waypoint onto the object silhouette, preserving its
    bearing from the object center. Stands in for manual grasp fine-tuning."""
    pts = world_points(cloud)
    dxy = pts[:, :2] - pose.position[:2]
    dists = np.hypot(dxy[:, 0], dxy[:, 1])
    if float(dists.min()) <= FINETUNE_SNAP_DISTANCE_M:
        return pose
    q = pts[int(np.argmin(dists))]
    c = cloud.centroid
    new_radius = float(np.hypot(q[0] - c[0], q[1] - c[1]))
    r_vec = pose.position[:2] - c[:2]
    r = float(np.hypot(r_vec[0], r_vec[1]))
    if r < 1e-9:
        new_xy = q[:2]
    else:
        new_xy = c[:2] + r_vec / r * new_radius
    return Pose(np.array([new_xy[0], new_xy[1], pose.position[2]]), pose.orientation)


def record_demo(store: DemonstrationStore, category: str, cloud: PointCloud,
                waypoints, frame_ref=None) -> DemonstrationRecord:
    """Validate, fine-tune the grasp waypoint, and append to the store."""
    wps = list(waypoints)
    if not (MIN_DEMO_WAYPOINTS <= len(wps) <= MAX_DEMO_WAYPOINTS):
        raise WaypointCountError(
            f"demonstration needs {MIN_DEMO_WAYPOINTS}..{MAX_DEMO_WAYPOINTS} waypoints, "
            f"got {len(wps)}")
    wps[-1] = _snap_final_waypoint(cloud, wps[-1])
    record = DemonstrationRecord(category, cloud, tuple(wps), frame_ref)
    store.add(record)
    return record


# ---------------------------------------------------------------------------
# similarity and waypoint resampling
# ---------------------------------------------------------------------------

def similarity_index(detected: PointCloud, store: DemonstrationStore,
                     params: EncoderParams) -> tuple[float, DemonstrationRecord] | None:
    """Maximum latent similarity against all records, with the arg-max record."""
    records = store.records()
    if not records:
        return None
    best_val, best_rec = -math.inf, None
    for rec in records:
        val = similarity(detected, rec.cloud, params)
        if val > best_val:
            best_val, best_rec = val, rec
    return best_val, best_rec


def resample_waypoints(traj, m: int) -> list[Pose]:
    """Arc-length-uniform resampling of a pose path to m waypoints.

    Positions interpolate linearly along the piecewise path, orientations
    slerp within each segment, and the original endpoints are kept exactly.
    """
    poses = list(traj)
    if len(poses) < 2 or m < 2:
        raise ValueError("need at least 2 input poses and m >= 2")
    seg = [float(np.linalg.norm(b.position - a.position))
           for a, b in zip(poses[:-1], poses[1:])]
    total = sum(seg)
    if total < 1e-12:
        raise DegenerateTrajectoryError("trajectory has zero length")

    out = [poses[0]]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    for i in range(1, m - 1):
        target = total * i / (m - 1)
        k = int(np.searchsorted(cum, target, side="right") - 1)
        k = min(k, len(seg) - 1)
        f = (target - cum[k]) / seg[k] if seg[k] > 1e-12 else 0.0
        pos = poses[k].position + f * (poses[k + 1].position - poses[k].position)
        q = quat_slerp(poses[k].orientation, poses[k + 1].orientation, f)
        out.append(Pose(pos, q))
    out.append(poses[-1])
    return out


# ---------------------------------------------------------------------------
# grasp transfer
# ---------------------------------------------------------------------------

def principal_axis_angle(cloud: PointCloud) -> float:
    """Bearing of the cloud's dominant horizontal axis, in [0, pi)."""
    xy = np.asarray(cloud.points)[:, :2]
    xy = xy - xy.mean(axis=0)
    cov = xy.T @ xy
    vals, vecs = np.linalg.eigh(cov)
    v = vecs[:, int(np.argmax(vals))]
    return math.atan2(v[1], v[0]) % math.pi


def transfer_anchor(cloud: PointCloud) -> tuple[np.ndarray, float]:
    """Horizontal grasp-transfer frame: center (x, y) and radius of the cloud's
    top band, in world coordinates.

    An oblique camera sees a sliver of an object's far side wall, which drags
    the full-cloud centroid off the symmetry axis and inflates its bounding
    radius. The top 30 percent of the height range (a plate's face, a bowl's
    rim ring, a box top) is visible all around, and the midpoint of its x/y
    extremes is insensitive to how unevenly points cover it, so scaled grasp
    offsets land where they do on the demonstrated object.
    """
    pts = world_points(cloud)
    z = pts[:, 2]
    z_lo = z.max() - 0.3 * max(z.max() - z.min(), 1e-9)
    band = pts[z >= z_lo]
    center = np.array([(band[:, 0].min() + band[:, 0].max()) / 2.0,
                       (band[:, 1].min() + band[:, 1].max()) / 2.0])
    radius = float(np.hypot(band[:, 0] - center[0], band[:, 1] - center[1]).max())
    return center, max(radius, 1e-9)


def _require_metadata(cloud: PointCloud) -> None:
    if cloud.centroid is None or cloud.scale is None or cloud.scale <= 0:
        raise MissingMetadataError("cloud lacks centroid/scale metadata")


def pseudo_grasp_poses(detected: PointCloud, demo: DemonstrationRecord) -> list[Pose]:
    """Four candidate grasps around the detected object's outline.

    The demonstrated grasp's center distance is scaled by the size ratio and
    replayed at 90-degree bearing steps anchored to the detected object's
    principal axis; orientations re-express the demonstrated grasp at each
    bearing.
    """
    _require_metadata(detected)
    _require_metadata(demo.cloud)
    grasp = demo.grasp_pose
    demo_center, demo_radius = transfer_anchor(demo.cloud)
    det_center, det_radius = transfer_anchor(detected)
    offset = grasp.position[:2] - demo_center
    d = float(np.hypot(offset[0], offset[1]))
    s = det_radius / demo_radius

    if d < 1e-9:
        demo_bearing = principal_axis_angle(demo.cloud)
    else:
        demo_bearing = math.atan2(offset[1], offset[0])
    base = principal_axis_angle(detected) + (demo_bearing - principal_axis_angle(demo.cloud))

    z = max(grasp.position[2] * s, FINGER_CLEARANCE_M)
    poses = []
    for k in range(4):
        bearing = base + k * math.pi / 2.0
        pos = np.array([det_center[0] + d * s * math.cos(bearing),
                        det_center[1] + d * s * math.sin(bearing), z])
        spin = quat_from_yaw(bearing - demo_bearing)
        poses.append(Pose(pos, quat_multiply(spin, grasp.orientation)))
    return poses


def _reanchor_demo_grasp(detected: PointCloud, demo: DemonstrationRecord) -> Pose:
    """Translate the demonstrated grasp onto the detected object, scaling the
    center-relative offset; orientation carries over unchanged."""
    _require_metadata(detected)
    _require_metadata(demo.cloud)
    demo_center, demo_radius = transfer_anchor(demo.cloud)
    det_center, det_radius = transfer_anchor(detected)
    s = det_radius / demo_radius
    grasp = demo.grasp_pose
    xy = det_center + s * (grasp.position[:2] - demo_center)
    z = max(grasp.position[2] * s, FINGER_CLEARANCE_M)
    return Pose(np.array([xy[0], xy[1], z]), grasp.orientation)


def pre_grasp_for(grasp: Pose) -> Pose:
    """Stand-off pose 0.15 m back along the grasp's approach axis."""
    approach = grasp.rotate(np.array([0.0, 0.0, -1.0]))
    return Pose(grasp.position - PRE_GRASP_OFFSET_M * approach, grasp.orientation)


def decide_provenance(i_s: float | None, has_initial: bool, th: Thresholds) -> str:
    """Threshold ladder over the similarity index; monotone in i_s."""
    if i_s is None:
        return "initial"
    if i_s > th.translation:
        return "demonstrated"
    if i_s > th.rotation:
        return "pseudo"
    return "initial"


def plan_from_initial(initial: InitialGrasp, m_points: int = DEFAULT_PLAN_POINTS,
                      similarity_used: float | None = None) -> GraspPlan:
    """Straight-descent plan that realizes the geometric initial grasp as-is."""
    grasp = initial.pose()
    pre = initial.pre_grasp
    waypoints = _straight_waypoints(pre, grasp, m_points)
    return GraspPlan(pre, tuple(waypoints), grasp, "initial", similarity_used)


def _straight_waypoints(pre: Pose, grasp: Pose, m: int) -> list[Pose]:
    out = [pre]
    for i in range(1, m - 1):
        f = i / (m - 1)
        pos = pre.position + f * (grasp.position - pre.position)
        q = quat_slerp(pre.orientation, grasp.orientation, f)
        out.append(Pose(pos, q))
    out.append(grasp)
    return out


def _blended_waypoints(pre: Pose, grasp: Pose, demo: DemonstrationRecord,
                       m: int, offset_scale: float) -> list[Pose]:
    """Straight pre-grasp descent shaped by the demonstration's lateral wiggle.

    The demo path is resampled to m poses; each one's offset from the demo's
    own straight chord is scaled and added to the new straight path. Both
    endpoints stay exact.
    """
    straight = _straight_waypoints(pre, grasp, m)
    demo_rs = resample_waypoints(demo.waypoints, m)
    a = demo_rs[0].position
    b = demo_rs[-1].position
    out = [straight[0]]
    for i in range(1, m - 1):
        f = i / (m - 1)
        chord = a + f * (b - a)
        offset = demo_rs[i].position - chord
        out.append(Pose(straight[i].position + offset_scale * offset,
                        straight[i].orientation))
    out.append(straight[-1])
    return out


def _select_pseudo(poses: list[Pose], initial: InitialGrasp | None) -> Pose:
    if initial is None:
        return poses[0]
    ref = initial.pose()
    best, best_cost = poses[0], math.inf
    for p in poses:
        cost = float(np.linalg.norm(p.position - ref.position)) \
            + ANGLE_WEIGHT_M_PER_RAD * quat_angle_between(p.orientation, ref.orientation)
        if cost < best_cost:
            best, best_cost = p, cost
    return best


def final_grasp(detected: PointCloud, initial: InitialGrasp | None,
                store: DemonstrationStore, params: EncoderParams,
                th: Thresholds, m_points: int = DEFAULT_PLAN_POINTS,
                precomputed: tuple[float, DemonstrationRecord] | None = None) -> GraspPlan:
    """Assemble the executed plan for one detected object.

    The similarity ladder picks the grasp source; demo-derived plans blend the
    demonstration's waypoint shape into the descent. Raises
    NoGraspAvailableError when the ladder lands on the initial grasp and none
    exists (the orientation-only scenario has nothing to anchor to).
    """
    sim = precomputed if precomputed is not None else similarity_index(detected, store, params)
    i_s, best = sim if sim is not None else (None, None)
    provenance = decide_provenance(i_s, initial is not None, th)

    if provenance == "initial":
        if initial is None:
            raise NoGraspAvailableError("no initial grasp and similarity below thresholds")
        return plan_from_initial(initial, m_points, similarity_used=i_s)

    if provenance == "pseudo":
        grasp = _select_pseudo(pseudo_grasp_poses(detected, best), initial)
    else:
        grasp = _reanchor_demo_grasp(detected, best)

    pre = pre_grasp_for(grasp)
    scale = detected.scale / best.cloud.scale
    waypoints = _blended_waypoints(pre, grasp, best, m_points, scale)
    return GraspPlan(pre, tuple(waypoints), grasp, provenance, i_s)


# ---------------------------------------------------------------------------
# demonstration files
# ---------------------------------------------------------------------------

def demo_to_dict(record: DemonstrationRecord) -> dict:
    return {
        "version": DEMO_FILE_VERSION,
        "category": record.category,
        "cloud": {
            "points": [[float(v) for v in p] for p in record.cloud.points],
            "centroid": [float(v) for v in record.cloud.centroid],
            "scale": float(record.cloud.scale),
        },
        "waypoints": [w.as_dict() for w in record.waypoints],
    }


def demo_from_dict(d: dict) -> DemonstrationRecord:
    if d.get("version") != DEMO_FILE_VERSION:
        raise ValueError(f"unsupported demo file version {d.get('version')!r}")
    cloud = PointCloud(np.asarray(d["cloud"]["points"], dtype=float),
                       np.asarray(d["cloud"]["centroid"], dtype=float),
                       float(d["cloud"]["scale"]),
                       d.get("category"))
    wps = tuple(Pose.from_dict(w) for w in d["waypoints"])
    return DemonstrationRecord(d["category"], cloud, wps)


def save_demo(record: DemonstrationRecord, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(demo_to_dict(record), fh, sort_keys=True)
        fh.write("\n")


def load_demo(path) -> DemonstrationRecord:
    with open(path, encoding="utf-8") as fh:
        return demo_from_dict(json.load(fh))
