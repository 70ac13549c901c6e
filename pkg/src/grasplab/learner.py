"""Self-supervised point-cloud representation learning.

A permutation-invariant point-set encoder (shared per-point tanh layers with
coordinate-wise max pooling) feeds a nonlinear projection head whose output is
unit-normalized. Training maximizes agreement between two augmentations of
each cloud with the normalized temperature-scaled cross-entropy loss over
in-batch negatives, optimized by plain full-gradient descent with an
analytically derived backward pass.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, DepthImage, Mask, Pose, pixel_to_camera

POINTS_PER_CLOUD = 256
MODEL_FILE_VERSION = 1

DEFAULT_POINT_WIDTHS = (3, 64, 128)
DEFAULT_PROJECTOR_WIDTHS = (128, 64)


class TooFewPointsError(ValueError):
    """Point cloud has fewer than the minimum eight points."""


class BatchShapeError(ValueError):
    """Contrastive batch must hold an even number of projections."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Normalized points plus the centroid/scale needed to undo normalization."""

    points: np.ndarray          # (N, 3), centered, max norm 1
    centroid: np.ndarray        # (3,) pre-normalization, world frame
    scale: float                # pre-normalization bounding radius, meters
    category_hint: str | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3).copy()
        if len(pts) < 8:
            raise TooFewPointsError(f"need at least 8 points, got {len(pts)}")
        c = np.asarray(self.centroid, dtype=float).reshape(3).copy()
        pts.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "scale", float(self.scale))


def normalize(points, category_hint: str | None = None) -> PointCloud:
    """Center the cloud and scale its bounding radius to one, keeping both
    quantities so grasp offsets can be mapped back to world coordinates."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 8:
        raise TooFewPointsError(f"need at least 8 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius < 1e-12:
        raise TooFewPointsError("degenerate cloud: all points coincide")
    return PointCloud(centered / radius, centroid, radius, category_hint)


def resample_points(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Fix the point count by seeded subsampling or repetition padding."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    if len(pts) >= n:
        idx = rng.choice(len(pts), size=n, replace=False)
    else:
        reps = np.tile(np.arange(len(pts)), n // len(pts) + 1)[:n]
        idx = reps
    return pts[idx]


UPPER_SURFACE_WEIGHT_FLOOR = 0.6


def cloud_from_depth_mask(depth: DepthImage, mask: Mask, k: CameraIntrinsics,
                          camera_pose: Pose, n_points: int = POINTS_PER_CLOUD,
                          seed: int = 0, category_hint: str | None = None) -> PointCloud:
    """Back-project a mask's valid-depth pixels into a normalized world cloud.

    Subsampling is seeded and weighted toward upper surfaces: an oblique view
    fills the mask with side-wall pixels whose share depends on where the
    object stands, so uniform sampling makes the same object look different
    across the workspace. Height-weighted sampling keeps the silhouette while
    damping that viewpoint artifact.
    """
    px = mask.pixels()
    pts = []
    for u, v in px:
        d = depth.at(u, v)
        if d > 0:
            pts.append(pixel_to_camera(u, v, d, k))
    if len(pts) < 8:
        raise TooFewPointsError("mask yields fewer than 8 valid-depth points")
    world = camera_pose.apply(np.asarray(pts))
    if len(world) >= n_points:
        z = world[:, 2]
        span = max(float(z.max() - z.min()), 1e-9)
        weights = UPPER_SURFACE_WEIGHT_FLOOR \
            + (1.0 - UPPER_SURFACE_WEIGHT_FLOOR) * (z - z.min()) / span
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(world), size=n_points, replace=False,
                         p=weights / weights.sum())
        world = world[idx]
    else:
        world = resample_points(world, n_points, seed)
    return normalize(world, category_hint)


# ---------------------------------------------------------------------------
# augmentations
# ---------------------------------------------------------------------------

def jitter_points(points, rng, sigma: float = 0.01, clip: float = 0.05) -> np.ndarray:
    noise = np.clip(rng.normal(0.0, sigma, size=np.shape(points)), -clip, clip)
    return np.asarray(points) + noise


def resize_points(points, factor: float) -> np.ndarray:
    return np.asarray(points) * factor


def flip_points(points, flip_x: bool, flip_y: bool) -> np.ndarray:
    pts = np.asarray(points).copy()
    if flip_x:
        pts[:, 0] = -pts[:, 0]
    if flip_y:
        pts[:, 1] = -pts[:, 1]
    return pts


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    temperature: float = 0.1
    learning_rate: float = 0.002
    epochs: int = 150
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    scale_range: tuple[float, float] = (0.8, 1.25)
    flip_prob: float = 0.5
    seed: int = 0
    freeze_encoder: bool = False
    point_widths: tuple[int, ...] = DEFAULT_POINT_WIDTHS
    projector_widths: tuple[int, ...] = DEFAULT_PROJECTOR_WIDTHS
    points_per_cloud: int = POINTS_PER_CLOUD

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")


def augment(pc: PointCloud, seed: int, cfg: TrainConfig | None = None) -> PointCloud:
    """Randomly apply a subset of {jitter, resize, flip}, deterministic in seed.

    The centroid/scale metadata undergoes the same transform so it still maps
    points back to the source frame.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(seed)
    use_jitter, use_resize, use_flip = rng.random(3) < 0.5
    pts = np.asarray(pc.points)
    centroid = pc.centroid.copy()
    scale = pc.scale
    if use_jitter:
        pts = jitter_points(pts, rng, cfg.jitter_sigma, cfg.jitter_clip)
    if use_resize:
        factor = float(rng.uniform(*cfg.scale_range))
        pts = resize_points(pts, factor)
        scale = scale * factor
    if use_flip:
        flip_x = bool(rng.random() < cfg.flip_prob)
        flip_y = bool(rng.random() < cfg.flip_prob)
        pts = flip_points(pts, flip_x, flip_y)
        if flip_x:
            centroid[0] = -centroid[0]
        if flip_y:
            centroid[1] = -centroid[1]
    return PointCloud(pts, centroid, scale, pc.category_hint)


# ---------------------------------------------------------------------------
# encoder parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EncoderParams:
    point_widths: tuple[int, ...]
    projector_widths: tuple[int, ...]
    weights: np.ndarray  # flat vector, layer order (W, b) encoder then projector
    rng_seed: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1).copy()
        if len(w) != param_count(self.point_widths, self.projector_widths):
            raise ValueError("weight vector length does not match architecture")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "point_widths", tuple(int(x) for x in self.point_widths))
        object.__setattr__(self, "projector_widths", tuple(int(x) for x in self.projector_widths))

    @property
    def descriptor_width(self) -> int:
        return self.point_widths[-1]


def _layer_shapes(point_widths, projector_widths):
    shapes = []
    for w_in, w_out in zip(point_widths[:-1], point_widths[1:]):
        shapes.append((w_in, w_out))
    for w_in, w_out in zip(projector_widths[:-1], projector_widths[1:]):
        shapes.append((w_in, w_out))
    return shapes


def param_count(point_widths, projector_widths) -> int:
    return sum(i * o + o for i, o in _layer_shapes(point_widths, projector_widths))


def _unpack(params: EncoderParams):
    """Split the flat vector into per-layer (W, b) views."""
    layers = []
    off = 0
    w = params.weights
    for w_in, w_out in _layer_shapes(params.point_widths, params.projector_widths):
        W = w[off:off + w_in * w_out].reshape(w_in, w_out)
        off += w_in * w_out
        b = w[off:off + w_out]
        off += w_out
        layers.append((W, b))
    return layers


def init_params(point_widths=DEFAULT_POINT_WIDTHS,
                projector_widths=DEFAULT_PROJECTOR_WIDTHS,
                seed: int = 0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    chunks = []
    for w_in, w_out in _layer_shapes(point_widths, projector_widths):
        chunks.append(rng.normal(0.0, 1.0 / math.sqrt(w_in), size=w_in * w_out))
        chunks.append(np.zeros(w_out))
    return EncoderParams(tuple(point_widths), tuple(projector_widths),
                         np.concatenate(chunks), seed)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward(params: EncoderParams, batch: np.ndarray):
    """Forward pass over a (B, P, 3) batch.

    Returns (h, z, cache). Per-point layers are shared, so all points are
    flattened into one matrix per matmul; max pooling over each cloud's points
    yields the order-invariant descriptor h.
    """
    layers = _unpack(params)
    n_enc = len(params.point_widths) - 1
    B, P, _ = batch.shape

    acts = [batch.reshape(B * P, -1)]
    x = acts[0]
    for W, b in layers[:n_enc]:
        x = np.tanh(x @ W + b)
        acts.append(x)
    feats = x.reshape(B, P, -1)
    arg = np.argmax(feats, axis=1)                      # (B, D)
    h = np.take_along_axis(feats, arg[:, None, :], axis=1)[:, 0, :]

    proj_acts = [h]
    y = h
    for W, b in layers[n_enc:]:
        y = np.tanh(y @ W + b)
        proj_acts.append(y)
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    z = y / norms
    cache = (acts, feats, arg, proj_acts, norms)
    return h, z, cache


def _backward(params: EncoderParams, batch: np.ndarray, dz: np.ndarray, cache,
              freeze_encoder: bool = False) -> np.ndarray:
    """Gradient of a scalar loss wrt the flat weight vector, given dL/dz."""
    layers = _unpack(params)
    n_enc = len(params.point_widths) - 1
    B, P, _ = batch.shape
    acts, feats, arg, proj_acts, norms = cache

    z = proj_acts[-1] / norms
    dy = (dz - (dz * z).sum(axis=1, keepdims=True) * z) / norms

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    for li in range(len(layers) - 1, n_enc - 1, -1):
        W, _ = layers[li]
        out = proj_acts[li - n_enc + 1]
        dpre = dy * (1.0 - out * out)
        inp = proj_acts[li - n_enc]
        grads[li] = (inp.T @ dpre, dpre.sum(axis=0))
        dy = dpre @ W.T

    # route pooled gradients to each channel's argmax point
    dfeats = np.zeros_like(feats)
    np.put_along_axis(dfeats, arg[:, None, :], dy[:, None, :], axis=1)
    dx = dfeats.reshape(B * P, -1)

    for li in range(n_enc - 1, -1, -1):
        W, _ = layers[li]
        out = acts[li + 1]
        dpre = dx * (1.0 - out * out)
        inp = acts[li]
        if freeze_encoder:
            grads[li] = (np.zeros_like(W), np.zeros(W.shape[1]))
        else:
            grads[li] = (inp.T @ dpre, dpre.sum(axis=0))
        dx = dpre @ W.T

    return np.concatenate([np.concatenate([gW.reshape(-1), gb]) for gW, gb in grads])


def encode(pc: PointCloud, params: EncoderParams) -> tuple[np.ndarray, np.ndarray]:
    """Descriptor h and unit projection z for one cloud."""
    h, z, _ = _forward(params, np.asarray(pc.points)[None, :, :])
    return h[0], z[0]


def similarity(a: PointCloud, b: PointCloud, params: EncoderParams) -> float:
    """Cosine similarity of the two unit projections; symmetric in (a, b)."""
    _, za = encode(a, params)
    _, zb = encode(b, params)
    return float(np.dot(za, zb))


# ---------------------------------------------------------------------------
# contrastive loss
# ---------------------------------------------------------------------------

def _score_matrix(z: np.ndarray, tau: float):
    s = (z @ z.T) / tau
    np.fill_diagonal(s, -np.inf)
    m = s.max(axis=1, keepdims=True)
    logsum = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    return s, logsum


def nt_xent(z, tau: float) -> float:
    """Mean contrastive loss over all 2N ordered anchors.

    Projections arrive ordered as augmentation pairs (0, 1), (2, 3), ...; each
    anchor's positive is its pair mate and every other projection in the batch
    is a negative.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or len(z) < 2 or len(z) % 2 != 0:
        raise BatchShapeError("batch must be a (2N, d) array with N >= 1")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    s, logsum = _score_matrix(z, tau)
    idx = np.arange(len(z))
    pos = s[idx, idx ^ 1]
    return float(np.mean(logsum - pos))


def batch_loss_and_grad(params: EncoderParams, batch: np.ndarray, tau: float,
                        freeze_encoder: bool = False) -> tuple[float, np.ndarray]:
    """Contrastive loss and its analytic gradient for a pair-ordered batch.

    ``batch`` is (2N, P, 3) with rows ordered as augmentation pairs. The
    gradient covers every weight; finite differences of the returned loss must
    reproduce it, which the test suite enforces.
    """
    B = len(batch)
    if B < 2 or B % 2 != 0:
        raise BatchShapeError("batch must hold an even number of clouds")
    _, z, cache = _forward(params, batch)
    s, logsum = _score_matrix(z, tau)
    idx = np.arange(B)
    pos = s[idx, idx ^ 1]
    loss = float(np.mean(logsum - pos))

    probs = np.exp(s - logsum[:, None])
    probs[idx, idx] = 0.0
    G = probs.copy()
    G[idx, idx ^ 1] -= 1.0
    G /= B
    dz = (G + G.T) @ z / tau
    grad = _backward(params, batch, dz, cache, freeze_encoder)
    return loss, grad


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _batch_loss(params: EncoderParams, batch: np.ndarray, tau: float) -> float:
    _, z, _ = _forward(params, batch)
    return nt_xent(z, tau)


def train(dataset, cfg: TrainConfig) -> tuple[EncoderParams, list[float]]:
    """Gradient-descent pretraining over a cloud dataset.

    Every epoch shuffles the dataset, augments each batch cloud twice, and
    takes one fixed-size step per batch. Single threaded and fully seeded, so
    the loss curve is bit-reproducible.

    The returned per-epoch curve is the loss on a fixed evaluation set of
    augmented pairs drawn once up front, so it is a deterministic function of
    the weights rather than a noisy average over ever-changing views.
    """
    clouds = list(dataset)
    if len(clouds) < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")
    rng = np.random.default_rng(cfg.seed)

    fixed = np.stack([
        resample_points(c.points, cfg.points_per_cloud,
                        seed=int(rng.integers(2 ** 31)))
        for c in clouds
    ])

    eval_batches = []
    n_full = len(clouds) - len(clouds) % cfg.batch_size
    eval_order = rng.permutation(len(clouds))[:n_full]
    eval_views = []
    for ci in eval_order:
        base = PointCloud(fixed[ci], np.zeros(3), 1.0)
        for _view in range(2):
            eval_views.append(augment(base, int(rng.integers(2 ** 31)), cfg).points)
    for start in range(0, n_full, cfg.batch_size):
        eval_batches.append(np.stack(eval_views[2 * start:2 * (start + cfg.batch_size)]))

    params = init_params(cfg.point_widths, cfg.projector_widths, seed=cfg.seed)
    weights = params.weights.copy()
    curve: list[float] = []

    def snapshot():
        return EncoderParams(params.point_widths, params.projector_widths,
                             weights, cfg.seed)

    for _ in range(cfg.epochs):
        order = rng.permutation(len(clouds))
        for start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            chosen = order[start:start + cfg.batch_size]
            views = []
            for ci in chosen:
                base = PointCloud(fixed[ci], np.zeros(3), 1.0)
                for _view in range(2):
                    aug = augment(base, int(rng.integers(2 ** 31)), cfg)
                    views.append(aug.points)
            batch = np.stack(views)
            loss, grad = batch_loss_and_grad(snapshot(), batch, cfg.temperature,
                                             cfg.freeze_encoder)
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became {loss}")
            weights = weights - cfg.learning_rate * grad
        epoch_params = snapshot()
        epoch_loss = float(np.mean([_batch_loss(epoch_params, b, cfg.temperature)
                                    for b in eval_batches]))
        if not math.isfinite(epoch_loss):
            raise DivergenceError(f"loss became {epoch_loss}")
        curve.append(epoch_loss)

    return snapshot(), curve


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def save_model(params: EncoderParams, path, loss_curve: list[float] | None = None) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "point_widths": list(params.point_widths),
        "projector_widths": list(params.projector_widths),
        "rng_seed": int(params.rng_seed),
        "weights_b64": base64.b64encode(
            params.weights.astype("<f8").tobytes()).decode("ascii"),
    }
    if loss_curve is not None:
        doc["loss_curve"] = [float(v) for v in loss_curve]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> EncoderParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_FILE_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')!r}")
    weights = np.frombuffer(base64.b64decode(doc["weights_b64"]), dtype="<f8")
    return EncoderParams(tuple(doc["point_widths"]), tuple(doc["projector_widths"]),
                         weights.astype(float), int(doc["rng_seed"]))
