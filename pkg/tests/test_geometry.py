import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grasplab.geometry import (CameraIntrinsics, DepthImage, EmptyMaskError,
                               GeometryError, HandEyeCalibration, InvalidDepthError,
                               Mask, OutOfBoundsError, Pose, camera_to_world,
                               mask_centroid, mask_outline, min_area_rect,
                               pixel_to_camera, project, quat_from_rpy,
                               quat_multiply, quat_rotate)

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def make_mask(pixels, width=16, height=16):
    bits = np.zeros((height, width), dtype=bool)
    for u, v in pixels:
        bits[v, u] = True
    return Mask(width, height, bits)


def rect_mask(w_px, h_px, angle=0.0, size=200):
    """Rasterized rectangle: pixel centers inside a rotated w x h box."""
    us, vs = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))
    cu = cv = size / 2.0
    c, s = math.cos(-angle), math.sin(-angle)
    x = (us - cu) * c - (vs - cv) * s
    y = (us - cu) * s + (vs - cv) * c
    bits = (np.abs(x) <= w_px / 2.0) & (np.abs(y) <= h_px / 2.0)
    return Mask(size, size, bits)


# ---------------------------------------------------------------------------
# poses and quaternions
# ---------------------------------------------------------------------------

unit_floats = st.floats(-1.0, 1.0, allow_nan=False)
positions = st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 3)
raw_quats = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(
    lambda q: sum(x * x for x in q) > 1e-4)


def poses():
    return st.builds(lambda p, q: Pose(np.array(p), np.array(q)), positions, raw_quats)


@given(poses())
def test_pose_quaternion_stays_unit(p):
    assert abs(np.linalg.norm(p.orientation) - 1.0) < 1e-9


@given(poses(), poses(), poses())
@settings(max_examples=100)
def test_pose_composition_associative(a, b, c):
    left = a.compose(b).compose(c)
    right = a.compose(b.compose(c))
    assert left.approx_eq(right, tol=1e-9)


@given(poses())
def test_pose_inverse_is_identity(p):
    ident = p.compose(p.inverse())
    assert ident.approx_eq(Pose.identity(), tol=1e-9)


@given(poses(), positions)
def test_pose_apply_matches_matrix(p, v):
    hom = np.append(np.array(v), 1.0)
    expected = (p.matrix() @ hom)[:3]
    np.testing.assert_allclose(p.apply(np.array(v)), expected, atol=1e-9)


def test_rpy_round_trip():
    for roll, pitch, yaw in [(0.1, -0.4, 2.0), (0.0, 0.0, 1.0), (-1.2, 0.3, -2.9)]:
        p = Pose.from_rpy([0, 0, 0], roll, pitch, yaw)
        np.testing.assert_allclose(p.rpy, (roll, pitch, yaw), atol=1e-12)


def test_yaw_rotation_turns_x_axis():
    p = Pose.from_yaw([0, 0, 0], math.pi / 2)
    np.testing.assert_allclose(p.rotate(np.array([1.0, 0, 0])), [0, 1, 0], atol=1e-12)


# ---------------------------------------------------------------------------
# pinhole model
# ---------------------------------------------------------------------------

def test_pixel_to_camera_principal_ray():
    np.testing.assert_allclose(pixel_to_camera(320, 240, 0.5, K), [0.0, 0.0, 0.5])


def test_pixel_to_camera_offset_pixel():
    # (420 - 320) * 0.5 / 500 = 0.1 by the pinhole formula
    np.testing.assert_allclose(pixel_to_camera(420, 240, 0.5, K), [0.1, 0.0, 0.5],
                               atol=1e-15)


def test_pixel_to_camera_zero_depth_rejected():
    with pytest.raises(InvalidDepthError):
        pixel_to_camera(320, 240, 0.0, K)


def test_pixel_to_camera_out_of_bounds():
    with pytest.raises(OutOfBoundsError):
        pixel_to_camera(640, 240, 0.5, K)


@given(st.floats(0, 639.99), st.floats(0, 479.99), st.floats(0.01, 9.0))
@settings(max_examples=200)
def test_projection_round_trip(u, v, d):
    p = pixel_to_camera(u, v, d, K)
    u2, v2, d2 = project(p, K)
    assert abs(u2 - u) < 1e-9 and abs(v2 - v) < 1e-9 and abs(d2 - d) < 1e-9


# ---------------------------------------------------------------------------
# camera-to-world chain, checked against a 4x4 homogeneous-matrix oracle
# ---------------------------------------------------------------------------

def test_camera_to_world_identity_chain():
    p = camera_to_world([1.0, 2.0, 3.0], HandEyeCalibration.identity(), Pose.identity())
    np.testing.assert_allclose(p, [1, 2, 3], atol=1e-12)


def test_camera_to_world_translation_only():
    cal = HandEyeCalibration(Pose(np.array([0, 0, 0.1]), np.array([0, 0, 0, 1])))
    p = camera_to_world([0.0, 0.0, 0.0], cal, Pose.identity())
    np.testing.assert_allclose(p, [0, 0, 0.1], atol=1e-12)


def test_camera_to_world_matches_matrix_oracle():
    cal = HandEyeCalibration(Pose.from_yaw([0, 0, 0], math.pi / 2))
    ee = Pose(np.array([1.0, 0, 0]), np.array([0, 0, 0, 1]))
    p_cam = np.array([1.0, 0.0, 0.0])

    def mat(pose):
        m = np.eye(4)
        m[:3, :3] = np.column_stack([quat_rotate(pose.orientation, e)
                                     for e in np.eye(3)])
        m[:3, 3] = pose.position
        return m

    expected = (mat(ee) @ mat(cal.transform) @ np.append(p_cam, 1.0))[:3]
    np.testing.assert_allclose(camera_to_world(p_cam, cal, ee), expected, atol=1e-12)


@given(poses(), poses(), positions)
@settings(max_examples=100)
def test_camera_to_world_matrix_oracle_randomized(cal_pose, ee, v):
    expected = (ee.matrix() @ cal_pose.matrix() @ np.append(np.array(v), 1.0))[:3]
    got = camera_to_world(np.array(v), HandEyeCalibration(cal_pose), ee)
    np.testing.assert_allclose(got, expected, atol=1e-8)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def test_mask_requires_a_set_bit():
    with pytest.raises(EmptyMaskError):
        Mask(4, 4, np.zeros((4, 4), dtype=bool))


def test_mask_bbox_is_tight():
    m = make_mask([(2, 3), (5, 7)])
    assert m.bbox == (2, 3, 5, 7)


def test_centroid_full_block():
    m = make_mask([(u, v) for u in range(3) for v in range(3)])
    assert mask_centroid(m) == (1.0, 1.0)


def test_centroid_two_pixels():
    assert mask_centroid(make_mask([(0, 0), (2, 0)])) == (1.0, 0.0)


def test_centroid_l_shape():
    m = make_mask([(0, 0), (1, 0), (2, 0), (0, 1), (0, 2)])
    u, v = mask_centroid(m)
    assert abs(u - 0.6) < 1e-12 and abs(v - 0.6) < 1e-12


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)),
                min_size=1, max_size=40, unique=True))
def test_centroid_inside_bbox(pixels):
    m = make_mask(pixels)
    u, v = mask_centroid(m)
    u0, v0, u1, v1 = m.bbox
    assert u0 <= u <= u1 and v0 <= v <= v1


def test_outline_single_pixel():
    m = make_mask([(3, 4)])
    assert mask_outline(m) == [(3, 4)]


def test_outline_two_by_two_clockwise():
    m = make_mask([(1, 1), (2, 1), (1, 2), (2, 2)])
    assert mask_outline(m) == [(1, 1), (2, 1), (2, 2), (1, 2)]


def test_outline_four_by_four_perimeter():
    m = make_mask([(u, v) for u in range(1, 5) for v in range(1, 5)], 8, 8)
    outline = mask_outline(m)
    expected = {(u, v) for u in range(1, 5) for v in range(1, 5)
                if u in (1, 4) or v in (1, 4)}
    assert len(outline) == 12
    assert set(outline) == expected


# ---------------------------------------------------------------------------
# minimum-area rectangle, with an independent hull + angle-sweep oracle
# ---------------------------------------------------------------------------

def oracle_min_rect(mask):
    """Brute-force sweep over densely sampled angles on the scipy hull."""
    from scipy.spatial import ConvexHull

    pts = mask.pixels().astype(float)
    if len(np.unique(pts, axis=0)) >= 3:
        try:
            hull = ConvexHull(pts)
            pts = pts[hull.vertices]
        except Exception:
            pass
    best = None
    for theta in np.arange(0.0, math.pi / 2, math.radians(0.05)):
        c, s = math.cos(theta), math.sin(theta)
        x = pts[:, 0] * c + pts[:, 1] * s
        y = -pts[:, 0] * s + pts[:, 1] * c
        ex, ey = x.max() - x.min(), y.max() - y.min()
        area = ex * ey
        if best is None or area < best[0]:
            long_angle = theta if ex >= ey else theta + math.pi / 2
            best = (area, long_angle % math.pi)
    return best


def angle_diff_mod_pi(a, b):
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def test_min_rect_axis_aligned():
    m = rect_mask(20, 10, angle=0.0, size=64)
    r = min_area_rect(m)
    assert r.angle == pytest.approx(0.0, abs=1e-9)
    # pixel centers span one pixel less than the rasterized footprint
    assert r.half_extents[0] == pytest.approx(10.0, abs=1.0)
    assert r.half_extents[1] == pytest.approx(5.0, abs=1.0)


def test_min_rect_rotated_thirty_degrees():
    m = rect_mask(100, 50, angle=math.radians(30))
    r = min_area_rect(m)
    area_o, angle_o = oracle_min_rect(m)
    assert angle_diff_mod_pi(r.angle, math.radians(30)) < math.radians(2)
    assert angle_diff_mod_pi(r.angle, angle_o) < math.radians(2)
    assert 4 * r.half_extents[0] * r.half_extents[1] <= area_o * 1.01 + 1e-9


def test_min_rect_square_tie_break():
    m = rect_mask(30, 30, angle=0.0, size=64)
    r = min_area_rect(m)
    assert r.angle == pytest.approx(0.0, abs=1e-9)
    side = 2 * r.half_extents[0]
    assert side * side == pytest.approx(30.0 * 30.0, rel=0.05)


def test_min_rect_area_never_exceeds_aabb():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pixels = {(int(rng.integers(0, 30)), int(rng.integers(0, 30)))
                  for _ in range(rng.integers(3, 60))}
        m = make_mask(pixels, 32, 32)
        r = min_area_rect(m)
        u0, v0, u1, v1 = m.bbox
        aabb = max(u1 - u0, 1e-9) * max(v1 - v0, 1e-9)
        rect_area = 4 * r.half_extents[0] * r.half_extents[1]
        assert rect_area <= aabb + 1e-6


def test_depth_image_rejects_out_of_range():
    with pytest.raises(GeometryError):
        DepthImage(2, 2, np.array([[0.0, 1.0], [2.0, 11.0]]))


def test_quat_multiply_matches_rotation_composition():
    qa = quat_from_rpy(0.3, -0.2, 1.1)
    qb = quat_from_rpy(-0.5, 0.8, 0.2)
    v = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(quat_rotate(quat_multiply(qa, qb), v),
                               quat_rotate(qa, quat_rotate(qb, v)), atol=1e-12)
