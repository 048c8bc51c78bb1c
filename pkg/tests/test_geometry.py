import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgfusion.geometry import (BehindCamera, Box2D, Box3D, CameraModel, GeometryError, OutOfView,
                               Pose, corners_3d, frustum_axis, iou_2d, project_box, wrap_angle)


def pinhole(p, f=1000.0, cu=960.0, cv=540.0):
    # world (x fwd, y left, z up) -> pixel, written out by hand
    x, y, z = p
    return f * (-y) / x + cu, f * (-z) / x + cv


def test_unit_cube_corners():
    c = corners_3d(Box3D((0, 0, 0), (1, 1, 1)))
    assert sorted(map(tuple, c)) == sorted((sx, sy, sz) for sx in (-.5, .5)
                                           for sy in (-.5, .5) for sz in (-.5, .5))


def test_unit_cube_rotated_quarter_turn_same_vertex_set():
    a = np.round(corners_3d(Box3D((0, 0, 0), (1, 1, 1), math.pi / 2)), 12)
    b = np.round(corners_3d(Box3D((0, 0, 0), (1, 1, 1))), 12)
    assert sorted(map(tuple, a + 0.0)) == sorted(map(tuple, b + 0.0))


def test_rotated_box_corners_match_rotation_matrix():
    h, w, l = 2.0, 3.0, 5.0
    yaw = 0.3
    R = np.array([[math.cos(yaw), -math.sin(yaw), 0], [math.sin(yaw), math.cos(yaw), 0], [0, 0, 1]])
    expected = {tuple(np.round(np.array([1, 2, 0]) + R @ np.array([sx * l, sy * w, sz * h]) / 2, 9))
                for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
    got = {tuple(np.round(c, 9)) for c in corners_3d(Box3D((1, 2, 0), (h, w, l), yaw))}
    assert got == expected


def test_cube_on_axis_width_set_by_near_face(cam):
    b = project_box(Box3D((20, 0, 0), (2, 2, 2)), cam)
    u0, _, u1, _ = b.extents
    assert u1 - u0 == pytest.approx(2 * 1000 / 19)
    # oracle: project the near-face corners by hand
    left, _ = pinhole((19, 1, 1))
    right, _ = pinhole((19, -1, 1))
    assert (u0, u1) == (pytest.approx(left), pytest.approx(right))


def test_behind_camera(cam):
    with pytest.raises(BehindCamera):
        project_box(Box3D((-10, 0, 0), (1, 1, 1)), cam)


def test_out_of_view(cam):
    with pytest.raises(OutOfView):
        project_box(Box3D((10, 200, 0), (1, 1, 1)), cam)


def test_hull_is_clipped_to_image(cam):
    b = project_box(Box3D((10, 9, 0), (2, 2, 6)), cam)
    u0, v0, u1, v1 = b.extents
    assert u0 == 0.0 and 0 < u1 <= 1920 and 0 <= v0 < v1 <= 1080


def test_iou_identity_and_disjoint():
    a = Box2D((10, 10), (4, 4))
    assert iou_2d(a, a) == 1.0
    assert iou_2d(a, Box2D((100, 100), (4, 4))) == 0.0


def test_iou_half_offset_unit_squares():
    a = Box2D.from_extents(0, 0, 1, 1)
    b = Box2D.from_extents(0.5, 0, 1.5, 1)
    assert iou_2d(a, b) == pytest.approx(0.5 / 1.5)
    # rasterized cross-check
    g = (np.arange(0, 1.5, 1e-3) + 5e-4)
    ina = g < 1
    inb = g >= 0.5
    assert (ina & inb).sum() / (ina | inb).sum() == pytest.approx(1 / 3, abs=1e-3)


def test_zero_union_iou_is_zero():
    z = Box2D((0, 0), (0, 0))
    assert iou_2d(z, z) == 0.0


def test_frustum_axis_cases(cam):
    assert np.allclose(frustum_axis(Box3D((15, 0, 0), (1, 1, 1)), cam), [1, 0, 0])
    with pytest.raises(BehindCamera):
        frustum_axis(Box3D((0, 0, 0), (1, 1, 1)), cam)
    axis = frustum_axis(Box3D((10, 5, 0), (1, 1, 1)), cam)
    assert np.allclose(axis, np.array([10, 5, 0]) / math.hypot(10, 5))


def test_invalid_values_rejected():
    with pytest.raises(GeometryError):
        Box3D((0, 0, 0), (1, 0, 1))
    with pytest.raises(GeometryError):
        Box2D((0, 0), (-1, 2))
    with pytest.raises(GeometryError):
        CameraModel(principal=(3000, 10))


@given(st.floats(-20, 20))
def test_yaw_wraps_into_half_open_interval(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert Pose((0, 0, 0), a).yaw == w


boxes = st.builds(
    lambda x, y, h, w, l, yaw: Box3D((x, y, h / 2), (h, w, l), yaw),
    st.floats(8, 60), st.floats(-4, 4), st.floats(0.5, 4), st.floats(0.5, 3),
    st.floats(0.5, 12), st.floats(-math.pi, math.pi))


@given(boxes)
def test_corner_centroid_is_center(b):
    assert np.allclose(corners_3d(b).mean(axis=0), b.center, atol=1e-9)


@given(boxes)
def test_self_iou_is_one(b):
    cam = CameraModel()
    p = project_box(b, cam)
    assert iou_2d(p, p) == 1.0


@given(st.tuples(*[st.floats(0, 100)] * 4), st.tuples(*[st.floats(0, 100)] * 4))
def test_iou_symmetric_and_bounded(a, b):
    A = Box2D.from_extents(min(a[0], a[2]), min(a[1], a[3]), max(a[0], a[2]), max(a[1], a[3]))
    B = Box2D.from_extents(min(b[0], b[2]), min(b[1], b[3]), max(b[0], b[2]), max(b[1], b[3]))
    assert iou_2d(A, B) == iou_2d(B, A)
    assert 0.0 <= iou_2d(A, B) <= 1.0


@given(boxes, st.floats(-2, 2))
def test_sliding_along_the_ray_keeps_the_center_pixel(b, t):
    cam = CameraModel()
    axis = frustum_axis(b, cam)
    moved = b.translated(t * axis)
    before = pinhole(b.center)
    after = pinhole(moved.center)
    assert math.dist(before, after) < 1.0
    assert np.allclose(cam.project_points(moved.center)[0], after)


def test_pose_compose_and_local_inverse():
    ego = Pose((3, 4, 0), 0.5)
    p = ego.compose(Pose((2, 0, 1), 0.25))
    assert np.allclose(ego.to_local(p.position), [2, 0, 1])
    assert p.yaw == pytest.approx(0.75)
