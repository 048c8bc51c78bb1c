import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgfusion.geometry import Box3D, Box2D, project_box, intersection_area
from sgfusion.harness.serialize import scene_to_dict
from sgfusion.scene import (CLASS_DIMS, Detection, NoiseSpec, ObjectClass, PlacementFailure,
                            SceneConfig, SceneObject, dims_plausible, van_truck_config, generate_scene,
                            max_occlusion, occlusion_fraction, pseudo_detect_camera,
                            pseudo_detect_lidar)
from sgfusion.scene import _footprint


def test_empty_scene():
    assert generate_scene(SceneConfig(n_objects=0), 1).objects == ()


def test_generation_is_deterministic():
    a = json.dumps(scene_to_dict(generate_scene(SceneConfig(), 42)), sort_keys=True)
    b = json.dumps(scene_to_dict(generate_scene(SceneConfig(), 42)), sort_keys=True)
    assert a == b


def test_van_truck_topology():
    s = generate_scene(van_truck_config(), 0)
    assert [o.cls.value for o in s.objects] == ["car", "van", "bicycle", "truck"]
    x = [o.box.center[0] for o in s.objects]
    assert 8 <= x[0] <= 15 and 18 <= x[1] <= 30 and 18 <= x[2] <= 30 and 40 <= x[3] <= 60
    cams = pseudo_detect_camera(s, NoiseSpec(), 1, van_truck_config())
    assert sorted(d.cls.value for d in cams) == ["bicycle", "car", "truck", "van"]


@given(st.integers(0, 10_000), st.integers(0, 6))
def test_generated_objects_satisfy_invariants(seed, n):
    cfg = SceneConfig(n_objects=n)
    try:
        s = generate_scene(cfg, seed)
    except PlacementFailure:
        return
    for o in s.objects:
        assert dims_plausible(o.cls, o.box.dims)
        assert o.box.bottom == pytest.approx(0.0, abs=1e-12)
    for i, a in enumerate(s.objects):
        for b in s.objects[i + 1:]:
            assert not _footprint(a.box, 0).intersects(_footprint(b.box, 0))


def test_placement_failure_when_impossible():
    cfg = SceneConfig(n_objects=8, strata={"x": (10.0, 10.5)}, lateral_range=(0.0, 0.1),
                      placement_retries=5, scene_restarts=2)
    with pytest.raises(PlacementFailure):
        generate_scene(cfg, 0)


def test_zero_noise_lidar_is_ground_truth():
    s = generate_scene(SceneConfig(), 5)
    dets = pseudo_detect_lidar(s, NoiseSpec(), 6)
    assert [d.geometry for d in dets] == [o.box for o in s.objects]
    assert [d.source_object for d in dets] == [o.id for o in s.objects]


def test_miss_rate_one_leaves_only_clutter():
    s = generate_scene(SceneConfig(), 5)
    assert pseudo_detect_lidar(s, NoiseSpec(miss_rate=1.0), 1) == []
    dets = pseudo_detect_lidar(s, NoiseSpec(miss_rate=1.0, clutter_rate=3.0), 1)
    assert all(d.source_object is None for d in dets)


def test_position_noise_statistics():
    # generator-level oracle: the spread of x offsets over many draws
    obj = SceneObject("obj0", "car", Box3D((20, 0, 0.8), CLASS_DIMS[ObjectClass.CAR]))
    s = generate_scene(SceneConfig(n_objects=0), 0)
    s = type(s)(s.ego, s.camera, (obj,), 0)
    err = [pseudo_detect_lidar(s, NoiseSpec(pos_sigma=0.2), k)[0].geometry.center[0] - 20.0
           for k in range(1000)]
    assert np.std(err) == pytest.approx(0.2, rel=0.1)


def test_zero_noise_camera_equals_projection():
    s = generate_scene(van_truck_config(), 2)
    dets = pseudo_detect_camera(s, NoiseSpec(), 3, van_truck_config())
    by_src = {o.id: o for o in s.objects}
    for d in dets:
        assert d.geometry == project_box(by_src[d.source_object].box, s.camera)


def test_fully_hidden_object_is_dropped():
    cfg = SceneConfig(n_objects=0)
    s = generate_scene(cfg, 0)
    front = SceneObject("obj0", "truck", Box3D((12, 0, 1.7), CLASS_DIMS[ObjectClass.TRUCK]))
    hidden = SceneObject("obj1", "car", Box3D((30, 0, 0.8), CLASS_DIMS[ObjectClass.CAR]))
    s = type(s)(s.ego, s.camera, (front, hidden), 0)
    assert max_occlusion(hidden, s.objects, s.camera) == 1.0
    assert [d.source_object for d in pseudo_detect_camera(s, NoiseSpec(), 0, cfg)] == ["obj0"]


def test_occlusion_fraction_cases(cam):
    b = Box3D((20, 0, 1), (2, 2, 2))
    near = Box3D((19.999, 0, 1), (2, 2, 2))
    # identical extents, nearer blocker
    assert occlusion_fraction(b, Box3D((20 - 1e-9, 0, 1), (2, 2, 2)), cam) == pytest.approx(1.0)
    assert occlusion_fraction(near, b, cam) == 0.0  # blocker farther
    assert occlusion_fraction(b, Box3D((20, 8, 1), (2, 2, 2)), cam) == 0.0


def test_half_overlap_occlusion_matches_rectangle_overlap(cam):
    subject = Box3D((30, 0, 1), (2, 2, 2))
    hull = project_box(subject, cam)
    u0, v0, u1, v1 = hull.extents
    # place a blocker whose hull covers the right half of the subject's hull
    z = 10.0
    width_px = (u1 - u0) / 2
    # blocker spans u in [u0 + w/2, u1 + something]; choose its near face at depth z
    y_right = -((u1 + 50) - 960) * z / 1000
    y_left = -((u0 + width_px) - 960) * z / 1000
    blocker = Box3D((z + 0.05, (y_left + y_right) / 2, 1.5), (3.0, y_left - y_right, 0.1))
    expected = intersection_area(hull, project_box(blocker, cam)) / hull.area
    assert expected == pytest.approx(0.5, abs=0.02)
    assert occlusion_fraction(subject, blocker, cam) == pytest.approx(expected)


def test_detection_geometry_must_match_sensor():
    with pytest.raises(TypeError):
        Detection("x", "car", "camera", Box3D((10, 0, 1), (1, 1, 1)))
    with pytest.raises(ValueError):
        Detection("x", "car", "camera", Box2D((1, 1), (1, 1)), confidence=2.0)


def test_noise_spec_rejects_negatives():
    with pytest.raises(ValueError):
        NoiseSpec(pos_sigma=-1)
