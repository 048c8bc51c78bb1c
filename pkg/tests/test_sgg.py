import pytest
from hypothesis import given, strategies as st

from sgfusion.geometry import Box2D, Box3D, CameraModel, Pose
from sgfusion.harness.serialize import export_graph
from sgfusion.scene import (CLASS_DIMS, Detection, NoiseSpec, ObjectClass, SceneConfig,
                            van_truck_config, generate_scene, pseudo_detect_camera, pseudo_detect_lidar)
from sgfusion.sgg import (COMPLEMENT, GraphEdge, GraphNode, LIDAR_PREDICATES, Predicate,
                          RelationParams, SceneGraph, SchemaViolation, UnknownPredicate,
                          UnsupportedPredicate, build_graph_lidar, build_graph_monocular,
                          evaluate_predicate, expand_graph, graph_to_document,
                          import_external_graph, lift_detection, normalize_predicate,
                          reduce_graph)

from oracles import CAMERA_MAP, brute_force_edges, relation

EGO = Pose()
PRM = RelationParams()


def lidar(i, center, cls="car", dims=None, yaw=0.0, velocity=None):
    dims = dims or CLASS_DIMS[ObjectClass(cls)]
    return Detection(f"L{i}", cls, "lidar", Box3D(center, dims, yaw), velocity=velocity)


def describe(d):
    return {"center": tuple(d.geometry.center), "dims": d.geometry.dims, "yaw": d.geometry.yaw,
            "velocity": None if d.velocity is None else tuple(d.velocity)}


def test_front_of_and_its_complement(cam):
    a, b = lidar(0, (35, 0, 0.8)), lidar(1, (20, 0.5, 0.8))
    assert evaluate_predicate("front_of", a, b, EGO, PRM, cam)
    assert evaluate_predicate("behind", b, a, EGO, PRM, cam)
    assert not evaluate_predicate("front_of", b, a, EGO, PRM, cam)


def test_close_to_excludes_far_from(cam):
    a, b = lidar(0, (20, 0, 0.8)), lidar(1, (20, 5, 0.8))
    assert evaluate_predicate("close_to", a, b, EGO, PRM, cam)
    assert not evaluate_predicate("far_from", a, b, EGO, PRM, cam)


def test_occluding_at_forty_percent_cover(cam):
    truck = lidar(1, (40, 0, 1.7), "truck")
    hull = truck.geometry
    from sgfusion.geometry import project_box
    t2 = project_box(hull, cam)
    u0, v0, u1, v1 = t2.extents
    # van hull covering the left 40% of the truck hull at depth 20
    z = 20.0
    width = 0.4 * (u1 - u0)
    y_left = (960 - (u0 - 30)) * z / 1000
    y_right = (960 - (u0 + width)) * z / 1000
    van = lidar(0, (z + 0.05, (y_left + y_right) / 2, 2.0), "van", dims=(4.0, y_left - y_right, 0.1))
    from oracles import covered
    frac = covered((tuple(truck.geometry.center), truck.geometry.dims, 0.0),
                   (tuple(van.geometry.center), van.geometry.dims, 0.0))
    assert frac == pytest.approx(0.4, abs=0.02)
    assert evaluate_predicate("occluding", van, truck, EGO, PRM, cam)
    assert evaluate_predicate("occluded_by", truck, van, EGO, PRM, cam)


def test_camera_only_predicates_are_rejected(cam):
    a, b = lidar(0, (20, 0, 0.8)), lidar(1, (30, 0, 0.8))
    for p in ("in_front_of", "near"):
        with pytest.raises(UnsupportedPredicate):
            evaluate_predicate(p, a, b, EGO, PRM, cam)


def test_tiny_graphs(cam):
    assert build_graph_lidar([], EGO, cam).edges == ()
    g = build_graph_lidar([lidar(0, (20, 0, 0.8))], EGO, cam)
    assert len(g.nodes) == 1 and g.edges == ()


def test_van_truck_van_truck_relation(cam):
    s = generate_scene(van_truck_config(), 0)
    dets = pseudo_detect_lidar(s, NoiseSpec(), 0)
    g = build_graph_lidar(dets, s.ego, s.camera)
    van = next(d.id for d in dets if d.cls.value == "van")
    truck = next(d.id for d in dets if d.cls.value == "truck")
    # the van is nearer the ego in the same corridor: the truck is ahead of it
    assert (truck, "front_of", van) in g.edge_set()
    assert (van, "behind", truck) in g.edge_set()


pair_strategy = st.tuples(
    st.floats(5, 70), st.floats(-8, 8), st.floats(5, 70), st.floats(-8, 8),
    st.sampled_from(list(ObjectClass)), st.sampled_from(list(ObjectClass)),
    st.floats(-0.3, 0.3), st.floats(-0.3, 0.3),
    st.one_of(st.none(), st.tuples(st.floats(-12, 12), st.floats(-3, 3))),
    st.one_of(st.none(), st.tuples(st.floats(-12, 12), st.floats(-3, 3))))


@given(pair_strategy)
def test_predicates_agree_with_closed_form(t):
    cam = CameraModel()
    xa, ya, xb, yb, ca, cb, ra, rb, va, vb = t
    a = lidar(0, (xa, ya, CLASS_DIMS[ca][0] / 2), ca, yaw=ra,
              velocity=None if va is None else (*va, 0.0))
    b = lidar(1, (xb, yb, CLASS_DIMS[cb][0] / 2), cb, yaw=rb,
              velocity=None if vb is None else (*vb, 0.0))
    for p in LIDAR_PREDICATES:
        assert evaluate_predicate(p, a, b, EGO, PRM, cam) == relation(p.value, describe(a), describe(b)), p


def random_detections(seed, n=5, noise=NoiseSpec()):
    s = generate_scene(SceneConfig(n_objects=n), seed)
    return s, pseudo_detect_lidar(s, noise, seed + 1)


@given(st.integers(0, 5000), st.integers(0, 8))
def test_graph_equals_brute_force(seed, n):
    try:
        s, dets = random_detections(seed, n)
    except Exception:
        return
    g = build_graph_lidar(dets, s.ego, s.camera)
    assert g.edge_set() == brute_force_edges({d.id: describe(d) for d in dets})


@given(st.integers(0, 5000))
def test_complement_closure_and_exclusivity(seed):
    s, dets = random_detections(seed, 5, NoiseSpec(pos_sigma=1.0))
    edges = build_graph_lidar(dets, s.ego, s.camera).edge_set()
    for a, p, b in edges:
        assert (b, COMPLEMENT[Predicate(p)].value, a) in edges
        assert not (p == "close_to" and (a, "far_from", b) in edges)
        assert not (p == "front_of" and (a, "behind", b) in edges)


@given(st.integers(0, 5000))
def test_reduce_is_idempotent_and_expand_inverts_it(seed):
    s, dets = random_detections(seed, 5)
    g = build_graph_lidar(dets, s.ego, s.camera)
    r = reduce_graph(g)
    assert r.reduced
    assert reduce_graph(r).edge_set() == r.edge_set()
    assert expand_graph(r).edge_set() == g.edge_set()


def test_reduce_examples():
    nodes = (GraphNode("A", "car", "lidar"), GraphNode("B", "car", "lidar"))
    g = SceneGraph(nodes, (GraphEdge("A", "front_of", "B"), GraphEdge("B", "behind", "A")), "lidar")
    assert reduce_graph(g).edge_set() == {("A", "front_of", "B")}
    g = SceneGraph(nodes, (GraphEdge("A", "close_to", "B"), GraphEdge("B", "close_to", "A")), "lidar")
    assert reduce_graph(g).edge_set() == {("A", "close_to", "B")}
    with pytest.raises(SchemaViolation):
        SceneGraph(nodes, (GraphEdge("A", "front_of", "B"), GraphEdge("B", "behind", "A")),
                   "lidar", reduced=True)


# -- monocular lifting

def camera_det(i, cls, box2d):
    return Detection(f"C{i}", cls, "camera", box2d)


def test_taller_box_is_nearer(cam):
    h = CLASS_DIMS[ObjectClass.CAR][0]
    small = camera_det(0, "car", Box2D.from_extents(900, 500, 1000, 540))
    tall = camera_det(1, "car", Box2D.from_extents(880, 460, 1040, 540))
    near = lift_detection(tall, cam, EGO, tolerance=0.0)
    far = lift_detection(small, cam, EGO, tolerance=0.0)
    # pinhole oracle: near-face depth f * H / h_px
    assert near.depth.lo - CLASS_DIMS[ObjectClass.CAR][2] / 2 == pytest.approx(1000 * h / 80)
    assert far.depth.lo - CLASS_DIMS[ObjectClass.CAR][2] / 2 == pytest.approx(1000 * h / 40)
    g = build_graph_monocular([small, tall], cam, tolerance=0.0)
    assert ("C1", "in_front_of", "C0") in g.edge_set()
    assert ("C0", "in_front_of", "C1") not in g.edge_set()


def test_single_camera_detection_has_no_edges(cam):
    d = camera_det(0, "car", Box2D.from_extents(900, 500, 1000, 540))
    assert build_graph_monocular([d], cam).edges == ()


def mapped(lidar_graph, id_map):
    out = set()
    for a, p, b in lidar_graph.edge_set():
        if p in CAMERA_MAP:
            out.add((id_map[a], CAMERA_MAP[p], id_map[b]))
    return out


@pytest.mark.parametrize("seed", range(12))
def test_exact_lift_reproduces_the_mapped_lidar_graph(seed):
    cfg = van_truck_config(dim_jitter=0.0)
    s = generate_scene(cfg, seed)
    L = pseudo_detect_lidar(s, NoiseSpec(), 1, cfg)
    C = pseudo_detect_camera(s, NoiseSpec(), 2, cfg)
    gl = build_graph_lidar(L, s.ego, s.camera)
    gc = build_graph_monocular(C, s.camera, tolerance=0.0)
    ids = {d.id: "C-" + d.source_object for d in L}
    assert gc.edge_set() == mapped(gl, ids)


@given(st.integers(0, 5000))
def test_interval_lift_only_asserts_true_relations(seed):
    cfg = SceneConfig(n_objects=5, dim_jitter=0.1)
    try:
        s = generate_scene(cfg, seed)
    except Exception:
        return
    L = pseudo_detect_lidar(s, NoiseSpec(), 1, cfg)
    C = pseudo_detect_camera(s, NoiseSpec(), 2, cfg)
    gl = build_graph_lidar(L, s.ego, s.camera)
    gc = build_graph_monocular(C, s.camera, tolerance=0.1)
    assert gc.edge_set() <= mapped(gl, {d.id: "C-" + d.source_object for d in L})


# -- triplet documents

def test_document_round_trip():
    s, dets = random_detections(3, 4)
    g = build_graph_lidar(dets, s.ego, s.camera)
    back = import_external_graph(export_graph(g))
    assert back.edge_set() == g.edge_set() and back.node_ids == g.node_ids
    assert back.sensor == g.sensor


def test_empty_graph_document():
    doc = graph_to_document(SceneGraph((), (), "camera"))
    assert doc == {"sensor": "camera", "reduced": False, "nodes": [], "edges": []}


def test_two_node_import_and_aliases():
    doc = {"sensor": "camera", "reduced": False,
           "nodes": [{"id": "a", "class": "Car"}, {"id": "b", "class": "truck"}],
           "edges": [{"subject": "a", "predicate": "near", "object": "b"},
                     {"subject": "a", "predicate": "in front of", "object": "b"}]}
    g = import_external_graph(doc)
    assert len(g.nodes) == 2
    assert g.edge_set() == {("a", "near", "b"), ("a", "in_front_of", "b")}


def test_dangling_edge_is_a_schema_violation():
    doc = {"sensor": "camera", "reduced": False, "nodes": [{"id": "a", "class": "car"}],
           "edges": [{"subject": "a", "predicate": "near", "object": "zz"}]}
    with pytest.raises(SchemaViolation):
        import_external_graph(doc)
    with pytest.raises(SchemaViolation):
        import_external_graph({"sensor": "camera"})


def test_predicate_normalisation_modes():
    assert normalize_predicate("In-Front-Of") is Predicate.IN_FRONT_OF
    assert normalize_predicate("nearr") is Predicate.NEAR
    assert normalize_predicate("xyzzy") is None
    with pytest.raises(UnknownPredicate):
        normalize_predicate("nearr", strict=True)


def test_relation_params_validation():
    with pytest.raises(ValueError):
        RelationParams(d_close=30, d_far=25)
    with pytest.raises(ValueError):
        RelationParams(occlusion_overlap=1.5)
