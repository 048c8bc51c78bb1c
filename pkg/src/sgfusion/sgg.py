"""Scene graphs and the three ways this package builds them.

* ``build_graph_lidar`` evaluates geometric relation functions over 3D boxes.
* ``build_graph_monocular`` lifts 2D boxes to depth intervals using class
  height priors and only asserts relations that hold for every
  configuration inside those intervals.
* ``import_external_graph`` ingests (subject, predicate, object) triplet
  documents produced elsewhere, e.g. by a vision-language model.

Direction convention for the LiDAR vocabulary (ego frame, x forward):
``front_of(A, B)`` means A is farther ahead along the ego's forward axis
than B. The camera vocabulary follows the viewer: ``in_front_of(A, B)``
means A is nearer the camera than B, i.e. it corresponds to
``behind(A, B)`` in the LiDAR vocabulary.
"""

from __future__ import annotations

import difflib
import enum
import logging
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Optional

import jsonschema
import numpy as np

from .geometry import Box2D, Box3D, CameraModel, Pose
from .scene import (CLASS_DIMS, Detection, ObjectClass, Sensor, dims_range,
                    occlusion_fraction)

log = logging.getLogger(__name__)


class UnsupportedPredicate(ValueError):
    pass


class UnknownPredicate(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


class Predicate(str, enum.Enum):
    FRONT_OF = "front_of"
    BEHIND = "behind"
    LEFT_OF = "left_of"
    RIGHT_OF = "right_of"
    OCCLUDING = "occluding"
    OCCLUDED_BY = "occluded_by"
    FOLLOWING = "following"
    FOLLOWED_BY = "followed_by"
    FAR_FROM = "far_from"
    CLOSE_TO = "close_to"
    NEXT_TO = "next_to"
    # camera vocabulary
    IN_FRONT_OF = "in_front_of"
    NEAR = "near"


P = Predicate

COMPLEMENT = {
    P.FRONT_OF: P.BEHIND, P.BEHIND: P.FRONT_OF,
    P.LEFT_OF: P.RIGHT_OF, P.RIGHT_OF: P.LEFT_OF,
    P.OCCLUDING: P.OCCLUDED_BY, P.OCCLUDED_BY: P.OCCLUDING,
    P.FOLLOWING: P.FOLLOWED_BY, P.FOLLOWED_BY: P.FOLLOWING,
    P.FAR_FROM: P.FAR_FROM, P.CLOSE_TO: P.CLOSE_TO, P.NEXT_TO: P.NEXT_TO,
    P.NEAR: P.NEAR,
}
SYMMETRIC = frozenset(p for p, q in COMPLEMENT.items() if p is q)
CANONICAL = frozenset({P.FRONT_OF, P.LEFT_OF, P.OCCLUDING, P.FOLLOWING})
LIDAR_PREDICATES = (P.FRONT_OF, P.BEHIND, P.LEFT_OF, P.RIGHT_OF, P.OCCLUDING,
                    P.OCCLUDED_BY, P.FOLLOWING, P.FOLLOWED_BY, P.FAR_FROM,
                    P.CLOSE_TO, P.NEXT_TO)
CAMERA_PREDICATES = (P.IN_FRONT_OF, P.NEAR, P.OCCLUDING, P.FOLLOWING)


@dataclass(frozen=True)
class RelationParams:
    d_close: float = 10.0
    d_far: float = 25.0
    next_to_lateral: float = 4.0
    next_to_longitudinal: float = 2.0
    front_margin: float = 1.0
    lane_half_width: float = 1.75
    occlusion_overlap: float = 0.3
    following_max_gap: float = 25.0
    following_lateral: float = 2.0
    heading_cos: float = 0.9
    min_speed: float = 0.5

    def __post_init__(self):
        if not self.d_close < self.d_far:
            raise ValueError("d_close must be smaller than d_far")
        for name, value in self.__dict__.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.occlusion_overlap < 1:
            raise ValueError("occlusion_overlap must lie in (0, 1)")


@dataclass(frozen=True)
class GraphNode:
    id: str
    cls: ObjectClass
    sensor: Sensor
    detection: Optional[Detection] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cls", ObjectClass(self.cls))
        object.__setattr__(self, "sensor", Sensor(self.sensor))


@dataclass(frozen=True, order=True)
class GraphEdge:
    subject: str
    predicate: Predicate
    object: str

    def __post_init__(self):
        object.__setattr__(self, "predicate", Predicate(self.predicate))
        if self.subject == self.object:
            raise ValueError(f"self-loop on {self.subject!r}")

    def reversed_complement(self) -> Optional["GraphEdge"]:
        q = COMPLEMENT.get(self.predicate)
        return None if q is None else GraphEdge(self.object, q, self.subject)

    def as_tuple(self) -> tuple:
        return (self.subject, self.predicate.value, self.object)


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple
    edges: tuple
    sensor: Sensor
    reduced: bool = False

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.id))
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise SchemaViolation("node ids must be unique within a graph")
        edges = tuple(sorted(set(self.edges)))
        known = set(ids)
        for e in edges:
            if e.subject not in known or e.object not in known:
                raise SchemaViolation(f"edge {e.as_tuple()} references a missing node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "sensor", Sensor(self.sensor))
        if self.reduced:
            present = set(edges)
            for e in edges:
                rc = e.reversed_complement()
                if rc is not None and rc != e and rc in present:
                    raise SchemaViolation(f"reduced graph holds both {e.as_tuple()} "
                                          f"and {rc.as_tuple()}")

    @property
    def node_ids(self) -> tuple:
        return tuple(n.id for n in self.nodes)

    def node(self, nid: str) -> GraphNode:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def edge_set(self) -> set:
        return {e.as_tuple() for e in self.edges}

    def expanded(self) -> set:
        """Edge triplets closed under complements."""
        out = set(self.edges)
        for e in self.edges:
            rc = e.reversed_complement()
            if rc is not None:
                out.add(rc)
        return out


# --------------------------------------------------------------------------
# rule-based relations over 3D boxes


def _ego_xyz(det, ego: Pose) -> np.ndarray:
    return ego.to_local(det.geometry.center)


def _speed_vec(det, ego: Pose):
    v = getattr(det, "velocity", None)
    if v is None:
        return None
    return np.asarray(v, dtype=float) @ np.array(
        [[math.cos(ego.yaw), -math.sin(ego.yaw), 0], [math.sin(ego.yaw), math.cos(ego.yaw), 0],
         [0, 0, 1]])


def _front(pa, pb, prm: RelationParams) -> bool:
    return (pa[0] - pb[0] > prm.front_margin
            and abs(pa[1] - pb[1]) < 2.0 * prm.lane_half_width)


def _left(pa, pb, prm: RelationParams) -> bool:
    return (pa[1] - pb[1] > prm.front_margin
            and abs(pa[0] - pb[0]) < prm.following_max_gap)


def _following(pa, pb, va, vb, prm: RelationParams) -> bool:
    if va is None or vb is None:
        return False
    if not _front(pb, pa, prm):
        return False
    if not (pb[0] - pa[0] < prm.following_max_gap
            and abs(pa[1] - pb[1]) < prm.following_lateral):
        return False
    sa, sb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if sa <= prm.min_speed or sb <= prm.min_speed:
        return False
    return float(va @ vb) / (sa * sb) > prm.heading_cos


def evaluate_predicate(p: Predicate, subj, obj, ego: Pose, params: RelationParams,
                       cam: CameraModel) -> bool:
    """Truth value of ``p(subj, obj)`` for two 3D detections."""
    p = Predicate(p)
    if p in (P.IN_FRONT_OF, P.NEAR):
        raise UnsupportedPredicate(f"{p.value} is camera vocabulary")
    if not (isinstance(subj.geometry, Box3D) and isinstance(obj.geometry, Box3D)):
        raise TypeError("relation functions need 3D detections")
    if p in (P.BEHIND, P.RIGHT_OF, P.OCCLUDED_BY, P.FOLLOWED_BY):
        return evaluate_predicate(COMPLEMENT[p], obj, subj, ego, params, cam)
    pa, pb = _ego_xyz(subj, ego), _ego_xyz(obj, ego)
    if p is P.FRONT_OF:
        return _front(pa, pb, params)
    if p is P.LEFT_OF:
        return _left(pa, pb, params)
    if p is P.OCCLUDING:
        return occlusion_fraction(obj.geometry, subj.geometry, cam) > params.occlusion_overlap
    if p is P.FOLLOWING:
        return _following(pa, pb, _speed_vec(subj, ego), _speed_vec(obj, ego), params)
    dist = float(np.linalg.norm(pa - pb))
    if p is P.CLOSE_TO:
        return dist < params.d_close
    if p is P.FAR_FROM:
        return dist > params.d_far
    if p is P.NEXT_TO:
        return (abs(pa[1] - pb[1]) < params.next_to_lateral
                and abs(pa[0] - pb[0]) < params.next_to_longitudinal)
    raise UnsupportedPredicate(p.value)


def pair_relations(a, b, ego: Pose, params: RelationParams, cam: CameraModel) -> list:
    """All LiDAR-vocabulary edges from ``a`` to ``b``."""
    return [GraphEdge(a.id, p, b.id) for p in LIDAR_PREDICATES
            if evaluate_predicate(p, a, b, ego, params, cam)]


def _nodes_for(detections) -> list:
    return [GraphNode(d.id, d.cls, d.sensor, d) for d in detections]


def build_graph_lidar(detections, ego: Pose, cam: CameraModel,
                      params: Optional[RelationParams] = None) -> SceneGraph:
    params = params or RelationParams()
    dets = list(detections)
    for d in dets:
        if not isinstance(d.geometry, Box3D):
            raise TypeError(f"detection {d.id} is not 3D")
    edges = []
    for a, b in permutations(dets, 2):
        edges.extend(pair_relations(a, b, ego, params, cam))
    return SceneGraph(tuple(_nodes_for(dets)), tuple(edges), Sensor.LIDAR, reduced=False)


def _canonical(e: GraphEdge) -> GraphEdge:
    p = e.predicate
    if p in SYMMETRIC:
        return e if e.subject < e.object else GraphEdge(e.object, p, e.subject)
    if p in COMPLEMENT and p not in CANONICAL:
        return e.reversed_complement()
    return e


def reduce_graph(g: SceneGraph) -> SceneGraph:
    """Keep one member of every complement pair (front_of, left_of, occluding,
    following; min-id-first for symmetric relations)."""
    return SceneGraph(g.nodes, tuple({_canonical(e) for e in g.edges}), g.sensor, reduced=True)


def expand_graph(g: SceneGraph) -> SceneGraph:
    """Inverse of ``reduce_graph``: add every implied complement edge."""
    return SceneGraph(g.nodes, tuple(g.expanded()), g.sensor, reduced=False)


# --------------------------------------------------------------------------
# monocular lifting

# Relative size spread the lifter assumes around each class prior. It must
# cover the real spread (``SceneConfig.dim_jitter``) for the lifted relations
# to stay sound; wider is safer but certifies fewer relations.
LIFT_TOLERANCE = 0.1


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def _max_abs_diff(a: Interval, b: Interval) -> float:
    return max(abs(a.hi - b.lo), abs(a.lo - b.hi))


@dataclass(frozen=True)
class LiftedObject:
    """Ego-frame centre bounds for one camera detection plus a point estimate."""

    id: str
    x: Interval
    y: Interval
    z: Interval
    depth: Interval
    estimate: Box3D


def lift_detection(det: Detection, cam: CameraModel, ego: Pose,
                   tolerance: float = LIFT_TOLERANCE, pixel_margin: float = 0.0) -> LiftedObject:
    """Bound the centre of a lane-aligned object seen as ``det``.

    The hull height of a box whose top is at or above the camera is
    ``f_v * h / z_near`` with ``z_near`` the depth of its nearest face, so a
    class height range gives a depth range. Exact when the camera sits on
    the ground plane; the bounds assume boxes aligned with the camera axis.
    """
    (lo_dims, hi_dims) = dims_range(det.cls, tolerance)
    nominal = CLASS_DIMS[det.cls]
    u0, v0, u1, v1 = det.geometry.extents
    W, H = cam.image_size
    fu, fv = cam.focal
    cu = cam.principal[0]
    edge = 0.5 + pixel_margin
    h_px = max(v1 - v0, 1e-6)
    h_big, h_small = h_px + pixel_margin, max(h_px - pixel_margin, 1e-6)
    clipped_v = v0 <= edge or v1 >= H - edge
    z_lo = 0.1 if clipped_v else fv * lo_dims[0] / h_big
    z_hi = fv * hi_dims[0] / h_small
    z_est = fv * nominal[0] / h_px

    # camera-frame lateral offset (left positive) of the centre as a function
    # of near-face depth z and length l, from the hull's horizontal extremes
    q_left = (cu - (u0 - pixel_margin)) / fu
    q_right = (cu - (u1 + pixel_margin)) / fu

    def lateral(z, l):
        left = q_left * (z if q_left >= 0 else z + l)
        right = q_right * (z if q_right <= 0 else z + l)
        return 0.5 * (left + right)

    corners = [lateral(z, l) for z in (z_lo, z_hi) for l in (lo_dims[2], hi_dims[2])]
    y_lo, y_hi = min(corners), max(corners)
    if u0 <= edge:
        y_hi = math.inf
    if u1 >= W - edge:
        y_lo = -math.inf

    cam_local = ego.to_local(cam.position)
    d_lo, d_hi = z_lo + lo_dims[2] / 2.0, z_hi + hi_dims[2] / 2.0
    x = Interval(cam_local[0] + d_lo, cam_local[0] + d_hi)
    y = Interval(cam_local[1] + y_lo, cam_local[1] + y_hi)
    z = Interval(lo_dims[0] / 2.0 - ego.position[2], hi_dims[0] / 2.0 - ego.position[2])

    x_est = z_est + nominal[2] / 2.0
    y_est = lateral(z_est, nominal[2])
    offset = cam.extrinsic.forward * x_est + cam.extrinsic.left * y_est
    center = cam.position + offset
    center = np.array([center[0], center[1], ego.position[2] + nominal[0] / 2.0])
    estimate = Box3D(center, nominal, cam.extrinsic.yaw)
    return LiftedObject(det.id, x, y, z, Interval(d_lo, d_hi), estimate)


def _certainly_front(a: LiftedObject, b: LiftedObject, prm: RelationParams) -> bool:
    return (a.x.lo - b.x.hi > prm.front_margin
            and _max_abs_diff(a.y, b.y) < 2.0 * prm.lane_half_width)


def _certainly_near(a: LiftedObject, b: LiftedObject, prm: RelationParams) -> bool:
    dx, dy, dz = _max_abs_diff(a.x, b.x), _max_abs_diff(a.y, b.y), _max_abs_diff(a.z, b.z)
    if math.sqrt(dx * dx + dy * dy + dz * dz) < prm.d_close:
        return True
    return dy < prm.next_to_lateral and dx < prm.next_to_longitudinal


def _overlap_fraction(subject: Box2D, blocker: Box2D) -> float:
    su0, sv0, su1, sv1 = subject.extents
    bu0, bv0, bu1, bv1 = blocker.extents
    du = min(su1, bu1) - max(su0, bu0)
    dv = min(sv1, bv1) - max(sv0, bv0)
    if du <= 0 or dv <= 0 or subject.area <= 0:
        return 0.0
    return min(1.0, du * dv / subject.area)


def build_graph_monocular(detections, cam: CameraModel, params: Optional[RelationParams] = None,
                          ego: Optional[Pose] = None, tolerance: float = LIFT_TOLERANCE,
                          pixel_margin: float = 0.0) -> SceneGraph:
    """Camera-vocabulary graph from 2D detections.

    Emits ``in_front_of`` (nearer first), ``near`` and ``occluding`` only
    where every centre position consistent with the class priors agrees;
    ``following`` needs velocities and is never emitted here.
    """
    params = params or RelationParams()
    ego = ego if ego is not None else Pose()
    dets = list(detections)
    for d in dets:
        if not isinstance(d.geometry, Box2D):
            raise TypeError(f"detection {d.id} is not 2D")
    lifted = {d.id: lift_detection(d, cam, ego, tolerance, pixel_margin) for d in dets}
    edges = []
    for a, b in permutations(dets, 2):
        la, lb = lifted[a.id], lifted[b.id]
        if _certainly_front(lb, la, params):
            edges.append(GraphEdge(a.id, P.IN_FRONT_OF, b.id))
        if _certainly_near(la, lb, params):
            edges.append(GraphEdge(a.id, P.NEAR, b.id))
        if (la.depth.hi < lb.depth.lo
                and _overlap_fraction(b.geometry, a.geometry) > params.occlusion_overlap):
            edges.append(GraphEdge(a.id, P.OCCLUDING, b.id))
    nodes = [GraphNode(d.id, d.cls, Sensor.CAMERA, d) for d in dets]
    return SceneGraph(tuple(nodes), tuple(edges), Sensor.CAMERA, reduced=False)


# --------------------------------------------------------------------------
# triplet documents

GRAPH_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "scene graph",
    "type": "object",
    "required": ["sensor", "reduced", "nodes", "edges"],
    "additionalProperties": False,
    "properties": {
        "sensor": {"type": "string"},
        "reduced": {"type": "boolean"},
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "class"],
                "additionalProperties": False,
                "properties": {"id": {"type": "string"}, "class": {"type": "string"}},
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["subject", "predicate", "object"],
                "additionalProperties": False,
                "properties": {
                    "subject": {"type": "string"},
                    "predicate": {"type": "string"},
                    "object": {"type": "string"},
                },
            },
        },
    },
}

# free-text relation names seen from captioning / VLM output
PREDICATE_ALIASES = {
    "in front of": P.IN_FRONT_OF,
    "ahead of": P.IN_FRONT_OF,
    "near": P.NEAR,
    "nearby": P.NEAR,
    "close": P.NEAR,
    "beside": P.NEXT_TO,
    "next to": P.NEXT_TO,
    "close to": P.CLOSE_TO,
    "far from": P.FAR_FROM,
    "front of": P.FRONT_OF,
    "left of": P.LEFT_OF,
    "right of": P.RIGHT_OF,
    "to the left of": P.LEFT_OF,
    "to the right of": P.RIGHT_OF,
    "occluded by": P.OCCLUDED_BY,
    "blocking": P.OCCLUDING,
    "followed by": P.FOLLOWED_BY,
    "behind": P.BEHIND,
    "following": P.FOLLOWING,
    "occluding": P.OCCLUDING,
}


def normalize_predicate(text: str, strict: bool = False) -> Optional[Predicate]:
    """Map a predicate string onto the vocabulary.

    Exact names and known aliases always map. Otherwise strict mode raises
    UnknownPredicate and lenient mode takes the closest alias by string
    similarity, returning None if nothing is close.
    """
    key = " ".join(text.strip().lower().replace("_", " ").replace("-", " ").split())
    try:
        return Predicate(key.replace(" ", "_"))
    except ValueError:
        pass
    if key in PREDICATE_ALIASES:
        return PREDICATE_ALIASES[key]
    if strict:
        raise UnknownPredicate(text)
    close = difflib.get_close_matches(key, list(PREDICATE_ALIASES), n=1, cutoff=0.75)
    if not close:
        log.warning("dropping edge with unrecognised predicate %r", text)
        return None
    return PREDICATE_ALIASES[close[0]]


def graph_to_document(g: SceneGraph) -> dict:
    return {
        "sensor": g.sensor.value,
        "reduced": bool(g.reduced),
        "nodes": [{"id": n.id, "class": n.cls.value} for n in g.nodes],
        "edges": [{"subject": e.subject, "predicate": e.predicate.value, "object": e.object}
                  for e in g.edges],
    }


def import_external_graph(document: dict, strict: bool = False, detections=None) -> SceneGraph:
    """Validate a triplet document and turn it into a SceneGraph.

    ``detections`` (id -> Detection) optionally attaches geometry to nodes.
    """
    try:
        jsonschema.validate(document, GRAPH_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaViolation(exc.message) from exc
    try:
        sensor = Sensor(document["sensor"])
    except ValueError as exc:
        raise SchemaViolation(f"unknown sensor {document['sensor']!r}") from exc
    detections = detections or {}
    nodes = []
    for n in document["nodes"]:
        try:
            cls = ObjectClass(n["class"].strip().lower())
        except ValueError as exc:
            raise SchemaViolation(f"unknown class {n['class']!r}") from exc
        nodes.append(GraphNode(n["id"], cls, sensor, detections.get(n["id"])))
    ids = {n.id for n in nodes}
    edges = []
    for e in document["edges"]:
        if e["subject"] not in ids or e["object"] not in ids:
            raise SchemaViolation(f"edge {e} references a missing node")
        if e["subject"] == e["object"]:
            raise SchemaViolation(f"edge {e} is a self-loop")
        p = normalize_predicate(e["predicate"], strict=strict)
        if p is not None:
            edges.append(GraphEdge(e["subject"], p, e["object"]))
    try:
        return SceneGraph(tuple(nodes), tuple(edges), sensor, reduced=document["reduced"])
    except SchemaViolation:
        raise
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from exc
