"""Integrity checks over scene graphs.

Two stages. ``check_constraints`` tests one graph against a commonsense
knowledge base. ``cross_check`` compares the camera and LiDAR graphs over
matched nodes and labels every node and edge consistent, inconsistent or
unknown. ``hypothesize_perturbation`` then searches for the manipulation
that best explains the inconsistencies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import networkx as nx
import numpy as np

from .attack import (AttackConstraints, check_preconditions, grid_hulls, hull_iou,
                     scale_grid, search_limits)
from .fusion import solve_assignment
from .geometry import Box2D, Box3D, CameraModel, GeometryError, Pose, in_image, iou_2d, project_box
from .scene import CLASS_DIMS, PRIOR_TOLERANCE, Detection
from .sgg import COMPLEMENT, GraphEdge, Predicate, RelationParams, SceneGraph, reduce_graph

P = Predicate


class Verdict(str, enum.Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"
    UNKNOWN = "unknown"


# --------------------------------------------------------------------------
# knowledge base


class RuleKind(str, enum.Enum):
    MUTUAL_EXCLUSION = "mutual_exclusion"
    IMPLICATION = "implication"  # p(A, B) => not q(A, B)
    ACYCLICITY = "acyclicity"
    SYMMETRY_REQUIREMENT = "symmetry_requirement"


@dataclass(frozen=True)
class ConstraintRule:
    kind: RuleKind
    p: Predicate
    q: Optional[Predicate] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        object.__setattr__(self, "p", Predicate(self.p))
        if self.q is not None:
            object.__setattr__(self, "q", Predicate(self.q))
        binary = self.kind in (RuleKind.MUTUAL_EXCLUSION, RuleKind.IMPLICATION)
        if binary != (self.q is not None):
            raise ValueError(f"{self.kind.value} takes {'two' if binary else 'one'} predicate(s)")
        if binary and self.p is self.q:
            raise ValueError("a rule relating a predicate to itself is degenerate")

    @property
    def scope(self) -> str:
        return "graph" if self.kind is RuleKind.ACYCLICITY else "pair"

    @property
    def name(self) -> str:
        args = self.p.value if self.q is None else f"{self.p.value}, {self.q.value}"
        return f"{self.kind.value}({args})"


@dataclass(frozen=True)
class KnowledgeBase:
    rules: tuple
    class_dims: Mapping = field(default_factory=lambda: dict(CLASS_DIMS))
    plausibility_tolerance: Optional[float] = PRIOR_TOLERANCE

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(r if isinstance(r, ConstraintRule)
                                                else ConstraintRule(**r) for r in self.rules))
        # none of the rule kinds can demand an edge, so the empty graph always satisfies them
        if self.plausibility_tolerance is not None and not 0 <= self.plausibility_tolerance < 1:
            raise ValueError("plausibility tolerance must lie in [0, 1)")


def default_knowledge_base() -> KnowledgeBase:
    R, K = ConstraintRule, RuleKind
    return KnowledgeBase((
        R(K.MUTUAL_EXCLUSION, P.CLOSE_TO, P.FAR_FROM),
        R(K.MUTUAL_EXCLUSION, P.FRONT_OF, P.BEHIND),
        R(K.MUTUAL_EXCLUSION, P.NEAR, P.FAR_FROM),
        R(K.IMPLICATION, P.FOLLOWING, P.FRONT_OF),
        R(K.ACYCLICITY, P.OCCLUDING),
        R(K.ACYCLICITY, P.FRONT_OF),
    ))


@dataclass(frozen=True)
class Violation:
    rule: str
    nodes: tuple
    edges: tuple = ()

    def to_dict(self) -> dict:
        return {"rule": self.rule, "nodes": list(self.nodes),
                "edges": [list(e) for e in self.edges]}


# camera vocabulary expressed in LiDAR terms; ``near`` stays a disjunction
CAMERA_TO_LIDAR = {P.IN_FRONT_OF: P.BEHIND, P.NEAR: P.NEAR, P.OCCLUDING: P.OCCLUDING,
                   P.FOLLOWING: P.FOLLOWING}

SUPPORTED_BY = {P.NEAR: frozenset({P.CLOSE_TO, P.NEXT_TO})}

EXCLUDES = {
    P.FRONT_OF: {P.BEHIND, P.FOLLOWING},
    P.BEHIND: {P.FRONT_OF, P.FOLLOWED_BY},
    P.LEFT_OF: {P.RIGHT_OF},
    P.RIGHT_OF: {P.LEFT_OF},
    P.CLOSE_TO: {P.FAR_FROM},
    P.NEXT_TO: {P.FAR_FROM},
    P.NEAR: {P.FAR_FROM},
    P.FAR_FROM: {P.CLOSE_TO, P.NEXT_TO, P.NEAR},
    P.OCCLUDING: {P.OCCLUDED_BY},
    P.OCCLUDED_BY: {P.OCCLUDING},
    P.FOLLOWING: {P.FOLLOWED_BY, P.FRONT_OF},
    P.FOLLOWED_BY: {P.FOLLOWING, P.BEHIND},
}

# LiDAR predicates some camera claim is compared against, closed under complement
CROSS_CHECKED = frozenset(
    q for p in CAMERA_TO_LIDAR.values() for q in SUPPORTED_BY.get(p, {p})
) | frozenset(COMPLEMENT[q] for p in CAMERA_TO_LIDAR.values()
              for q in SUPPORTED_BY.get(p, {p}))


def _supports(claim: Predicate) -> frozenset:
    return SUPPORTED_BY.get(claim, frozenset({claim}))


def _translate(edge: GraphEdge, vocab: Mapping) -> GraphEdge:
    return GraphEdge(edge.subject, vocab.get(edge.predicate, edge.predicate), edge.object)


def _closure(edges) -> set:
    out = set(edges)
    for e in edges:
        q = COMPLEMENT.get(e.predicate)
        if q is not None:
            out.add(GraphEdge(e.object, q, e.subject))
    return out


def check_constraints(g: SceneGraph, kb: KnowledgeBase, vocab: Mapping = CAMERA_TO_LIDAR) -> list:
    """All rule violations of ``g``; camera predicates are translated first."""
    raw = {_translate(e, vocab) for e in g.edges}
    full = _closure(raw)
    index = {}
    for e in full:
        index.setdefault((e.subject, e.object), set()).add(e.predicate)
    out = []
    for rule in kb.rules:
        if rule.kind in (RuleKind.MUTUAL_EXCLUSION, RuleKind.IMPLICATION):
            seen = set()
            for (a, b), preds in sorted(index.items()):
                if rule.p in preds and rule.q in preds:
                    key = (a, b) if rule.kind is RuleKind.IMPLICATION else tuple(sorted((a, b)))
                    if key in seen:
                        continue
                    seen.add(key)
                    out.append(Violation(rule.name, key, ((a, rule.p.value, b), (a, rule.q.value, b))))
        elif rule.kind is RuleKind.ACYCLICITY:
            dg = nx.DiGraph()
            dg.add_edges_from((e.subject, e.object) for e in full if e.predicate is rule.p)
            for comp in nx.strongly_connected_components(dg):
                if len(comp) > 1:
                    nodes = tuple(sorted(comp))
                    edges = tuple(sorted((a, rule.p.value, b) for a, b in dg.subgraph(comp).edges))
                    out.append(Violation(rule.name, nodes, edges))
        elif rule.kind is RuleKind.SYMMETRY_REQUIREMENT and not g.reduced:
            for e in sorted(raw):
                if e.predicate is rule.p and GraphEdge(e.object, e.predicate, e.subject) not in full:
                    out.append(Violation(rule.name, (e.subject, e.object), (e.as_tuple(),)))
    if kb.plausibility_tolerance is not None:
        for n in g.nodes:
            box = getattr(n.detection, "geometry", None)
            if isinstance(box, Box3D) and not _plausible(n.cls, box.dims, kb):
                out.append(Violation("class_plausibility", (n.id,)))
    return out


def _plausible(cls, dims, kb: KnowledgeBase) -> bool:
    nominal = np.array(kb.class_dims[cls])
    tol = kb.plausibility_tolerance
    return bool(np.all(np.asarray(dims) >= nominal * (1 - tol) - 1e-9)
                and np.all(np.asarray(dims) <= nominal * (1 + tol) + 1e-9))


# --------------------------------------------------------------------------
# node matching and cross-checking


@dataclass(frozen=True)
class NodeMatch:
    pairs: tuple  # (camera id, lidar id, affinity)
    unmatched_camera: tuple
    unmatched_lidar: tuple

    def __post_init__(self):
        cams = [c for c, _, _ in self.pairs]
        lids = [l for _, l, _ in self.pairs]
        if len(set(cams)) != len(cams) or len(set(lids)) != len(lids):
            raise ValueError("node match must be one-to-one")

    @property
    def camera_to_lidar(self) -> dict:
        return {c: l for c, l, _ in self.pairs}

    @property
    def lidar_to_camera(self) -> dict:
        return {l: c for c, l, _ in self.pairs}

    def without_lidar(self, lid: str) -> "NodeMatch":
        pairs = tuple(p for p in self.pairs if p[1] != lid)
        dropped = tuple(c for c, l, _ in self.pairs if l == lid)
        return NodeMatch(pairs, tuple(sorted(self.unmatched_camera + dropped)),
                         tuple(x for x in self.unmatched_lidar if x != lid))


def _det_lookup(detections, graphs) -> dict:
    out = {}
    for g in graphs:
        for n in g.nodes:
            if n.detection is not None:
                out[n.id] = n.detection
    if detections is None:
        return out
    if isinstance(detections, Mapping):
        out.update(detections)
    else:
        out.update({d.id: d for d in detections})
    return out


def match_nodes(g_cam: SceneGraph, g_lidar: SceneGraph, detections, cam: CameraModel,
                threshold: float = 0.3) -> NodeMatch:
    """One-to-one camera/LiDAR node matching on class-gated image-plane IoU."""
    dets = _det_lookup(detections, (g_cam, g_lidar))
    cam_nodes, lid_nodes = list(g_cam.nodes), list(g_lidar.nodes)
    A = np.zeros((len(cam_nodes), len(lid_nodes)))
    for j, ln in enumerate(lid_nodes):
        d3 = dets.get(ln.id)
        if d3 is None or not isinstance(d3.geometry, Box3D):
            continue
        try:
            proj = project_box(d3.geometry, cam)
        except GeometryError:
            continue
        for i, cn in enumerate(cam_nodes):
            d2 = dets.get(cn.id)
            if d2 is not None and isinstance(d2.geometry, Box2D) and cn.cls is ln.cls:
                A[i, j] = iou_2d(d2.geometry, proj)
    res = solve_assignment(A, threshold)
    return NodeMatch(tuple((cam_nodes[i].id, lid_nodes[j].id, a) for i, j, a in res.pairs),
                     tuple(cam_nodes[i].id for i in res.unmatched_rows),
                     tuple(lid_nodes[j].id for j in res.unmatched_cols))


@dataclass(frozen=True)
class EdgeLabel:
    sensor: str
    edge: GraphEdge
    verdict: Verdict

    def to_dict(self) -> dict:
        s, p, o = self.edge.as_tuple()
        return {"sensor": self.sensor, "subject": s, "predicate": p, "object": o,
                "label": self.verdict.value}


@dataclass(frozen=True)
class PerturbationHypothesis:
    node: str
    kind: str
    score: float
    displacement: Optional[float] = None
    interval: Optional[tuple] = None
    consistent_gain: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("explanation score must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"node": self.node, "kind": self.kind, "score": self.score,
                "displacement_m": self.displacement,
                "interval_m": None if self.interval is None else list(self.interval),
                "consistent_gain": self.consistent_gain}


@dataclass(frozen=True)
class ConsistencyReport:
    node_labels: dict  # sensor -> {node id: Verdict}
    edge_labels: tuple
    violations: dict = field(default_factory=dict)
    hypotheses: tuple = ()
    match: Optional[NodeMatch] = field(default=None, compare=False)

    def inconsistent(self) -> set:
        """(sensor, triplet) keys of every inconsistent edge."""
        return {(l.sensor, l.edge.as_tuple()) for l in self.edge_labels
                if l.verdict is Verdict.INCONSISTENT}

    def count(self, verdict: Verdict) -> int:
        n = sum(1 for l in self.edge_labels if l.verdict is verdict)
        return n + sum(1 for labels in self.node_labels.values()
                       for v in labels.values() if v is verdict)

    def with_hypotheses(self, hyps) -> "ConsistencyReport":
        return ConsistencyReport(self.node_labels, self.edge_labels, self.violations,
                                 tuple(hyps), self.match)

    def to_dict(self) -> dict:
        return {
            "node_labels": {s: {k: v.value for k, v in sorted(labels.items())}
                            for s, labels in sorted(self.node_labels.items())},
            "edge_labels": [l.to_dict() for l in self.edge_labels],
            "violations": {s: [v.to_dict() for v in vs] for s, vs in sorted(self.violations.items())},
            "hypotheses": [h.to_dict() for h in self.hypotheses],
        }


def _judge(subject: str, claim: Predicate, obj: str, facts: dict) -> Verdict:
    preds = facts.get((subject, obj), ())
    if any(p in EXCLUDES.get(claim, ()) for p in preds):
        return Verdict.INCONSISTENT
    if any(p in _supports(claim) for p in preds):
        return Verdict.CONSISTENT
    return Verdict.UNKNOWN


def _index(edges) -> dict:
    out = {}
    for e in edges:
        out.setdefault((e.subject, e.object), set()).add(e.predicate)
    return out


def _unseen_occluder(edge: GraphEdge, matched: set, dets: dict, cam) -> bool:
    """``edge`` says an object the camera never reported covers one it did."""
    if cam is None or edge.predicate is not P.OCCLUDING:
        return False
    if edge.subject in matched or edge.object not in matched:
        return False
    det = dets.get(edge.subject)
    return det is not None and isinstance(det.geometry, Box3D) and in_image(det.geometry, cam)


def cross_check(g_cam: SceneGraph, g_lidar: SceneGraph, match: NodeMatch,
                vocab: Mapping = CAMERA_TO_LIDAR, kb: Optional[KnowledgeBase] = None,
                cam: Optional[CameraModel] = None, detections=None) -> ConsistencyReport:
    """Label every node and edge of both graphs.

    A camera claim supported by the LiDAR facts between the matched nodes is
    consistent, a claim contradicted by them is inconsistent, anything else
    (including edges touching unmatched nodes) is unknown. With ``cam``
    given, a LiDAR object that covers a matched object while itself fully in
    view yet unseen by the camera makes that occlusion edge inconsistent.
    """
    c2l = match.camera_to_lidar
    lidar_facts = _index(_closure(g_lidar.edges))
    claims = []
    for e in g_cam.edges:
        if e.subject in c2l and e.object in c2l:
            t = _translate(e, vocab)
            claims.append(GraphEdge(c2l[e.subject], t.predicate, c2l[e.object]))
    claim_facts = _index(_closure(claims))
    dets = _det_lookup(detections, (g_lidar,)) if cam is not None else {}
    matched_lidar = set(match.lidar_to_camera)

    edge_labels = []
    bad = {"camera": set(), "lidar": set()}
    for e in g_cam.edges:
        if e.subject in c2l and e.object in c2l:
            v = _judge(c2l[e.subject], vocab.get(e.predicate, e.predicate), c2l[e.object],
                       lidar_facts)
        else:
            v = Verdict.UNKNOWN
        edge_labels.append(EdgeLabel("camera", e, v))
        if v is Verdict.INCONSISTENT:
            bad["camera"].update((e.subject, e.object))
    for e in g_lidar.edges:
        if e.subject in matched_lidar and e.object in matched_lidar:
            v = Verdict.UNKNOWN
            for claim in claim_facts.get((e.subject, e.object), ()):
                if e.predicate in EXCLUDES.get(claim, ()):
                    v = Verdict.INCONSISTENT
                    break
                if e.predicate in _supports(claim):
                    v = Verdict.CONSISTENT
        elif _unseen_occluder(e, matched_lidar, dets, cam):
            v = Verdict.INCONSISTENT
        else:
            v = Verdict.UNKNOWN
        edge_labels.append(EdgeLabel("lidar", e, v))
        if v is Verdict.INCONSISTENT:
            bad["lidar"].update((e.subject, e.object))

    # an inconsistency on one side implicates the matched nodes on the other
    l2c = match.lidar_to_camera
    bad["lidar"] |= {c2l[c] for c in bad["camera"] if c in c2l}
    bad["camera"] |= {l2c[l] for l in bad["lidar"] if l in l2c}

    def label(nid, matched, sensor):
        if nid in bad[sensor]:
            return Verdict.INCONSISTENT
        return Verdict.CONSISTENT if nid in matched else Verdict.UNKNOWN

    node_labels = {
        "camera": {n.id: label(n.id, c2l, "camera") for n in g_cam.nodes},
        "lidar": {n.id: label(n.id, matched_lidar, "lidar") for n in g_lidar.nodes},
    }
    violations = {}
    if kb is not None:
        violations = {"camera": check_constraints(g_cam, kb, vocab),
                      "lidar": check_constraints(g_lidar, kb, vocab)}
    return ConsistencyReport(node_labels, tuple(edge_labels), violations, (), match)


# --------------------------------------------------------------------------
# perturbation hypotheses

_KIND_ORDER = {"translation_along_ray": 0, "false_positive": 1, "false_negative": 2}


def _supported_claims(report: ConsistencyReport) -> int:
    return sum(1 for l in report.edge_labels
               if l.sensor == "camera" and l.verdict is Verdict.CONSISTENT)


def _outcome(base: ConsistencyReport, new: ConsistencyReport) -> tuple:
    before, after = base.inconsistent(), new.inconsistent()
    total = max(len(before), 1)
    score = max(0, len(before - after) - len(after - before)) / total
    # only camera claims count: extra LiDAR support for one claim says nothing
    gain = _supported_claims(new) - _supported_claims(base)
    return float(score), int(gain)


def _ego_matrix(ego: Pose) -> np.ndarray:
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _relations_along_ray(centers, hulls, ok, moving: Detection, other: Detection,
                         ego: Pose, cam: CameraModel, prm: RelationParams) -> dict:
    """Truth arrays over candidate positions for every predicate between the
    moving detection and ``other``, in both orders. Mirrors evaluate_predicate."""
    R = _ego_matrix(ego)
    px = (centers - ego.position) @ R
    py = (other.geometry.center - ego.position) @ R
    d = px - py  # moving minus other
    lane = 2.0 * prm.lane_half_width

    def front(dx, dy):
        return (dx > prm.front_margin) & (np.abs(dy) < lane)

    def left(dx, dy):
        return (dy > prm.front_margin) & (np.abs(dx) < prm.following_max_gap)

    out = {}
    out[("m", P.FRONT_OF)] = front(d[:, 0], d[:, 1])
    out[("o", P.FRONT_OF)] = front(-d[:, 0], -d[:, 1])
    out[("m", P.LEFT_OF)] = left(d[:, 0], d[:, 1])
    out[("o", P.LEFT_OF)] = left(-d[:, 0], -d[:, 1])
    dist = np.linalg.norm(d, axis=1)
    close, far = dist < prm.d_close, dist > prm.d_far
    nxt = (np.abs(d[:, 1]) < prm.next_to_lateral) & (np.abs(d[:, 0]) < prm.next_to_longitudinal)
    for who in ("m", "o"):
        out[(who, P.CLOSE_TO)], out[(who, P.FAR_FROM)], out[(who, P.NEXT_TO)] = close, far, nxt

    va, vb = moving.velocity, other.velocity
    for who, lead_d in (("m", -d), ("o", d)):
        # follower "who" sits behind the leader: leader minus follower along x
        if va is None or vb is None:
            out[(who, P.FOLLOWING)] = np.zeros(len(d), dtype=bool)
            continue
        fa, fb = (va @ R, vb @ R) if who == "m" else (vb @ R, va @ R)
        sa, sb = float(np.linalg.norm(fa)), float(np.linalg.norm(fb))
        aligned = sa > prm.min_speed and sb > prm.min_speed and float(fa @ fb) / (sa * sb) > prm.heading_cos
        gap_ok = (lead_d[:, 0] < prm.following_max_gap) & (np.abs(d[:, 1]) < prm.following_lateral)
        out[(who, P.FOLLOWING)] = front(lead_d[:, 0], lead_d[:, 1]) & gap_ok & aligned

    # occlusion: margins are shares of the subject hull covered by the nearer blocker
    u0, v0, u1, v1 = hulls
    fwd_cam = cam.extrinsic.forward
    depth_m = (centers - cam.position) @ fwd_cam
    depth_o = float((other.geometry.center - cam.position) @ fwd_cam)
    try:
        ob = project_box(other.geometry, cam)
        ou0, ov0, ou1, ov1 = ob.extents
        o_area = ob.area
    except GeometryError:
        ob = None
    if ob is None:
        out[("m", P.OCCLUDING)] = out[("o", P.OCCLUDING)] = np.zeros(len(d), dtype=bool)
    else:
        iw = np.clip(np.minimum(u1, ou1) - np.maximum(u0, ou0), 0, None)
        ih = np.clip(np.minimum(v1, ov1) - np.maximum(v0, ov0), 0, None)
        inter = iw * ih
        m_area = (u1 - u0) * (v1 - v0)
        cover_o = np.where(o_area > 0, np.minimum(1.0, inter / max(o_area, 1e-300)), 0.0)
        cover_m = np.where(m_area > 0, np.minimum(1.0, inter / np.where(m_area > 0, m_area, 1.0)), 0.0)
        out[("m", P.OCCLUDING)] = ok & (depth_m < depth_o) & (cover_o > prm.occlusion_overlap)
        out[("o", P.OCCLUDING)] = ok & (depth_o < depth_m) & (cover_m > prm.occlusion_overlap)
    return out


def _edges_from(xid: str, oid: str, rel: dict, k: int) -> list:
    edges = []
    for p in (P.FRONT_OF, P.LEFT_OF, P.OCCLUDING, P.FOLLOWING):
        if rel[("m", p)][k]:
            edges += [GraphEdge(xid, p, oid), GraphEdge(oid, COMPLEMENT[p], xid)]
        if rel[("o", p)][k]:
            edges += [GraphEdge(oid, p, xid), GraphEdge(xid, COMPLEMENT[p], oid)]
    for p in (P.CLOSE_TO, P.FAR_FROM, P.NEXT_TO):
        if rel[("m", p)][k]:
            edges += [GraphEdge(xid, p, oid), GraphEdge(oid, p, xid)]
    return edges


def _runs(keys) -> list:
    """Maximal runs of equal consecutive keys as (first, last, key); None keys split runs."""
    runs, start = [], None
    for k, key in enumerate(keys):
        if start is not None and key != keys[start]:
            if keys[start] is not None:
                runs.append((start, k - 1, keys[start]))
            start = None
        if start is None:
            start = k
    if start is not None and keys[start] is not None:
        runs.append((start, len(keys) - 1, keys[start]))
    return runs


def translation_scan(node: str, report: ConsistencyReport, g_cam: SceneGraph,
                     g_lidar: SceneGraph, dets: dict, cam: CameraModel, c: AttackConstraints,
                     ego: Pose, params: RelationParams, t_step: float = 0.25,
                     s_step: float = 0.01) -> list:
    """Outcome of relocating ``node`` along its frustum, on a t grid.

    Returns (t, outcome) pairs with outcome (score, consistent gain), or
    None where no scale keeps the IoU with the matched camera box.
    """
    match = report.match
    partner = dets[match.lidar_to_camera[node]]
    moving = dets[node]
    box, target, axis, s_lo, s_hi = check_preconditions(moving, partner, cam, c)
    t_fwd, t_back = search_limits(box, cam, s_hi, c.zeta_min)
    ts = np.concatenate([-np.arange(0.0, -t_fwd, t_step)[::-1][:-1], np.arange(0.0, t_back, t_step)])
    ss = scale_grid(s_lo, s_hi, s_step)
    best_s = np.empty(len(ts))
    best_iou = np.empty(len(ts))
    for a in range(0, len(ts), 256):  # chunked to bound memory
        u0, v0, u1, v1, ok, _ = grid_hulls(box, axis, cam, ts[a:a + 256], ss)
        iou = hull_iou(u0, v0, u1, v1, ok, target)
        k = np.argmax(iou, axis=1)
        best_s[a:a + 256] = ss[k]
        best_iou[a:a + 256] = iou[np.arange(len(k)), k]
    feasible = best_iou >= c.zeta_min - 1e-12
    u0, v0, u1, v1, hok, centers = grid_hulls(box, axis, cam, ts, best_s, paired=True)
    hulls = (u0[:, 0], v0[:, 0], u1[:, 0], v1[:, 0])
    hok, centers = hok[:, 0], centers[:, 0]
    others = [dets[n.id] for n in g_lidar.nodes if n.id != node and n.id in dets]
    rels = [(o.id, _relations_along_ray(centers, hulls, hok, moving, o, ego, cam, params))
            for o in others]
    keep = tuple(e for e in g_lidar.edges if node not in (e.subject, e.object))

    signatures = []
    for k in range(len(ts)):
        if not feasible[k]:
            signatures.append(None)
            continue
        sig = []
        for oid, rel in rels:
            sig.extend(bool(v[k]) for v in rel.values())
        signatures.append(tuple(sig))
    cache = {}
    outcomes = []
    for k, sig in enumerate(signatures):
        if sig is None:
            outcomes.append(None)
            continue
        if sig not in cache:
            edges = list(keep)
            for oid, rel in rels:
                edges += _edges_from(node, oid, rel, k)
            g_new = SceneGraph(g_lidar.nodes, tuple(edges), g_lidar.sensor, reduced=False)
            if g_lidar.reduced:
                g_new = reduce_graph(g_new)
            new = cross_check(g_cam, g_new, match, cam=cam, detections=dets)
            cache[sig] = _outcome(report, new)
        outcomes.append(cache[sig])
    return list(zip(ts.tolist(), outcomes))


def hypothesize_perturbation(report: ConsistencyReport, g_cam: SceneGraph, g_lidar: SceneGraph,
                             detections, cam: CameraModel, c: Optional[AttackConstraints] = None,
                             ego: Optional[Pose] = None, params: Optional[RelationParams] = None,
                             t_step: float = 0.25) -> list:
    """Rank candidate explanations of the inconsistencies in ``report``.

    Translation hypotheses report, as ``interval``, the range of distances the
    node would have been pushed away from the camera (negative: pulled
    closer) such that moving it back makes the graphs agree; the band is
    padded by one grid step on each side.
    """
    if not report.inconsistent():
        return []
    c = c or AttackConstraints()
    ego = ego if ego is not None else Pose()
    params = params or RelationParams()
    match = report.match
    if match is None:
        raise ValueError("report carries no node match; build it with cross_check")
    dets = _det_lookup(detections, (g_cam, g_lidar))
    labels = report.node_labels["lidar"]
    suspects = sorted(n for n, v in labels.items() if v is Verdict.INCONSISTENT)
    hyps = []
    for node in suspects:
        if node in match.lidar_to_camera and node in dets:
            try:
                scan = translation_scan(node, report, g_cam, g_lidar, dets, cam, c, ego,
                                        params, t_step)
            except Exception as exc:  # noqa: BLE001 - an unscannable node just gets no hypothesis
                if not isinstance(exc, (GeometryError, RuntimeError, ValueError)):
                    raise
                scan = []
            hyp = _best_band(node, scan, t_step)
            if hyp is not None:
                hyps.append(hyp)
        # false positive: the node should not exist
        g_new = SceneGraph(tuple(n for n in g_lidar.nodes if n.id != node),
                           tuple(e for e in g_lidar.edges if node not in (e.subject, e.object)),
                           g_lidar.sensor, reduced=g_lidar.reduced)
        new = cross_check(g_cam, g_new, match.without_lidar(node), cam=cam, detections=dets)
        score, gain = _outcome(report, new)
        hyps.append(PerturbationHypothesis(node, "false_positive", score, consistent_gain=gain))
    for cid in match.unmatched_camera:
        hyps.append(PerturbationHypothesis(cid, "false_negative", 0.0))
    hyps.sort(key=lambda h: (-h.score, -h.consistent_gain, _KIND_ORDER[h.kind], h.node))
    return hyps


def _best_band(node: str, scan: list, step: float) -> Optional[PerturbationHypothesis]:
    keys = [o for _, o in scan]
    runs = [r for r in _runs(keys)]
    if not runs:
        return None
    best = max(r[2] for r in runs)
    if best[0] <= 0.0:
        return None
    ts = [t for t, _ in scan]
    # among equally good bands prefer the one needing the smallest correction
    cands = [r for r in runs if r[2] == best]
    first, last, _ = min(cands, key=lambda r: (min(abs(ts[r[0]]), abs(ts[r[1]]))
                                               if ts[r[0]] * ts[r[1]] > 0 else 0.0, ts[r[0]]))
    lo, hi = -(ts[last] + step), -(ts[first] - step)
    return PerturbationHypothesis(node, "translation_along_ray", best[0], 0.5 * (lo + hi),
                                  (lo, hi), best[1])
