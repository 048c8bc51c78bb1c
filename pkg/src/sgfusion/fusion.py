"""2D-3D association and integrity-weighted fusion.

Affinity is maximised (A[i, j] is the raw image-plane IoU); minimising
``1 - A`` gives the same assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import GeometryError, Pose, iou_2d, project_box
from .sgg import lift_detection

# integrity weight per node verdict
VERDICT_WEIGHTS = {"consistent": 1.0, "unknown": 0.5, "inconsistent": 0.0}


class ReportMismatch(KeyError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray
    rows: tuple = ()
    cols: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            v = v.reshape(len(self.rows), len(self.cols))
        if not np.all(np.isfinite(v)):
            raise ValueError("cost matrix entries must be finite")
        if self.rows and len(self.rows) != v.shape[0] or self.cols and len(self.cols) != v.shape[1]:
            raise ValueError("row/column ids do not match the matrix shape")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass(frozen=True)
class Assignment:
    pairs: tuple
    unmatched_rows: tuple
    unmatched_cols: tuple

    @property
    def total(self) -> float:
        return float(sum(a for _, _, a in self.pairs))


@dataclass(frozen=True)
class FusedObject:
    position: np.ndarray
    cls: str
    detections: tuple
    weight: float
    flagged: bool
    kind: str = "fused"
    hypotheses: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError("fused position must be finite")
        object.__setattr__(self, "position", p)
        if self.flagged != (self.weight == 0.0):
            raise ValueError("an object is flagged exactly when its weight is 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "class": str(getattr(self.cls, "value", self.cls)),
            "position": [float(x) for x in self.position],
            "detections": list(self.detections),
            "weight": self.weight,
            "flagged": self.flagged,
            "hypotheses": [h.to_dict() if hasattr(h, "to_dict") else h for h in self.hypotheses],
        }


def build_cost_matrix(d2d, d3d, cam) -> CostMatrix:
    d2d, d3d = list(d2d), list(d3d)
    A = np.zeros((len(d2d), len(d3d)))
    for j, det in enumerate(d3d):
        try:
            proj = project_box(det.geometry, cam)
        except GeometryError:
            continue
        for i, cd in enumerate(d2d):
            A[i, j] = iou_2d(cd.geometry, proj)
    return CostMatrix(A, tuple(d.id for d in d2d), tuple(d.id for d in d3d))


def _best_total(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    r, c = linear_sum_assignment(M, maximize=True)
    return float(M[r, c].sum())


def solve_assignment(A, gate: float = 0.0) -> Assignment:
    """Maximum-affinity matching, lexicographically smallest among optima.

    Zero-affinity pairings are never reported; pairs under ``gate`` are
    removed after solving.
    """
    if not 0.0 <= gate <= 1.0:
        raise ValueError("gate must lie in [0, 1]")
    M = np.asarray(A.values if isinstance(A, CostMatrix) else A, dtype=float)
    n, m = M.shape
    optimum = _best_total(M)
    tol = 1e-9 * max(1.0, optimum)
    free_cols = list(range(m))
    fixed, value = [], 0.0
    for i in range(n):
        rest_rows = list(range(i + 1, n))
        for j in free_cols:
            if M[i, j] <= 0.0:
                continue
            cols = [c for c in free_cols if c != j]
            sub = M[np.ix_(rest_rows, cols)] if rest_rows and cols else np.zeros((0, 0))
            if value + M[i, j] + _best_total(sub) >= optimum - tol:
                fixed.append((i, j, float(M[i, j])))
                value += M[i, j]
                free_cols.remove(j)
                break
    kept = tuple(p for p in fixed if p[2] >= gate)
    rows = {i for i, _, _ in kept}
    cols = {j for _, j, _ in kept}
    return Assignment(kept, tuple(i for i in range(n) if i not in rows),
                      tuple(j for j in range(m) if j not in cols))


def _label(report, sensor: str, nid: str) -> str:
    labels = getattr(report, "node_labels", report)[sensor]
    if nid not in labels:
        raise ReportMismatch(f"report has no {sensor} label for {nid!r}")
    return str(getattr(labels[nid], "value", labels[nid]))


def _hypotheses_for(report, nid: str) -> tuple:
    return tuple(h for h in getattr(report, "hypotheses", ()) if h.node == nid)


def graph_informed_fuse(assignment: Assignment, d2d, d3d, report, cam=None) -> list:
    """Fused objects weighted by the LiDAR node verdicts in ``report``.

    Camera-only stubs need ``cam`` to place a monocular position estimate;
    without it they sit at the camera centre.
    """
    d2d, d3d = list(d2d), list(d3d)
    out = []
    for i, j, _ in assignment.pairs:
        det = d3d[j]
        verdict = _label(report, "lidar", det.id)
        _label(report, "camera", d2d[i].id)
        w = VERDICT_WEIGHTS[verdict]
        out.append(FusedObject(det.geometry.center, det.cls.value, (d2d[i].id, det.id), w,
                               w == 0.0, hypotheses=_hypotheses_for(report, det.id)))
    for j in assignment.unmatched_cols:
        det = d3d[j]
        _label(report, "lidar", det.id)
        out.append(FusedObject(det.geometry.center, det.cls.value, (det.id,), 0.5, False,
                               kind="lidar_only"))
    for i in assignment.unmatched_rows:
        det = d2d[i]
        _label(report, "camera", det.id)
        if cam is not None:
            pos = lift_detection(det, cam, Pose()).estimate.center
        else:
            pos = np.zeros(3)
        out.append(FusedObject(pos, det.cls.value, (det.id,), 0.5, False, kind="camera_only",
                               hypotheses=_hypotheses_for(report, det.id)))
    return out
