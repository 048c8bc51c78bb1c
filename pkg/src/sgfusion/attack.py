"""Adversarial manipulations of LiDAR detections.

The frustum attack slides a 3D box along the ray from the camera through
its centre and rescales it uniformly, so that its image-plane projection
keeps overlapping the untouched camera detection. ``optimal_frustum_attack``
finds the largest such displacement; ``frustum_attack_oracle`` answers the
same question by brute force on a (t, s) grid with its own projection code.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import (Box2D, Box3D, CameraModel, GeometryError, frustum_axis,
                       iou_2d, project_box)
from .scene import CLASS_DIMS, ObjectClass, PRIOR_TOLERANCE, Detection, Sensor, dims_range


class Infeasible(RuntimeError):
    pass


class UnknownTarget(KeyError):
    pass


def _generic_dim_bounds(tolerance: float = PRIOR_TOLERANCE):
    lows, highs = zip(*(dims_range(c, tolerance) for c in ObjectClass))
    return tuple(np.min(lows, axis=0)), tuple(np.max(highs, axis=0))


_DIM_MIN, _DIM_MAX = _generic_dim_bounds()


@dataclass(frozen=True)
class AttackConstraints:
    v_min: float = 0.2
    v_max: float = 150.0
    dims_min: tuple = _DIM_MIN
    dims_max: tuple = _DIM_MAX
    zeta_min: float = 0.9
    vertical_fixed: bool = True
    yaw_only: bool = True

    def __post_init__(self):
        if not 0 < self.v_min <= self.v_max:
            raise ValueError("need 0 < v_min <= v_max")
        if not 0 < self.zeta_min <= 1:
            raise ValueError("zeta_min must lie in (0, 1]")
        lo = tuple(float(d) for d in self.dims_min)
        hi = tuple(float(d) for d in self.dims_max)
        if len(lo) != 3 or len(hi) != 3 or not all(0 < a <= b for a, b in zip(lo, hi)):
            raise ValueError("dimension bounds must satisfy 0 < min <= max per axis")
        if not (self.vertical_fixed and self.yaw_only):
            raise ValueError("only yaw-preserving, ground-seated attacks are modelled")
        object.__setattr__(self, "dims_min", lo)
        object.__setattr__(self, "dims_max", hi)

    @classmethod
    def for_class(cls, obj_class, tolerance: float = PRIOR_TOLERANCE, **kw) -> "AttackConstraints":
        """Dimension bounds taken from one class's prior instead of the union."""
        lo, hi = dims_range(obj_class, tolerance)
        return cls(dims_min=lo, dims_max=hi, **kw)

    def scale_range(self, dims) -> tuple:
        """Uniform scales s keeping ``s * dims`` inside the volume and size bounds."""
        d = np.asarray(dims, dtype=float)
        vol = float(np.prod(d))
        s_lo = max((self.v_min / vol) ** (1 / 3), float(np.max(np.array(self.dims_min) / d)))
        s_hi = min((self.v_max / vol) ** (1 / 3), float(np.min(np.array(self.dims_max) / d)))
        return s_lo, s_hi


class AttackKind(str, enum.Enum):
    FRUSTUM_TRANSLATE = "frustum_translate"
    FALSE_POSITIVE = "false_positive"
    FALSE_NEGATIVE = "false_negative"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    target: Optional[str] = None
    spawn: Optional[dict] = None
    constraints: AttackConstraints = field(default_factory=AttackConstraints)

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.kind is AttackKind.FALSE_POSITIVE:
            if not self.spawn or "class" not in self.spawn or "position" not in self.spawn:
                raise ValueError("false_positive needs spawn {class, position[, yaw]}")
        elif not self.target:
            raise ValueError(f"{self.kind.value} needs a target detection id")


@dataclass(frozen=True)
class AttackResult:
    kind: AttackKind
    target: str
    detections: tuple
    displacement: float = 0.0
    signed_displacement: float = 0.0
    achieved_iou: Optional[float] = None
    scale: float = 1.0
    original: Optional[Box3D] = None
    perturbed: Optional[Box3D] = None
    partner: Optional[str] = None

    def to_dict(self) -> dict:
        def box(b):
            if b is None:
                return None
            return {"center": [float(x) for x in b.center], "dims": list(b.dims), "yaw": b.yaw}
        return {
            "kind": self.kind.value,
            "target": self.target,
            "displacement_m": self.displacement,
            "signed_displacement_m": self.signed_displacement,
            "achieved_iou": self.achieved_iou,
            "scale": self.scale,
            "partner": self.partner,
            "original": box(self.original),
            "perturbed": box(self.perturbed),
        }


def moved_box(box: Box3D, axis, t: float, s: float) -> Box3D:
    """``box`` shifted by ``t`` along ``axis``, scaled by ``s``, bottom kept in place."""
    center = box.center + t * np.asarray(axis)
    center[2] = box.bottom + s * box.dims[0] / 2.0
    return Box3D(center, (s * box.dims[0], s * box.dims[1], s * box.dims[2]), box.yaw)


def _iou_at(box, axis, target: Box2D, cam, t, s) -> float:
    try:
        return iou_2d(target, project_box(moved_box(box, axis, t, s), cam))
    except GeometryError:
        return 0.0


def _best_scale(box, axis, target, cam, t, s_lo, s_hi, samples: int = 9,
                skip_below: float = -1.0, enough: float = math.inf):
    """Best (s, IoU) at displacement t. Refinement is skipped when the coarse
    samples stay under ``skip_below`` or already reach ``enough``."""
    if s_hi - s_lo < 1e-9:
        return s_lo, _iou_at(box, axis, target, cam, t, s_lo)
    grid = list(np.linspace(s_lo, s_hi, samples))
    if s_lo < 1.0 < s_hi:
        grid.append(1.0)
    vals = [_iou_at(box, axis, target, cam, t, s) for s in grid]
    k = int(np.argmax(vals))
    best_s, best = grid[k], vals[k]
    if best <= max(0.0, skip_below) or best >= enough:
        return best_s, best
    step = (s_hi - s_lo) / (samples - 1)
    lo, hi = max(s_lo, best_s - step), min(s_hi, best_s + step)
    res = minimize_scalar(lambda s: -_iou_at(box, axis, target, cam, t, s),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-5})
    if -res.fun > best:
        best_s, best = float(res.x), float(-res.fun)
    return best_s, best


def search_limits(box: Box3D, cam: CameraModel, s_hi: float, zeta: float) -> tuple:
    dist = float(np.linalg.norm(box.center - cam.position))
    # a box seen with linear size ratio below sqrt(zeta) cannot reach IoU zeta
    back = dist * (s_hi / math.sqrt(zeta)) + s_hi * max(box.dims) + 5.0
    return -(dist - 1e-3), back


def check_preconditions(d3d: Detection, d2d: Detection, cam: CameraModel, c: AttackConstraints):
    box, target = d3d.geometry, d2d.geometry
    if not isinstance(box, Box3D) or not isinstance(target, Box2D):
        raise TypeError("need a 3D detection and a 2D detection")
    axis = frustum_axis(box, cam)
    s_lo, s_hi = c.scale_range(box.dims)
    if s_lo > s_hi + 1e-12:
        raise Infeasible("volume and dimension bounds admit no scale")
    return box, target, axis, s_lo, max(s_lo, s_hi)


def _result(d3d, d2d, box, axis, t, s, iou) -> AttackResult:
    moved = moved_box(box, axis, t, s)
    return AttackResult(AttackKind.FRUSTUM_TRANSLATE, d3d.id, (d3d.replace(geometry=moved),),
                        displacement=float(np.linalg.norm(moved.center - box.center)),
                        signed_displacement=float(t), achieved_iou=float(iou), scale=float(s),
                        original=box, perturbed=moved, partner=d2d.id)


def optimal_frustum_attack(d3d: Detection, d2d: Detection, cam: CameraModel,
                           c: AttackConstraints, coarse_step: float = 1.0,
                           tol: float = 0.01, patience: int = 8) -> AttackResult:
    """Largest feasible displacement along the frustum axis, in either direction.

    Coarse scan over t with an inner bounded search over the scale, then
    bisection on the feasibility boundary down to ``tol`` metres.
    """
    box, target, axis, s_lo, s_hi = check_preconditions(d3d, d2d, cam, c)
    zeta = c.zeta_min
    cache = {}

    def best(t):
        key = round(t, 9)
        if key not in cache:
            cache[key] = _best_scale(box, axis, target, cam, t, s_lo, s_hi,
                                     skip_below=zeta - 0.25, enough=zeta)
        return cache[key]

    def feasible(t):
        return best(t)[1] >= zeta - 1e-12

    if not feasible(0.0):
        raise Infeasible(f"zero displacement reaches IoU {best(0.0)[1]:.4f} < {zeta}")
    t_fwd, t_back = search_limits(box, cam, s_hi, zeta)

    candidates = []
    for sign, limit in ((1.0, t_back), (-1.0, -t_fwd)):
        ts = np.arange(coarse_step, limit, coarse_step)
        far, misses = 0.0, 0
        for mag in ts:
            if feasible(sign * mag):
                far, misses = float(mag), 0
            elif best(sign * mag)[1] < zeta - 0.25:
                # well past the boundary of a monotone-then-infeasible profile
                misses += 1
                if misses >= patience:
                    break
        lo, hi = far, min(far + coarse_step, limit)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if feasible(sign * mid):
                lo = mid
            else:
                hi = mid
        candidates.append(sign * lo)
    # larger magnitude wins, backward on ties
    t_star = max(candidates, key=lambda t: (abs(t), t))
    s_star, iou = _best_scale(box, axis, target, cam, t_star, s_lo, s_hi)
    return _result(d3d, d2d, box, axis, t_star, s_star, iou)


# -------------------------------------------------------------------------
# brute-force oracle, deliberately not reusing geometry.project_box


def grid_hulls(box: Box3D, axis, cam: CameraModel, ts, ss, paired: bool = False) -> tuple:
    """Clipped image hulls of ``moved_box(box, axis, t, s)`` over a (t, s) grid.

    Returns (u0, v0, u1, v1, ok, centers): arrays of shape (T, S) plus the
    (T, S, 3) world centres; ``ok`` is False where a corner sits behind the
    camera or the hull misses the image. With ``paired`` the k-th t goes
    with the k-th s only and the shapes are (T, 1).
    """
    h, w, l = box.dims
    cy, sy = math.cos(box.yaw), math.sin(box.yaw)
    half = np.array([[a * l / 2, b * w / 2, e * h / 2]
                     for a in (-1, 1) for b in (-1, 1) for e in (-1, 1)])
    rot = half @ np.array([[cy, sy, 0.0], [-sy, cy, 0.0], [0.0, 0.0, 1.0]])  # (8, 3) world offsets
    ts = np.asarray(ts, dtype=float)[:, None]
    ss = np.asarray(ss, dtype=float)[:, None] if paired else np.asarray(ss, dtype=float)[None, :]
    centers = np.stack(np.broadcast_arrays(box.center[0] + ts * axis[0],
                                           box.center[1] + ts * axis[1],
                                           box.bottom + ss * h / 2 + 0 * ts), axis=-1)
    pts = centers[:, :, None, :] + ss[..., None, None] * rot  # (T, S, 8, 3)
    rel = pts - np.asarray(cam.extrinsic.position)
    yaw = cam.extrinsic.yaw
    fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    left = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    xc, yc, zc = -(rel @ left), -rel[..., 2], rel @ fwd
    ok = np.all(zc > 0, axis=-1)
    zc = np.where(zc > 0, zc, 1.0)
    u = cam.focal[0] * xc / zc + cam.principal[0]
    v = cam.focal[1] * yc / zc + cam.principal[1]
    W, H = cam.image_size
    u0, u1 = np.clip(u.min(-1), 0, W), np.clip(u.max(-1), 0, W)
    v0, v1 = np.clip(v.min(-1), 0, H), np.clip(v.max(-1), 0, H)
    ok &= (u1 > u0) & (v1 > v0)
    return u0, v0, u1, v1, ok, centers


def hull_iou(u0, v0, u1, v1, ok, target: Box2D) -> np.ndarray:
    """IoU of hull arrays against ``target``; -1 where ``ok`` is False."""
    tu0, tv0, tu1, tv1 = target.extents
    iw = np.clip(np.minimum(u1, tu1) - np.maximum(u0, tu0), 0, None)
    ih = np.clip(np.minimum(v1, tv1) - np.maximum(v0, tv0), 0, None)
    inter = iw * ih
    union = (u1 - u0) * (v1 - v0) + (tu1 - tu0) * (tv1 - tv0) - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.where(ok, np.minimum(iou, 1.0), -1.0)


def _grid_iou(box: Box3D, axis, cam: CameraModel, target: Box2D, ts, ss) -> np.ndarray:
    u0, v0, u1, v1, ok, _ = grid_hulls(box, axis, cam, ts, ss)
    return hull_iou(u0, v0, u1, v1, ok, target)


def scale_grid(s_lo: float, s_hi: float, s_step: float) -> np.ndarray:
    ss = np.arange(s_lo, s_hi, s_step)
    return np.unique(np.concatenate([ss, [s_hi], [1.0] if s_lo <= 1.0 <= s_hi else []]))


def frustum_attack_oracle(d3d: Detection, d2d: Detection, cam: CameraModel,
                          c: AttackConstraints, t_step: float = 0.05,
                          s_step: float = 0.01) -> AttackResult:
    """Exhaustive search over a (t, s) grid; the reference for the solver."""
    box, target, axis, s_lo, s_hi = check_preconditions(d3d, d2d, cam, c)
    ss = scale_grid(s_lo, s_hi, s_step)
    zeta = c.zeta_min
    if _grid_iou(box, axis, cam, target, [0.0], ss).max() < zeta - 1e-12:
        raise Infeasible("zero displacement violates the IoU constraint")
    t_fwd, t_back = search_limits(box, cam, s_hi, zeta)
    ts = np.concatenate([-np.arange(0, -t_fwd, t_step)[::-1][:-1], np.arange(0, t_back, t_step)])
    row = _grid_iou(box, axis, cam, target, [0.0], ss)[0]
    best = (0.0, 0.0, float(row.max()), float(ss[int(np.argmax(row))]))  # (|t|, t, iou, s)
    for start in range(0, len(ts), 256):
        chunk = ts[start:start + 256]
        grid = _grid_iou(box, axis, cam, target, chunk, ss)
        k = np.argmax(grid, axis=1)
        vals = grid[np.arange(len(chunk)), k]
        for t, kk, val in zip(chunk, k, vals):
            if val >= zeta - 1e-12:
                cand = (abs(float(t)), float(t), float(val), float(ss[kk]))
                if cand[:3] > best[:3]:
                    best = cand
    _, t, iou, s = best
    return _result(d3d, d2d, box, axis, t, s, iou)


# -------------------------------------------------------------------------


@dataclass(frozen=True)
class AttackContext:
    """What the attacker sees besides the LiDAR list: the camera and its detections."""

    cam: CameraModel
    camera_detections: tuple = ()
    gate: float = 0.3


def find_partner(target: Detection, context: AttackContext) -> Detection:
    """The camera detection fusion currently associates with ``target``.

    Falls back to the target's own projection when fusion leaves it unpaired.
    """
    from .fusion import build_cost_matrix, solve_assignment

    cams = list(context.camera_detections)
    if cams:
        A = build_cost_matrix(cams, [target], context.cam)
        for i, j, _ in solve_assignment(A, context.gate).pairs:
            return cams[i]
    return Detection(f"proj-{target.id}", target.cls, Sensor.CAMERA,
                     project_box(target.geometry, context.cam))


def apply_attack(detections, spec: AttackSpec, context: AttackContext):
    """Apply one manipulation; returns (new detection list, AttackResult)."""
    dets = list(detections)
    ids = [d.id for d in dets]
    if spec.kind is AttackKind.FALSE_POSITIVE:
        cls = ObjectClass(spec.spawn["class"])
        x, y = (float(v) for v in spec.spawn["position"][:2])
        dims = CLASS_DIMS[cls]
        new_id = spec.spawn.get("id") or _fresh_id(ids, "L-fp")
        box = Box3D((x, y, dims[0] / 2.0), dims, float(spec.spawn.get("yaw", 0.0)))
        det = Detection(new_id, cls, Sensor.LIDAR, box, confidence=1.0)
        return dets + [det], AttackResult(spec.kind, new_id, (det,), perturbed=box)
    if spec.target not in ids:
        raise UnknownTarget(spec.target)
    k = ids.index(spec.target)
    target = dets[k]
    if spec.kind is AttackKind.FALSE_NEGATIVE:
        return dets[:k] + dets[k + 1:], AttackResult(spec.kind, target.id, (),
                                                     original=target.geometry)
    partner = find_partner(target, context)
    res = optimal_frustum_attack(target, partner, context.cam, spec.constraints)
    out = list(dets)
    out[k] = res.detections[0]
    return out, res


def _fresh_id(ids, prefix: str) -> str:
    k = 0
    while f"{prefix}{k}" in ids:
        k += 1
    return f"{prefix}{k}"
