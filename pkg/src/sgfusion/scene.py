"""Synthetic ground-truth scenes and noise-model pseudo-detectors.

The pseudo-detectors stand in for trained camera and LiDAR networks: the
LiDAR one perturbs ground-truth boxes, the camera one projects them and
drops heavily occluded objects.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from shapely.geometry import Polygon

from .geometry import (Box2D, Box3D, CameraModel, GeometryError, Pose,
                       corners_3d, in_image, intersection_area, project_box)


class PlacementFailure(RuntimeError):
    pass


class ObjectClass(str, enum.Enum):
    CAR = "car"
    VAN = "van"
    TRUCK = "truck"
    BICYCLE = "bicycle"
    PEDESTRIAN = "pedestrian"


class Sensor(str, enum.Enum):
    CAMERA = "camera"
    LIDAR = "lidar"


# nominal (h, w, l) in metres
CLASS_DIMS = {
    ObjectClass.CAR: (1.6, 1.9, 4.5),
    ObjectClass.VAN: (2.2, 2.1, 5.5),
    ObjectClass.TRUCK: (3.4, 2.6, 12.0),
    ObjectClass.BICYCLE: (1.4, 0.6, 1.8),
    ObjectClass.PEDESTRIAN: (1.75, 0.6, 0.6),
}
PRIOR_TOLERANCE = 0.3

# m/s
CLASS_SPEEDS = {
    ObjectClass.CAR: (3.0, 14.0),
    ObjectClass.VAN: (3.0, 12.0),
    ObjectClass.TRUCK: (3.0, 10.0),
    ObjectClass.BICYCLE: (2.0, 6.0),
    ObjectClass.PEDESTRIAN: (0.6, 1.6),
}


def dims_range(cls: ObjectClass, tolerance: float = PRIOR_TOLERANCE):
    """(min_dims, max_dims) allowed for objects of ``cls``."""
    nominal = np.array(CLASS_DIMS[ObjectClass(cls)])
    return tuple(nominal * (1 - tolerance)), tuple(nominal * (1 + tolerance))


def dims_plausible(cls: ObjectClass, dims, tolerance: float = PRIOR_TOLERANCE,
                   slack: float = 1e-9) -> bool:
    lo, hi = dims_range(cls, tolerance)
    return all(a - slack <= d <= b + slack for d, a, b in zip(dims, lo, hi))


@dataclass(frozen=True)
class SceneObject:
    id: str
    cls: ObjectClass
    box: Box3D
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "cls", ObjectClass(self.cls))
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        v.setflags(write=False)
        object.__setattr__(self, "velocity", v)


@dataclass(frozen=True)
class Scene:
    ego: Pose
    camera: CameraModel
    objects: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("scene object ids must be unique")

    def object(self, oid: str) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)


@dataclass(frozen=True)
class Detection:
    """One detector output. ``geometry`` is a Box2D for the camera, Box3D for LiDAR."""

    id: str
    cls: ObjectClass
    sensor: Sensor
    geometry: object
    confidence: float = 1.0
    source_object: Optional[str] = None
    velocity: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "cls", ObjectClass(self.cls))
        object.__setattr__(self, "sensor", Sensor(self.sensor))
        expected = Box2D if self.sensor is Sensor.CAMERA else Box3D
        if not isinstance(self.geometry, expected):
            raise TypeError(f"{self.sensor.value} detection needs a {expected.__name__}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if self.velocity is not None:
            v = np.asarray(self.velocity, dtype=float).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, "velocity", v)

    @property
    def box(self):
        return self.geometry

    def replace(self, **changes) -> "Detection":
        fields = dict(id=self.id, cls=self.cls, sensor=self.sensor, geometry=self.geometry,
                      confidence=self.confidence, source_object=self.source_object,
                      velocity=self.velocity)
        fields.update(changes)
        return Detection(**fields)


@dataclass(frozen=True)
class NoiseSpec:
    pos_sigma: float = 0.0
    dim_sigma: float = 0.0
    pixel_sigma: float = 0.0
    miss_rate: float = 0.0
    clutter_rate: float = 0.0

    def __post_init__(self):
        for name in ("pos_sigma", "dim_sigma", "pixel_sigma", "miss_rate", "clutter_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.miss_rate > 1:
            raise ValueError("miss_rate must lie in [0, 1]")


DEFAULT_STRATA = {"near": (8.0, 15.0), "mid": (18.0, 30.0), "far": (40.0, 60.0)}


@dataclass(frozen=True)
class ObjectSlot:
    """Placement recipe for one object; ``None`` fields are sampled."""

    cls: Optional[str] = None
    stratum: Optional[str] = None
    lateral: Optional[tuple] = None


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 4
    class_weights: dict = field(default_factory=lambda: {c.value: 1.0 for c in ObjectClass})
    slots: tuple = ()
    strata: dict = field(default_factory=lambda: dict(DEFAULT_STRATA))
    lateral_range: tuple = (-6.0, 6.0)
    dim_jitter: float = 0.1
    prior_tolerance: float = PRIOR_TOLERANCE
    yaw_jitter: float = 0.0
    focal: tuple = (1000.0, 1000.0)
    image_size: tuple = (1920, 1080)
    principal: Optional[tuple] = None
    camera_height: float = 0.0
    visibility_cutoff: float = 0.7
    min_gap: float = 0.5
    placement_retries: int = 100
    scene_restarts: int = 20

    def __post_init__(self):
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if self.slots and len(self.slots) != self.n_objects:
            raise ValueError("slots must list exactly n_objects entries")
        if not all(w >= 0 for w in self.class_weights.values()) or \
                sum(self.class_weights.values()) <= 0:
            raise ValueError("class weights must be non-negative with a positive sum")
        for name in self.class_weights:
            ObjectClass(name)
        if not 0 <= self.dim_jitter <= self.prior_tolerance < 1:
            raise ValueError("need 0 <= dim_jitter <= prior_tolerance < 1")
        object.__setattr__(self, "slots", tuple(
            s if isinstance(s, ObjectSlot) else ObjectSlot(**s) for s in self.slots))

    def camera(self, ego: Pose) -> CameraModel:
        W, H = self.image_size
        principal = self.principal if self.principal is not None else (W / 2.0, H / 2.0)
        mount = Pose((0.0, 0.0, self.camera_height), 0.0)
        return CameraModel(self.focal, principal, (W, H), ego.compose(mount))


def _footprint(box: Box3D, pad: float) -> Polygon:
    c = corners_3d(Box3D(box.center, (box.h, box.w + 2 * pad, box.l + 2 * pad), box.yaw))
    bottom = c[c[:, 2] <= box.center[2]][:, :2]
    # corners come ordered (x-, y-), (x-, y+), (x+, y-), (x+, y+)
    return Polygon(bottom[[0, 1, 3, 2]])


def _box_of(thing) -> Box3D:
    if isinstance(thing, Box3D):
        return thing
    box = getattr(thing, "box", None)
    if isinstance(box, Box3D):
        return box
    raise TypeError(f"expected a 3D box carrier, got {type(thing).__name__}")


def occlusion_fraction(subject, blocker, cam: CameraModel) -> float:
    """Share of ``subject``'s projected hull covered by a nearer ``blocker``."""
    sb, bb = _box_of(subject), _box_of(blocker)
    try:
        if cam.depth(bb.center) >= cam.depth(sb.center):
            return 0.0
        s2, b2 = project_box(sb, cam), project_box(bb, cam)
    except GeometryError:
        return 0.0
    if s2.area <= 0:
        return 0.0
    return min(1.0, intersection_area(s2, b2) / s2.area)


def max_occlusion(obj, others, cam: CameraModel) -> float:
    return max((occlusion_fraction(obj, o, cam) for o in others if o is not obj), default=0.0)


def _sample_dims(rng, cls: ObjectClass, jitter: float) -> tuple:
    nominal = np.array(CLASS_DIMS[cls])
    return tuple(nominal * (1.0 + rng.uniform(-jitter, jitter, size=3)))


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    ego = Pose()
    cam = config.camera(ego)
    names = sorted(config.class_weights)
    weights = np.array([config.class_weights[n] for n in names], dtype=float)
    weights /= weights.sum()
    strata = sorted(config.strata)

    for _ in range(max(1, config.scene_restarts)):
        try:
            return Scene(ego, cam, _place_all(rng, config, cam, names, weights, strata), int(seed))
        except PlacementFailure as exc:
            last = exc
    raise last


def _place_all(rng, config: SceneConfig, cam: CameraModel, names, weights, strata) -> tuple:
    placed = []
    for k in range(config.n_objects):
        slot = config.slots[k] if config.slots else ObjectSlot()
        cls = ObjectClass(slot.cls) if slot.cls else ObjectClass(names[rng.choice(len(names), p=weights)])
        stratum = slot.stratum or strata[rng.integers(len(strata))]
        depth_lo, depth_hi = config.strata[stratum]
        lat_lo, lat_hi = slot.lateral if slot.lateral is not None else config.lateral_range
        for _ in range(config.placement_retries):
            dims = _sample_dims(rng, cls, config.dim_jitter)
            x = rng.uniform(depth_lo, depth_hi)
            y = rng.uniform(lat_lo, lat_hi)
            yaw = rng.uniform(-config.yaw_jitter, config.yaw_jitter) if config.yaw_jitter else 0.0
            box = Box3D((x, y, dims[0] / 2.0), dims, yaw)
            speed = rng.uniform(*CLASS_SPEEDS[cls])
            velocity = speed * np.array([math.cos(yaw), math.sin(yaw), 0.0])
            cand = SceneObject(f"obj{k}", cls, box, velocity)
            if _placeable(cand, placed, cam, config):
                placed.append(cand)
                break
        else:
            raise PlacementFailure(f"could not place object {k} ({cls.value}) "
                                   f"after {config.placement_retries} attempts")
    return tuple(placed)


def _placeable(cand: SceneObject, placed, cam: CameraModel, config: SceneConfig) -> bool:
    if not in_image(cand.box, cam):
        return False
    fp = _footprint(cand.box, config.min_gap / 2.0)
    if any(fp.intersects(_footprint(o.box, config.min_gap / 2.0)) for o in placed):
        return False
    for o in placed:
        if occlusion_fraction(cand, o, cam) > config.visibility_cutoff:
            return False
        if occlusion_fraction(o, cand, cam) > config.visibility_cutoff:
            return False
    return True


def _clutter_box(rng, config: SceneConfig, cam: CameraModel):
    cls = list(ObjectClass)[rng.integers(len(ObjectClass))]
    depth_lo = min(lo for lo, _ in config.strata.values())
    depth_hi = max(hi for _, hi in config.strata.values())
    for _ in range(config.placement_retries):
        dims = _sample_dims(rng, cls, config.dim_jitter)
        box = Box3D((rng.uniform(depth_lo, depth_hi), rng.uniform(*config.lateral_range),
                     dims[0] / 2.0), dims)
        if in_image(box, cam):
            return cls, box
    return None


def pseudo_detect_lidar(scene: Scene, noise: NoiseSpec, seed: int,
                        config: Optional[SceneConfig] = None) -> list:
    rng = np.random.default_rng(seed)
    config = config or SceneConfig()
    out = []
    for obj in scene.objects:
        if noise.miss_rate and rng.random() < noise.miss_rate:
            continue
        box = obj.box
        if noise.pos_sigma or noise.dim_sigma:
            offset = np.zeros(3)
            offset[:2] = rng.normal(0.0, noise.pos_sigma, size=2) if noise.pos_sigma else 0.0
            scale = 1.0 + rng.normal(0.0, noise.dim_sigma, size=3) if noise.dim_sigma else np.ones(3)
            dims = tuple(np.maximum(np.array(box.dims) * scale, 0.05))
            box = Box3D(box.center + offset, dims, box.yaw).seated()
        out.append(Detection(f"L-{obj.id}", obj.cls, Sensor.LIDAR, box,
                             confidence=1.0, source_object=obj.id, velocity=obj.velocity))
    n_clutter = rng.poisson(noise.clutter_rate) if noise.clutter_rate else 0
    for k in range(n_clutter):
        drawn = _clutter_box(rng, config, scene.camera)
        if drawn is None:
            continue
        cls, box = drawn
        out.append(Detection(f"L-clutter{k}", cls, Sensor.LIDAR, box, confidence=0.5))
    return out


def pseudo_detect_camera(scene: Scene, noise: NoiseSpec, seed: int,
                         config: Optional[SceneConfig] = None) -> list:
    rng = np.random.default_rng(seed)
    config = config or SceneConfig()
    cam = scene.camera
    W, H = cam.image_size
    out = []
    for obj in scene.objects:
        try:
            box2d = project_box(obj.box, cam)
        except GeometryError:
            continue
        if max_occlusion(obj, scene.objects, cam) > config.visibility_cutoff:
            continue
        if noise.miss_rate and rng.random() < noise.miss_rate:
            continue
        if noise.pixel_sigma:
            box2d = _jitter_pixels(rng, box2d, noise.pixel_sigma, W, H)
            if box2d is None:
                continue
        out.append(Detection(f"C-{obj.id}", obj.cls, Sensor.CAMERA, box2d,
                             confidence=1.0, source_object=obj.id))
    n_clutter = rng.poisson(noise.clutter_rate) if noise.clutter_rate else 0
    for k in range(n_clutter):
        drawn = _clutter_box(rng, config, cam)
        if drawn is None:
            continue
        cls, box = drawn
        out.append(Detection(f"C-clutter{k}", cls, Sensor.CAMERA, project_box(box, cam),
                             confidence=0.5))
    return out


def _jitter_pixels(rng, box: Box2D, sigma: float, W: int, H: int) -> Optional[Box2D]:
    du, dv = rng.normal(0.0, sigma, size=2)
    dh, dw = rng.normal(0.0, sigma, size=2)
    (u, v), (h, w) = box.center, box.size
    h, w = max(h + dh, 1.0), max(w + dw, 1.0)
    u0, v0 = max(u + du - w / 2, 0.0), max(v + dv - h / 2, 0.0)
    u1, v1 = min(u + du + w / 2, float(W)), min(v + dv + h / 2, float(H))
    if u1 <= u0 or v1 <= v0:
        return None
    return Box2D.from_extents(u0, v0, u1, v1)


def van_truck_config(**overrides) -> SceneConfig:
    """Four-object layout: a nearby car, a mid-range van and bicycle, a distant truck."""
    slots = (
        ObjectSlot("car", "near", (-4.5, -2.0)),
        ObjectSlot("van", "mid", (-1.0, 1.0)),
        ObjectSlot("bicycle", "mid", (3.0, 5.5)),
        ObjectSlot("truck", "far", (-1.0, 1.0)),
    )
    params = dict(n_objects=4, slots=slots)
    params.update(overrides)
    return SceneConfig(**params)
