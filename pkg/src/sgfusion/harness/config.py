"""Scenario configuration: YAML on disk, validated dataclasses in memory."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

from ..attack import AttackConstraints, AttackKind
from ..integrity import KnowledgeBase, default_knowledge_base
from ..scene import (NoiseSpec, ObjectClass, ObjectSlot, SceneConfig,
                     van_truck_config)
from ..sgg import LIFT_TOLERANCE, RelationParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists "field.path: message" strings."""

    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("; ".join(self.errors))


_num = {"type": "number"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_triple = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_classes = [c.value for c in ObjectClass]

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "seed"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "trials": {"type": "integer", "minimum": 1},
        "attack_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "strict_predicates": {"type": "boolean"},
        "knowledge_base": {"enum": ["default", "none"]},
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layout": {"enum": ["random", "van_truck"]},
                "n_objects": {"type": "integer", "minimum": 0},
                "class_weights": {"type": "object", "propertyNames": {"enum": _classes},
                                  "additionalProperties": _num},
                "slots": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"cls": {"enum": _classes}, "stratum": {"type": "string"},
                                   "lateral": _pair}}},
                "strata": {"type": "object", "additionalProperties": _pair},
                "lateral_range": _pair,
                "dim_jitter": _num,
                "yaw_jitter": _num,
                "visibility_cutoff": _num,
                "min_gap": _num,
                "camera": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"focal": _pair, "image_size": _pair,
                                   "principal": {"oneOf": [_pair, {"type": "null"}]},
                                   "height": _num},
                },
            },
        },
        "noise": {
            "type": "object", "additionalProperties": False,
            "properties": {k: _num for k in ("pos_sigma", "dim_sigma", "pixel_sigma",
                                             "miss_rate", "clutter_rate")},
        },
        "attacks": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": [k.value for k in AttackKind]},
                "target": {"type": "string"},
                "target_class": {"enum": _classes},
                "spawn": {"type": "object"},
                "constraints": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"v_min": _num, "v_max": _num, "dims_min": _triple,
                                   "dims_max": _triple, "zeta_min": _num,
                                   "bounds": {"enum": ["generic", "class"]}},
                },
            },
        }},
        "relations": {"type": "object", "additionalProperties": False,
                      "properties": {f.name: _num for f in fields(RelationParams)}},
        "thresholds": {"type": "object", "additionalProperties": False,
                       "properties": {"gate": _num, "match": _num, "zeta_min": _num}},
        "camera_graph": {
            "type": "object", "additionalProperties": False,
            "properties": {"source": {"enum": ["monocular", "import"]},
                           "path": {"type": "string"},
                           "pixel_margin": _num, "prior_tolerance": _num},
        },
    },
}


@dataclass(frozen=True)
class AttackRequest:
    """An attack as configured; the concrete target id is resolved per trial."""

    kind: AttackKind
    target: Optional[str] = None
    target_class: Optional[str] = None
    spawn: Optional[dict] = None
    constraints: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.kind is AttackKind.FALSE_POSITIVE:
            if not self.spawn:
                raise ValueError("false_positive needs a spawn block")
        elif not (self.target or self.target_class):
            raise ValueError(f"{self.kind.value} needs target or target_class")

    def build_constraints(self, zeta_min: float) -> AttackConstraints:
        kw = dict(self.constraints)
        bounds = kw.pop("bounds", "generic")
        kw.setdefault("zeta_min", zeta_min)
        for k in ("dims_min", "dims_max"):
            if k in kw:
                kw[k] = tuple(kw[k])
        if bounds == "class" and self.target_class:
            return AttackConstraints.for_class(self.target_class, **kw)
        return AttackConstraints(**kw)


@dataclass(frozen=True)
class Thresholds:
    gate: float = 0.3
    match: float = 0.3
    zeta_min: float = 0.9

    def __post_init__(self):
        for name in ("gate", "match"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 < self.zeta_min <= 1:
            raise ValueError("zeta_min must lie in (0, 1]")


@dataclass(frozen=True)
class CameraGraphSpec:
    source: str = "monocular"
    path: Optional[str] = None  # may contain "{trial}"
    pixel_margin: float = 0.0
    prior_tolerance: float = LIFT_TOLERANCE

    def __post_init__(self):
        if self.source == "import" and not self.path:
            raise ValueError("imported camera graphs need a path")
        if self.pixel_margin < 0 or not 0 <= self.prior_tolerance < 1:
            raise ValueError("pixel_margin must be >= 0 and prior_tolerance in [0, 1)")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    trials: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    attacks: tuple = ()
    relations: RelationParams = field(default_factory=RelationParams)
    knowledge_base: str = "default"
    thresholds: Thresholds = field(default_factory=Thresholds)
    camera_graph: CameraGraphSpec = field(default_factory=CameraGraphSpec)
    attack_fraction: float = 0.5
    strict_predicates: bool = False
    name: str = ""
    source: dict = field(default_factory=dict, compare=False, repr=False)
    base_dir: Optional[str] = field(default=None, compare=False, repr=False)

    def kb(self) -> Optional[KnowledgeBase]:
        return default_knowledge_base() if self.knowledge_base == "default" else None

    def constraints_for(self, req: AttackRequest) -> AttackConstraints:
        return req.build_constraints(self.thresholds.zeta_min)

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.source).encode()).hexdigest()

    def with_overrides(self, seed=None, zeta_min=None, strict=None) -> "ScenarioConfig":
        doc = copy.deepcopy(self.source)
        if seed is not None:
            doc["seed"] = int(seed)
        if zeta_min is not None:
            doc.setdefault("thresholds", {})["zeta_min"] = float(zeta_min)
            for a in doc.get("attacks", []):
                a.get("constraints", {}).pop("zeta_min", None)
        if strict is not None:
            doc["strict_predicates"] = bool(strict)
        return config_from_dict(doc, self.base_dir)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _build_scene(doc: dict) -> SceneConfig:
    doc = dict(doc)
    layout = doc.pop("layout", "random")
    cam = doc.pop("camera", {})
    kw = {}
    if "focal" in cam:
        kw["focal"] = tuple(cam["focal"])
    if "image_size" in cam:
        kw["image_size"] = tuple(int(x) for x in cam["image_size"])
    if cam.get("principal") is not None:
        kw["principal"] = tuple(cam["principal"])
    if "height" in cam:
        kw["camera_height"] = float(cam["height"])
    if "slots" in doc:
        doc["slots"] = tuple(ObjectSlot(s.get("cls"), s.get("stratum"),
                                        tuple(s["lateral"]) if "lateral" in s else None)
                             for s in doc["slots"])
    for key in ("lateral_range",):
        if key in doc:
            doc[key] = tuple(doc[key])
    if "strata" in doc:
        doc["strata"] = {k: tuple(v) for k, v in doc["strata"].items()}
    kw.update(doc)
    if layout == "van_truck":
        return van_truck_config(**kw)
    return SceneConfig(**kw)


def config_from_dict(doc: dict, base_dir: Optional[str] = None) -> ScenarioConfig:
    """Validate ``doc`` and build the config; raises ConfigError listing every problem."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    problems = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.path)))
    if problems:
        raise ConfigError([f"{'.'.join(map(str, e.path)) or '<root>'}: {e.message}"
                           for e in problems])
    errors = []

    def build(name, fn):
        try:
            return fn()
        except (ValueError, TypeError, KeyError) as exc:
            errors.append(f"{name}: {exc}")
            return None

    scene = build("scene", lambda: _build_scene(doc.get("scene", {})))
    noise = build("noise", lambda: NoiseSpec(**doc.get("noise", {})))
    relations = build("relations", lambda: RelationParams(**doc.get("relations", {})))
    thresholds = build("thresholds", lambda: Thresholds(**doc.get("thresholds", {})))
    camera_graph = build("camera_graph", lambda: CameraGraphSpec(**doc.get("camera_graph", {})))
    attacks = []
    for k, a in enumerate(doc.get("attacks", [])):
        req = build(f"attacks.{k}", lambda a=a: AttackRequest(**a))
        if req is not None and thresholds is not None:
            build(f"attacks.{k}.constraints", lambda req=req: req.build_constraints(thresholds.zeta_min))
        attacks.append(req)
    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(
        seed=doc["seed"], trials=doc.get("trials", 1), scene=scene, noise=noise,
        attacks=tuple(attacks), relations=relations,
        knowledge_base=doc.get("knowledge_base", "default"), thresholds=thresholds,
        camera_graph=camera_graph, attack_fraction=doc.get("attack_fraction", 0.5),
        strict_predicates=doc.get("strict_predicates", False), name=doc.get("name", ""),
        source=copy.deepcopy(doc), base_dir=base_dir)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("<root>: config must be a mapping")
    return config_from_dict(doc, str(path.parent))
