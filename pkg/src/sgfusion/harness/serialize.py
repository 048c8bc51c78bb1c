"""JSON and DOT renderings of scenes, detections, graphs and reports."""

from __future__ import annotations

import hashlib
from typing import Optional

import jsonschema

from ..geometry import Box2D, Box3D
from ..integrity import ConsistencyReport, Verdict
from ..scene import Detection, Scene
from ..sgg import GRAPH_SCHEMA, SceneGraph, graph_to_document
from .config import SCHEMA_VERSION, canonical_json


def _floats(xs) -> list:
    return [float(x) for x in xs]


def box_to_dict(box) -> dict:
    if isinstance(box, Box3D):
        return {"center": _floats(box.center), "dims": _floats(box.dims), "yaw": float(box.yaw)}
    if isinstance(box, Box2D):
        return {"extents": _floats(box.extents)}
    raise TypeError(type(box).__name__)


def detection_to_dict(d: Detection) -> dict:
    return {
        "id": d.id,
        "class": d.cls.value,
        "sensor": d.sensor.value,
        "box": box_to_dict(d.geometry),
        "confidence": float(d.confidence),
        "source_object": d.source_object,
        "velocity": None if d.velocity is None else _floats(d.velocity),
    }


def scene_to_dict(s: Scene) -> dict:
    cam = s.camera
    return {
        "seed": s.seed,
        "ego": {"position": _floats(s.ego.position), "yaw": float(s.ego.yaw)},
        "camera": {"focal": _floats(cam.focal), "principal": _floats(cam.principal),
                   "image_size": list(cam.image_size),
                   "position": _floats(cam.position), "yaw": float(cam.extrinsic.yaw)},
        "objects": [{"id": o.id, "class": o.cls.value, "box": box_to_dict(o.box),
                     "velocity": _floats(o.velocity)} for o in s.objects],
    }


def scene_digest(s: Scene) -> str:
    return hashlib.sha256(canonical_json(scene_to_dict(s)).encode()).hexdigest()


def export_graph(g: SceneGraph, fmt: str = "json", report: Optional[ConsistencyReport] = None):
    """Graph as a schema-valid dict (``json``) or DOT text (``dot``).

    With a report, DOT draws inconsistent edges dashed.
    """
    if fmt == "json":
        doc = graph_to_document(g)
        jsonschema.validate(doc, GRAPH_SCHEMA)
        return doc
    if fmt == "dot":
        return graph_to_dot(g, report)
    raise ValueError(f"unknown format {fmt!r}")


def _q(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dot(g: SceneGraph, report: Optional[ConsistencyReport] = None) -> str:
    bad = set()
    node_bad = set()
    if report is not None:
        sensor = g.sensor.value
        bad = {l.edge.as_tuple() for l in report.edge_labels
               if l.sensor == sensor and l.verdict is Verdict.INCONSISTENT}
        node_bad = {n for n, v in report.node_labels.get(sensor, {}).items()
                    if v is Verdict.INCONSISTENT}
    lines = [f"digraph {_q(g.sensor.value + '_scene_graph')} {{",
             '  node [shape=ellipse, style=filled, fillcolor="#6baed6", fontcolor=white];',
             '  edge [color="#cb181d", fontcolor="#cb181d"];']
    for n in g.nodes:
        extra = ', color="#cb181d", penwidth=2' if n.id in node_bad else ""
        lines.append(f"  {_q(n.id)} [label={_q(n.cls.value)}{extra}];")
    for e in g.edges:
        style = ", style=dashed, color=red, penwidth=2" if e.as_tuple() in bad else ""
        lines.append(f"  {_q(e.subject)} -> {_q(e.object)} [label={_q(e.predicate.value)}{style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# schemas for every emitted document

_num_or_null = {"type": ["number", "null"]}
_str_or_null = {"type": ["string", "null"]}

DETECTION_SCHEMA = {
    "type": "object",
    "required": ["id", "class", "sensor", "box", "confidence", "source_object", "velocity"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string"}, "class": {"type": "string"},
        "sensor": {"enum": ["camera", "lidar"]},
        "box": {"type": "object"},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "source_object": _str_or_null,
        "velocity": {"type": ["array", "null"], "items": {"type": "number"}},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["node_labels", "edge_labels", "violations", "hypotheses"],
    "additionalProperties": False,
    "properties": {
        "node_labels": {"type": "object", "additionalProperties": {
            "type": "object",
            "additionalProperties": {"enum": [v.value for v in Verdict]}}},
        "edge_labels": {"type": "array", "items": {
            "type": "object",
            "required": ["sensor", "subject", "predicate", "object", "label"],
            "properties": {"label": {"enum": [v.value for v in Verdict]}}}},
        "violations": {"type": "object", "additionalProperties": {"type": "array"}},
        "hypotheses": {"type": "array", "items": {
            "type": "object", "required": ["node", "kind", "score"],
            "properties": {"score": {"type": "number", "minimum": 0, "maximum": 1},
                           "kind": {"enum": ["translation_along_ray", "false_positive",
                                             "false_negative"]}}}},
    },
}

FUSED_SCHEMA = {
    "type": "object",
    "required": ["kind", "class", "position", "detections", "weight", "flagged"],
    "properties": {"weight": {"enum": [0, 0.5, 1, 0.0, 1.0]}, "flagged": {"type": "boolean"},
                   "position": {"type": "array", "items": {"type": "number"},
                                "minItems": 3, "maxItems": 3}},
}

METRICS_SCHEMA = {
    "type": "object",
    "required": ["trials", "attacked_trials", "feasible_attacks", "false_alarm_rate",
                 "no_flip_fraction"],
    "properties": {
        "detection_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "false_alarm_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "no_flip_fraction": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "mean_displacement_m": {"type": ["number", "null"], "minimum": 0},
        "max_displacement_m": {"type": ["number", "null"], "minimum": 0},
    },
}

TRIAL_SCHEMA = {
    "type": "object",
    "required": ["trial", "seed", "scene_digest", "attacked", "attack", "graphs", "report",
                 "fused", "detected", "relation_flips", "false_alarms"],
    "properties": {
        "graphs": {"type": "object", "required": ["camera", "lidar"],
                   "additionalProperties": {"oneOf": [GRAPH_SCHEMA, {"type": "null"}]}},
        "report": REPORT_SCHEMA,
        "fused": {"type": "array", "items": FUSED_SCHEMA},
    },
}

RUN_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "config_digest", "trials", "metrics"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "trials": {"type": "array", "items": TRIAL_SCHEMA},
        "metrics": METRICS_SCHEMA,
    },
}

RECORD_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["index", "seed", "scene", "scene_digest", "camera_detections",
                 "lidar_detections", "graphs", "attacked", "attack"],
    "properties": {
        "camera_detections": {"type": "array", "items": DETECTION_SCHEMA},
        "lidar_detections": {"type": "array", "items": DETECTION_SCHEMA},
        "graphs": {"type": "object", "required": ["camera", "lidar_full", "lidar_reduced"],
                   "additionalProperties": {"oneOf": [GRAPH_SCHEMA, {"type": "null"}]}},
    },
}

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "config_digest", "records", "attacked", "total",
                 "predicate_counts"],
    "properties": {
        "records": {"type": "array", "items": {
            "type": "object", "required": ["file", "seed", "attacked"]}},
        "predicate_counts": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {"type": "integer", "minimum": 0}}},
    },
}
