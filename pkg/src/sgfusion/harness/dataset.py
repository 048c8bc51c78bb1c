"""Labelled scene-graph datasets: one JSON record per scene plus a manifest."""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path

import numpy as np

from ..sgg import build_graph_lidar, reduce_graph
from .config import SCHEMA_VERSION, ScenarioConfig
from .runner import attacked_indices, camera_graph, prepare_trial, run_attacks
from .serialize import detection_to_dict, export_graph, scene_digest, scene_to_dict


class IoFailure(OSError):
    pass


def _dump(path: Path, doc) -> None:
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _count(counter: Counter, doc) -> None:
    if doc is not None:
        counter.update(e["predicate"] for e in doc["edges"])


def build_record(config: ScenarioConfig, index: int, seed: int, attacked: bool) -> dict:
    inputs = prepare_trial(config, index, seed, attacked)
    cam, ego = inputs.scene.camera, inputs.scene.ego
    full = build_graph_lidar(inputs.lidar, ego, cam, config.relations)
    record = {
        "index": index,
        "seed": seed,
        "scene": scene_to_dict(inputs.scene),
        "scene_digest": scene_digest(inputs.scene),
        "camera_detections": [detection_to_dict(d) for d in inputs.camera],
        "lidar_detections": [detection_to_dict(d) for d in inputs.lidar],
        "graphs": {
            "camera": export_graph(camera_graph(config, inputs)),
            "lidar_full": export_graph(full),
            "lidar_reduced": export_graph(reduce_graph(full)),
            "lidar_attacked_full": None,
            "lidar_attacked_reduced": None,
        },
        "attacked": False,
        "attack": None,
        "attacked_lidar_detections": None,
    }
    if attacked:
        dets, results, error = run_attacks(config, inputs)
        if error is None:
            g = build_graph_lidar(dets, ego, cam, config.relations)
            record["attacked"] = True
            record["attack"] = [r.to_dict() for r in results]
            record["attacked_lidar_detections"] = [detection_to_dict(d) for d in dets]
            record["graphs"]["lidar_attacked_full"] = export_graph(g)
            record["graphs"]["lidar_attacked_reduced"] = export_graph(reduce_graph(g))
        else:
            record["attack_error"] = error
    return record


def generate_dataset(config: ScenarioConfig, n: int, out) -> dict:
    """Write ``n`` records to ``out`` and return the manifest (also written)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    seeds = [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(config.seed).spawn(n)]
    chosen = attacked_indices(config, n)
    counts = {k: Counter() for k in ("camera", "lidar_full", "lidar_reduced",
                                     "lidar_attacked_full", "lidar_attacked_reduced")}
    entries = []
    for i in range(n):
        rec = build_record(config, i, seeds[i], i in chosen)
        name = f"record_{i:05d}.json"
        _dump(out / name, rec)
        for key in counts:
            _count(counts[key], rec["graphs"][key])
        entries.append({"file": name, "seed": seeds[i], "attacked": rec["attacked"],
                        "scene_digest": rec["scene_digest"]})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config.digest(),
        "records": entries,
        "total": n,
        "attacked": sum(1 for e in entries if e["attacked"]),
        "attack_requested": len(chosen),
        "predicate_counts": {k: dict(sorted(c.items())) for k, c in counts.items()},
    }
    _dump(out / "manifest.json", manifest)
    return manifest
