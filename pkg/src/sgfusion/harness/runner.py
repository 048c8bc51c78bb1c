"""Scenario runner: scene -> detections -> (attack) -> graphs -> checks -> fusion."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..attack import AttackContext, AttackKind, AttackSpec, Infeasible, UnknownTarget, apply_attack
from ..fusion import build_cost_matrix, graph_informed_fuse, solve_assignment
from ..geometry import GeometryError
from ..integrity import CROSS_CHECKED, EXCLUDES, Verdict, cross_check, hypothesize_perturbation, match_nodes
from ..scene import Scene, generate_scene, pseudo_detect_camera, pseudo_detect_lidar
from ..sgg import (SceneGraph, build_graph_lidar, build_graph_monocular, expand_graph,
                   import_external_graph)
from .config import SCHEMA_VERSION, ScenarioConfig, canonical_json
from .serialize import export_graph, scene_digest

log = logging.getLogger(__name__)

CSV_COLUMNS = ("trial", "attacked", "detected", "displacement_m", "achieved_iou",
               "relation_flips", "false_alarms")


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class TrialInputs:
    index: int
    seed: int
    scene: Scene
    lidar: tuple
    camera: tuple
    attacked: bool


def trial_seeds(config: ScenarioConfig) -> list:
    children = np.random.SeedSequence(config.seed).spawn(config.trials)
    return [int(c.generate_state(1)[0]) for c in children]


def attacked_indices(config: ScenarioConfig, n: Optional[int] = None) -> frozenset:
    """Which trials carry the configured attacks: round(n * fraction) of them."""
    n = config.trials if n is None else n
    if not config.attacks:
        return frozenset()
    k = int(math.floor(n * config.attack_fraction + 0.5))
    order = np.random.default_rng([config.seed, 0xA77AC]).permutation(n)
    return frozenset(int(i) for i in order[:k])


def prepare_trial(config: ScenarioConfig, index: int, seed: Optional[int] = None,
                  attacked: Optional[bool] = None) -> TrialInputs:
    if seed is None:
        seed = trial_seeds(config)[index]
    if attacked is None:
        attacked = index in attacked_indices(config)
    s_scene, s_lidar, s_cam = np.random.SeedSequence(seed).generate_state(3)
    scene = generate_scene(config.scene, int(s_scene))
    lidar = pseudo_detect_lidar(scene, config.noise, int(s_lidar), config.scene)
    camera = pseudo_detect_camera(scene, config.noise, int(s_cam), config.scene)
    return TrialInputs(index, int(seed), scene, tuple(lidar), tuple(camera), bool(attacked))


def resolve_target(request, lidar) -> Optional[str]:
    if request.target:
        return request.target
    for d in sorted(lidar, key=lambda d: d.id):
        if d.cls.value == request.target_class:
            return d.id
    return None


def run_attacks(config: ScenarioConfig, inputs: TrialInputs) -> tuple:
    """Apply every configured attack; returns (detections, results, error message)."""
    dets = list(inputs.lidar)
    results = []
    ctx = AttackContext(inputs.scene.camera, inputs.camera, config.thresholds.gate)
    for req in config.attacks:
        target = None if req.kind is AttackKind.FALSE_POSITIVE else resolve_target(req, dets)
        if req.kind is not AttackKind.FALSE_POSITIVE and target is None:
            return list(inputs.lidar), [], f"no {req.target_class} detection to attack"
        spec = AttackSpec(req.kind, target, req.spawn, config.constraints_for(req))
        try:
            dets, res = apply_attack(dets, spec, ctx)
        except (Infeasible, UnknownTarget, GeometryError) as exc:
            return list(inputs.lidar), [], f"{type(exc).__name__}: {exc}"
        results.append(res)
    return dets, results, None


def camera_graph(config: ScenarioConfig, inputs: TrialInputs) -> SceneGraph:
    spec = config.camera_graph
    cam = inputs.scene.camera
    if spec.source == "import":
        path = Path(spec.path.format(trial=inputs.index))
        if config.base_dir and not path.is_absolute():
            path = Path(config.base_dir) / path
        doc = json.loads(path.read_text())
        return import_external_graph(doc, strict=config.strict_predicates,
                                     detections={d.id: d for d in inputs.camera})
    return build_graph_monocular(inputs.camera, cam, config.relations, inputs.scene.ego,
                                 spec.prior_tolerance, spec.pixel_margin)


def analyse(config: ScenarioConfig, inputs: TrialInputs, lidar, g_cam: SceneGraph) -> dict:
    """Graph, check, hypothesise and fuse for one LiDAR detection list."""
    cam, ego = inputs.scene.camera, inputs.scene.ego
    g_lidar = build_graph_lidar(lidar, ego, cam, config.relations)
    dets = list(lidar) + list(inputs.camera)
    match = match_nodes(g_cam, g_lidar, dets, cam, config.thresholds.match)
    report = cross_check(g_cam, g_lidar, match, kb=config.kb(), cam=cam, detections=dets)
    constraints = None
    frustum = [r for r in config.attacks if r.kind is AttackKind.FRUSTUM_TRANSLATE]
    if frustum:
        constraints = config.constraints_for(frustum[0])
    hyps = hypothesize_perturbation(report, g_cam, g_lidar, dets, cam, constraints, ego,
                                    config.relations)
    report = report.with_hypotheses(hyps)
    assignment = solve_assignment(build_cost_matrix(inputs.camera, lidar, cam),
                                  config.thresholds.gate)
    fused = graph_informed_fuse(assignment, inputs.camera, lidar, report, cam)
    return {"graph": g_lidar, "match": match, "report": report, "fused": fused,
            "assignment": assignment}


def _partner(assignment, camera, lidar, lidar_id) -> Optional[str]:
    for i, j, _ in assignment.pairs:
        if lidar[j].id == lidar_id:
            return camera[i].id
    return None


def relation_flips(benign: SceneGraph, attacked: SceneGraph, node: str) -> int:
    """Cross-checked relations on ``node`` that the attack turned into a
    contradicting one (front_of -> behind, close_to -> far_from, ...).

    A relation that merely disappears is not a flip: the cross-check reports
    it as unknown, never inconsistent.
    """
    after = {e.as_tuple() for e in expand_graph(attacked).edges}
    n = 0
    for e in expand_graph(benign).edges:
        if node not in (e.subject, e.object) or e.predicate not in CROSS_CHECKED:
            continue
        if any((e.subject, q.value, e.object) in after for q in EXCLUDES[e.predicate]):
            n += 1
    return n


def run_trial(config: ScenarioConfig, index: int, seed: Optional[int] = None,
              attacked: Optional[bool] = None) -> dict:
    inputs = prepare_trial(config, index, seed, attacked)
    g_cam = camera_graph(config, inputs)
    benign = analyse(config, inputs, inputs.lidar, g_cam)

    record = {
        "trial": index, "seed": inputs.seed, "scene_digest": scene_digest(inputs.scene),
        "attacked": inputs.attacked, "attack": None, "attack_error": None, "feasible": None,
        "stealthy": None, "detected": None, "relation_flips": 0, "false_alarms": 0,
        "hypothesis_hit": None,
    }
    final = benign
    if inputs.attacked:
        lidar, results, error = run_attacks(config, inputs)
        record["feasible"] = error is None
        record["attack_error"] = error
        if error is None:
            final = analyse(config, inputs, lidar, g_cam)
            record["attack"] = [r.to_dict() for r in results]
            main = results[0]
            if main.kind is AttackKind.FRUSTUM_TRANSLATE:
                target = main.target
                before = _partner(benign["assignment"], inputs.camera, inputs.lidar, target)
                after = _partner(final["assignment"], inputs.camera, lidar, target)
                record["stealthy"] = before is not None and before == after
                record["relation_flips"] = relation_flips(benign["graph"], final["graph"], target)
                label = final["report"].node_labels["lidar"].get(target)
                record["detected"] = label is Verdict.INCONSISTENT
                hyps = final["report"].hypotheses
                if record["detected"] and hyps:
                    top = hyps[0]
                    record["hypothesis_hit"] = bool(
                        top.kind == "translation_along_ray" and top.node == target
                        and top.interval[0] <= main.signed_displacement <= top.interval[1])
                elif record["detected"]:
                    record["hypothesis_hit"] = False
            else:
                label = final["report"].node_labels["lidar"].get(main.target)
                record["detected"] = label is Verdict.INCONSISTENT
    # every trial has a benign pass, attacked or not; its inconsistencies are false alarms
    record["false_alarms"] = benign["report"].count(Verdict.INCONSISTENT)
    attacked_graph = final["graph"] if final is not benign else None
    record["graphs"] = {
        "camera": export_graph(g_cam),
        "lidar": export_graph(benign["graph"]),
        "lidar_attacked": None if attacked_graph is None else export_graph(attacked_graph),
    }
    record["report"] = final["report"].to_dict()
    record["fused"] = [f.to_dict() for f in final["fused"]]
    return record


def _mean(xs) -> Optional[float]:
    xs = list(xs)
    return float(sum(xs) / len(xs)) if xs else None


def compute_metrics(records) -> dict:
    records = list(records)
    if not records:
        raise EmptyInput("no trials to aggregate")
    attacked = [r for r in records if r["attacked"]]
    feasible = [r for r in attacked if r.get("feasible")]
    frustum = [r for r in feasible if r["attack"] and r["attack"][0]["kind"] == "frustum_translate"]
    flipped = [r for r in frustum if r["relation_flips"] > 0]
    detected = [r for r in frustum if r["detected"]]
    disp = [r["attack"][0]["displacement_m"] for r in frustum]
    out = {
        "trials": len(records),
        "attacked_trials": len(attacked),
        "feasible_attacks": len(feasible),
        "false_alarm_rate": _mean(1.0 if r["false_alarms"] > 0 else 0.0 for r in records),
        "no_flip_fraction": (len(frustum) - len(flipped)) / len(frustum) if frustum else None,
        "mean_displacement_m": _mean(disp),
        "max_displacement_m": max(disp) if disp else None,
        "mean_achieved_iou": _mean(r["attack"][0]["achieved_iou"] for r in frustum),
    }
    if attacked:
        out["detection_rate"] = (_mean(1.0 if r["detected"] else 0.0 for r in flipped)
                                 if flipped else None)
        out["detection_rate_all"] = (_mean(1.0 if r["detected"] else 0.0 for r in feasible)
                                     if feasible else None)
        out["stealth_rate"] = (_mean(1.0 if r["stealthy"] else 0.0 for r in frustum)
                               if frustum else None)
        out["hypothesis_accuracy"] = (_mean(1.0 if r["hypothesis_hit"] else 0.0 for r in detected)
                                      if detected else None)
    return out


@dataclass(frozen=True)
class RunReport:
    config_digest: str
    trials: tuple
    metrics: dict

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config_digest": self.config_digest,
                "trials": list(self.trials), "metrics": self.metrics}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.trials:
            a = r["attack"][0] if r["attack"] else {}
            w.writerow([r["trial"], int(r["attacked"]), int(bool(r["detected"])),
                        a.get("displacement_m", ""), a.get("achieved_iou", "") or "",
                        r["relation_flips"], r["false_alarms"]])
        return buf.getvalue()


def run_scenario(config: ScenarioConfig) -> RunReport:
    seeds = trial_seeds(config)
    attacked = attacked_indices(config)
    records = [run_trial(config, k, seeds[k], k in attacked) for k in range(config.trials)]
    # normalise through JSON so the in-memory report equals what re-loading gives
    records = json.loads(canonical_json(records))
    return RunReport(config.digest(), tuple(records), compute_metrics(records))
