"""Command-line entry point; every pipeline stage is a subcommand.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from .config import ConfigError, load_config
from .dataset import IoFailure, generate_dataset
from .runner import analyse, camera_graph, prepare_trial, run_attacks, run_scenario
from .serialize import detection_to_dict, export_graph, scene_digest, scene_to_dict

log = logging.getLogger("sgfusion")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario YAML file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output file (directory for 'dataset'); default stdout")
    common.add_argument("--format", choices=("json", "dot"), default="json")
    common.add_argument("--zeta-min", type=float, help="override the attack IoU floor")
    common.add_argument("--strict-predicates", action="store_true", default=None,
                        help="reject unknown predicates in imported graphs")
    common.add_argument("--trial", type=int, default=0, help="trial index for single-stage commands")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sgfusion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="scene and pseudo-detections")
    sub.add_parser("attack", parents=[common], help="apply configured attacks to one trial")
    g = sub.add_parser("graph", parents=[common], help="export scene graphs")
    g.add_argument("--sensor", choices=("camera", "lidar", "lidar_attacked"), default="lidar")
    sub.add_parser("check", parents=[common], help="cross-sensor consistency report")
    sub.add_parser("fuse", parents=[common], help="graph-informed fusion output")
    r = sub.add_parser("run", parents=[common], help="run every trial and aggregate metrics")
    r.add_argument("--csv", help="also write the per-trial metrics CSV here")
    d = sub.add_parser("dataset", parents=[common], help="write a labelled dataset")
    d.add_argument("-n", type=int, default=None, help="record count (default: config trials)")
    return p


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {out}: {exc}") from exc


def _json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _stage(args, config):
    inputs = prepare_trial(config, args.trial)
    if args.command == "generate":
        return _json({"scene": scene_to_dict(inputs.scene),
                      "scene_digest": scene_digest(inputs.scene),
                      "camera_detections": [detection_to_dict(d) for d in inputs.camera],
                      "lidar_detections": [detection_to_dict(d) for d in inputs.lidar]})

    # single-stage commands always apply the configured attacks when there are any
    lidar, results, error = (run_attacks(config, inputs) if config.attacks
                             else (list(inputs.lidar), [], None))
    if args.command == "attack":
        if error is not None:
            raise RuntimeError(error)
        return _json({"attacks": [r.to_dict() for r in results],
                      "lidar_detections": [detection_to_dict(d) for d in lidar]})

    g_cam = camera_graph(config, inputs)
    if args.command == "graph" and args.sensor == "camera":
        return _render(g_cam, args.format)
    benign = args.command == "graph" and args.sensor == "lidar"
    out = analyse(config, inputs, inputs.lidar if benign else lidar, g_cam)
    if args.command == "graph":
        return _render(out["graph"], args.format, out["report"])
    if args.command == "check":
        if args.format == "dot":
            return _render(out["graph"], "dot", out["report"])
        return _json(out["report"].to_dict())
    return _json([f.to_dict() for f in out["fused"]])


def _render(g, fmt, report=None) -> str:
    doc = export_graph(g, fmt, report)
    return doc if fmt == "dot" else _json(doc)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config).with_overrides(
            seed=args.seed, zeta_min=args.zeta_min, strict=args.strict_predicates)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        if args.command == "run":
            report = run_scenario(config)
            _emit(report.to_json(), args.out)
            if args.csv:
                _emit(report.metrics_csv(), args.csv)
        elif args.command == "dataset":
            if args.out is None:
                raise IoFailure("dataset needs --out DIR")
            manifest = generate_dataset(config, args.n or config.trials, args.out)
            print(f"wrote {manifest['total']} records ({manifest['attacked']} attacked) "
                  f"to {args.out}")
        else:
            if not 0 <= args.trial < config.trials:
                raise ValueError(f"--trial must lie in [0, {config.trials})")
            _emit(_stage(args, config), args.out)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI reports, tests see the exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
