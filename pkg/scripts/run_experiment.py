"""Run a scenario config and print its headline metrics.

    python scripts/run_experiment.py configs/van_truck_attack.yaml --out runs/van_truck
"""

import argparse
import json
import time
from pathlib import Path

from sgfusion.harness import config_from_dict, load_config, run_scenario

KEYS = ("trials", "attacked_trials", "feasible_attacks", "detection_rate", "detection_rate_all",
        "no_flip_fraction", "hypothesis_accuracy", "stealth_rate", "false_alarm_rate",
        "mean_displacement_m", "max_displacement_m", "mean_achieved_iou")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("configs", nargs="+")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--out", help="directory for report.json and metrics.csv per config")
    args = p.parse_args(argv)
    for path in args.configs:
        cfg = load_config(path)
        if args.trials:
            doc = dict(cfg.source, trials=args.trials)
            cfg = config_from_dict(doc, cfg.base_dir)
        t0 = time.perf_counter()
        rep = run_scenario(cfg)
        dt = time.perf_counter() - t0
        print(f"== {path} ({dt:.1f} s)")
        for k in KEYS:
            v = rep.metrics.get(k)
            print(f"  {k:<22} {'-' if v is None else round(v, 4)}")
        if args.out:
            out = Path(args.out) / Path(path).stem
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.json").write_text(rep.to_json())
            (out / "metrics.csv").write_text(rep.metrics_csv())
            (out / "metrics.json").write_text(json.dumps(rep.metrics, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
