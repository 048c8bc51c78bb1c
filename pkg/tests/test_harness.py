import copy
import csv
import io
import json
from collections import Counter

import jsonschema
import pytest
import yaml

from sgfusion.harness import (ConfigError, EmptyInput, compute_metrics, config_from_dict,
                              export_graph, generate_dataset, load_config, run_scenario,
                              run_trial)
from sgfusion.harness.cli import main
from sgfusion.harness.runner import CSV_COLUMNS, camera_graph, prepare_trial
from sgfusion.harness.serialize import MANIFEST_SCHEMA, RECORD_SCHEMA, RUN_REPORT_SCHEMA
from sgfusion.sgg import GRAPH_SCHEMA, SceneGraph, build_graph_lidar, import_external_graph

from conftest import CONFIGS

VAN_TRUCK_DOC = yaml.safe_load((CONFIGS / "van_truck_attack.yaml").read_text())


def van_truck(trials=None, **top):
    doc = copy.deepcopy(VAN_TRUCK_DOC)
    if trials is not None:
        doc["trials"] = trials
    doc.update(top)
    return config_from_dict(doc)


# --------------------------------------------------------------------------
# configuration


def errors_of(doc):
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    return info.value.errors


def test_schema_errors_name_the_field():
    errs = errors_of({"schema_version": 1, "seed": 1, "thresholds": {"gate": "high"}})
    assert any(e.startswith("thresholds.gate:") for e in errs)
    errs = errors_of({"schema_version": 1, "seed": -3, "bogus": 1})
    assert any(e.startswith("seed:") for e in errs) and any("bogus" in e for e in errs)


def test_missing_seed_is_rejected():
    assert any("seed" in e for e in errors_of({"schema_version": 1}))


def test_wrong_schema_version():
    assert any(e.startswith("schema_version:") for e in errors_of({"schema_version": 2, "seed": 0}))


def test_range_errors_are_reported_per_section():
    errs = errors_of({"schema_version": 1, "seed": 0, "thresholds": {"gate": 1.5},
                      "noise": {"miss_rate": 2.0}})
    assert {e.split(":")[0] for e in errs} == {"thresholds", "noise"}


def test_bad_attack_constraints_point_at_the_attack():
    doc = copy.deepcopy(VAN_TRUCK_DOC)
    doc["attacks"][0]["constraints"] = {"v_min": 10, "v_max": 5}
    assert any(e.startswith("attacks.0") for e in errors_of(doc))


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_overrides():
    cfg = load_config(CONFIGS / "van_truck_attack.yaml")
    o = cfg.with_overrides(seed=99, zeta_min=0.8, strict=True)
    assert o.seed == 99 and o.strict_predicates
    assert o.constraints_for(o.attacks[0]).zeta_min == 0.8
    assert o.digest() != cfg.digest()
    assert cfg.with_overrides().digest() == cfg.digest()


@pytest.mark.parametrize("name", ["van_truck_attack.yaml", "van_truck_attack_jitter.yaml",
                                  "benign.yaml", "clutter_fp.yaml"])
def test_shipped_configs_load(name):
    load_config(CONFIGS / name)


# --------------------------------------------------------------------------
# runner and metrics


def test_benign_scenario_has_no_detection_rate_and_no_false_alarms():
    rep = run_scenario(load_config(CONFIGS / "benign.yaml"))
    assert len(rep.trials) == 50
    assert "detection_rate" not in rep.metrics
    assert rep.metrics["false_alarm_rate"] == 0.0
    jsonschema.validate(rep.to_dict(), RUN_REPORT_SCHEMA)


def test_van_truck_attacked_trials_flag_the_van():
    rep = run_scenario(van_truck(16))
    attacked = [t for t in rep.trials if t["attacked"]]
    assert attacked and all(t["feasible"] and t["stealthy"] for t in attacked)
    for t in attacked:
        if t["relation_flips"]:
            target = t["attack"][0]["target"]
            assert t["report"]["node_labels"]["lidar"][target] == "inconsistent"
    assert any(t["relation_flips"] for t in attacked)


def test_same_seed_gives_identical_bytes():
    a, b = run_scenario(van_truck(6)), run_scenario(van_truck(6))
    assert a.to_json() == b.to_json()
    assert a.metrics_csv() == b.metrics_csv()
    assert run_scenario(van_truck(6, seed=8)).to_json() != a.to_json()


def test_trial_count_and_digests_are_stable():
    cfg = van_truck(4)
    rep = run_scenario(cfg)
    assert len(rep.trials) == cfg.trials
    again = run_trial(cfg, 2)
    assert again["scene_digest"] == rep.trials[2]["scene_digest"]


def rec(attacked, detected=False, flips=1, disp=10.0, iou=0.95, false_alarms=0):
    r = {"attacked": attacked, "feasible": attacked or None, "relation_flips": flips if attacked else 0,
         "detected": detected if attacked else None, "stealthy": True if attacked else None,
         "hypothesis_hit": detected or None, "false_alarms": false_alarms,
         "attack": [{"kind": "frustum_translate", "displacement_m": disp, "achieved_iou": iou}]
         if attacked else None}
    return r


def test_rates_are_plain_fractions():
    recs = [rec(True, detected=k < 9) for k in range(10)]
    assert compute_metrics(recs)["detection_rate"] == 0.9
    assert compute_metrics([rec(True, True)] * 4)["detection_rate"] == 1.0
    recs = [rec(False, false_alarms=k % 2) for k in range(4)]
    m = compute_metrics(recs)
    assert m["false_alarm_rate"] == 0.5 and "detection_rate" not in m


def test_undetectable_attacks_are_counted_apart():
    recs = [rec(True, True), rec(True, False, flips=0), rec(True, False, flips=0), rec(True, True)]
    m = compute_metrics(recs)
    assert m["detection_rate"] == 1.0 and m["no_flip_fraction"] == 0.5
    assert m["detection_rate_all"] == 0.5


def test_empty_metrics_input():
    with pytest.raises(EmptyInput):
        compute_metrics([])


def test_displacement_stats_recomputed_from_trials():
    rep = run_scenario(van_truck(10))
    disp = [t["attack"][0]["displacement_m"] for t in rep.trials if t["attack"]]
    ious = [t["attack"][0]["achieved_iou"] for t in rep.trials if t["attack"]]
    assert rep.metrics["max_displacement_m"] == max(disp)
    assert rep.metrics["mean_displacement_m"] == pytest.approx(sum(disp) / len(disp), rel=1e-12)
    assert rep.metrics["mean_achieved_iou"] == pytest.approx(sum(ious) / len(ious), rel=1e-12)
    for key in ("detection_rate", "false_alarm_rate", "stealth_rate", "no_flip_fraction"):
        v = rep.metrics[key]
        assert v is None or 0.0 <= v <= 1.0


def test_csv_columns_and_rows():
    rep = run_scenario(van_truck(5))
    rows = list(csv.reader(io.StringIO(rep.metrics_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS == ("trial", "attacked", "detected", "displacement_m",
                                             "achieved_iou", "relation_flips", "false_alarms")
    assert [int(r[0]) for r in rows[1:]] == list(range(5))


def test_imported_camera_graphs(tmp_path):
    cfg = van_truck(3)
    for k in range(3):
        doc = export_graph(camera_graph(cfg, prepare_trial(cfg, k)))
        (tmp_path / f"cam_{k}.json").write_text(json.dumps(doc))
    doc = copy.deepcopy(VAN_TRUCK_DOC)
    doc["trials"] = 3
    doc["camera_graph"] = {"source": "import", "path": "cam_{trial}.json"}
    imported = config_from_dict(doc, str(tmp_path))
    a, b = run_scenario(cfg), run_scenario(imported)
    assert [t["report"] for t in a.trials] == [t["report"] for t in b.trials]


# --------------------------------------------------------------------------
# graph export


def test_empty_graph_exports_empty_arrays():
    doc = export_graph(SceneGraph((), (), "lidar"))
    jsonschema.validate(doc, GRAPH_SCHEMA)
    assert doc["nodes"] == [] and doc["edges"] == []


def test_export_import_round_trip():
    cfg = van_truck(1)
    inp = prepare_trial(cfg, 0)
    g = build_graph_lidar(inp.lidar, inp.scene.ego, inp.scene.camera)
    back = import_external_graph(export_graph(g))
    assert back == g and back.edge_set() == g.edge_set()


def test_dot_labels_van_truck_edge():
    cfg = van_truck(1)
    inp = prepare_trial(cfg, 0)
    g = build_graph_lidar(inp.lidar, inp.scene.ego, inp.scene.camera)
    van = next(d.id for d in inp.lidar if d.cls.value == "van")
    truck = next(d.id for d in inp.lidar if d.cls.value == "truck")
    assert (truck, "front_of", van) in g.edge_set()
    dot = export_graph(g, "dot")
    assert f'"{truck}" -> "{van}" [label="front_of"' in dot
    assert dot.startswith("digraph") and dot.rstrip().endswith("}")


def test_dot_dashes_inconsistent_edges():
    from sgfusion.harness.runner import analyse, run_attacks
    cfg = van_truck(20)
    inp = prepare_trial(cfg, 0)
    lidar = run_attacks(cfg, inp)[0]
    out = analyse(cfg, inp, lidar, camera_graph(cfg, inp))
    dot = export_graph(out["graph"], "dot", out["report"])
    dashed = [line for line in dot.splitlines() if "style=dashed" in line]
    bad = {t for s, t in out["report"].inconsistent() if s == "lidar"}
    assert len(dashed) == len(bad) > 0


def test_unknown_export_format():
    with pytest.raises(ValueError):
        export_graph(SceneGraph((), (), "lidar"), "png")


# --------------------------------------------------------------------------
# datasets


def recount(out):
    totals = {}
    for f in sorted(out.glob("record_*.json")):
        doc = json.loads(f.read_text())
        jsonschema.validate(doc, RECORD_SCHEMA)
        for key, g in doc["graphs"].items():
            c = totals.setdefault(key, Counter())
            if g is not None:
                c.update(e["predicate"] for e in g["edges"])
    return {k: dict(sorted(c.items())) for k, c in totals.items()}


def test_single_benign_record(tmp_path):
    manifest = generate_dataset(load_config(CONFIGS / "benign.yaml"), 1, tmp_path)
    assert manifest["total"] == 1 and manifest["attacked"] == 0
    assert len(list(tmp_path.glob("record_*.json"))) == 1
    assert manifest["predicate_counts"] == recount(tmp_path)
    jsonschema.validate(manifest, MANIFEST_SCHEMA)


def test_hundred_records_half_attacked(tmp_path):
    manifest = generate_dataset(van_truck(), 100, tmp_path)
    assert manifest["total"] == 100 and manifest["attacked"] == 50
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == manifest
    assert manifest["predicate_counts"] == recount(tmp_path)
    rec = json.loads((tmp_path / next(r["file"] for r in manifest["records"]
                                      if r["attacked"])).read_text())
    # benign and attacked LiDAR graphs sit side by side
    assert rec["graphs"]["lidar_full"] and rec["graphs"]["lidar_attacked_full"]


def test_dataset_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_dataset(van_truck(), 6, a)
    generate_dataset(van_truck(), 6, b)
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_dataset_rejects_empty_request(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(van_truck(), 0, tmp_path)


def test_dataset_io_failure(tmp_path):
    from sgfusion.harness import IoFailure
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(IoFailure):
        generate_dataset(van_truck(), 1, blocker / "sub")


# --------------------------------------------------------------------------
# command line


@pytest.fixture
def small_config(tmp_path):
    doc = copy.deepcopy(VAN_TRUCK_DOC)
    doc["trials"] = 4
    p = tmp_path / "small.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p


@pytest.mark.parametrize("cmd", ["generate", "attack", "graph", "check", "fuse"])
def test_stage_commands_emit_json(cmd, small_config, tmp_path, capsys):
    out = tmp_path / "o.json"
    assert main([cmd, "--config", str(small_config), "--out", str(out)]) == 0
    json.loads(out.read_text())


def test_graph_command_variants(small_config, capsys):
    assert main(["graph", "--config", str(small_config), "--sensor", "camera"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["sensor"] == "camera"
    assert main(["graph", "--config", str(small_config), "--format", "dot",
                 "--sensor", "lidar_attacked"]) == 0
    assert capsys.readouterr().out.startswith("digraph")


def test_run_command_writes_report_and_csv(small_config, tmp_path):
    out, table = tmp_path / "r.json", tmp_path / "m.csv"
    assert main(["run", "--config", str(small_config), "--out", str(out), "--csv", str(table)]) == 0
    jsonschema.validate(json.loads(out.read_text()), RUN_REPORT_SCHEMA)
    assert table.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)


def test_dataset_command(small_config, tmp_path, capsys):
    assert main(["dataset", "--config", str(small_config), "--out", str(tmp_path / "d"),
                 "-n", "2"]) == 0
    assert (tmp_path / "d" / "manifest.json").exists()
    assert main(["dataset", "--config", str(small_config)]) == 2


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nseed: 1\nthresholds: {gate: 7}\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "config error: thresholds" in capsys.readouterr().err


def test_runtime_error_exit_code(small_config, tmp_path, capsys):
    assert main(["check", "--config", str(small_config), "--trial", "99"]) == 2
    assert main(["run", "--config", str(small_config),
                 "--out", str(tmp_path / "no" / "such" / "dir.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_overrides_reach_the_run(small_config, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", "--config", str(small_config), "--out", str(a)])
    main(["run", "--config", str(small_config), "--out", str(b), "--zeta-min", "0.95"])
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert ra["config_digest"] != rb["config_digest"]
    assert rb["metrics"]["mean_achieved_iou"] >= 0.95 - 1e-9
