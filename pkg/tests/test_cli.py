import json
from pathlib import Path

import pytest

from xbarlife.cli import main

TINY = {
    "config": {"num_pes": 1, "apu_rows_per_pe": 1, "apu_cols_per_pe": 1, "xbar_rows": 8,
               "xbar_cols": 8, "endurance_mean": 100, "endurance_cov": 0.2},
    "workload": {"layers": [{"id": 0, "kind": "StaticFC", "in_dim": 8, "out_dim": 2, "tokens": 1}],
                 "edges": []},
    "policy": {"wl": {"update_prob": [1, 1, 1, 1]}, "batch_cap": 4},
    "policies": [{"label": "baseline"}, {"label": "+fault_handling", "fault_handling": True}],
    "seeds": [0, 1, 2],
}


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


def test_transpose_check_two_by_four(capsys):
    assert main(["transpose-check", "2", "4", "--banks", "16"]) == 0
    out = capsys.readouterr().out
    assert "{0} {1,2,4} {3,6,5} {7}" in out and "OK" in out


def test_transpose_check_trivial_and_json(capsys):
    assert main(["transpose-check", "1", "1", "--banks", "1", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True


def test_transpose_check_overflow_guard():
    assert main(["transpose-check", str(2**31), str(2**31)]) == 4


def test_run_grid_outputs(tmp_path):
    cfg = write(tmp_path, "exp.json", TINY)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    index = json.loads((out / "index.json").read_text())
    assert len(index["runs"]) == 6
    for e in index["runs"]:
        assert (out / e["report"]).exists()
        assert (out / e["throughput_series"]).read_text().startswith("inference,throughput_ips\n")
        assert (out / e["retired_columns"]).read_text().startswith("inference,cumulative_retired\n")
    first = {p: p.read_bytes() for p in out.rglob("*") if p.is_file()}
    out2 = tmp_path / "out2"
    assert main(["run", "--config", cfg, "--out", str(out2)]) == 0
    for p, data in first.items():
        assert (out2 / p.relative_to(out)).read_bytes() == data


def test_seed_override(tmp_path):
    cfg = write(tmp_path, "exp.json", TINY)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out), "--seed", "9"]) == 0
    assert {e["seed"] for e in json.loads((out / "index.json").read_text())["runs"]} == {9}


def test_unreadable_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_malformed_json_position(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", '{\n  "config": {,\n}')
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:2:14" in capsys.readouterr().err


def test_bad_field_is_input_error(tmp_path):
    cfg = write(tmp_path, "exp.json", {**TINY, "config": {"num_pes": 0}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_infeasible_exit_and_override(tmp_path):
    exp = dict(TINY)
    exp["workload"] = {"layers": [{"id": 0, "kind": "StaticFC", "in_dim": 100, "out_dim": 2, "tokens": 1}],
                        "edges": []}
    cfg = write(tmp_path, "exp.json", exp)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 2
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--allow-infeasible"]) == 0
    assert (tmp_path / "b" / "index.json").exists()


def test_compare_identity_and_mismatch(tmp_path, capsys):
    cfg = write(tmp_path, "exp.json", TINY)
    out = tmp_path / "o"
    main(["run", "--config", cfg, "--out", str(out)])
    capsys.readouterr()
    r0 = str(out / "00_baseline_seed0" / "report.json")
    r1 = str(out / "01_fault_handling_seed0" / "report.json")
    assert main(["compare", r0, r0, "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert [r["lifespan_ratio"] for r in rows] == [1.0, 1.0]
    csv_path = tmp_path / "cmp.csv"
    assert main(["compare", r1, r0, "--out", str(csv_path)]) == 0
    text = capsys.readouterr().out
    assert text.index("baseline") < text.index("+fault_handling")
    assert "13.2x" in text
    assert csv_path.read_text().splitlines()[1].startswith("baseline,")
    other = str(out / "00_baseline_seed1" / "report.json")
    assert main(["compare", r0, other]) == 3


def test_compare_needs_two(tmp_path):
    assert main(["compare", str(tmp_path / "x.json")]) == 2


def test_plan_command(tmp_path, capsys):
    cfg = write(tmp_path, "exp.json", TINY)
    dst = tmp_path / "plan.json"
    assert main(["plan", "--config", cfg, "--out", str(dst), "--json"]) == 0
    doc = json.loads(dst.read_text())
    assert doc["plan"]["bindings"][0]["vertical_span"] == 1
    assert [t["kind"] for t in doc["schedule"]["tasks"]] == ["Write", "Compute"]
    assert json.loads(capsys.readouterr().out)["latency_cycles"] == 8 * 6000 + 96


def test_estimate_thresholds_command(tmp_path):
    cfg = write(tmp_path, "exp.json", TINY)
    dst = tmp_path / "profile.json"
    assert main(["estimate-thresholds", "--config", cfg, "--out", str(dst), "--trials", "4",
                 "--step", "2"]) == 0
    prof = json.loads(dst.read_text())
    assert set(prof["per_layer_threshold"]) == {"0"} and prof["trials"] == 4
    # feed it back as an external profile
    exp = {**TINY, "profile": "profile.json",
            "policies": [{"label": "a", "fault_handling": True, "approximation": True}]}
    exp = write(tmp_path, "exp2.json", exp)
    assert main(["run", "--config", exp, "--out", str(tmp_path / "r")]) == 0


def test_ladder_experiment(tmp_path):
    exp = {**TINY, "ladder": True, "profile": {"uniform": 2}, "seeds": [0]}
    exp.pop("policies")
    exp["policy"] = {"update_prob": [1, 1, 1, 1], "batch_cap": 4}
    cfg = write(tmp_path, "exp.json", exp)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    labels = [e["label"] for e in json.loads((out / "index.json").read_text())["runs"]]
    assert labels == ["baseline", "+fault_handling", "+wear_leveling", "+batching", "+approximation"]


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    for p in root.glob("*.json"):
        assert main(["plan", "--config", str(p)]) == 0
