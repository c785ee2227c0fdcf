import json

import pytest

from dpborrow.cli import main
from dpborrow.data import parse_summary_dataset, serialize_summary_dataset

CASE1 = {
    "outcome": "binomial",
    "studies": [
        {"id": "H1", "role": "historical", "n": 107, "responses": 23},
        {"id": "H2", "role": "historical", "n": 44, "responses": 12},
        {"id": "H3", "role": "historical", "n": 51, "responses": 19},
        {"id": "H4", "role": "historical", "n": 39, "responses": 9},
        {"id": "H5", "role": "historical", "n": 139, "responses": 39},
        {"id": "H6", "role": "historical", "n": 20, "responses": 6},
        {"id": "H7", "role": "historical", "n": 78, "responses": 9},
        {"id": "H8", "role": "historical", "n": 35, "responses": 10},
        {"id": "CC", "role": "current_control", "n": 6, "responses": 1},
        {"id": "CT", "role": "current_treatment", "n": 23, "responses": 14},
    ],
}

IPD_CSV = """study,arm,outcome,age,sex
A,control,28.1,71.0,1
A,control,30.5,76.2,0
A,control,29.0,73.0,1
B,control,29.9,74.4,1
B,control,31.2,69.9,0
B,control,28.8,71.5,1
C,control,27.5,73.3,1
C,control,28.9,72.0,0
C,treatment,25.0,72.8,0
C,treatment,24.1,70.1,1
"""

FAST_CONFIG = {"iters": 1200, "burn_in": 300}


@pytest.fixture
def case1_path(tmp_path):
    path = tmp_path / "case1.json"
    path.write_text(json.dumps(CASE1))
    return str(path)


def test_validate_ok(case1_path, capsys):
    assert main(["validate", case1_path]) == 0
    out = capsys.readouterr().out
    assert "8 historical, 1 current control, 1 current treatment" in out


def test_validate_missing_current_control(tmp_path, capsys):
    doc = {"outcome": "binomial",
           "studies": [s for s in CASE1["studies"] if s["role"] != "current_control"]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", str(path)]) == 2
    assert "current_control" in capsys.readouterr().err


def test_validate_malformed_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    assert main(["validate", str(path)]) == 2


def test_validate_ipd_constant_covariate_warns(tmp_path, capsys):
    csv = IPD_CSV.replace(",1\n", ",1.0\n").replace(",0\n", ",1.0\n")
    path = tmp_path / "flat.csv"
    path.write_text(csv)
    code = main(["validate", str(path), "--covariates", "age,sex"])
    out = capsys.readouterr().out
    assert code == 0
    assert "collinearity risk" in out


def test_analyze_writes_outputs(case1_path, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(FAST_CONFIG))
    out = tmp_path / "out"
    code = main(["analyze", case1_path, "--config", str(cfg),
                 "--methods", "cd,pd,dpm,ddpm", "--seed", "7", "--out", str(out)])
    assert code == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "method,mean,sd,ci_lo,ci_hi,decision,ehss"
    assert len(summary) == 5
    cd_row = summary[1].split(",")
    assert cd_row[0] == "cd"
    assert abs(float(cd_row[1]) - 39.1) < 1.0  # percent scale

    sbi_lines = (out / "sbi.csv").read_text().splitlines()
    assert sbi_lines[0] == "method,study,sbi"
    assert sum(line.startswith("dpm,") for line in sbi_lines) == 8
    assert sum(line.startswith("ddpm,") for line in sbi_lines) == 8

    results = json.loads((out / "results.json").read_text())
    assert {r["method"] for r in results} == {"cd", "pd", "dpm", "ddpm"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "analyze"
    assert manifest["master_seed"] == 7


def test_analyze_is_byte_identical_across_runs(case1_path, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(FAST_CONFIG))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["analyze", case1_path, "--config", str(cfg),
                     "--methods", "cd,dpm", "--seed", "3", "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("summary.csv", "sbi.csv", "results.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_analyze_malformed_dataset_exits_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    out = tmp_path / "out"
    assert main(["analyze", str(path), "--seed", "1", "--out", str(out)]) == 2
    assert not out.exists()


def test_analyze_unknown_method_exits_2(case1_path, tmp_path):
    assert main(["analyze", case1_path, "--methods", "cd,map",
                 "--seed", "1", "--out", str(tmp_path / "o")]) == 2


def test_analyze_sampler_abort_exits_3(case1_path, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iters": 500, "burn_in": 100,
                               "fix_m": 60.0, "max_components": 8}))
    code = main(["analyze", case1_path, "--config", str(cfg),
                 "--methods", "dpm", "--seed", "1", "--out", str(tmp_path / "o")])
    assert code == 3


def test_analyze_ipd_dataset(tmp_path):
    path = tmp_path / "trial.csv"
    path.write_text(IPD_CSV)
    out = tmp_path / "out"
    code = main(["analyze", str(path), "--covariates", "age,sex", "--methods", "cd",
                 "--seed", "2", "--out", str(out), "--iters", "600", "--burn-in", "150"])
    assert code == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[1].startswith("cd,")


def test_simulate_writes_and_reproduces(tmp_path):
    plan = {
        "runs": [
            {"outcome": "binomial", "scenario": 1, "hypothesis": "null",
             "methods": ["cd", "pd"], "replicates": 10},
            {"outcome": "binomial", "scenario": 4, "hypothesis": "null",
             "methods": ["cd", "pd"], "replicates": 10},
        ],
        "settings": {"conjugate_draws": 20000},
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan))
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    for out in (out1, out2):
        assert main(["simulate", "--plan", str(plan_path), "--seed", "9",
                     "--out", str(out), "--threads", "2"]) == 0
    assert (out1 / "oc.csv").read_bytes() == (out2 / "oc.csv").read_bytes()
    assert (out1 / "oc.json").read_bytes() == (out2 / "oc.json").read_bytes()

    lines = (out1 / "oc.csv").read_text().splitlines()
    assert lines[0] == "outcome,scenario,hypothesis,method,metric,value,mc_se,n_replicates"
    # 2 scenarios x 2 methods x 5 metrics
    assert len(lines) == 1 + 20


def test_simulate_bad_plan_exits_2(tmp_path):
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps({"runs": [{"outcome": "binomial", "scenario": 9}]}))
    assert main(["simulate", "--plan", str(plan_path), "--seed", "1",
                 "--out", str(tmp_path / "o")]) == 2


def test_round_trip_summary_through_cli_fixture(case1_path):
    ds = parse_summary_dataset(json.dumps(CASE1))
    assert parse_summary_dataset(serialize_summary_dataset(ds)) == ds


@pytest.mark.slow
def test_analyze_with_defaults_reproduces_case_values(case1_path, tmp_path):
    out = tmp_path / "full"
    assert main(["analyze", case1_path, "--methods", "cd,pd,dpm,ddpm",
                 "--seed", "11", "--out", str(out)]) == 0
    rows = {}
    for line in (out / "summary.csv").read_text().splitlines()[1:]:
        fields = line.split(",")
        rows[fields[0]] = [float(v) for v in fields[1:5]]
    assert abs(rows["cd"][0] - 39.1) < 0.5 and abs(rows["cd"][1] - 17.4) < 0.5
    assert abs(rows["pd"][0] - 35.7) < 0.5 and abs(rows["pd"][1] - 9.9) < 0.5
    assert abs(rows["dpm"][0] - 35.8) < 1.5 and abs(rows["dpm"][1] - 11.2) < 1.5
    assert abs(rows["dpm"][2] - 13.6) < 2.5 and abs(rows["dpm"][3] - 57.6) < 2.5
    assert abs(rows["ddpm"][0] - 36.1) < 1.5


def test_oc_csv_round_trips_against_json(tmp_path):
    plan = {
        "runs": [{"outcome": "binomial", "scenario": 1, "hypothesis": "null",
                  "methods": ["cd"], "replicates": 8}],
        "settings": {"conjugate_draws": 20000},
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan))
    out = tmp_path / "oc"
    assert main(["simulate", "--plan", str(plan_path), "--seed", "4",
                 "--out", str(out)]) == 0
    import csv as csv_mod

    with open(out / "oc.csv") as fh:
        rows = list(csv_mod.DictReader(fh))
    cells = {(c["method"], c["metric"]): c
             for c in json.loads((out / "oc.json").read_text())["cells"]}
    assert len(rows) == len(cells)
    for row in rows:
        cell = cells[(row["method"], row["metric"])]
        assert float(row["value"]) == pytest.approx(cell["value"], abs=5e-5)
        assert float(row["mc_se"]) == pytest.approx(cell["mc_se"], abs=5e-5)
        assert int(row["n_replicates"]) == cell["n_replicates"]
