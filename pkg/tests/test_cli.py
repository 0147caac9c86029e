import hashlib
import json
import math
import os

import pytest

from clselect.cli import main


def sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture
def cl_data(tmp_path):
    path = str(tmp_path / "cl.csv")
    code = main(["simulate", "--model", "common-location", "--d", "6", "--d-star", "4",
                 "--rho", "0.8", "--n", "40", "--seed", "5", "-o", path])
    assert code == 0
    return path


# --- simulate ---------------------------------------------------------------------


def test_simulate_shape_and_reproducibility(tmp_path):
    args = ["simulate", "--model", "common-location", "--d", "10", "--d-star", "8", "--rho", "0.9",
            "--n", "100", "--seed", "42"]
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(args + ["-o", a]) == 0
    assert main(args + ["-o", b]) == 0
    with open(a, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 101 and len(lines[0].split(",")) == 10
    assert sha(a) == sha(b)
    meta = read_json(a + ".manifest.json")
    assert meta["seed"] == 42 and meta["data_fingerprint"] == "sha256:" + sha(a)


def test_simulate_from_spec_file(tmp_path):
    spec = tmp_path / "model.spec"
    spec.write_text("# ordinal data\nmodel = ordinal\nd = 4\nrho = 0.5\ntheta = 0.3\nn = 60\nseed = 1\n")
    out = str(tmp_path / "o.csv")
    assert main(["simulate", "--spec", str(spec), "-o", out]) == 0
    with open(out, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    assert header[-1] == "group" and len(header) == 5


def test_simulate_rejects_bad_correlation(tmp_path, capsys):
    code = main(["simulate", "--model", "common-location", "--d", "5", "--d-star", "3", "--rho", "1.2",
                 "--n", "10", "-o", str(tmp_path / "x.csv")])
    assert code == 2
    assert "rho" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "x.csv")


# --- select -------------------------------------------------------------------------


def test_select_unparseable_csv_exits_with_input_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1.0,abc\n")
    assert main(["select", str(bad), "--model", "common-location", "--out-dir", str(tmp_path / "o")]) == 2
    assert main(["select", str(tmp_path / "missing.csv"), "--model", "common-location",
                 "--out-dir", str(tmp_path / "o")]) == 2


def test_select_manifest_records_resolved_defaults(cl_data, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["select", cl_data, "--model", "common-location", "--out-dir", str(out)])
    assert code in (0, 3)
    assert "tau=6 T=60 xi=0.7 N=30" in capsys.readouterr().out
    meta = read_json(out / "manifest.json")
    sampler = meta["config"]["sampler"]
    assert sampler["tau"] == 6.0 and sampler["T"] == 60 and sampler["burn_in"] == 30
    assert sampler["b"] == pytest.approx(math.sqrt(10))
    assert meta["config"]["stability"]["alpha"] == 0.1
    assert meta["config"]["estimator"]["inner"] == "jacobian"
    assert meta["data_fingerprint"] == "sha256:" + sha(cl_data)
    report = read_json(out / "report.json")
    assert set(report) >= {"chain", "diagnostics", "selection"}
    with open(out / "trace.csv", encoding="utf-8") as fh:
        assert len(fh.read().splitlines()) == 61
    assert not [f for f in os.listdir(out) if f.startswith(".tmp")]


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_unpenalised_cls2_chain_matches_cls1(cl_data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["select", cl_data, "--model", "common-location", "--algorithm", "cls1", "--seed", "3",
          "--out-dir", str(a)])
    main(["select", cl_data, "--model", "common-location", "--algorithm", "cls2", "--lam", "0",
          "--seed", "3", "--out-dir", str(b)])
    assert sha(a / "trace.csv") == sha(b / "trace.csv")
    ra, rb = read_json(a / "report.json"), read_json(b / "report.json")
    differing = {k for k in set(ra) | set(rb) if ra.get(k) != rb.get(k)}
    assert differing == {"algorithm", "selection"}


def test_select_ordinal_reports_estimates(tmp_path):
    data = str(tmp_path / "ord.csv")
    assert main(["simulate", "--model", "ordinal", "--d", "20", "--rho", "0.5", "--theta", "0.4",
                 "--case-fraction", "0.2", "--n", "333", "--seed", "8", "-o", data]) == 0
    out = tmp_path / "ord"
    code = main(["select", data, "--model", "ordinal", "--algorithm", "cls2", "--T", "40",
                 "--out-dir", str(out)])
    assert code in (0, 3)
    report = read_json(out / "report.json")
    stable = report["selection"]["stable"]
    assert 1 <= stable["n_selected"] < 20
    assert len(stable["theta"]) == 1 and stable["se"][0] > 0
    meta = read_json(out / "manifest.json")
    assert meta["config"]["family"]["gamma_source"] == "estimated"


def test_select_bad_init_string(cl_data, tmp_path):
    assert main(["select", cl_data, "--model", "common-location", "--init", "101",
                 "--out-dir", str(tmp_path / "o")]) == 2


# --- bench ----------------------------------------------------------------------------


def test_bench_single_replicate_marks_se_unavailable(tmp_path):
    plan = tmp_path / "tiny.plan"
    plan.write_text("table = table1\nn = 20\nd = 4\nrho = 0.6\nmethods = no-selection,cls1-min\nT = 20\n")
    out = tmp_path / "bench"
    assert main(["bench", str(plan), "--seed", "1", "--B", "1", "--jobs", "1", "--out-dir", str(out)]) == 0
    with open(out / "summary.csv", encoding="utf-8") as fh:
        text = fh.read()
    assert "NA" in text
    assert sorted(os.listdir(out)) == ["meta.json", "summary.csv", "timing.json"]


def test_bench_is_deterministic_across_runs_and_workers(tmp_path):
    runs = []
    for jobs, name in ((1, "a"), (2, "b")):
        out = tmp_path / name
        assert main(["bench", "table3_small", "--seed", "7", "--B", "4", "--jobs", str(jobs),
                     "--out-dir", str(out)]) == 0
        runs.append(out)
    assert sha(runs[0] / "summary.csv") == sha(runs[1] / "summary.csv")
    assert sha(runs[0] / "meta.json") == sha(runs[1] / "meta.json")


def test_bench_requires_seed_and_known_plan(tmp_path):
    with pytest.raises(SystemExit):
        main(["bench", "table3_small", "--out-dir", str(tmp_path)])
    assert main(["bench", "no_such_plan", "--seed", "1", "--out-dir", str(tmp_path)]) == 2


# --- oracle ---------------------------------------------------------------------------


def test_oracle_g0(tmp_path):
    out = tmp_path / "g0.json"
    assert main(["oracle", "g0", "--d", "4", "--d-star", "3", "--rho", "0.9", "--out", str(out)]) == 0
    doc = read_json(out)
    assert len(doc["values"]) == 15
    assert doc["minimum"] == min(doc["values"].values())
    assert doc["argmin"] == "1001"


def test_oracle_ghat(cl_data, tmp_path):
    out = tmp_path / "ghat.json"
    assert main(["oracle", "ghat", cl_data, "--model", "common-location", "--out", str(out)]) == 0
    doc = read_json(out)
    assert len(doc["values"]) == 63 and doc["values"][doc["argmin"]] == doc["minimum"]
