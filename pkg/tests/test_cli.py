"""End-to-end runs of the command-line front end (subprocess level)."""

import json
import os
import subprocess
import sys

import pytest

from munipath.twin import load_twin

EXE = [sys.executable, "-m", "munipath"]


def run_cli(*args, env_extra=None, cwd=None):
    env = dict(os.environ)
    env.pop("MUNIPATH_SOLVER", None)
    env.pop("MUNIPATH_TIME_LIMIT", None)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(EXE + list(args), capture_output=True, text=True,
                          env=env, cwd=cwd, timeout=560)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """One pathway run shared by the output-shape tests: 5 buildings, 2 stages."""
    root = tmp_path_factory.mktemp("cli_run")
    twin_path = root / "twin.json"
    gen = run_cli("gen-fixture", "--out", str(twin_path),
                  "--buildings", "5", "--seed", "3")
    assert gen.returncode == 0, gen.stderr
    out_dir = root / "out"
    res = run_cli("pathway", str(twin_path), "--periods", "2023,2033",
                  "--out-dir", str(out_dir), "--mip-gap", "1e-4",
                  "--workers", "1")
    assert res.returncode == 0, res.stderr
    return root, twin_path, out_dir, res


def test_gen_fixture_then_validate(tmp_path):
    twin_path = tmp_path / "twin.json"
    gen = run_cli("gen-fixture", "--out", str(twin_path), "--buildings", "4")
    assert gen.returncode == 0, gen.stderr
    assert twin_path.exists()
    res = run_cli("validate", str(twin_path))
    assert res.returncode == 0, res.stderr
    assert "OK" in res.stdout
    assert "4 buildings" in res.stdout


def test_validate_duplicate_id_exits_1(tmp_path):
    twin_path = tmp_path / "twin.json"
    gen = run_cli("gen-fixture", "--out", str(twin_path), "--buildings", "2")
    assert gen.returncode == 0
    doc = json.loads(twin_path.read_text())
    doc["buildings"][1]["id"] = doc["buildings"][0]["id"]
    twin_path.write_text(json.dumps(doc))
    res = run_cli("validate", str(twin_path))
    assert res.returncode == 1
    assert doc["buildings"][0]["id"] in res.stderr


def test_missing_file_exits_2(tmp_path):
    res = run_cli("validate", str(tmp_path / "nope.json"))
    assert res.returncode == 2
    assert "no such file" in res.stderr


def test_pathway_outputs(small_run):
    root, twin_path, out_dir, res = small_run
    assert (out_dir / "path.json").exists()
    assert (out_dir / "report.csv").exists()
    for year in (2023, 2033):
        assert (out_dir / f"report_{year}.csv").exists()
        assert (out_dir / f"stock_{year}.geojson").exists()
    # run summary on stdout: one line per stage
    assert "2023" in res.stdout and "2033" in res.stdout

    doc = json.loads((out_dir / "path.json").read_text())
    assert doc["stage_years"] == [2023, 2033]
    assert len(doc["stages"]) == 2

    geo = json.loads((out_dir / "stock_2033.geojson").read_text())
    assert geo["type"] == "FeatureCollection"
    assert len(geo["features"]) == 5

    header = (out_dir / "report.csv").read_text().splitlines()[0]
    assert header == "stage_year,metric,key,value"


def test_report_is_pure_and_matches_pathway_outputs(small_run, tmp_path):
    root, twin_path, out_dir, _ = small_run
    doc_path = out_dir / "path.json"
    before = doc_path.read_bytes()
    re_out = tmp_path / "re"
    res = run_cli("report", str(doc_path), "--out-dir", str(re_out))
    assert res.returncode == 0, res.stderr
    assert doc_path.read_bytes() == before  # report never re-solves or rewrites
    for name in ("report.csv", "report_2023.csv", "report_2033.csv",
                 "stock_2023.geojson", "stock_2033.geojson"):
        assert (re_out / name).read_bytes() == (out_dir / name).read_bytes()


def test_report_year_filter(small_run, tmp_path):
    _, _, out_dir, _ = small_run
    only = tmp_path / "only2033"
    res = run_cli("report", str(out_dir / "path.json"),
                  "--out-dir", str(only), "--year", "2033")
    assert res.returncode == 0, res.stderr
    assert sorted(p.name for p in only.iterdir()) == [
        "report_2033.csv", "stock_2033.geojson"]


def test_report_rejects_unknown_year(small_run, tmp_path):
    _, _, out_dir, _ = small_run
    res = run_cli("report", str(out_dir / "path.json"),
                  "--out-dir", str(tmp_path), "--year", "2050")
    assert res.returncode == 2
    assert "2050" in res.stderr


def test_report_rejects_corrupt_document(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{this is not json")
    res = run_cli("report", str(bad), "--out-dir", str(tmp_path / "o"))
    assert res.returncode == 2

    not_a_path = tmp_path / "other.json"
    not_a_path.write_text(json.dumps({"something": "else"}))
    res2 = run_cli("report", str(not_a_path), "--out-dir", str(tmp_path / "o2"))
    assert res2.returncode == 2
    assert "not a pathway document" in res2.stderr


def test_report_output_independent_of_hash_seed(small_run, tmp_path):
    _, _, out_dir, _ = small_run
    outs = []
    for seed in ("1", "99"):
        dst = tmp_path / f"seed{seed}"
        res = run_cli("report", str(out_dir / "path.json"), "--out-dir", str(dst),
                      env_extra={"PYTHONHASHSEED": seed})
        assert res.returncode == 0, res.stderr
        outs.append({p.name: p.read_bytes() for p in dst.iterdir()})
    assert outs[0] == outs[1]


def test_pathway_with_time_limit_env(tmp_path):
    twin_path = tmp_path / "twin.json"
    gen = run_cli("gen-fixture", "--out", str(twin_path), "--buildings", "2",
                  "--seed", "7")
    assert gen.returncode == 0
    res = run_cli("pathway", str(twin_path), "--periods", "2023,2030",
                  "--out-dir", str(tmp_path / "out"), "--workers", "1",
                  env_extra={"MUNIPATH_TIME_LIMIT": "120"})
    assert res.returncode == 0, res.stderr


def test_pathway_bad_periods_exits_2(tmp_path):
    twin_path = tmp_path / "twin.json"
    run_cli("gen-fixture", "--out", str(twin_path), "--buildings", "2")
    res = run_cli("pathway", str(twin_path), "--periods", "soon,later",
                  "--out-dir", str(tmp_path / "out"))
    assert res.returncode == 2
    assert "--periods" in res.stderr


def test_unsolvable_stock_exits_3(tmp_path):
    twin_path = tmp_path / "twin.json"
    gen = run_cli("gen-fixture", "--out", str(twin_path), "--buildings", "2",
                  "--seed", "5")
    assert gen.returncode == 0
    twin = load_twin(twin_path)
    doc = twin.to_dict()
    for rec in doc["buildings"]:
        values = rec["demand"]["space_heat"]["values"]
        rec["demand"]["space_heat"]["values"] = [v + 1e9 for v in values]
    twin_path.write_text(json.dumps(doc))
    res = run_cli("pathway", str(twin_path), "--periods", "2023,2030",
                  "--out-dir", str(tmp_path / "out"), "--workers", "1")
    assert res.returncode == 3
    assert "solver failure" in res.stderr
