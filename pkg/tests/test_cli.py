import json
import subprocess
import sys
from pathlib import Path

import pytest

from ndphase.cli import main

ROOT = Path(__file__).resolve().parents[1]

SMALL_PLAN = {
    "seed": 7,
    "jobs": [
        {"id": "spec", "type": "validate", "spec": {"p": 2, "q": 3, "s": 0.7, "t": 0.4, "lambda": 2},
         "require": ["self_improving", "holder"]},
        {"id": "dp", "type": "solve", "spec": {"p": 2, "q": 3, "s": 0.7, "t": 0.4, "lambda": 2},
         "kernel": {"a": {"name": "checkerboard", "amplitude": 0.3}, "b": "smooth"},
         "f": "zero", "g": "cosine", "grid": {"halfwidth": 1.0625, "n": 136}, "uniqueness": True},
        {"id": "ud", "type": "solve", "spec": {"p": 2, "q": 3, "s": 0.7, "t": 0.4, "lambda": 2},
         "kernel": {"a": "u_smooth", "b": "smooth"}, "f": 1.0, "g": "cosine",
         "grid": {"halfwidth": 1.0625, "n": 68}},
        {"id": "cacc", "type": "check:caccioppoli", "solution": "dp",
         "ball": {"center": [0.0], "radius": 0.125}, "r": 0.0625},
        {"id": "bound", "type": "check:boundedness", "solution": ["dp"], "ball": {"center": [0.0], "radius": 0.25}},
        {"id": "fit", "type": "fit", "solution": "dp", "centers": [[0.0]], "radii": [0.5, 0.25, 0.125, 0.0625]},
        {"id": "ref", "type": "sweep", "kind": "refinement", "spec": {"p": 2, "q": 2, "s": 0.5, "t": 0.5},
         "f": {"calibrate": {"profile": "getoor"}}, "exact": "getoor", "ns": [40, 80]},
    ],
}


def write(tmp_path, obj, name="plan.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_empty_plan_exits_zero(tmp_path, capsys):
    plan = write(tmp_path, {"jobs": []})
    assert main(["run", plan, "--output-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "report.csv").read_text().startswith("job_id,")


def test_unmet_hypothesis_exits_two(tmp_path, capsys):
    bad = {"jobs": [{"id": "v", "type": "validate", "spec": {"p": 2, "q": 3, "s": 0.3, "t": 0.5},
                     "require": ["self_improving"]}]}
    assert main(["validate", write(tmp_path, bad)]) == 2
    err = capsys.readouterr().err
    assert "jobs[0]" in err and "hypothesis violated" in err


def test_json_syntax_error_reports_location(tmp_path, capsys):
    assert main(["validate", write(tmp_path, '{"jobs": [\n  {"id": 1,,}\n]}')]) == 2
    assert ":2:" in capsys.readouterr().err


@pytest.mark.parametrize("plan", [
    {"jobs": [{"id": "x", "type": "nope"}]},
    {"jobs": [{"id": "c", "type": "check:caccioppoli", "solution": "missing", "ball": {}, "r": 0.1}]},
    {"jobs": [{"id": "a", "type": "validate", "spec": {"p": 2, "q": 2, "s": 0.5, "t": 0.5}},
              {"id": "a", "type": "validate", "spec": {"p": 2, "q": 2, "s": 0.5, "t": 0.5}}]},
    {"jobs": [{"id": "s", "type": "solve", "spec": {"p": 2, "q": 2, "s": 0.5, "t": 0.5},
               "kernel": {"a": "no_such_coefficient"}}]},
    {"jobs": [{"id": "v", "type": "validate", "spec": {"p": 1.5, "q": 2, "s": 0.5, "t": 0.5}}]},
    {"jobs": [], "extra": 1},
])
def test_invalid_plans_exit_two(tmp_path, plan):
    assert main(["validate", write(tmp_path, plan)]) == 2


def _files(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_run_outputs_and_determinism(tmp_path, capsys):
    plan = write(tmp_path, SMALL_PLAN)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", plan, "--output-dir", str(a), "--threads", "1"]) == 0
    out = capsys.readouterr().out
    assert all(j["id"] in out for j in SMALL_PLAN["jobs"])
    assert main(["run", plan, "--output-dir", str(b), "--threads", "1"]) == 0
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys()
    assert [k for k in fa if fa[k] != fb[k]] == []
    expected = {"report.csv", "solutions/dp.bin", "solutions/dp.json", "verdicts/cacc.json", "holder/fit.csv",
                "sweeps/ref.csv", "verdicts/spec.json"}
    assert expected <= set(fa)
    dp = json.loads(fa["verdicts/dp.json"])
    assert dp["uniqueness_gap"] <= 1e-8


def test_seed_override_changes_nothing_but_uniqueness_start(tmp_path, capsys):
    plan = write(tmp_path, {"jobs": SMALL_PLAN["jobs"][:2]})
    assert main(["run", plan, "--output-dir", str(tmp_path / "s1"), "--seed", "1"]) == 0
    assert main(["run", plan, "--output-dir", str(tmp_path / "s2"), "--seed", "2"]) == 0
    s1 = json.loads((tmp_path / "s1" / "verdicts" / "dp.json").read_text())
    s2 = json.loads((tmp_path / "s2" / "verdicts" / "dp.json").read_text())
    assert s1["final_residual"] == s2["final_residual"]


def test_failed_job_sets_exit_one_and_skips_dependents(tmp_path, capsys):
    plan = {"jobs": [
        {"id": "s", "type": "solve", "spec": {"p": 3, "q": 3, "s": 0.5, "t": 0.5}, "g": "cosine", "f": 5.0,
         "grid": {"n": 40}, "solver": {"max_inner": 1}},
        {"id": "c", "type": "check:caccioppoli", "solution": "s", "ball": {"center": [0.0], "radius": 0.125},
         "r": 0.0625},
    ]}
    assert main(["run", write(tmp_path, plan), "--output-dir", str(tmp_path / "o")]) == 1
    report = (tmp_path / "o" / "report.csv").read_text()
    assert "error" in report and "skipped" in report


@pytest.mark.slow
def test_shipped_getoor_plan(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ndphase.cli", "run", str(ROOT / "plans" / "getoor.plan"),
                        "--output-dir", str(tmp_path / "g")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "getoor_h256" in r.stdout
