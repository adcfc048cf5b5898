"""Experiment runner: ``ndphase run <plan>`` and ``ndphase validate <plan>``.

A plan is a JSON file::

    {"seed": 0, "output_dir": "out", "jobs": [{"id": "...", "type": "solve", ...}, ...]}

Job types are ``validate``, ``solve``, ``check:<name>``, ``fit`` and ``sweep``.
Exit status: 0 when every asserted verdict passes, 1 when a job fails or an
asserted verdict does not pass, 2 for plan or hypothesis errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import regularity as reg
from .io import dump_json, save_solution
from .model import GridFunction, ProblemSpec, Region, SpecError, check_kernel, validate_spec
from .quadrature import pv_point_eval
from .registry import make_field, make_kernel
from .solver import SolveConfig, solve_averaged_comparison, solve_dirichlet

THREADS_ENV = "NDPHASE_THREADS"
CHECKS = ("caccioppoli", "sobolev_poincare", "reverse_holder", "self_improving", "boundedness")
TYPES = ("validate", "solve", "fit", "sweep") + tuple(f"check:{c}" for c in CHECKS)


class PlanError(ValueError):
    """Malformed plan; the message carries the location."""


@dataclass
class ExperimentPlan:
    jobs: list
    seed: int = 0
    output_dir: str = "ndphase_out"
    source: str = "<plan>"


@dataclass
class JobResult:
    job_id: str
    type: str
    status: str
    metric: str = ""
    value: float = math.nan
    passed: Optional[bool] = None
    asserted: bool = True
    message: str = ""


# --------------------------------------------------------------------------
# plan parsing and validation


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PlanError(f"{path}: cannot read plan ({exc.strerror})")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
    return parse_plan(raw, str(path))


def parse_plan(raw, source: str = "<plan>") -> ExperimentPlan:
    if not isinstance(raw, dict):
        raise PlanError(f"{source}: top level must be an object")
    jobs = raw.get("jobs", [])
    if not isinstance(jobs, list):
        raise PlanError(f"{source}: 'jobs' must be a list")
    unknown = set(raw) - {"jobs", "seed", "output_dir", "description"}
    if unknown:
        raise PlanError(f"{source}: unknown top-level keys {sorted(unknown)}")
    plan = ExperimentPlan(jobs, int(raw.get("seed", 0)), str(raw.get("output_dir", "ndphase_out")), source)
    validate_plan(plan)
    return plan


def _spec(block, where) -> ProblemSpec:
    if not isinstance(block, dict):
        raise PlanError(f"{where}: expected a problem object")
    try:
        return ProblemSpec.from_dict(block)
    except (SpecError, TypeError) as exc:
        raise PlanError(f"{where}: {exc}")


def _require(spec: ProblemSpec, names, where):
    try:
        validate_spec(spec, names or ())
    except SpecError as exc:
        raise PlanError(f"{where}: hypothesis violated: {exc}")


def _kernel_check(job, where):
    k = job.get("kernel", {})
    try:
        make_kernel(k.get("a", "constant"), k.get("b", "zero"))
        for key in ("f", "g"):
            v = job.get(key)
            if v is not None and not (isinstance(v, dict) and "calibrate" in v):
                make_field(v)
    except (KeyError, TypeError) as exc:
        raise PlanError(f"{where}: {exc}")


def validate_plan(plan: ExperimentPlan) -> None:
    """Static checks: types, unique ids, specs, regime assertions and job references."""
    seen = {}
    for i, job in enumerate(plan.jobs):
        where = f"{plan.source}: jobs[{i}]"
        if not isinstance(job, dict):
            raise PlanError(f"{where}: job must be an object")
        jid, typ = job.get("id"), job.get("type")
        if not isinstance(jid, str) or not jid:
            raise PlanError(f"{where}: missing string 'id'")
        if jid in seen:
            raise PlanError(f"{where}: duplicate id {jid!r}")
        if typ not in TYPES:
            raise PlanError(f"{where} ({jid}): unknown type {typ!r}; choose from {list(TYPES)}")
        where = f"{where} ({jid})"
        if typ in ("validate", "solve", "sweep"):
            spec = _spec(job.get("spec"), f"{where}.spec")
            _require(spec, job.get("require"), where)
        if typ in ("solve", "sweep"):
            _kernel_check(job, where)
        if typ.startswith("check:") or typ == "fit":
            refs = job.get("solution")
            refs = [refs] if isinstance(refs, str) else refs
            if not refs or not all(isinstance(r, str) for r in refs):
                raise PlanError(f"{where}: 'solution' must name one or more solve jobs")
            for r in refs:
                if seen.get(r) != "solve":
                    raise PlanError(f"{where}: solution {r!r} must refer to an earlier solve job")
        seen[jid] = typ


# --------------------------------------------------------------------------
# job execution


def _region(block, default=None) -> Region:
    if block is None:
        return default
    return Region(tuple(float(c) for c in block["center"]), float(block["radius"]), block.get("kind", "ball"))


def _grid(block) -> tuple:
    L = float(block.get("halfwidth", 1.25))
    n = int(block["n"]) if "n" in block else int(round(2 * L / float(block["h"])))
    return L, n


def _solver_cfg(block) -> SolveConfig:
    names = {f.name for f in fields(SolveConfig)}
    return SolveConfig(**{k: v for k, v in (block or {}).items() if k in names})


def _forcing(fcfg, spec, kernel, L, n):
    if isinstance(fcfg, dict) and "calibrate" in fcfg:
        cal = fcfg["calibrate"]
        prof = make_field(cal["profile"])
        u = GridFunction.from_function(prof, L, n, spec.dim, exterior=prof)
        at = np.asarray(cal.get("at", [0.0] * spec.dim), dtype=float)
        val = float(pv_point_eval(u, kernel, spec, at))
        return val, {"calibrated_forcing": val}
    if fcfg is None:
        return 0.0, {}
    return make_field(fcfg), {}


@dataclass
class Context:
    out: Path
    seed: int
    solutions: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)


def _solve(job, ctx: Context):
    spec = ProblemSpec.from_dict(job["spec"])
    k = job.get("kernel", {})
    kernel = make_kernel(k.get("a", "constant"), k.get("b", "zero"))
    g = make_field(job.get("g", "zero"))
    L, n = _grid(job.get("grid", {"n": 128}))
    domain = _region(job.get("domain"), Region((0.0,) * spec.dim, 1.0))
    cfg = _solver_cfg(job.get("solver"))
    f, fmeta = _forcing(job.get("f"), spec, kernel, L, n)
    if job.get("check_kernel", True):
        check_kernel(kernel, spec.lam, spec.dim, seed=ctx.seed)
    rep = solve_dirichlet(spec, kernel, f, g, cfg, domain, L, n, check=False)
    u = rep.solution
    summary = {"id": job["id"], "spec": spec.to_dict(), "kernel": kernel.name, "grid": {"halfwidth": L, "n": n},
               "converged": rep.converged, "final_residual": rep.final_residual,
               "inner_iterations": rep.inner_iterations, "outer_iterations": rep.outer_iterations,
               "linf_bound_check": rep.linf_bound_check, **fmeta}
    passed = bool(rep.converged)
    metric, value = "final_residual", rep.final_residual
    if "exact" in job:
        ex = make_field(job["exact"])
        nodes = u.flat_nodes()
        err = float(np.max(np.abs(u.values.ravel() - ex(nodes))))
        summary["linf_error"] = err
        metric, value = "linf_error", err
        if "tolerance" in job:
            passed = passed and err <= float(job["tolerance"])
    if job.get("uniqueness", False):
        rng = np.random.default_rng(ctx.seed)
        u0 = u.with_values(rng.uniform(-1, 1, np.shape(u.values)) * (1.0 + g.bound))
        rep2 = solve_dirichlet(spec, kernel, f, g, cfg, domain, L, n, u0=u0, check=False)
        gap = float(np.max(np.abs(rep2.solution.values - u.values)))
        summary["uniqueness_gap"] = gap
        passed = passed and gap <= 10 * cfg.inner_tol
    save_solution(ctx.out / "solutions" / job["id"], u, {"spec": spec.to_dict(), "final_residual": rep.final_residual,
                                                         "kernel": kernel.name})
    ctx.solutions[job["id"]] = {"u": u, "spec": spec, "kernel": kernel, "f": f, "g": g, "domain": domain}
    summary["passed"] = passed
    dump_json(summary, ctx.out / "verdicts" / f"{job['id']}.json")
    return metric, value, passed


def _refs(job, ctx):
    r = job["solution"]
    return [ctx.solutions[x] for x in ([r] if isinstance(r, str) else r)]


def _check(job, ctx: Context, name: str):
    sols = _refs(job, ctx)
    base = sols[0]
    us = [s["u"] for s in sols]
    spec, kernel, f = base["spec"], base["kernel"], base["f"]
    ratio = float(job.get("ratio", reg.STABILITY_RATIO))
    if name == "caccioppoli":
        v = reg.caccioppoli_check(us, f, spec, kernel, _region(job["ball"]), float(job["r"]),
                                  center=job.get("center", True), ratio=ratio)
    elif name == "sobolev_poincare":
        v = reg.sobolev_poincare_check(us, _region(job["ball"]), spec, float(job.get("eta", spec.p)),
                                       job.get("epsilon"), ratio)
    elif name == "reverse_holder":
        v = reg.reverse_holder_check(us, f, spec, kernel, _region(job["ball"]), int(job.get("l", 1)),
                                     float(job.get("sigma", 0.5)), job.get("epsilon"), base["domain"], ratio)
    elif name == "self_improving":
        v = reg.self_improving_check(us, f, spec, job["center"], float(job["rho0"]), float(job.get("delta", 0.05)),
                                     ratio)
    else:
        v = reg.boundedness_check(us, f, spec, kernel, _region(job["ball"]), job.get("g_sup"), ratio)
    dump_json(v.to_dict(), ctx.out / "verdicts" / f"{job['id']}.json")
    return "fitted_constant", v.fitted_constant, v.passed


def _fit(job, ctx: Context):
    sol = _refs(job, ctx)[-1]
    u, spec = sol["u"], sol["spec"]
    rows, fits = [], []
    for c in job.get("centers", [[0.0] * u.dim]):
        hf = reg.holder_exponent_fit(u, c, job.get("radii"), spec, float(job.get("slack", 0.1)))
        fits.append({"center": list(hf.center), "alpha_measured": hf.alpha_measured, "theta": hf.theta_predicted,
                     "passed": hf.passed, "radii": list(hf.radii), "oscillations": list(hf.oscillations)})
        rows += [list(hf.center) + [r, o] for r, o in hf.rows()]
    path = ctx.out / "holder" / f"{job['id']}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"center_{i}" for i in range(u.dim)] + ["radius", "oscillation"])
        w.writerows([[repr(float(x)) for x in r] for r in rows])
    passed = all(f["passed"] for f in fits)
    dump_json({"id": job["id"], "fits": fits, "passed": passed}, ctx.out / "verdicts" / f"{job['id']}.json")
    return "min_alpha", min(f["alpha_measured"] for f in fits), passed


def _sweep(job, ctx: Context):
    kind = job.get("kind", "comparison")
    spec = ProblemSpec.from_dict(job["spec"])
    k = job.get("kernel", {})
    g = make_field(job.get("g", "zero"))
    cfg = _solver_cfg(job.get("solver"))
    rows = []
    if kind == "comparison":
        key = job.get("key", "amplitude")
        L, n = _grid(job.get("grid", {"halfwidth": 4.25, "n": 136}))
        domain = _region(job.get("domain"), Region((0.0,) * spec.dim, 4.0))
        for val in job["values"]:
            a = dict(k.get("a", {"name": "oscillating"}))
            a[key] = val
            kernel = make_kernel(a, k.get("b", "zero"))
            u = solve_dirichlet(spec, kernel, 0.0, g, cfg, domain, L, n).solution
            _, gap = solve_averaged_comparison(u, spec, kernel, cfg)
            rows.append((float(val), gap))
        gaps = [r[1] for r in rows]
        passed = all(b <= a * (1 + 1e-9) + 1e-14 for a, b in zip(gaps, gaps[1:]))
        header, metric = [key, "gap"], "final_gap"
    elif kind == "refinement":
        kernel = make_kernel(k.get("a", "constant"), k.get("b", "zero"))
        ex = make_field(job["exact"])
        L = float(job.get("halfwidth", 1.25))
        domain = _region(job.get("domain"), Region((0.0,) * spec.dim, 1.0))
        for n in job["ns"]:
            f, _ = _forcing(job.get("f"), spec, kernel, L, int(n))
            u = solve_dirichlet(spec, kernel, f, g, cfg, domain, L, int(n)).solution
            rows.append((2 * L / int(n), float(np.max(np.abs(u.values.ravel() - ex(u.flat_nodes()))))))
        errs = [r[1] for r in rows]
        passed = all(b < a for a, b in zip(errs, errs[1:]))
        if "tolerance" in job:
            passed = passed and errs[-1] <= float(job["tolerance"])
        header, metric = ["h", "linf_error"], "final_error"
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")
    path = ctx.out / "sweeps" / f"{job['id']}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[repr(a), repr(b)] for a, b in rows])
    dump_json({"id": job["id"], "kind": kind, "rows": [list(r) for r in rows], "passed": passed},
              ctx.out / "verdicts" / f"{job['id']}.json")
    return metric, rows[-1][1], passed


def _validate_job(job, ctx: Context):
    spec = ProblemSpec.from_dict(job["spec"])
    d = validate_spec(spec, job.get("require", ()))
    out = {"id": job["id"], "spec": spec.to_dict(), "derived": {
        "p_star": d.p_star, "frakA": d.frakA, "p_sob": d.p_sob, "theta": d.theta, "p_prime": d.p_prime,
        "qt_le_ps": d.qt_le_ps, "holder_regime": d.holder_regime, "gamma_ok": d.gamma_ok}, "passed": True}
    dump_json(out, ctx.out / "verdicts" / f"{job['id']}.json")
    return "theta", d.theta, True


def run_job(job, ctx: Context) -> JobResult:
    typ = job["type"]
    asserted = bool(job.get("assert", True))
    if typ == "validate":
        m, v, ok = _validate_job(job, ctx)
    elif typ == "solve":
        m, v, ok = _solve(job, ctx)
    elif typ == "fit":
        m, v, ok = _fit(job, ctx)
    elif typ == "sweep":
        m, v, ok = _sweep(job, ctx)
    else:
        m, v, ok = _check(job, ctx, typ.split(":", 1)[1])
    status = "pass" if ok else ("fail" if asserted else "info")
    return JobResult(job["id"], typ, status, m, float(v), bool(ok), asserted)


def _write_report(ctx: Context, results) -> None:
    path = ctx.out / "report.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["job_id", "type", "status", "metric", "value", "passed", "asserted"])
        for r in results:
            w.writerow([r.job_id, r.type, r.status, r.metric, repr(r.value), r.passed, r.asserted])


def _print_table(results, stream=None) -> None:
    stream = stream or sys.stdout
    head = ("job_id", "type", "status", "metric", "value")
    rows = [(r.job_id, r.type, r.status, r.metric, f"{r.value:.6g}") for r in results]
    widths = [max(len(h), *(len(x[i]) for x in rows)) if rows else len(h) for i, h in enumerate(head)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*head), file=stream)
    for row in rows:
        print(fmt.format(*row), file=stream)


def run(plan: ExperimentPlan, output_dir: Optional[str] = None, seed: Optional[int] = None,
        threads: Optional[int] = None, stream=None) -> int:
    ctx = Context(Path(output_dir or plan.output_dir), plan.seed if seed is None else int(seed))
    ctx.out.mkdir(parents=True, exist_ok=True)
    results, status = [], 0
    failed = set()
    with threadpool_limits(limits=threads):
        for job in plan.jobs:
            refs = job.get("solution")
            refs = [refs] if isinstance(refs, str) else (refs or [])
            if any(r in failed for r in refs):
                results.append(JobResult(job["id"], job["type"], "skipped", message="dependency failed"))
                failed.add(job["id"])
                status = 1
                continue
            try:
                res = run_job(job, ctx)
            except Exception as exc:  # a failing job is reported, later independent jobs still run
                print(f"job {job['id']} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
                res = JobResult(job["id"], job["type"], "error", message=str(exc))
                failed.add(job["id"])
                status = 1
            if res.status == "fail":
                print(f"job {job['id']}: asserted verdict did not pass", file=sys.stderr)
                status = 1
            results.append(res)
    _write_report(ctx, results)
    _print_table(results, stream)
    return status


def _threads(arg) -> Optional[int]:
    if arg is not None:
        return int(arg)
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ndphase", description="Nonlocal double-phase experiment runner")
    ap.add_argument("command", choices=("run", "validate"))
    ap.add_argument("plan", help="JSON plan file")
    ap.add_argument("--output-dir", default=None, help="override the plan's output directory")
    ap.add_argument("--threads", type=int, default=None, help=f"BLAS threads (default: ${THREADS_ENV})")
    ap.add_argument("--seed", type=int, default=None, help="override the plan's seed")
    args = ap.parse_args(argv)
    try:
        plan = load_plan(args.plan)
    except PlanError as exc:
        print(f"plan error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"{args.plan}: {len(plan.jobs)} job(s) valid")
        return 0
    return run(plan, args.output_dir, args.seed, _threads(args.threads))


if __name__ == "__main__":
    sys.exit(main())
