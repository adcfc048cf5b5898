import numpy as np
import pytest

from ndphase.model import ZERO_EXTERIOR, ExteriorData, ProblemSpec, Region
from ndphase.operators import build_assembly, residual
from ndphase.registry import f_constant, f_cosine, f_sine, make_kernel
from ndphase.solver import (
    NonConvergenceError, SolveConfig, linf_bound, harmonic_extension, make_template, solve_dirichlet,
    solve_frozen,
)

CFG = SolveConfig()
LIN = ProblemSpec(2, 2, 0.5, 0.5, dim=1)
DP = ProblemSpec(2, 3, 0.7, 0.4, lam=2, dim=1)
CHECKER = make_kernel({"name": "checkerboard", "amplitude": 0.3}, "smooth")
SMALL = dict(halfwidth=1.25, n=80)


@pytest.mark.parametrize("spec,kernel", [(LIN, make_kernel()), (DP, CHECKER)])
def test_zero_data_gives_zero(spec, kernel):
    rep = solve_dirichlet(spec, kernel, 0.0, ZERO_EXTERIOR, CFG, **SMALL)
    assert rep.converged
    assert np.max(np.abs(rep.solution.values)) <= CFG.inner_tol


@pytest.mark.parametrize("spec,kernel", [(LIN, make_kernel()), (DP, CHECKER)])
def test_constant_exterior_gives_constant(spec, kernel):
    rep = solve_dirichlet(spec, kernel, 0.0, f_constant(0.4), CFG, **SMALL)
    assert np.max(np.abs(rep.solution.values - 0.4)) <= CFG.inner_tol


def test_two_initializations_agree(rng):
    g = f_cosine(0.5)
    a = solve_dirichlet(DP, CHECKER, 1.0, g, CFG, **SMALL)
    u0 = a.solution.with_values(a.solution.values + rng.normal(0, 1, a.solution.values.shape))
    b = solve_dirichlet(DP, CHECKER, 1.0, g, CFG, u0=u0, **SMALL)
    assert np.max(np.abs(a.solution.values - b.solution.values)) <= 10 * CFG.inner_tol


def test_energy_strictly_decreasing(rng):
    g = f_sine(0.8, 0.5)
    tmpl = make_template(g, 1, 1.25, 80)
    asm = build_assembly(DP, CHECKER, Region((0.0,), 1.0), tmpl)
    asm = asm.freeze(asm.live_tables(asm.fixed_values))
    u0 = tmpl.with_values(tmpl.values + 2 * rng.normal(size=tmpl.values.shape))
    rep = solve_frozen(asm, 2.0, g, CFG, u0=u0)
    E = np.array(rep.energy_history)
    assert len(E) > 3
    assert np.all(np.diff(E) < 0)
    assert np.max(np.abs(residual(rep.solution, 2.0, asm))) <= CFG.inner_tol


def shifted(g, c):
    return ExteriorData(lambda y: g(y) + c, g.bound + abs(c), g.growth, f"{g.name}+{c:g}")


PAIRS = [
    (0.0, f_constant(0.0), 1.0, f_constant(0.0)),
    (0.0, f_cosine(0.3), 0.0, shifted(f_cosine(0.3), 0.2)),
    (-1.0, f_constant(0.2), 0.5, f_constant(0.5)),
    (0.5, f_constant(-0.3), 0.5, f_constant(0.1)),
    (lambda x: np.sin(3 * x[..., 0]), f_cosine(0.2), lambda x: 1.5 + np.sin(3 * x[..., 0]),
     shifted(f_cosine(0.2), 0.1)),
]


@pytest.mark.parametrize("f1,g1,f2,g2", PAIRS)
def test_comparison_principle(f1, g1, f2, g2):
    u1 = solve_dirichlet(DP, CHECKER, f1, g1, CFG, **SMALL).solution
    u2 = solve_dirichlet(DP, CHECKER, f2, g2, CFG, **SMALL).solution
    assert np.all(u1.values <= u2.values + 10 * CFG.inner_tol)


def test_u_independent_kernel_needs_one_outer_step():
    rep = solve_dirichlet(DP, CHECKER, 1.0, f_cosine(0.5), CFG, **SMALL)
    assert rep.outer_iterations == 1 and rep.converged and rep.drift_history == ()


def test_u_dependent_outer_loop_drift():
    k = make_kernel("u_smooth", "smooth")
    rep = solve_dirichlet(DP, k, 1.0, f_cosine(0.5), CFG, **SMALL)
    assert rep.converged and rep.outer_iterations > 1
    assert all(d["ok"] for d in rep.drift_history)
    assert rep.final_residual <= CFG.inner_tol


def test_nonconvergence_carries_report():
    with pytest.raises(NonConvergenceError) as ei:
        solve_dirichlet(DP, CHECKER, 5.0, f_cosine(0.5), SolveConfig(max_inner=1), **SMALL)
    assert ei.value.report is not None and not ei.value.report.converged


def test_unconverged_outer_loop_reported():
    k = make_kernel("u_smooth", "smooth")
    rep = solve_dirichlet(DP, k, 1.0, f_cosine(0.5), SolveConfig(max_outer=2), **SMALL)
    assert not rep.converged and "last_du" in rep.diagnostics


@pytest.mark.parametrize("kw", [dict(inner_tol=0), dict(relaxation=0), dict(line_search="wolfe"), dict(backtrack=1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolveConfig(**kw)


def test_solve_frozen_requires_frozen_assembly():
    asm = build_assembly(LIN, make_kernel(), Region((0.0,), 1.0), make_template(ZERO_EXTERIOR, 1, 1.25, 40))
    with pytest.raises(ValueError):
        solve_frozen(asm, 0.0)


def test_harmonic_extension_solves_linear_problem():
    g = f_cosine(0.5)
    asm = build_assembly(LIN, make_kernel(), Region((0.0,), 1.0), make_template(g, 1, 1.25, 80))
    un = harmonic_extension(asm)
    fr = asm.freeze(asm.live_tables(un))
    assert np.max(np.abs(fr.residual_vec(un, np.zeros(asm.n_nodes)))) < 1e-9


def test_boundedness_report_finite():
    rep = solve_dirichlet(DP, CHECKER, 1.0, f_cosine(0.5), CFG, **SMALL)
    lb = rep.linf_bound_check
    assert lb["finite"] and lb["lhs"] >= 0 and np.isfinite(lb["fitted_constant"])
    again = linf_bound(rep.solution, 1.0, DP, CHECKER, (0.0,), 0.5, 0.5)
    assert again["lhs"] == pytest.approx(lb["lhs"])
    assert set(rep.to_dict()) >= {"inner_iterations", "energy_history", "drift_history"}
