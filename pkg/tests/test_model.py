import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ndphase.model import (
    P_SOB_SENTINEL, AlignmentError, ExteriorData, GridFunction, KernelAssumptionError, KernelPair, ProblemSpec,
    Region, SpecError, bracket_power, check_kernel, kkp2_constant, monotonicity_constant, validate_spec,
)
from ndphase.registry import make_kernel


# exponent arithmetic ------------------------------------------------------


def test_theta_equal_orders_2d():
    d = validate_spec(ProblemSpec(2, 2, 0.5, 0.5, dim=2))
    assert d.theta == 1.0


def test_theta_double_phase_2d():
    d = validate_spec(ProblemSpec(2, 3, 0.8, 0.5, dim=2))
    assert d.theta == pytest.approx(0.75, abs=1e-15)


def test_pstar_subcritical_2d():
    d = validate_spec(ProblemSpec(2, 2, 0.5, 0.5, dim=2))
    assert d.p_star == pytest.approx(4 / 3, abs=1e-15)
    assert d.frakA == 0.0


def test_pstar_supercritical_branch():
    spec = ProblemSpec(2, 2, 0.6, 0.5, dim=1, delta0=0.2)
    d = validate_spec(spec)
    assert d.p_star == 1.0
    assert d.frakA == 0.5 * min(0.2, 0.5)
    assert d.p_sob == P_SOB_SENTINEL


def test_psob_subcritical_value():
    assert ProblemSpec(2, 2, 0.5, 0.5, dim=2).p_sob == pytest.approx(4.0)


def test_finite_gamma_enters_theta():
    d = validate_spec(ProblemSpec(2, 2, 0.9, 0.9, gamma=4.0, dim=1))
    assert d.theta == pytest.approx(min((1.8 - 0.25) / 1, 1.8, 1.0))
    d = validate_spec(ProblemSpec(3, 3, 0.6, 0.6, gamma=2.0, dim=2))
    assert d.theta == pytest.approx(min((1.8 - 1.0) / 2, 1.8 / 2, 1.0))


def test_validate_is_deterministic():
    spec = ProblemSpec(2, 3, 0.7, 0.4)
    assert repr(validate_spec(spec)) == repr(validate_spec(spec))


@pytest.mark.parametrize("kw", [dict(p=1.5), dict(q=1.9), dict(s=1.0), dict(t=0.0), dict(lam=0.5),
                                dict(gamma=1.0), dict(dim=3), dict(delta0=0.0)])
def test_range_violations(kw):
    base = dict(p=2, q=2, s=0.5, t=0.5)
    base.update(kw)
    with pytest.raises(SpecError):
        ProblemSpec(**base)


def test_regime_assertion_names_hypothesis():
    with pytest.raises(SpecError, match=r"q\*t > p\*s"):
        validate_spec(ProblemSpec(2, 3, 0.3, 0.5), require=["self_improving"])
    with pytest.raises(SpecError, match="gamma"):
        validate_spec(ProblemSpec(2, 2, 0.3, 0.3, gamma=1.5, dim=2), require=["forcing"])


def test_spec_round_trip():
    spec = ProblemSpec(2, 3, 0.7, 0.4, lam=2, gamma=5.0)
    assert ProblemSpec.from_dict(spec.to_dict()) == spec
    assert ProblemSpec.from_dict({"p": 2, "q": 2, "s": 0.5, "t": 0.5, "lambda": 3, "gamma": "inf"}).lam == 3


# bracket power and scalar inequalities --------------------------------------


def test_bracket_examples():
    assert bracket_power(-2.0, 3) == -4.0
    assert bracket_power(0.0, 3.7) == 0.0
    assert bracket_power(1.5, 2) == 1.5


def test_bracket_odd_and_monotone(rng):
    for ell in rng.uniform(2, 5, 20):
        a, b = rng.normal(0, 3, (2, 2000))
        assert np.allclose(bracket_power(-a, ell), -bracket_power(a, ell))
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keep = hi > lo
        assert np.all(bracket_power(hi[keep], ell) > bracket_power(lo[keep], ell))


def _brute_monotonicity(ell, n=801):
    g = np.linspace(-10, 10, n)
    X, Z = np.meshgrid(g, g)
    m = X != Z
    X, Z = X[m], Z[m]
    return float(np.min((bracket_power(X, ell) - bracket_power(Z, ell)) * (X - Z) / np.abs(X - Z) ** ell))


def test_monotonicity_constant_l2_exact():
    assert monotonicity_constant(2.0) == 1.0


@pytest.mark.parametrize("ell", [3.0, 4.0])
def test_monotonicity_constant_matches_grid_oracle(ell):
    c = monotonicity_constant(ell, trials=4000, seed=1)
    oracle = _brute_monotonicity(ell)
    assert c == pytest.approx(2.0 ** (2 - ell), rel=1e-3)
    assert c == pytest.approx(oracle, rel=5e-3)


def test_monotonicity_needs_trials():
    with pytest.raises(ValueError):
        monotonicity_constant(3.0, trials=10)


@given(st.floats(2.0, 5.0), st.floats(-50, 50), st.floats(-50, 50))
def test_pairing_inequality_out_of_sample(ell, xi, zeta):
    c = monotonicity_constant(ell, seed=3)
    lhs = (bracket_power(xi, ell) - bracket_power(zeta, ell)) * (xi - zeta)
    assert lhs >= c * abs(xi - zeta) ** ell * (1 - 1e-9) - 1e-300


@pytest.mark.parametrize("ell", [2.0, 2.5, 3.0, 4.0])
def test_kkp2_fitted_constant_holds(ell, rng):
    c = kkp2_constant(ell)
    xi, zeta, w = rng.normal(0, 5, (3, 10_000))
    lhs = np.abs(bracket_power(xi - w, ell) - bracket_power(zeta - w, ell))
    d = np.abs(xi - zeta)
    rhs = c * d ** (ell - 1) + c * d * np.abs(xi - w) ** (ell - 2)
    assert np.all(lhs <= rhs * (1 + 1e-9) + 1e-12)


# regions and grid functions ---------------------------------------------------


def test_region_containment_and_volume():
    b = Region((0.0,), 1.0)
    assert b.contains(np.array([[1.0], [0.5], [1.2]])).tolist() == [True, True, False]
    assert not b.contains(np.array([[1.0]]), closed=False)[0]
    assert Region((0.0, 0.0), 2.0).volume() == pytest.approx(4 * math.pi)
    assert Region((0.0, 0.0), 1.0, "box").volume() == 4.0
    with pytest.raises(ValueError):
        Region((0.0,), -1.0)


def test_region_snapping():
    r = Region((0.013,), 0.26, grid_alignment=True).snapped(1 / 64, 1.0)
    assert (r.c[0] * 64) == round(r.c[0] * 64)
    assert r.radius == pytest.approx(17 / 64)
    assert Region((0.0,), 0.25).inside(Region((0.0,), 1.0))
    assert not Region((0.5,), 0.75).inside(Region((0.0,), 1.0))


def test_gridfunction_readonly_and_interpolation():
    u = GridFunction.from_function(lambda x: 3 * x[..., 0] - 1, 1.0, 8, 1)
    with pytest.raises(ValueError):
        u.values[0] = 1.0
    pts = np.array([[0.1], [-0.73], [0.999]])
    assert np.allclose(u.evaluate(pts), 3 * pts[:, 0] - 1)


def test_gridfunction_bilinear_exact_2d(rng):
    f = lambda x: 1 + 2 * x[..., 0] - x[..., 1] + 0.5 * x[..., 0] * x[..., 1]
    u = GridFunction.from_function(f, 1.0, 6, 2)
    pts = rng.uniform(-1, 1, (50, 2))
    assert np.allclose(u.evaluate(pts), f(pts))
    M = u.interp_matrix(pts)
    assert np.allclose(M @ u.values.ravel(), f(pts))


def test_gridfunction_exterior_closure():
    g = ExteriorData(lambda y: np.full(np.shape(y)[:-1], 7.0), 7.0)
    u = GridFunction(1.0, 4, np.zeros(5), g)
    assert u.evaluate(np.array([[3.0], [-1.5]])).tolist() == [7.0, 7.0]


def test_tail_space_membership_from_growth():
    spec = ProblemSpec(2, 3, 0.7, 0.4)
    assert ExteriorData(lambda y: y[..., 0], 1.0, 0.5).tail_finite(spec)
    assert not ExteriorData(lambda y: y[..., 0], 1.0, 0.7).tail_finite(spec)


# kernel assumptions -------------------------------------------------------------


def test_builtin_kernels_pass_spot_checks():
    for a in ["constant", {"name": "checkerboard", "amplitude": 0.3}, "log_oscillating", "oscillating",
              "u_smooth"]:
        for b in ["zero", "constant", "smooth", "checkerboard"]:
            res = check_kernel(make_kernel(a, b), 2.0)
            assert all(res.values())


def test_asymmetric_kernel_rejected():
    k = KernelPair(lambda x, y, w, z: 1 + 0.5 * np.tanh(x[..., 0]), name="x-only")
    with pytest.raises(KernelAssumptionError, match="a_symmetric"):
        check_kernel(k, 2.0)
    x_only = make_kernel({"name": "checkerboard", "symmetric": False})
    assert not check_kernel(x_only, 2.0)["a_symmetric"]


def test_modulus_violation_rejected():
    k = KernelPair(lambda x, y, w, z: 1 + 0.5 * np.sin(w), u_dependent=True, name="undeclared")
    with pytest.raises(KernelAssumptionError, match="a_modulus"):
        check_kernel(k, 2.0)


def test_ellipticity_violation_rejected():
    with pytest.raises(KernelAssumptionError, match="a_bounds"):
        check_kernel(KernelPair(lambda x, y, w, z: 5.0), 2.0)
