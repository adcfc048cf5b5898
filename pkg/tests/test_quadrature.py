import math

import numpy as np
import pytest
from scipy import integrate

from ndphase.model import ZERO_EXTERIOR, GridFunction, ProblemSpec, Region
from ndphase.quadrature import (
    DomainError, PreconditionError, QuadParams, SingularityError, exterior_radial_integral, pair_integral,
    pv_point_eval, region_pair_rule, total, volume_rule,
)
from ndphase.registry import f_getoor, make_kernel

UNIT = Region((0.5,), 0.5)


def d1(x, y):
    return np.abs(x - y)[..., 0]


def test_pair_integral_abs_difference():
    # ∬ |x-y|^3 |x-y|^-2 = ∬ |x-y| = 1/3
    assert pair_integral(lambda x, y: d1(x, y) ** 3, UNIT, UNIT, 1.0) == pytest.approx(1 / 3, abs=1e-6)
    # sigma = 0: ∬ |x-y|^2 |x-y|^-1 = 1/3
    assert pair_integral(lambda x, y: d1(x, y) ** 2, UNIT, UNIT, 0.0) == pytest.approx(1 / 3, abs=1e-6)


def test_pair_integral_square_difference_unit_integrand():
    # F = |x-y|^2 against |x-y|^-2 integrates the constant 1
    assert pair_integral(lambda x, y: d1(x, y) ** 2, UNIT, UNIT, 1.0) == pytest.approx(1.0, abs=1e-6)


def _sin_oracle():
    def g(y, x):
        if x == y:
            return math.cos(x) ** 2
        return ((math.sin(x) - math.sin(y)) / (x - y)) ** 2
    return integrate.dblquad(g, 0, 1, 0, 1, epsabs=1e-13, epsrel=1e-12)[0]


def test_pair_integral_sine_against_adaptive_oracle():
    F = lambda x, y: (np.sin(x) - np.sin(y))[..., 0] ** 2
    ref = _sin_oracle()
    assert pair_integral(F, UNIT, UNIT, 1.0) == pytest.approx(ref, rel=1e-4)


def test_pair_integral_disjoint_domains_regular():
    A, B = Region((0.25,), 0.25), Region((1.75,), 0.25)
    F = lambda x, y: np.ones(np.broadcast_shapes(x.shape, y.shape)[:-1])
    # ∫_0^.5∫_1.5^2 (y-x)^-2 dy dx
    ref = integrate.dblquad(lambda y, x: (y - x) ** -2.0, 0, 0.5, 1.5, 2.0)[0]
    assert pair_integral(F, A, B, 1.0, order=0.0) == pytest.approx(ref, rel=1e-8)


def test_pair_integral_2d_against_polar_oracle():
    # ∬_{[0,1]^2 x [0,1]^2} |x-y|^4 |x-y|^{-2-1} = ∬ |x-y| = mean distance in the unit square
    Q = Region((0.5, 0.5), 0.5, "box")
    F = lambda x, y: np.linalg.norm(x - y, axis=-1) ** 4
    val = pair_integral(F, Q, Q, 1.0, order=4.0, params=QuadParams())
    assert val == pytest.approx(0.5214054331647207, rel=1e-4)


def test_pair_integral_divergence_raises():
    with pytest.raises(SingularityError):
        pair_integral(lambda x, y: d1(x, y) ** 0.5, UNIT, UNIT, 1.0)
    with pytest.raises(SingularityError):
        pair_integral(lambda x, y: d1(x, y), UNIT, UNIT, 1.0, order=1.0)


def test_pair_integral_linear_in_F(rng):
    rule = region_pair_rule(UNIT, 1.0, 2.0)
    for _ in range(10):
        a, b = rng.normal(size=2)
        F1 = lambda x, y: d1(x, y) ** 2
        F2 = lambda x, y: (np.cos(x) - np.cos(y))[..., 0] ** 2
        lhs = rule.integrate(lambda x, y: a * F1(x, y) + b * F2(x, y))
        assert lhs == pytest.approx(a * rule.integrate(F1) + b * rule.integrate(F2), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("R,expected", [(1.0, 2.0), (2.0, 1.0)])
def test_exterior_closed_form_1d(R, expected):
    assert exterior_radial_integral(0.0, R, 1.0) == pytest.approx(expected, abs=1e-6)


def test_exterior_closed_form_2d_and_offcenter():
    assert exterior_radial_integral((0.0, 0.0), 1.0, 0.5) == pytest.approx(4 * math.pi, rel=1e-12)
    # kappa = 0, x0 off center: the integral only sees |x0-y| so it is translation invariant
    assert exterior_radial_integral(0.3, 1.0, 1.0) == pytest.approx(2.0, rel=1e-8)


def test_exterior_growth_matches_quad_oracle():
    # ∫_{|y-x0|>R} |y|^{g} |x0-y|^{-1-σ} in 1D with g = κ(m-1)
    x0, R, s, kap, m = 0.4, 0.5, 1.2, 0.3, 3.0
    g = kap * (m - 1)
    f = lambda y: abs(y) ** g * abs(x0 - y) ** (-1 - s)
    ref = integrate.quad(f, x0 + R, np.inf)[0] + integrate.quad(f, -np.inf, 0)[0] + integrate.quad(f, 0, x0 - R)[0] \
        if x0 - R > 0 else integrate.quad(f, x0 + R, np.inf)[0] + integrate.quad(f, -np.inf, x0 - R)[0]
    assert exterior_radial_integral(x0, R, s, kap, m) == pytest.approx(ref, rel=1e-8)


def test_exterior_divergent_raises():
    with pytest.raises(PreconditionError):
        exterior_radial_integral(0.0, 1.0, 1.0, kappa=1.0, m=2.0)
    with pytest.raises(PreconditionError):
        exterior_radial_integral(0.0, 0.0, 1.0)


def test_volume_rule_exact_for_multilinear():
    u = GridFunction.from_function(lambda x: 2 + x[..., 0] - 3 * x[..., 1], 1.0, 16, 2)
    B = Region((0.125, -0.25), 0.5, "box")
    X, W = volume_rule(B, u)
    assert total(W) == pytest.approx(1.0, rel=1e-12)
    assert total(W * u.evaluate(X)) == pytest.approx(2 + 0.125 + 0.75, rel=1e-12)


def test_pv_getoor_constant_interior():
    u = GridFunction.from_function(f_getoor().fn, 1.25, 1280, 1).with_exterior(ZERO_EXTERIOR)
    spec = ProblemSpec(2, 2, 0.5, 0.5, dim=1)
    xs = np.arange(-0.875, 0.876, 0.0625)
    vals = np.array([pv_point_eval(u, make_kernel(), spec, [x]) for x in xs])
    assert np.max(vals) / np.min(vals) - 1 < 0.02
    # the level agrees with the closed form 2π for this kernel normalization
    assert np.median(vals) == pytest.approx(2 * math.pi, rel=0.01)


def test_pv_rejects_boundary_point():
    u = GridFunction.from_function(f_getoor().fn, 1.25, 160, 1)
    with pytest.raises(DomainError):
        pv_point_eval(u, make_kernel(), ProblemSpec(2, 2, 0.5, 0.5, dim=1), [1.25])
