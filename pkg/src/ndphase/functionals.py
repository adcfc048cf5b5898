"""Scalar functionals of grid functions: seminorms, tails, the measure μ,
VMO moduli and the dual-pair quantities built on ``dμ = |x-y|^(-N+εp) dx dy``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .model import GridFunction, KernelPair, ProblemSpec, Region, validate_spec
from .quadrature import (
    SPHERE, PreconditionError, QuadParams, _box_exit, default_params, exterior_radial_integral,
    ray_rule, region_pair_rule, total, volume_rule,
)

Field = Union[None, float, Callable, GridFunction]


def as_field(f: Field) -> Callable:
    """Callable on point arrays ``(..., N)`` for a constant, callable or grid function."""
    if f is None:
        return lambda x: np.zeros(np.shape(x)[:-1])
    if isinstance(f, GridFunction):
        return f.evaluate
    if callable(f):
        return lambda x: np.asarray(f(np.asarray(x, dtype=float)), dtype=float) * np.ones(np.shape(x)[:-1])
    c = float(f)
    return lambda x: np.full(np.shape(x)[:-1], c)


def _region(x0, R, kind="ball") -> Region:
    return Region(tuple(np.atleast_1d(np.asarray(x0, dtype=float))), float(R), kind)


# --------------------------------------------------------------------------
# averages


def ball_average(u: Field, region: Region, fn: Optional[Callable] = None, grid: Optional[GridFunction] = None,
                 n: int = 3) -> float:
    """``⨍_region fn(u(x))``; cell-aligned so multilinear data are averaged exactly."""
    grid = grid if grid is not None else (u if isinstance(u, GridFunction) else None)
    X, W = volume_rule(region, grid, n=n, n_tiles=16)
    vals = as_field(u)(X)
    if fn is not None:
        vals = fn(vals)
    # centre on one sample so constants average exactly
    ref = float(vals.flat[0]) if vals.size else 0.0
    return ref + total(W * (vals - ref)) / total(W)


def mean_value(u: Field, region: Region) -> float:
    """``(u)_{r,x0}``."""
    return ball_average(u, region)


def lp_average(u: Field, region: Region, power: float, grid=None) -> float:
    """``(⨍ |u|^power)^(1/power)``; ``power = inf`` gives the max over the rule's points."""
    if math.isinf(power):
        g = grid if grid is not None else (u if isinstance(u, GridFunction) else None)
        X, _ = volume_rule(region, g, n=3, n_tiles=16)
        if g is not None:
            nodes = g.flat_nodes()
            X = np.concatenate([X, nodes[region.contains(nodes)]])
        return float(np.max(np.abs(as_field(u)(X))))
    return ball_average(u, region, lambda v: np.abs(v) ** power, grid) ** (1.0 / power)


# --------------------------------------------------------------------------
# seminorms


def gagliardo_seminorm(u: GridFunction, region: Region, s: float, p: float, weight: Optional[Callable] = None,
                       params: Optional[QuadParams] = None, power: bool = False) -> float:
    """``(∬_{region²} w(x,y)|u(x)-u(y)|^p |x-y|^(-N-sp))^(1/p)``.

    With ``power=True`` the p-th power is returned instead.
    """
    rule = region_pair_rule(region, p * s, p, u, params)

    def F(x, y):
        d = np.abs(u.evaluate(x) - u.evaluate(y)) ** p
        return d if weight is None else d * weight(x, y)

    val = max(rule.integrate(F), 0.0)
    return val if power else val ** (1.0 / p)


def wb_weight(x, region: Region, b: Optional[Callable], q: float, t: float, halfwidth: Optional[float] = None,
              params: Optional[QuadParams] = None, b_constant: Optional[float] = None) -> float:
    """``W_b(x) = ∫_{ℝ^N∖region} b(x,y)|x-y|^(-N-qt) dy``.

    A constant ``b`` at the centre of a ball uses the closed radial form.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if b is None or b_constant == 0.0:
        return 0.0
    if not region.contains(x[None])[0]:
        raise PreconditionError("x must lie in the region")
    sigma = q * t
    if b_constant is not None and np.allclose(x, region.c) and not (region.kind == "box" and region.dim == 2):
        return b_constant * exterior_radial_integral(np.zeros_like(x), region.radius, sigma)
    params = params or default_params(region.dim)
    L = halfwidth if halfwidth is not None else 4.0 * (np.max(np.abs(region.c)) + region.radius)
    if region.is_interval:
        start = lambda dirs: _box_exit(x[None, :] - region.c, dirs, region.radius)
        Y, W = ray_rule(x, start, sigma, 0.0, L, None, params)
    else:
        Y, W = ray_rule(x, region.radius, sigma, 0.0, L, None, params, ball_center=region.c)
    return total(W * np.asarray(b(x[None, :], Y)) * np.ones(W.shape))


# --------------------------------------------------------------------------
# tails


@dataclass(frozen=True)
class TailReport:
    value: float
    center: tuple
    radius: float
    order: tuple
    weighted: bool


def _tail_rule(u: GridFunction, x0, R, sigma, growth, params):
    params = params or default_params(u.dim)
    return ray_rule(x0, R, sigma, growth, u.halfwidth, u.h, params)


def _sup_points(u: GridFunction, x0, cap: int = 400):
    nodes = u.flat_nodes()
    step = max(1, int(math.ceil(nodes.shape[0] / cap)))
    return np.concatenate([nodes[::step], np.atleast_2d(x0)])


def tail_integral(u: GridFunction, x0, R: float, m: float, sigma: float, b: Optional[Callable] = None,
                  shift: float = 0.0, params: Optional[QuadParams] = None) -> float:
    """``sup_x ∫_{ℝ^N∖B_R(x0)} b(x,y)|u(y)-shift|^(m-1)|x0-y|^(-N-σ) dy`` (no radius factor, no root)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    growth = u.exterior.growth * (m - 1.0)
    if growth >= sigma:
        raise PreconditionError(f"declared far-field growth makes the tail diverge ((m-1)kappa={growth:g} >= {sigma:g})")
    Y, W = _tail_rule(u, x0, R, sigma, growth, params)
    g = np.abs(u.evaluate(Y) - shift) ** (m - 1.0)
    if b is None:
        return total(W * g)
    X = _sup_points(u, x0)
    B = np.asarray(b(X[:, None, :], Y[None, :, :])) * np.ones((X.shape[0], Y.shape[0]))
    return float(np.max(B @ (W * g)))


def nonlocal_tail(u: GridFunction, x0, R: float, m: float, alpha_ord: float, b: Optional[Callable] = None,
                  params: Optional[QuadParams] = None) -> TailReport:
    """``T_{mα,b}(u;x0,R) = (R^{mα} sup_x ∫ b|u|^(m-1)|x0-y|^(-N-mα))^(1/(m-1))``."""
    sigma = m * alpha_ord
    I = tail_integral(u, x0, R, m, sigma, b, 0.0, params)
    val = (R ** sigma * max(I, 0.0)) ** (1.0 / (m - 1.0))
    return TailReport(float(val), tuple(np.atleast_1d(x0).astype(float)), float(R), (m, alpha_ord), b is not None)


def combined_tail(u: GridFunction, x0, R: float, spec: ProblemSpec, b_sup: float, shift: float = 0.0,
                  params: Optional[QuadParams] = None) -> float:
    """``T(v;x0,R) = ∫_{ℝ^N∖B_R}(|v|^(p-1)|x0-y|^(-N-sp) + ‖b‖∞|v|^(q-1)|x0-y|^(-N-tq)) dy``, ``v = u - shift``."""
    val = tail_integral(u, x0, R, spec.p, spec.p * spec.s, None, shift, params)
    if b_sup > 0:
        val += b_sup * tail_integral(u, x0, R, spec.q, spec.q * spec.t, None, shift, params)
    return val


# --------------------------------------------------------------------------
# the measure μ and the dual pair


def mu_measure(x0, R: float, epsilon: float, p: float, params: Optional[QuadParams] = None) -> float:
    """``μ(𝓑(x0,R)) = ∬_{B_R×B_R} |x-y|^(-N+εp) dx dy`` by quadrature."""
    if not epsilon > 0:
        raise PreconditionError("epsilon must be positive")
    reg = _region(x0, R)
    rule = region_pair_rule(reg, -epsilon * p, 0.0, None, params, n_tiles=4)
    return rule.integrate(lambda x, y: np.ones(np.broadcast_shapes(x.shape, y.shape)[:-1]))


def mu_measure_1d(R: float, epsilon: float, p: float) -> float:
    """Closed form of ``μ(𝓑(x0,R))`` in one dimension."""
    a = epsilon * p
    return 2.0 * (2.0 * R) ** (a + 1.0) / (a * (a + 1.0))


def default_epsilon(spec: ProblemSpec) -> float:
    return 0.9 * min(spec.s / spec.p, 1.0 - spec.s)


@dataclass(frozen=True)
class DualPairField:
    """The functions U, B, H, G, F on pairs ``(x, y)`` and the exponents attached to ``ε``."""

    spec: ProblemSpec
    epsilon: float
    u: GridFunction
    b: Optional[Callable] = None
    f: Field = None
    omega: Optional[Region] = None
    b_sup: float = 0.0

    def __post_init__(self):
        s, p = self.spec.s, self.spec.p
        if not (0 < self.epsilon < min(s / p, 1 - s)):
            raise PreconditionError(f"epsilon={self.epsilon} outside (0, min(s/p, 1-s))")

    @property
    def m(self) -> float:
        n, p, s, e = self.spec.dim, self.spec.p, self.spec.s, self.epsilon
        return (n * p + e * p * p) / (n + s * p + e * p)

    @property
    def tau(self) -> float:
        return self.spec.s + self.epsilon - self.epsilon * self.spec.p / self.m

    @property
    def alpha(self) -> float:
        return self.m / self.spec.p

    @property
    def theta_exp(self) -> float:
        s, p, e, n = self.spec.s, self.spec.p, self.epsilon, self.spec.dim
        return (s - e * (p - 1.0)) / (n + e * p)

    @property
    def p_prime(self) -> float:
        return self.spec.p / (self.spec.p - 1.0)

    def beta(self, i) -> np.ndarray:
        s, p, e = self.spec.s, self.spec.p, self.epsilon
        return 2.0 ** (np.asarray(i, dtype=float) * (-s * p / (p - 1.0) + s + e))

    @property
    def sigma_mu(self) -> float:
        return -self.epsilon * self.spec.p

    # pair functions -------------------------------------------------------
    def _dist(self, x, y):
        return np.linalg.norm(x - y, axis=-1)

    def U(self, x, y):
        d = self._dist(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.abs(self.u.evaluate(x) - self.u.evaluate(y)) / d ** (self.spec.s + self.epsilon)
        return np.where(d > 0, out, 0.0)

    def B(self, x, y):
        if self.b is None:
            return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]))
        s, t, p, q, e = self.spec.s, self.spec.t, self.spec.p, self.spec.q, self.epsilon
        return np.asarray(self.b(x, y)) * self._dist(x, y) ** ((s - t) * q + e * (q - p))

    def H(self, x, y):
        U = self.U(x, y)
        return U ** self.spec.p + self.B(x, y) * U ** self.spec.q

    def G(self, x, y):
        return self.H(x, y) ** (1.0 / self.p_prime)

    def F(self, x, y):
        fx = np.abs(as_field(self.f)(x))
        if self.omega is None:
            return fx * np.ones(np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]))
        inside = self.omega.contains(x) & self.omega.contains(y)
        return np.where(inside, fx, 0.0)

    def h_order(self) -> float:
        """Vanishing order of ``H`` on the diagonal for Lipschitz ``u``."""
        s, t, p, q, e = self.spec.s, self.spec.t, self.spec.p, self.spec.q, self.epsilon
        o = p * (1 - s - e)
        if self.b is not None:
            o = min(o, q - t * q - e * p)
        return o

    # averages over product balls -----------------------------------------
    def mu(self, x0, R) -> float:
        return mu_measure(x0, R, self.epsilon, self.spec.p)

    def pair_average(self, fn: Callable, x0, R, order: float) -> float:
        """``⨍_{𝓑(x0,R)} fn dμ``."""
        reg = _region(x0, R)
        rule = region_pair_rule(reg, self.sigma_mu, order, self.u)
        den = region_pair_rule(reg, self.sigma_mu, 0.0, self.u)
        one = lambda x, y: np.ones(np.broadcast_shapes(x.shape, y.shape)[:-1])
        return rule.integrate(fn) / den.integrate(one)

    def g_power_average(self, x0, R, power: float) -> float:
        """``(⨍_𝓑 G^power dμ)^(1/power)``."""
        order = self.h_order() * power / self.p_prime
        v = self.pair_average(lambda x, y: self.G(x, y) ** power, x0, R, order)
        return max(v, 0.0) ** (1.0 / power)

    def f_power_average(self, x0, R, power: float) -> float:
        if self.f is None:
            return 0.0
        v = self.pair_average(lambda x, y: self.F(x, y) ** power, x0, R, 0.0)
        return max(v, 0.0) ** (1.0 / power)

    def u_power_average(self, x0, R, power: float) -> float:
        order = power * (1 - self.spec.s - self.epsilon)
        v = self.pair_average(lambda x, y: self.U(x, y) ** power, x0, R, order)
        return max(v, 0.0) ** (1.0 / power)


def dual_pair_field(u: GridFunction, spec: ProblemSpec, kernel: Optional[KernelPair] = None, f: Field = None,
                    omega: Optional[Region] = None, epsilon: Optional[float] = None) -> DualPairField:
    eps = default_epsilon(spec) if epsilon is None else epsilon
    b = kernel.b if (kernel is not None and kernel.has_b) else None
    b_sup = kernel.b_sup if b is not None else 0.0
    return DualPairField(spec, eps, u, b, f, omega, b_sup)


def _exponent_pstar(spec: ProblemSpec) -> float:
    d = validate_spec(spec)
    return d.p_star + d.frakA


def refined_tail(field: DualPairField, x, R: float, l: int, rho0: Optional[float] = None) -> float:
    """Dyadic G-averages plus the mean-centred combined tail at scale ``2^l R``."""
    if l < 0 or int(l) != l:
        raise PreconditionError("l must be a nonnegative integer")
    if rho0 is not None and not (rho0 / 2 <= 2 ** l * R < rho0):
        raise PreconditionError(f"2^l R = {2 ** l * R:g} is not in [rho0/2, rho0) for rho0={rho0:g}")
    a = field.p_prime * field.alpha
    p = field.spec.p
    s = 0.0
    for i in range(l + 1):
        s += field.beta(i) ** (p - 1) * field.g_power_average(x, 2 ** i * R, a)
    s += tail_term(field, x, R, l)
    return float(s)


def tail_term(field: DualPairField, x, R: float, l: int) -> float:
    """``ε^(1/p')[εμ(𝓑(x,R))]^θ T(u-(u)_{2^lR,x}; x, 2^lR)``."""
    e = field.epsilon
    Rl = 2 ** l * R
    mean = mean_value(field.u, _region(x, Rl))
    T = combined_tail(field.u, x, Rl, field.spec, field.b_sup, shift=mean)
    return e ** (1.0 / field.p_prime) * (e * field.mu(x, R)) ** field.theta_exp * T


def upsilon(field: DualPairField, x, R: float, delta_f: Optional[float] = None) -> float:
    """``Υ = (⨍ F^(p★+𝔄+δ_f) dμ)^(1/(p★+𝔄+δ_f))``."""
    df = field.spec.delta0 / 2 if delta_f is None else delta_f
    return field.f_power_average(x, R, _exponent_pstar(field.spec) + df)


def psi_M(field: DualPairField, x, R: float, M: float = 1.0) -> float:
    """``Ψ_M = (⨍G^(p')dμ)^(1/p') + M[μ]^θ/ε^(1/(p★+𝔄)-1/p') (⨍F^(p★+𝔄)dμ)^(1/(p★+𝔄))``."""
    ps = _exponent_pstar(field.spec)
    e = field.epsilon
    g = field.g_power_average(x, R, field.p_prime)
    fterm = field.f_power_average(x, R, ps)
    return g + M * field.mu(x, R) ** field.theta_exp / e ** (1.0 / ps - 1.0 / field.p_prime) * fterm


def xi0(field: DualPairField, x0, rho0: float, domain: Optional[Region] = None) -> float:
    """``Ξ0 = Υ(x0,2ρ0) + Ψ_1(x0,2ρ0) + T(u-(u)_{2ρ0,x0}; x0, 2ρ0)``."""
    big = _region(x0, 2 * rho0)
    if domain is not None and not big.inside(domain):
        raise PreconditionError("B_{2 rho0}(x0) must lie inside the domain")
    mean = mean_value(field.u, big)
    T = combined_tail(field.u, x0, 2 * rho0, field.spec, field.b_sup, shift=mean)
    return upsilon(field, x0, 2 * rho0) + psi_M(field, x0, 2 * rho0, 1.0) + T


# --------------------------------------------------------------------------
# VMO moduli


def _value_ladder(M: float):
    vals = [0.0]
    j = -2
    while 2.0 ** j <= M * (1 + 1e-12):
        vals += [2.0 ** j, -(2.0 ** j)]
        j += 1
    return sorted(vals)


def _vmo_centers(region: Region, n_centers: int, seed: int):
    rng = np.random.default_rng(seed)
    dim = region.dim
    k = n_centers // 2
    x = region.c + region.radius * rng.uniform(-1, 1, (n_centers, dim)) * 0.9
    y = x.copy()
    y[k:] = region.c + region.radius * rng.uniform(-1, 1, (n_centers - k, dim)) * 0.9
    if not region.is_interval:
        for P in (x, y):
            d = np.linalg.norm(P - region.c, axis=1)
            big = d > 0.9 * region.radius
            P[big] = region.c + (P[big] - region.c) * (0.9 * region.radius / d[big])[:, None]
    return x, y


def _ball_points(center, r, dim, n_tiles=12):
    X, W = volume_rule(_region(center, r), None, n=3, n_tiles=n_tiles)
    return X, W / W.sum()


def _mean_osc(Afun, x, y, r, dim):
    X, wx = _ball_points(x, r, dim)
    Y, wy = _ball_points(y, r, dim)
    A = Afun(X[:, None, :], Y[None, :, :])
    Wt = wx[:, None] * wy[None, :]
    mean = np.sum(Wt * A)
    return float(np.sum(Wt * np.abs(A - mean)))


def vmo_modulus(kernel: KernelPair, region: Region, rho: float, M: float = 1.0, samples: int = 16,
                n_radii: int = 5, seed: int = 0, values: Optional[Sequence] = None) -> float:
    """Sampled ``ν_{a,M}(ρ)``: max over centre pairs, radii ``r ≤ ρ`` and value pairs of the mean oscillation.

    Radii come from the fixed ladder ``region.radius·2^(-k)`` and value pairs
    from a fixed dyadic set intersected with ``[-M,M]²``, so the result is
    nondecreasing in both ``ρ`` and ``M``.
    """
    if rho > region.radius * (1 + 1e-12):
        raise PreconditionError("rho must not exceed the region radius")
    radii = [region.radius * 2.0 ** (-k) for k in range(n_radii)]
    radii = [r for r in radii if r <= rho * (1 + 1e-12)]
    if values is None:
        ladder = _value_ladder(M) if kernel.u_dependent else [0.0]
        values = [(w, z) for w in ladder for z in ladder]
    xs, ys = _vmo_centers(region, samples, seed)
    best = 0.0
    for (w, z) in values:
        Afun = lambda X, Y: kernel.a_values(X, Y, np.full(1, w), np.full(1, z))
        for x, y in zip(xs, ys):
            for r in radii:
                best = max(best, _mean_osc(Afun, x, y, r, region.dim))
    return best


def composed_vmo_modulus(kernel: KernelPair, u: Field, region: Region, rho: float, samples: int = 16,
                         n_radii: int = 5, seed: int = 0) -> float:
    """VMO modulus of ``A(x,y) = a(x,y,u(x),u(y))`` with the same sampling as :func:`vmo_modulus`."""
    if rho > region.radius * (1 + 1e-12):
        raise PreconditionError("rho must not exceed the region radius")
    uf = as_field(u)
    radii = [r for r in (region.radius * 2.0 ** (-k) for k in range(n_radii)) if r <= rho * (1 + 1e-12)]
    xs, ys = _vmo_centers(region, samples, seed)
    Afun = lambda X, Y: kernel.a_values(X, Y, uf(X), uf(Y))
    best = 0.0
    for x, y in zip(xs, ys):
        for r in radii:
            best = max(best, _mean_osc(Afun, x, y, r, region.dim))
    return best


def composed_vmo_bound(kernel: KernelPair, u: Field, region: Region, rho: float, samples: int = 16,
                       n_radii: int = 5, seed: int = 0) -> float:
    """Sample-wise bound ``2⨍⨍ω_a(½(|u(x)-(u)_x|+|u(y)-(u)_y|)) + osc of a at the frozen means``.

    For every sampled centre pair and radius this dominates the mean
    oscillation of the composed coefficient; the max over samples is returned.
    """
    uf = as_field(u)
    radii = [r for r in (region.radius * 2.0 ** (-k) for k in range(n_radii)) if r <= rho * (1 + 1e-12)]
    xs, ys = _vmo_centers(region, samples, seed)
    best = 0.0
    for x, y in zip(xs, ys):
        for r in radii:
            X, wx = _ball_points(x, r, region.dim)
            Y, wy = _ball_points(y, r, region.dim)
            ux, uy = uf(X), uf(Y)
            mx, my = float(np.sum(wx * ux)), float(np.sum(wy * uy))
            dev = 0.5 * (np.abs(ux - mx)[:, None] + np.abs(uy - my)[None, :])
            Wt = wx[:, None] * wy[None, :]
            first = 2.0 * float(np.sum(Wt * np.asarray(kernel.omega_a(dev)) * np.ones(Wt.shape)))
            Af = kernel.a_values(X[:, None, :], Y[None, :, :], np.full(1, mx), np.full(1, my))
            mean = np.sum(Wt * Af)
            best = max(best, first + float(np.sum(Wt * np.abs(Af - mean))))
    return best
