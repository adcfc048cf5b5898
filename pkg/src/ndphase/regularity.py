"""Numerical checkers for the regularity estimates, Hölder fits and zoom transforms.

Existential constants are verified by stability: each checker returns the
fitted constant ``c = LHS / ΣRHS`` and, given several refinements of the same
problem, passes when the constants stay finite with ``max/min`` below a ratio.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .functionals import (
    DualPairField, Field, as_field, ball_average, dual_pair_field, lp_average, mean_value, nonlocal_tail,
    tail_integral, tail_term,
)
from .model import (
    AlignmentError, ExteriorData, GridFunction, KernelPair, ProblemSpec, Region, validate_spec,
)
from .quadrature import PreconditionError, SingularityError, pair_integral, region_pair_rule, total
from .solver import linf_bound

STABILITY_RATIO = 2.0
GROWTH_LIMIT = 1.1

Grids = Union[GridFunction, Sequence[GridFunction]]


@dataclass(frozen=True)
class InequalityVerdict:
    name: str
    lhs: float
    rhs_terms: dict
    fitted_constant: float
    passed: bool
    refinement_trace: tuple = ()
    lhs_trace: tuple = ()
    warning: Optional[str] = None
    details: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))

    def to_dict(self) -> dict:
        return {
            "name": self.name, "lhs": self.lhs, "rhs_terms": dict(self.rhs_terms), "rhs": self.rhs,
            "fitted_constant": self.fitted_constant, "passed": self.passed,
            "refinement_trace": list(self.refinement_trace), "lhs_trace": list(self.lhs_trace),
            "warning": self.warning, "details": self.details,
        }


def _fit(lhs: float, terms: dict) -> float:
    rhs = float(sum(terms.values()))
    if lhs == 0.0:
        return 0.0
    return lhs / rhs if rhs > 0 else math.inf


def stability(trace: Sequence[float], ratio: float = STABILITY_RATIO) -> bool:
    """Finite constants whose spread ``max/min`` stays below ``ratio``; all-zero traces pass."""
    t = np.asarray(trace, dtype=float)
    if t.size == 0 or not np.all(np.isfinite(t)):
        return False
    if np.all(t == 0):
        return True
    if np.any(t <= 0):
        return False
    return bool(t.max() / t.min() <= ratio)


def _combine(name, singles, ratio, warning=None, growth_limit=None) -> InequalityVerdict:
    """Merge one verdict per refinement (coarse to fine) into a single verdict."""
    last = singles[-1]
    trace = tuple(s["c"] for s in singles)
    lhs_trace = tuple(s["lhs"] for s in singles)
    ok = stability(trace, ratio)
    details = dict(last.get("details", {}))
    if growth_limit is not None and len(lhs_trace) > 1:
        growth = [b / a if a > 0 else (1.0 if b == 0 else math.inf) for a, b in zip(lhs_trace, lhs_trace[1:])]
        details["lhs_growth"] = growth
        ok = ok and all(g < growth_limit for g in growth)
    return InequalityVerdict(name, last["lhs"], last["terms"], last["c"], ok, trace, lhs_trace, warning, details)


def _as_list(u: Grids) -> list:
    return [u] if isinstance(u, GridFunction) else list(u)


def _ball(x0, R) -> Region:
    return Region(tuple(np.atleast_1d(np.asarray(x0, dtype=float))), float(R))


def _check_inside(region: Region, u: GridFunction, what: str):
    if not region.inside(u.box):
        raise PreconditionError(f"{what} must lie inside the truncation box")


# --------------------------------------------------------------------------
# cutoff


def smoothstep_cutoff(x0, r: float, R: float) -> Callable:
    """``ψ = 1`` on ``B_r``, ``0`` outside ``B_R``, cubic smoothstep in between; ``|∇ψ| ≤ 1.5/(R-r)``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def psi(x):
        d = np.linalg.norm(np.asarray(x, float) - x0, axis=-1)
        t = np.clip((d - r) / (R - r), 0.0, 1.0)
        return 1.0 - (3 * t * t - 2 * t ** 3)
    return psi


# --------------------------------------------------------------------------
# Caccioppoli


def _pair_mean_integral(F, region: Region, sigma, order, grid) -> float:
    """``∫_B ⨍_B F(x,y)|x-y|^(-N-σ)``."""
    rule = region_pair_rule(region, sigma, order, grid)
    return rule.integrate(F) / region.volume()


def _caccioppoli_single(u, f, spec, kernel, B, r, center):
    validate_spec(spec)
    p, q, s, t, N = spec.p, spec.q, spec.s, spec.t, spec.dim
    x0, R = B.c, B.radius
    c0 = mean_value(u, B) if center else 0.0
    w = lambda x: u.evaluate(x) - c0
    psi = smoothstep_cutoff(x0, r, R)
    a_ = lambda x: psi(x) ** (q / p) * w(x)
    lhs = _pair_mean_integral(lambda x, y: np.abs(a_(x) - a_(y)) ** p, B, p * s, p, u)
    if kernel is not None and kernel.has_b:
        b_ = lambda x: psi(x) * w(x)
        lhs += _pair_mean_integral(lambda x, y: kernel.b_values(x, y) * np.abs(b_(x) - b_(y)) ** q, B, q * t, q, u)
    d = validate_spec(spec)
    e = d.p_star + d.frakA
    pp = p / (p - 1)
    avg = lambda fn: ball_average(u, B, fn)
    cut_avg = ball_average(lambda x: psi(x) ** q * np.abs(w(x)), B, grid=u)
    bsup = kernel.b_sup if (kernel is not None and kernel.has_b) else 0.0
    terms = {
        "bulk_p": R ** (p * (1 - s)) / (R - r) ** p * avg(lambda v: np.abs(v - c0) ** p),
        "bulk_q": R ** (q * (1 - t)) / (R - r) ** q * avg(lambda v: np.abs(v - c0) ** q),
        "forcing": R ** (s * pp) * ball_average(lambda x: np.abs(as_field(f)(x)) ** e, B, grid=u) ** (pp / e),
        "tail_p": (R / (R - r)) ** (N + s * p) * tail_integral(u, x0, R, p, p * s, None, c0) * cut_avg,
        "tail_q": (R / (R - r)) ** (N + t * q) * bsup * tail_integral(u, x0, R, q, q * t, None, c0) * cut_avg
        if bsup > 0 else 0.0,
    }
    return {"lhs": float(lhs), "terms": terms, "c": _fit(lhs, terms), "details": {"h": u.h, "centered": center}}


def caccioppoli_check(u: Grids, f: Field, spec: ProblemSpec, kernel: Optional[KernelPair], B: Region, r: float,
                      center: bool = True, ratio: float = STABILITY_RATIO, is_solution: bool = True,
                      strict: bool = True) -> InequalityVerdict:
    """Energy of the cut-off function against bulk, forcing and tail terms on ``B = B_R(x0)``.

    ``center=True`` applies the estimate to ``u - (u)_B``, which solves the same
    equation and makes the check oscillation-based.
    """
    if strict and B.radius > 0.125 + 1e-12:
        raise PreconditionError("the Caccioppoli estimate is stated for R <= 1/8")
    if not 0 < r < B.radius:
        raise PreconditionError("inner radius must lie in (0, R)")
    us = _as_list(u)
    for g in us:
        _check_inside(B, g, "B")
    singles = [_caccioppoli_single(g, f, spec, kernel, B, r, center) for g in us]
    warn = None if is_solution else "input is not a solution; the estimate need not hold"
    return _combine("caccioppoli", singles, ratio, warn)


# --------------------------------------------------------------------------
# fractional Sobolev–Poincaré


def sobolev_poincare_check(u: Grids, region: Region, spec: ProblemSpec, eta: float, epsilon: Optional[float] = None,
                           ratio: float = STABILITY_RATIO) -> InequalityVerdict:
    """``(⨍|u-(u)_R|^η)^(1/η)`` against ``ε^(-1/m) R^(s+ε) (⨍_𝓑 U^m dμ)^(1/m)``."""
    if not 1 <= eta <= spec.p:
        raise PreconditionError("eta must lie in [1, p]")
    singles = []
    for g in _as_list(u):
        _check_inside(region, g, "region")
        fld = dual_pair_field(g, spec, epsilon=epsilon)
        c0 = mean_value(g, region)
        lhs = ball_average(g, region, lambda v: np.abs(v - c0) ** eta) ** (1 / eta)
        R, m = region.radius, fld.m
        rhs = R ** (spec.s + fld.epsilon) / fld.epsilon ** (1 / m) * fld.u_power_average(region.c, R, m)
        terms = {"dual": float(rhs)}
        singles.append({"lhs": float(lhs), "terms": terms, "c": _fit(lhs, terms),
                        "details": {"h": g.h, "m": m, "epsilon": fld.epsilon}})
    return _combine("sobolev_poincare", singles, ratio)


# --------------------------------------------------------------------------
# reverse Hölder


def reverse_holder_terms(field: DualPairField, B: Region, l: int, sigma: float) -> dict:
    """The four groups on the right of the diagonal reverse Hölder inequality (constant ``c`` omitted)."""
    spec = field.spec
    d = validate_spec(spec)
    e, pp, al = field.epsilon, field.p_prime, field.alpha
    ex = d.p_star + d.frakA
    x0, R = B.c, B.radius
    eps_w = e ** (1 / (pp * al) - 1 / pp)
    g0 = field.g_power_average(x0, R, pp * al)
    dyadic = sum(field.beta(j) ** (spec.p - 1) * field.g_power_average(x0, 2 ** j * R, pp * al) for j in range(l + 1))
    mu_t = (e * field.mu(x0, R)) ** field.theta_exp
    return {
        "local": float(sigma ** (-(spec.p - 1)) / eps_w * g0),
        "dyadic": float(sigma / eps_w * dyadic),
        "tail": float(sigma * tail_term(field, x0, R, l)),
        "forcing": float(mu_t / e ** (1 / ex - 1 / pp) * field.f_power_average(x0, R, ex)),
    }


def reverse_holder_check(u: Grids, f: Field, spec: ProblemSpec, kernel: Optional[KernelPair], B: Region, l: int,
                         sigma: float = 0.5, epsilon: Optional[float] = None, omega: Optional[Region] = None,
                         ratio: float = STABILITY_RATIO) -> InequalityVerdict:
    """``(⨍_{½𝓑} G^(p') dμ)^(1/p')`` against the local, dyadic, tail and forcing groups."""
    if not (0 < sigma < 1):
        raise PreconditionError("sigma must lie in (0, 1)")
    if int(l) != l or l < 1:
        raise PreconditionError("l must be a positive integer")
    if B.radius > 0.125 + 1e-12 or 2 ** l * B.radius > 2 + 1e-12:
        raise PreconditionError("need R <= 1/8 and 2^l R <= 2")
    singles = []
    for g in _as_list(u):
        _check_inside(_ball(B.c, 2 ** l * B.radius), g, "B_{2^l R}")
        fld = dual_pair_field(g, spec, kernel, f, omega, epsilon)
        lhs = fld.g_power_average(B.c, 0.5 * B.radius, fld.p_prime)
        terms = reverse_holder_terms(fld, B, l, sigma)
        singles.append({"lhs": float(lhs), "terms": terms, "c": _fit(lhs, terms), "details": {"h": g.h, "l": l}})
    return _combine("reverse_holder", singles, ratio)


# --------------------------------------------------------------------------
# self-improving estimate


def _si_lhs(u: GridFunction, spec: ProblemSpec, x0, rho0: float, delta: float) -> float:
    p, s, N = spec.p, spec.s, spec.dim
    B = _ball(x0, rho0 / 2)
    sig = (N + p * s) * (1 + delta) - N
    F = lambda x, y: np.abs(u.evaluate(x) - u.evaluate(y)) ** (p * (1 + delta))
    val = pair_integral(F, B, B, sig, p * (1 + delta), grid=u) / B.volume()
    return max(val, 0.0) ** ((p - 1) / (p * (1 + delta)))


def _self_improving_single(u, f, spec, x0, rho0, delta):
    d = validate_spec(spec)
    p, q, s, t = spec.p, spec.q, spec.s, spec.t
    B2 = _ball(x0, 2 * rho0)
    lhs = _si_lhs(u, spec, x0, rho0, delta)
    sem = region_pair_rule(B2, p * s, p, u).integrate(
        lambda x, y: np.abs(u.evaluate(x) - u.evaluate(y)) ** p) / B2.volume()
    e = d.p_star + spec.delta0
    terms = {
        "seminorm": max(sem, 0.0) ** ((p - 1) / p),
        "forcing": rho0 ** s * ball_average(lambda x: np.abs(as_field(f)(x)) ** e, B2, grid=u) ** (1 / e),
        "tail_qt": rho0 ** (s - t * q) * nonlocal_tail(u, x0, 2 * rho0, q, t).value ** (q - 1),
        "tail_ps": rho0 ** (-s * (p - 1)) * nonlocal_tail(u, x0, 2 * rho0, p, s).value ** (p - 1),
        "constant": rho0 ** (-s * (p - 1)),
    }
    return {"lhs": float(lhs), "terms": terms, "c": _fit(lhs, terms), "details": {"h": u.h, "delta": delta}}


def self_improving_lhs_at_zero_delta(u: GridFunction, spec: ProblemSpec, x0, rho0: float) -> float:
    """LHS with ``δ = 0``: ``(∫⨍ |Δu|^p |x-y|^(-N-ps))^((p-1)/p)`` over ``B_{ρ0/2}``."""
    return _si_lhs(u, spec, x0, rho0, 0.0)


def self_improving_check(u: Grids, f: Field, spec: ProblemSpec, x0, rho0: float, delta: float = 0.05,
                         ratio: float = STABILITY_RATIO, growth_limit: float = GROWTH_LIMIT,
                         max_halvings: int = 3) -> InequalityVerdict:
    """Higher-integrability estimate on ``B_{ρ0/2}(x0)``; also requires bounded LHS growth under refinement."""
    if not 0 < rho0 <= 1:
        raise PreconditionError("rho0 must lie in (0, 1]")
    us = _as_list(u)
    for g in us:
        _check_inside(_ball(x0, 2 * rho0), g, "B_{2 rho0}")
    for _ in range(max_halvings + 1):
        try:
            singles = [_self_improving_single(g, f, spec, x0, rho0, delta) for g in us]
            break
        except SingularityError:
            delta *= 0.5
    else:
        raise SingularityError("self-improving LHS diverges even after reducing delta")
    return _combine("self_improving", singles, ratio, growth_limit=growth_limit)


# --------------------------------------------------------------------------
# boundedness


def boundedness_check(u: Grids, f: Field, spec: ProblemSpec, kernel: Optional[KernelPair], B_r: Region,
                      g_sup: Optional[float] = None, ratio: float = STABILITY_RATIO) -> InequalityVerdict:
    """``‖u‖_{L∞(B_r)}`` against the ϑ-average, forcing, tail, boundary and constant terms on ``B_{2r}``."""
    kernel = kernel or KernelPair(lambda x, y, w, z: 1.0)
    singles = []
    for g in _as_list(u):
        _check_inside(B_r.scaled(2.0), g, "B_{2r}")
        res = linf_bound(g, f, spec, kernel, B_r.c, B_r.radius, g_sup)
        singles.append({"lhs": res["lhs"], "terms": res["rhs_terms"], "c": _fit(res["lhs"], res["rhs_terms"]),
                        "details": {"h": g.h, "vartheta": res["vartheta"], "varsigma": res["varsigma"]}})
    return _combine("boundedness", singles, ratio)


# --------------------------------------------------------------------------
# Hölder exponent


@dataclass(frozen=True)
class HolderFit:
    center: tuple
    radii: tuple
    oscillations: tuple
    alpha_measured: float
    theta_predicted: Optional[float]
    slack: float = 0.1
    degenerate: bool = False

    @property
    def passed(self) -> bool:
        if self.theta_predicted is None:
            return bool(np.isfinite(self.alpha_measured))
        return bool(self.alpha_measured >= self.theta_predicted - self.slack)

    def rows(self):
        return [(float(r), float(o)) for r, o in zip(self.radii, self.oscillations)]


def oscillation(u: GridFunction, center, r: float) -> float:
    """``osc_{B_r} u`` for the interpolant: ``max - min`` over nodes with ``|x - center| <= r``.

    For a continuous interpolant the sup over the open ball equals the max
    over its closure, so nodes on the sphere count.
    """
    nodes = u.flat_nodes()
    d = np.linalg.norm(nodes - np.atleast_1d(np.asarray(center, float)), axis=1)
    m = d <= r * (1 + 1e-12)
    if m.sum() < 2:
        raise PreconditionError(f"radius {r:g} does not resolve two grid nodes")
    v = u.values.ravel()[m]
    return float(v.max() - v.min())


def default_radii(u: GridFunction, r_max: float = 0.25, floor: float = 4.0) -> tuple:
    radii = []
    r = r_max
    while r >= floor * u.h * (1 - 1e-9):
        radii.append(r)
        r /= 2
    return tuple(radii)


def holder_exponent_fit(u: GridFunction, center, radii: Optional[Sequence[float]] = None,
                        spec: Optional[ProblemSpec] = None, slack: float = 0.1, noise: float = 1e-12) -> HolderFit:
    """Least-squares slope of ``log osc_{B_r} u`` against ``log r`` over dyadic radii."""
    radii = tuple(sorted(radii if radii is not None else default_radii(u), reverse=True))
    if len(radii) < 4:
        raise PreconditionError("need at least four radii above the grid scale")
    if any(r < 4 * u.h * (1 - 1e-9) for r in radii):
        raise PreconditionError("radii must be at least four grid cells")
    osc = np.array([oscillation(u, center, r) for r in radii])
    theta = validate_spec(spec).theta if spec is not None else None
    degenerate = bool(np.any(osc <= noise * max(1.0, float(np.max(np.abs(u.values))))))
    if degenerate:
        warnings.warn("oscillation below the noise floor; Hölder fit is degenerate", RuntimeWarning)
        alpha = math.inf
    else:
        alpha = float(np.polyfit(np.log(radii), np.log(osc), 1)[0])
    return HolderFit(tuple(np.atleast_1d(np.asarray(center, float))), radii, tuple(osc), alpha, theta, slack, degenerate)


# --------------------------------------------------------------------------
# zoom transforms


@dataclass(frozen=True)
class ZoomedProblem:
    u: GridFunction
    f: Callable
    kernel: KernelPair
    scale: float
    center: tuple
    amplitude: float = 1.0
    metadata: dict = field(default_factory=dict)


def _aligned(x0, u: GridFunction, rho0: float):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    k = math.log2(rho0) if rho0 > 0 else math.nan
    if not (np.isfinite(k) and abs(k - round(k)) < 1e-12):
        raise AlignmentError(f"scale {rho0:g} is not a power of two")
    idx = (x0 + u.halfwidth) / u.h
    if np.any(np.abs(idx - np.round(idx)) > 1e-9):
        raise AlignmentError("centre is not a grid node")
    half = int(round(min((u.halfwidth - np.max(np.abs(x0))) / u.h, u.n / 2)))
    if half < 1:
        raise AlignmentError("centre too close to the box edge")
    return x0, half


def _zoom(u, f, kernel, x0, rho, amp, b_scale, f_scale, meta):
    x0, half = _aligned(x0, u, rho)
    L = half * u.h / rho
    n = 2 * half
    dim = u.dim
    i0 = np.round((x0 + u.halfwidth) / u.h).astype(int)
    sl = tuple(slice(i - half, i + half + 1) for i in i0)
    vals = np.asarray(u.values)[sl] / amp
    mp = lambda x: rho * np.asarray(x, float) + x0
    ue = u.exterior
    ext = ExteriorData(lambda y: u.evaluate(mp(y)) / amp, max(ue.bound, float(np.max(np.abs(u.values)))) / amp,
                       ue.growth, f"zoom({ue.name})")
    uz = GridFunction(L, n, vals.reshape((n + 1,) * dim), ext)
    fz = lambda x: f_scale * as_field(f)(mp(x))
    a0, b0 = kernel.a, kernel.b
    az = lambda x, y, w, z: a0(mp(x), mp(y), amp * np.asarray(w), amp * np.asarray(z))
    bz = None if b0 is None else (lambda x, y: b_scale * np.asarray(b0(mp(x), mp(y))))
    om = kernel.omega_a
    kz = KernelPair(az, bz, lambda t: om(amp * np.asarray(t)), kernel.symmetry_declared, kernel.u_dependent,
                    kernel.b_sup * b_scale, kernel.a_bounds, f"zoom({kernel.name})")
    return ZoomedProblem(uz, fz, kz, rho, tuple(x0), amp, meta)


def zoom_normalize(u: GridFunction, f: Field, kernel: KernelPair, spec: ProblemSpec, x0, rho0: float) -> ZoomedProblem:
    """``ũ(x) = u(ρ0x+x0)``, ``f̃ = ρ0^(sp) f(ρ0x+x0)``, ``b̃ = ρ0^(sp-tq) b``; nodal values are copied exactly."""
    p, q, s, t = spec.p, spec.q, spec.s, spec.t
    return _zoom(u, f, kernel, x0, rho0, 1.0, rho0 ** (s * p - t * q), rho0 ** (s * p), {})


def zoom_rescale_M(u: GridFunction, f: Field, kernel: KernelPair, spec: ProblemSpec, z, rho: float,
                   M: float) -> ZoomedProblem:
    """``u_z(x) = u(ρx/4+z)/𝓜`` with ``f_z = (ρ/4)^(sp)𝓜^(1-p) f`` and ``b_z = 𝓜^(q-p)(ρ/4)^(sp-tq) b``."""
    if not M > 0:
        raise ValueError("M must be positive")
    p, q, s, t = spec.p, spec.q, spec.s, spec.t
    r = rho / 4
    bs = M ** (q - p) * r ** (s * p - t * q)
    zp = _zoom(u, f, kernel, z, r, M, bs, r ** (s * p) * M ** (1 - p), {})
    B4 = Region((0.0,) * u.dim, 4.0)
    inside = B4.contains(zp.u.flat_nodes())
    sup = float(np.max(np.abs(zp.u.values.ravel()[inside]))) if inside.any() else math.nan
    meta = {"b_scale": bs, "smallness_ok": bool(bs <= 1.0 + 1e-12), "sup_B4": sup,
            "normalized": bool(sup <= 1.0 + 1e-12)}
    return ZoomedProblem(zp.u, zp.f, zp.kernel, r, zp.center, M, meta)


def normalizing_amplitude(u: GridFunction, spec: ProblemSpec, z, rho: float) -> float:
    """``𝓜 = max(1, sup_{B_ρ(z)}|u|, T_ps + T_qt on B_ρ(z))``: large enough for ``sup_{B4}|u_z| <= 1``."""
    B = _ball(z, rho)
    nodes = u.flat_nodes()
    inside = B.contains(nodes)
    sup = float(np.max(np.abs(u.values.ravel()[inside])))
    tails = nonlocal_tail(u, z, rho, spec.p, spec.s).value + nonlocal_tail(u, z, rho, spec.q, spec.t).value
    return max(1.0, sup, tails)


# --------------------------------------------------------------------------
# negative control and absorption iteration


def spike(template: GridFunction, center=None, height: float = 1.0) -> GridFunction:
    """Single-node bump: ``height`` at the node nearest ``center``, zero elsewhere."""
    c = np.zeros(template.dim) if center is None else np.atleast_1d(np.asarray(center, float))
    idx = tuple(np.round((c + template.halfwidth) / template.h).astype(int))
    vals = np.zeros((template.n + 1,) * template.dim)
    vals[idx] = height
    return GridFunction(template.halfwidth, template.n, vals, template.exterior)


def iteration_constant(eta: float, alpha: float) -> float:
    """``c(η, α)`` in ``φ(t1) <= c M/(t2-t1)^α`` when ``φ(r) <= ηφ(ρ) + M/(ρ-r)^α``."""
    if not (0 < eta < 1 and alpha > 0):
        raise ValueError("need eta in (0, 1) and alpha > 0")
    lam = (2 * eta / (1 + eta)) ** (1 / alpha)
    return (1 - lam) ** (-alpha) * 2 / (1 - eta)


def iterate_bound(phi: Callable, eta: float, M: float, alpha: float, t1: float, t2: float) -> dict:
    """Check ``φ(t1) <= c(η,α) M/(t2-t1)^α`` for a given bounded ``φ``."""
    c = iteration_constant(eta, alpha)
    bound = c * M / (t2 - t1) ** alpha
    val = float(phi(t1))
    return {"phi_t1": val, "bound": bound, "constant": c, "holds": bool(val <= bound * (1 + 1e-12))}
