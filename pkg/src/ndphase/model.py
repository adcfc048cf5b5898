"""Problem specification, derived exponents and the discrete data model.

Everything here is immutable after construction.  Arrays held by the
dataclasses are flagged read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

INF = math.inf
P_SOB_SENTINEL = 1.0e6


class SpecError(ValueError):
    """A problem specification violates a range or regime hypothesis."""


class KernelAssumptionError(ValueError):
    """A coefficient pair failed a bound, symmetry or continuity spot check."""


class AlignmentError(ValueError):
    """A region or scale does not align with the grid."""


class DomainError(ValueError):
    """A point lies outside the admissible set of an evaluation."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# specification


@dataclass(frozen=True)
class ProblemSpec:
    """Exponents and parameters of the double-phase problem.

    ``gamma`` may be ``math.inf``.  ``p_sob_sentinel`` is the value used for
    the Sobolev conjugate when ``dim <= p*s``.
    """

    p: float
    q: float
    s: float
    t: float
    lam: float = 1.0
    gamma: float = INF
    delta0: float = 0.1
    dim: int = 1
    p_sob_sentinel: float = P_SOB_SENTINEL

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise SpecError(f"dimension N={self.dim} not supported (N must be 1 or 2)")
        if not (2.0 <= self.p <= self.q):
            raise SpecError(f"growth exponents violate 2 <= p <= q (p={self.p}, q={self.q})")
        if not math.isfinite(self.q):
            raise SpecError("q must be finite")
        for name in ("s", "t"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise SpecError(f"differentiability order {name}={v} not in (0,1)")
        if not (self.lam >= 1.0):
            raise SpecError(f"ellipticity bound Lambda={self.lam} must be >= 1")
        if not (self.gamma > 1.0):
            raise SpecError(f"integrability exponent gamma={self.gamma} must exceed 1")
        if not (self.delta0 > 0.0):
            raise SpecError(f"margin delta0={self.delta0} must be positive")
        if not (self.p_sob_sentinel > self.q):
            raise SpecError("Sobolev sentinel must exceed q")

    @property
    def qt_le_ps(self) -> bool:
        return self.q * self.t <= self.p * self.s

    @property
    def p_sob(self) -> float:
        n, ps = self.dim, self.p * self.s
        return n * self.p / (n - ps) if n > ps else self.p_sob_sentinel

    @property
    def holder_regime(self) -> bool:
        return self.q < min(self.p_sob, self.p * self.s / self.t)

    @property
    def gamma_ok(self) -> bool:
        return self.gamma > max(1.0, self.dim / (self.p * self.s))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("p", "q", "s", "t", "lam", "gamma", "delta0", "dim")}
        d["gamma"] = "inf" if math.isinf(self.gamma) else self.gamma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        d = dict(d)
        g = d.get("gamma", INF)
        if isinstance(g, str):
            g = float(g)
        d["gamma"] = g
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {"p", "q", "s", "t", "lam", "gamma", "delta0", "dim", "p_sob_sentinel"}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown problem keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class DerivedExponents:
    p_star: float
    frakA: float
    p_sob: float
    theta: float
    p_prime: float
    qt_le_ps: bool
    holder_regime: bool
    gamma_ok: bool


REGIMES = {
    "self_improving": ("qt_le_ps", "q*t > p*s violates the self-improving regime (q*t <= p*s)"),
    "holder": ("holder_regime", "q >= min(p*_s, p*s/t) violates the Hoelder regime (q < min(p*_s, p*s/t))"),
    "forcing": ("gamma_ok", "gamma <= max(1, N/(p*s)) violates the forcing integrability hypothesis"),
}


def validate_spec(spec: ProblemSpec, require: Sequence[str] = ()) -> DerivedExponents:
    """Return the derived exponents of ``spec``.

    ``require`` lists regime names (``self_improving``, ``holder``,
    ``forcing``) that must hold; a failed one raises :class:`SpecError`
    whose message names the hypothesis.
    """
    n, p, q, s, t = spec.dim, spec.p, spec.q, spec.s, spec.t
    pp = p / (p - 1.0)
    sp_ = s * p
    if sp_ < n:
        p_star = n * pp / (n + s * pp)
        frakA = 0.0
    else:
        p_star = 1.0
        frakA = 0.5 * min(spec.delta0, 1.0 / p)
    n_over_gamma = 0.0 if math.isinf(spec.gamma) else n / spec.gamma
    theta = min((p * s - n_over_gamma) / (p - 1.0), q * t / (q - 1.0), 1.0)
    out = DerivedExponents(
        p_star=p_star, frakA=frakA, p_sob=spec.p_sob, theta=theta, p_prime=pp,
        qt_le_ps=spec.qt_le_ps, holder_regime=spec.holder_regime, gamma_ok=spec.gamma_ok,
    )
    for name in require:
        if name not in REGIMES:
            raise SpecError(f"unknown regime assertion {name!r}")
        flag, msg = REGIMES[name]
        if not getattr(out, flag):
            raise SpecError(msg)
    if not (theta > 0.0) and "forcing" in require:
        raise SpecError("Hoelder ceiling is not positive")
    return out


# --------------------------------------------------------------------------
# scalar inequalities


def bracket_power(xi, ell: float):
    """``|xi|^(ell-2) * xi``, elementwise."""
    if not (ell >= 2.0 and math.isfinite(ell)):
        raise ValueError(f"exponent ell={ell} must be finite and >= 2")
    xi = np.asarray(xi, dtype=float)
    if ell == 2.0:
        out = xi.copy()
    else:
        out = np.abs(xi) ** (ell - 2.0) * xi
    return out if out.ndim else float(out)


def _mon_ratio(xi, zeta, ell):
    d = xi - zeta
    return (bracket_power(xi, ell) - bracket_power(zeta, ell)) * d / np.abs(d) ** ell


def monotonicity_constant(ell: float, trials: int = 4000, seed: int = 0) -> float:
    """Empirical infimum of ``([xi]^(l-1)-[zeta]^(l-1))(xi-zeta)/|xi-zeta|^l``.

    Random pairs are sampled, then the best sample is polished by a scalar
    search in the scale-free variable ``c = (xi+zeta)/(2(xi-zeta))``.
    """
    if trials < 1000:
        raise ValueError("trials must be at least 1000")
    rng = np.random.default_rng(seed)
    while True:
        xi = rng.uniform(-10, 10, trials)
        zeta = rng.uniform(-10, 10, trials)
        keep = xi != zeta
        if keep.any():
            break
    r = _mon_ratio(xi[keep], zeta[keep], ell)
    best = float(r.min())
    if ell == 2.0:
        return 1.0
    k = int(np.argmin(r))
    c0 = 0.5 * (xi[keep][k] + zeta[keep][k]) / (xi[keep][k] - zeta[keep][k])
    f = lambda c: float(_mon_ratio(np.array(c + 0.5), np.array(c - 0.5), ell))
    res = minimize_scalar(f, bracket=(c0 - 0.5, c0, c0 + 0.5), tol=1e-12)
    return min(best, float(res.fun))


def kkp2_constant(ell: float, samples: int = 20001) -> float:
    """Smallest c with ``|[xi-w]^(l-1)-[zeta-w]^(l-1)| <= c|xi-zeta|^(l-1) + c|xi-zeta||xi-w|^(l-2)``.

    By homogeneity it suffices to take ``zeta - xi = 1``; the remaining free
    variable ``a = xi - w`` is scanned on a compactified grid and the
    maximiser polished.  The large-|a| limit ``ell-1`` is included.
    """
    g = lambda a: float(np.abs(bracket_power(a, ell) - bracket_power(a + 1.0, ell))
                        / (1.0 + np.abs(a) ** (ell - 2.0)))
    th = np.linspace(-np.pi / 2, np.pi / 2, samples)[1:-1]
    a = np.tan(th)
    vals = np.abs(bracket_power(a, ell) - bracket_power(a + 1.0, ell)) / (1.0 + np.abs(a) ** (ell - 2.0))
    k = int(np.argmax(vals))
    lo, hi = th[max(k - 1, 0)], th[min(k + 1, len(th) - 1)]
    res = minimize_scalar(lambda x: -g(math.tan(x)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    return max(float(vals[k]), -float(res.fun), ell - 1.0)


# --------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class Region:
    """A ball or an axis-aligned cube ``center + [-radius, radius]^N``."""

    center: tuple
    radius: float
    kind: str = "ball"
    grid_alignment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not (self.radius > 0):
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.kind not in ("ball", "box"):
            raise ValueError(f"unknown region kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center)

    @property
    def lo(self) -> np.ndarray:
        return self.c - self.radius

    @property
    def hi(self) -> np.ndarray:
        return self.c + self.radius

    @property
    def is_interval(self) -> bool:
        return self.dim == 1 or self.kind == "box"

    def volume(self) -> float:
        if self.is_interval:
            return (2 * self.radius) ** self.dim
        return math.pi * self.radius ** 2

    def contains(self, pts, closed: bool = True, tol: float = 1e-12) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d = pts - self.c
        if self.is_interval:
            r = np.max(np.abs(d), axis=-1)
        else:
            r = np.linalg.norm(d, axis=-1)
        return r <= self.radius * (1 + tol) if closed else r < self.radius * (1 - tol)

    def scaled(self, k: float) -> "Region":
        return replace(self, radius=self.radius * k)

    def snapped(self, h: float, halfwidth: float) -> "Region":
        """Center moved to the nearest node and radius to a multiple of ``h``."""
        c = -halfwidth + np.round((self.c + halfwidth) / h) * h
        r = max(1, round(self.radius / h)) * h
        return Region(tuple(c), r, self.kind, True)

    def inside(self, other: "Region", tol: float = 1e-12) -> bool:
        """True when this region is contained in ``other``."""
        d = np.linalg.norm(self.c - other.c) if not other.is_interval else np.max(np.abs(self.c - other.c))
        if self.is_interval and not other.is_interval:
            d = np.linalg.norm(np.abs(self.c - other.c) + self.radius)
            return d <= other.radius * (1 + tol)
        return d + self.radius <= other.radius * (1 + tol)


def ball(center, radius, kind="ball") -> Region:
    return Region(tuple(np.atleast_1d(center)), radius, kind)


# --------------------------------------------------------------------------
# grid functions


@dataclass(frozen=True)
class ExteriorData:
    """Far-field closure ``g`` with declared bound ``|g(y)| <= C(1+|y|)^kappa``."""

    fn: Callable
    bound: float = 1.0
    growth: float = 0.0
    name: str = "custom"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.asarray(self.fn(y), dtype=float) * np.ones(y.shape[:-1])

    def tail_finite(self, spec: ProblemSpec) -> bool:
        k = self.growth
        return (spec.p - 1) * k < spec.p * spec.s and (spec.q - 1) * k < spec.q * spec.t


ZERO_EXTERIOR = ExteriorData(lambda y: np.zeros(np.shape(y)[:-1]), 0.0, 0.0, "zero")


def constant_exterior(c: float) -> ExteriorData:
    return ExteriorData(lambda y: np.full(np.shape(y)[:-1], float(c)), abs(c), 0.0, f"constant({c})")


@dataclass(frozen=True)
class GridFunction:
    """Nodal values on the uniform grid over ``[-L, L]^N`` with ``n`` cells per axis.

    Inside the box the function is the piecewise multilinear interpolant;
    outside it is ``exterior``.
    """

    halfwidth: float
    n: int
    values: np.ndarray
    exterior: ExteriorData = ZERO_EXTERIOR

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        dim = v.ndim
        if dim not in (1, 2) or any(k != self.n + 1 for k in v.shape):
            raise ValueError(f"values shape {v.shape} does not match n={self.n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def h(self) -> float:
        return 2.0 * self.halfwidth / self.n

    @property
    def box(self) -> Region:
        return Region((0.0,) * self.dim, self.halfwidth, "box")

    def axis(self) -> np.ndarray:
        return -self.halfwidth + self.h * np.arange(self.n + 1)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``values.shape + (N,)``."""
        ax = self.axis()
        if self.dim == 1:
            return ax[:, None]
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def flat_nodes(self) -> np.ndarray:
        return self.nodes().reshape(-1, self.dim)

    @classmethod
    def from_function(cls, fn: Callable, halfwidth: float, n: int, dim: int = 1,
                      exterior: Optional[ExteriorData] = None) -> "GridFunction":
        g = cls(halfwidth, n, np.zeros((n + 1,) * dim), exterior or ZERO_EXTERIOR)
        vals = np.asarray(fn(g.nodes()), dtype=float) * np.ones((n + 1,) * dim)
        return g.with_values(vals)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.halfwidth, self.n, np.asarray(values, dtype=float).reshape((self.n + 1,) * self.dim),
                            self.exterior)

    def with_exterior(self, exterior: ExteriorData) -> "GridFunction":
        return GridFunction(self.halfwidth, self.n, self.values, exterior)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        ext = ExteriorData(lambda y: self.exterior(y) + other.exterior(y),
                           self.exterior.bound + other.exterior.bound,
                           max(self.exterior.growth, other.exterior.growth), "sum")
        return GridFunction(self.halfwidth, self.n, self.values + other.values, ext)

    def scale(self, lam: float, shift: float = 0.0) -> "GridFunction":
        """``lam * u + shift`` with the closure transformed alike."""
        e = self.exterior
        ext = ExteriorData(lambda y: lam * e(y) + shift, abs(lam) * e.bound + abs(shift), e.growth, "affine")
        return GridFunction(self.halfwidth, self.n, lam * self.values + shift, ext)

    def _locate(self, pts):
        h, L, n = self.h, self.halfwidth, self.n
        s = (pts + L) / h
        idx = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
        return idx, s - idx

    def inside_box(self, pts) -> np.ndarray:
        return np.all(np.abs(pts) <= self.halfwidth * (1 + 1e-13), axis=-1)

    def evaluate(self, pts) -> np.ndarray:
        """Values at points of shape ``(..., N)``."""
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        P = pts.reshape(-1, self.dim)
        out = np.empty(P.shape[0])
        ins = self.inside_box(P)
        if ins.any():
            out[ins] = self._interp(P[ins])
        if (~ins).any():
            out[~ins] = self.exterior(P[~ins])
        return out.reshape(shape)

    def _interp(self, P):
        idx, t = self._locate(P)
        V = self.values
        if self.dim == 1:
            i, u = idx[:, 0], t[:, 0]
            return (1 - u) * V[i] + u * V[i + 1]
        i, j = idx[:, 0], idx[:, 1]
        u, w = t[:, 0], t[:, 1]
        return ((1 - u) * (1 - w) * V[i, j] + u * (1 - w) * V[i + 1, j]
                + (1 - u) * w * V[i, j + 1] + u * w * V[i + 1, j + 1])

    def interp_matrix(self, pts) -> sp.csr_matrix:
        """Sparse matrix mapping flattened nodal values to values at ``pts`` (inside the box)."""
        P = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        idx, t = self._locate(P)
        m = P.shape[0]
        n1 = self.n + 1
        if self.dim == 1:
            rows = np.repeat(np.arange(m), 2)
            cols = np.stack([idx[:, 0], idx[:, 0] + 1], 1).ravel()
            vals = np.stack([1 - t[:, 0], t[:, 0]], 1).ravel()
        else:
            i, j, u, w = idx[:, 0], idx[:, 1], t[:, 0], t[:, 1]
            rows = np.repeat(np.arange(m), 4)
            cols = np.stack([i * n1 + j, (i + 1) * n1 + j, i * n1 + j + 1, (i + 1) * n1 + j + 1], 1).ravel()
            vals = np.stack([(1 - u) * (1 - w), u * (1 - w), (1 - u) * w, u * w], 1).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, n1 ** self.dim))

    def tail_finite(self, spec: ProblemSpec) -> bool:
        return self.exterior.tail_finite(spec)


# --------------------------------------------------------------------------
# coefficients


def _zero_modulus(t):
    return np.zeros_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class KernelPair:
    """Coefficients ``a(x, y, w, z)`` and ``b(x, y)`` with metadata.

    ``a`` and ``b`` take broadcastable arrays: points of shape ``(..., N)``
    and values of shape ``(...)``.  ``b=None`` means ``b == 0``.
    ``b_sup`` is a declared upper bound for ``b``.
    """

    a: Callable
    b: Optional[Callable] = None
    omega_a: Callable = _zero_modulus
    symmetry_declared: bool = True
    u_dependent: bool = False
    b_sup: float = 0.0
    a_bounds: tuple = (1.0, 1.0)
    name: str = "custom"

    def a_values(self, x, y, w, z) -> np.ndarray:
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1], np.shape(w), np.shape(z))
        return np.broadcast_to(np.asarray(self.a(x, y, w, z), dtype=float), shape)

    def b_values(self, x, y) -> np.ndarray:
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
        if self.b is None:
            return np.zeros(shape)
        return np.broadcast_to(np.asarray(self.b(x, y), dtype=float), shape)

    @property
    def has_b(self) -> bool:
        return self.b is not None and self.b_sup > 0


def check_kernel(kernel: KernelPair, lam: float, dim: int = 1, samples: int = 2000,
                 seed: int = 0, extent: float = 3.0, raise_on_fail: bool = True) -> dict:
    """Spot-check ellipticity, symmetry and the continuity modulus on random samples."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-extent, extent, (samples, dim))
    y = rng.uniform(-extent, extent, (samples, dim))
    w, z = rng.uniform(-5, 5, (2, samples))
    w2, z2 = w + rng.normal(0, 0.5, samples), z + rng.normal(0, 0.5, samples)
    A = kernel.a_values(x, y, w, z)
    B = kernel.b_values(x, y)
    tol = 1e-12
    res = {
        "a_bounds": bool(np.all(A >= 1 / lam - tol) and np.all(A <= lam + tol)),
        "b_bounds": bool(np.all(B >= -tol) and np.all(B <= lam + tol) and np.all(B <= kernel.b_sup + tol)),
        "a_symmetric": bool(np.allclose(A, kernel.a_values(y, x, z, w), rtol=0, atol=1e-12)),
        "b_symmetric": bool(np.allclose(B, kernel.b_values(y, x), rtol=0, atol=1e-12)),
    }
    dA = np.abs(A - kernel.a_values(x, y, w2, z2))
    bound = np.asarray(kernel.omega_a(0.5 * (np.abs(w - w2) + np.abs(z - z2))))
    res["a_modulus"] = bool(np.all(dA <= bound + tol))
    if raise_on_fail:
        wanted = ["a_bounds", "b_bounds", "a_modulus"]
        if kernel.symmetry_declared:
            wanted += ["a_symmetric", "b_symmetric"]
        bad = [k for k in wanted if not res[k]]
        if bad:
            raise KernelAssumptionError(f"kernel {kernel.name!r} failed spot checks: {bad}")
    return res
