"""Quadrature for singular double integrals, exterior rays and principal values.

Pair integrals ``∬ F(x,y)|x-y|^(-N-σ) dx dy`` are split into tile pairs.
Touching or close tile pairs are integrated in relative coordinates
``z = x - y``: the z-range is cut at the origin, pieces with the origin as a
corner are treated in polar-type (Duffy) coordinates with a dyadically graded
radial rule whose innermost piece carries a Gauss-Jacobi weight, and the
x-integral over the overlap of the two tiles is tensor Gauss-Legendre.
Well separated tile pairs use tensor Gauss-Legendre directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate as sint
from scipy.special import roots_jacobi, roots_legendre

from .model import DomainError, GridFunction, KernelPair, ProblemSpec, Region, bracket_power


class SingularityError(ArithmeticError):
    """The integrand is not integrable against the requested kernel."""


class PreconditionError(ValueError):
    """Parameters lie outside the range where the quantity is finite or defined."""


@dataclass(frozen=True)
class QuadParams:
    depth: int = 4
    n_radial: int = 4
    n_angle: int = 4
    n_x: int = 3
    n_regular: int = 4
    n_far: int = 3
    near_factor: float = 1.5
    n_tau: int = 16
    n_theta: int = 6
    n_ray: int = 3
    tol_quad: float = 1e-4
    summation: str = "pairwise"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("subdivision depth must be >= 1")
        if self.summation not in ("pairwise", "kahan"):
            raise ValueError(f"unknown summation mode {self.summation!r}")


DEFAULT = QuadParams()
COARSE_2D = QuadParams(depth=3, n_radial=3, n_angle=3, n_x=2, n_regular=3, n_far=2)


def default_params(dim: int) -> QuadParams:
    return DEFAULT if dim == 1 else COARSE_2D


def total(values, mode: str = "pairwise") -> float:
    """Deterministic reduction of an array."""
    v = np.asarray(values, dtype=float).ravel()
    if mode == "kahan":
        return math.fsum(v.tolist())
    return float(np.sum(v))


# --------------------------------------------------------------------------
# 1D building blocks


@lru_cache(maxsize=None)
def gl01(n: int):
    x, w = roots_legendre(n)
    return (0.5 * (x + 1.0), 0.5 * w)


@lru_cache(maxsize=None)
def gj01(n: int, beta: float):
    """Nodes and weights on [0,1] for the weight ``t^beta``."""
    x, w = roots_jacobi(n, 0.0, beta)
    return (0.5 * (x + 1.0), w * 0.5 ** (1.0 + beta))


def radial_rule(rmax: float, sigma: float, order: float, depth: int, n: int):
    """Nodes ``r`` and weights with ``Σ w ψ(r) ≈ ∫_0^rmax r^(-1-σ) ψ(r) dr`` for ``ψ ~ r^order``.

    Also returns the level index of each node (0 outermost, ``depth`` innermost).
    """
    beta = order - 1.0 - sigma
    if beta <= -1.0:
        raise SingularityError(f"integrand order {order} does not beat kernel order {sigma}")
    x, w = gl01(n)
    rs, ws, lv = [], [], []
    for k in range(depth):
        a, b = rmax * 2.0 ** (-k - 1), rmax * 2.0 ** (-k)
        r = a + (b - a) * x
        rs.append(r)
        ws.append(w * (b - a) * r ** (-1.0 - sigma))
        lv.append(np.full(n, k))
    eps = rmax * 2.0 ** (-depth)
    t, wt = gj01(n, round(beta, 12))
    r = eps * t
    rs.append(r)
    ws.append(wt * eps ** (1.0 + beta) * r ** (-order))
    lv.append(np.full(n, depth))
    return np.concatenate(rs), np.concatenate(ws), np.concatenate(lv)


def _tensor(nodes, weights, dim):
    if dim == 1:
        return nodes[:, None], weights
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    WX, WY = np.meshgrid(weights, weights, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], 1), (WX * WY).ravel()


def _axis_pieces(plo, phi, qlo, qhi, tol):
    zlo, zhi = plo - qhi, phi - qlo
    cand = [zlo, zhi, plo - qlo, phi - qhi]
    if zlo < 0.0 < zhi:
        cand.append(0.0)
    cand = sorted(c for c in cand if zlo - tol <= c <= zhi + tol)
    pts = [cand[0]]
    for c in cand[1:]:
        if c - pts[-1] > tol:
            pts.append(c)
    pts = [0.0 if abs(c) <= tol else c for c in pts]
    return list(zip(pts[:-1], pts[1:]))


def _overlap_points(z, plo, phi, qlo, qhi, nx):
    """Tensor GL points over ``P ∩ (Q + z)`` for each row of ``z``."""
    dim = z.shape[1]
    lo = np.maximum(plo, qlo + z)
    hi = np.minimum(phi, qhi + z)
    ln = np.clip(hi - lo, 0.0, None)
    xi, wx = _tensor(*gl01(nx), dim)
    X = lo[:, None, :] + ln[:, None, :] * xi[None, :, :]
    W = np.prod(ln, axis=1)[:, None] * wx[None, :]
    return X, W


def box_pair_rule(plo, phi, qlo, qhi, sigma: float, order: float, params: QuadParams = DEFAULT):
    """Rule for ``∫_P ∫_Q F(x,y)|x-y|^(-N-σ) dy dx`` over two boxes.

    Returns ``X, Y, W, level`` with ``Σ W F(X,Y)`` approximating the
    integral.  ``level`` is -1 on regular pieces and the radial level index
    on pieces touching the diagonal.
    """
    plo, phi, qlo, qhi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (plo, phi, qlo, qhi))
    dim = plo.size
    scale = max(np.max(phi - plo), np.max(qhi - qlo))
    tol = 1e-12 * scale
    axes = [_axis_pieces(plo[k], phi[k], qlo[k], qhi[k], tol) for k in range(dim)]
    if dim == 1:
        pieces = [(a,) for a in axes[0]]
    else:
        pieces = [(a, b) for a in axes[0] for b in axes[1]]
    Xs, Ys, Ws, Ls = [], [], [], []
    for piece in pieces:
        lo = np.array([a for a, _ in piece])
        hi = np.array([b for _, b in piece])
        singular = all(a == 0.0 or b == 0.0 for a, b in piece)
        if not singular:
            zn, zw = _tensor(*gl01(params.n_regular), dim)
            Z = lo + (hi - lo) * zn
            wz = zw * np.prod(hi - lo) * np.linalg.norm(Z, axis=1) ** (-dim - sigma)
            lev = np.full(Z.shape[0], -1)
        else:
            sgn = np.where(lo == 0.0, 1.0, -1.0)
            ln = hi - lo
            if dim == 1:
                r, wr, lv = radial_rule(ln[0], sigma, order, params.depth, params.n_radial)
                Z = (sgn[0] * r)[:, None]
                wz, lev = wr, lv
            else:
                Zs, wzs, levs = [], [], []
                v, wv = gl01(params.n_angle)
                for j, k in ((0, 1), (1, 0)):
                    c = ln[k] / ln[j]
                    r, wr, lv = radial_rule(ln[j], sigma, order, params.depth, params.n_radial)
                    R, V = np.meshgrid(r, v, indexing="ij")
                    WR, WV = np.meshgrid(wr, wv, indexing="ij")
                    LV = np.repeat(lv[:, None], v.size, 1)
                    z = np.empty(R.shape + (2,))
                    z[..., j] = sgn[j] * R
                    z[..., k] = sgn[k] * R * c * V
                    ang = c * (1.0 + (c * V) ** 2) ** (-(2.0 + sigma) / 2.0)
                    Zs.append(z.reshape(-1, 2))
                    wzs.append((WR * WV * ang).ravel())
                    levs.append(LV.ravel())
                Z, wz, lev = np.concatenate(Zs), np.concatenate(wzs), np.concatenate(levs)
        X, wx = _overlap_points(Z, plo, phi, qlo, qhi, params.n_x)
        Y = X - Z[:, None, :]
        W = wz[:, None] * wx
        nxp = X.shape[1]
        Xs.append(X.reshape(-1, dim))
        Ys.append(Y.reshape(-1, dim))
        Ws.append(W.ravel())
        Ls.append(np.repeat(lev, nxp))
    return np.concatenate(Xs), np.concatenate(Ys), np.concatenate(Ws), np.concatenate(Ls)


# --------------------------------------------------------------------------
# tilings of regions


def _ell_map(P):
    x, y = P[..., 0], P[..., 1]
    ax, ay = np.sqrt(np.clip(1 - y * y / 2, 0, None)), np.sqrt(np.clip(1 - x * x / 2, 0, None))
    X = np.stack([x * ax, y * ay], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        J = ax * ay - (x * y) ** 2 / (4 * ax * ay)
    return X, np.nan_to_num(J)


@dataclass(frozen=True)
class Tiling:
    """Tiles of a region in parameter space and the parameter-to-physical map."""

    lo: np.ndarray
    hi: np.ndarray
    kind: str = "affine"
    center: tuple = ()
    radius: float = 1.0

    @property
    def dim(self) -> int:
        return self.lo.shape[1]

    def map(self, P):
        if self.kind == "affine":
            return P, np.ones(P.shape[:-1])
        X, J = _ell_map(P)
        return np.asarray(self.center) + self.radius * X, self.radius ** 2 * J

    def sizes(self):
        return np.max(self.hi - self.lo, axis=1)


def _axis_breaks(lo, hi, grid: Optional[GridFunction], n_tiles: int):
    if grid is not None:
        ax = grid.axis()
        tol = 1e-9 * grid.h
        inner = ax[(ax > lo + tol) & (ax < hi - tol)]
        b = np.concatenate([[lo], inner, [hi]])
        # merge slivers into their neighbour
        keep = np.concatenate([[True], np.diff(b) > 1e-6 * grid.h])
        b = b[keep]
        b[-1] = hi
        return b
    return np.linspace(lo, hi, n_tiles + 1)


def tiling_for(region: Region, grid: Optional[GridFunction] = None, n_tiles: int = 4) -> Tiling:
    """Tiles of ``region``: aligned to the grid cells when a grid is given."""
    dim = region.dim
    if region.is_interval:
        breaks = [_axis_breaks(region.lo[k], region.hi[k], grid, n_tiles) for k in range(dim)]
        if dim == 1:
            b = breaks[0]
            return Tiling(b[:-1, None], b[1:, None])
        bx, by = breaks
        LX, LY = np.meshgrid(bx[:-1], by[:-1], indexing="ij")
        HX, HY = np.meshgrid(bx[1:], by[1:], indexing="ij")
        return Tiling(np.stack([LX.ravel(), LY.ravel()], 1), np.stack([HX.ravel(), HY.ravel()], 1))
    nt = n_tiles if grid is None else int(min(24, max(4, math.ceil(2 * region.radius / grid.h))))
    b = np.linspace(-1.0, 1.0, nt + 1)
    LX, LY = np.meshgrid(b[:-1], b[:-1], indexing="ij")
    HX, HY = np.meshgrid(b[1:], b[1:], indexing="ij")
    return Tiling(np.stack([LX.ravel(), LY.ravel()], 1), np.stack([HX.ravel(), HY.ravel()], 1),
                  "disk", region.center, region.radius)


def volume_rule(region: Region, grid: Optional[GridFunction] = None, n: int = 3, n_tiles: int = 8):
    """Points and weights for ``∫_region``; exact for multilinear functions on aligned tiles."""
    tl = tiling_for(region, grid, n_tiles)
    xi, w = _tensor(*gl01(n), tl.dim)
    ln = tl.hi - tl.lo
    P = tl.lo[:, None, :] + ln[:, None, :] * xi[None]
    W = np.prod(ln, axis=1)[:, None] * w[None]
    X, J = tl.map(P)
    return X.reshape(-1, tl.dim), (W * J).ravel()


# --------------------------------------------------------------------------
# pair rules over regions


@dataclass(frozen=True)
class PairRule:
    """Quadrature for ``∬_{A×B} F(x,y)|x-y|^(-N-σ)`` split into far and near parts.

    Far part: tensor points ``xa`` (weights ``wa``) against ``xb`` (``wb``) with
    the kernel evaluated pointwise; tile pairs flagged in ``near_mask`` are
    excluded from it and handled by the explicit list ``near_x, near_y, near_w``.
    """

    sigma: float
    order: float
    depth: int
    xa: np.ndarray
    wa: np.ndarray
    ta: np.ndarray
    xb: np.ndarray
    wb: np.ndarray
    tb: np.ndarray
    near_mask: np.ndarray
    near_x: np.ndarray
    near_y: np.ndarray
    near_w: np.ndarray
    near_level: np.ndarray
    same: bool = False

    @property
    def dim(self) -> int:
        return self.xa.shape[1]

    @property
    def weights(self):
        return self.near_w

    def far_kernel(self) -> np.ndarray:
        d = np.linalg.norm(self.xa[:, None, :] - self.xb[None, :, :], axis=-1)
        with np.errstate(divide="ignore"):
            K = self.wa[:, None] * self.wb[None, :] * d ** (-self.dim - self.sigma)
        K[self.near_mask[self.ta[:, None], self.tb[None, :]]] = 0.0
        return K

    def far_blocks(self):
        return self.xa[:, None, :], self.xb[None, :, :]

    def integrate(self, F: Callable, summation: str = "pairwise", return_levels: bool = False):
        xa, xb = self.far_blocks()
        far = np.asarray(F(xa, xb), dtype=float) * self.far_kernel()
        nv = np.asarray(F(self.near_x, self.near_y), dtype=float) * self.near_w
        val = total(np.concatenate([far.ravel(), nv]), summation)
        if return_levels:
            lev = [np.sum(np.abs(nv[self.near_level == k])) for k in range(self.depth + 1)]
            return val, np.array(lev)
        return val


def _far_points(tl: Tiling, n: int):
    xi, w = _tensor(*gl01(n), tl.dim)
    ln = tl.hi - tl.lo
    P = tl.lo[:, None, :] + ln[:, None, :] * xi[None]
    W = np.prod(ln, axis=1)[:, None] * w[None]
    X, J = tl.map(P)
    T = np.repeat(np.arange(tl.lo.shape[0]), xi.shape[0])
    return X.reshape(-1, tl.dim), (W * J).ravel(), T


def tile_distances(A: Tiling, B: Tiling):
    gap = np.maximum(0.0, np.maximum(B.lo[None, :, :] - A.hi[:, None, :], A.lo[:, None, :] - B.hi[None, :, :]))
    return np.linalg.norm(gap, axis=-1)


def near_tile_mask(A: Tiling, B: Tiling, factor: float):
    d = tile_distances(A, B)
    size = np.maximum(A.sizes()[:, None], B.sizes()[None, :])
    return d < factor * size


def near_pair_list(A: Tiling, B: Tiling, mask, sigma, order, params):
    """Concatenated singular rules for all flagged tile pairs, mapped to physical space."""
    ii, jj = np.nonzero(mask)
    cache = {}
    Xs, Ys, Ws, Ls = [], [], [], []
    for i, j in zip(ii, jj):
        plo, phi, qlo, qhi = A.lo[i], A.hi[i], B.lo[j], B.hi[j]
        key = (tuple(np.round(qlo - plo, 12)), tuple(np.round(phi - plo, 12)), tuple(np.round(qhi - plo, 12)))
        if key not in cache:
            cache[key] = box_pair_rule(np.zeros_like(plo), phi - plo, qlo - plo, qhi - plo, sigma, order, params)
        X, Y, W, L = cache[key]
        Xs.append(X + plo)
        Ys.append(Y + plo)
        Ws.append(W)
        Ls.append(L)
    dim = A.dim
    if not Xs:
        e = np.zeros((0, dim))
        return e, e.copy(), np.zeros(0), np.zeros(0, dtype=int)
    X, Y, W, L = np.concatenate(Xs), np.concatenate(Ys), np.concatenate(Ws), np.concatenate(Ls)
    if A.kind != "affine" or B.kind != "affine":
        PX, JX = A.map(X)
        PY, JY = B.map(Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = (np.linalg.norm(PX - PY, axis=1) / np.linalg.norm(X - Y, axis=1)) ** (-dim - sigma)
        W = W * JX * JY * np.nan_to_num(corr)
        X, Y = PX, PY
    return X, Y, W, L


def build_pair_rule(A: Tiling, B: Optional[Tiling], sigma: float, order: float,
                    params: QuadParams = DEFAULT) -> PairRule:
    same = B is None
    B = A if same else B
    if A.kind != "affine" and not same and -A.dim - sigma < 0:
        dist = tile_distances(A, B)
        if np.any(dist == 0):
            raise NotImplementedError("singular pair rules between distinct curved regions")
    xa, wa, ta = _far_points(A, params.n_far)
    xb, wb, tb = (xa, wa, ta) if same else _far_points(B, params.n_far)
    if sigma <= -A.dim:
        mask = np.zeros((A.lo.shape[0], B.lo.shape[0]), dtype=bool)
    else:
        mask = near_tile_mask(A, B, params.near_factor)
    nx, ny, nw, nl = near_pair_list(A, B, mask, sigma, order, params)
    return PairRule(sigma, order, params.depth, xa, wa, ta, xb, wb, tb, mask, nx, ny, nw, nl, same)


@lru_cache(maxsize=64)
def _cached_region_rule(region: Region, grid_key, sigma: float, order: float, params: QuadParams,
                        n_tiles: int):
    grid = None
    if grid_key is not None:
        L, n, dim = grid_key
        grid = GridFunction(L, n, np.zeros((n + 1,) * dim))
    return build_pair_rule(tiling_for(region, grid, n_tiles), None, sigma, order, params)


def region_pair_rule(region: Region, sigma: float, order: float, grid: Optional[GridFunction] = None,
                     params: Optional[QuadParams] = None, n_tiles: int = 4) -> PairRule:
    """Cached pair rule over ``region × region``, aligned to ``grid`` when given."""
    params = params or default_params(region.dim)
    key = None if grid is None else (grid.halfwidth, grid.n, grid.dim)
    return _cached_region_rule(region, key, float(sigma), float(order), params, n_tiles)


def _probe_order(F, domA: Region, domB: Region):
    rng = np.random.default_rng(12345)
    dim = domA.dim
    pts = domA.c + domA.radius * rng.uniform(-0.8, 0.8, (16, dim))
    pts = pts[domB.contains(pts)]
    if pts.shape[0] == 0:
        return None
    scale = min(domA.radius, domB.radius)
    r1 = 1e-4 * scale
    e = rng.normal(size=(pts.shape[0], dim))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    f1 = np.abs(np.asarray(F(pts, pts + r1 * e), dtype=float))
    f2 = np.abs(np.asarray(F(pts, pts + 0.5 * r1 * e), dtype=float))
    ok = (f1 > 0) & (f2 > 0)
    if not ok.any():
        return None
    nu = float(np.min(np.log2(f1[ok] / f2[ok])))
    snap = round(2 * nu) / 2
    return snap if abs(nu - snap) < 0.02 else nu


def _gap(A: Region, B: Region) -> float:
    """Distance between two regions (nonpositive when they touch or overlap)."""
    d = np.abs(A.c - B.c)
    if A.kind == "box" or A.is_interval:
        return float(np.max(d - A.radius - B.radius))
    return float(np.linalg.norm(d) - A.radius - B.radius)


def pair_integral(F: Callable, domA: Region, domB: Region, sigma: float, order: Optional[float] = None,
                  params: Optional[QuadParams] = None, n_tiles: int = 4,
                  grid: Optional[GridFunction] = None) -> float:
    """``∬_{domA×domB} F(x,y)|x-y|^(-N-σ) dx dy``.

    ``F`` receives broadcastable point arrays of shape ``(..., N)``.  When
    ``order`` is omitted the vanishing order of ``F`` on the diagonal is
    probed numerically.  A non-integrable combination raises
    :class:`SingularityError`, either up front or because the contributions
    of the innermost dyadic levels fail to decay.
    """
    params = params or default_params(domA.dim)
    if order is None:
        order = _probe_order(F, domA, domB)
        if order is None:
            order = max(sigma + 1.0, 2.0)
    if sigma > -domA.dim and order - 1.0 - sigma <= -1.0 and _gap(domA, domB) <= 0:
        raise SingularityError(f"F vanishes to order {order:g} on the diagonal; kernel order {sigma:g} "
                               "makes the integral diverge")
    same = domA == domB
    tA = tiling_for(domA, grid, n_tiles)
    tB = None if same else tiling_for(domB, grid, n_tiles)
    rule = build_pair_rule(tA, tB, sigma, order, params)
    val, lev = rule.integrate(F, params.summation, return_levels=True)
    d = params.depth
    if d >= 3 and lev[d - 2] > 0 and lev[d - 1] >= 0.999 * lev[d - 2] and lev[d - 1] > 1e-14 * abs(val):
        raise SingularityError("near-diagonal contributions do not decay under subdivision")
    return val


# --------------------------------------------------------------------------
# exterior and ray rules


def _tau_rule(n: int, sigma: float, growth: float):
    beta = sigma - 1.0 - growth
    if beta <= -1.0:
        raise PreconditionError(f"far-field growth {growth:g} is not dominated by kernel order {sigma:g}")
    return gj01(n, round(beta, 12))


def _directions(dim: int, n_theta: int, pieces: int):
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    x, w = gl01(n_theta)
    edges = np.linspace(0.0, 2 * np.pi, pieces + 1)
    th = (edges[:-1, None] + np.diff(edges)[:, None] * x[None]).ravel()
    wt = (np.diff(edges)[:, None] * w[None]).ravel()
    return np.stack([np.cos(th), np.sin(th)], 1), wt


def _box_exit(x, e, L):
    """Distance from ``x`` along unit directions ``e`` to the boundary of ``[-L,L]^N``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(e > 0, (L - x) / e, np.where(e < 0, (-L - x) / e, np.inf))
    return np.min(t, axis=-1)


def box_exterior_rule(points, L: float, sigma: float, growth: float = 0.0, params: QuadParams = DEFAULT):
    """Rules for ``∫_{y ∉ [-L,L]^N} G(y)|x-y|^(-N-σ) dy`` at each point ``x``.

    Returns ``Y`` of shape ``(M, K, N)`` and ``W`` of shape ``(M, K)``.
    """
    P = np.asarray(points, dtype=float)
    M, dim = P.shape
    tau, wt = _tau_rule(params.n_tau, sigma, growth)
    if dim == 1:
        e = np.array([1.0, -1.0])
        rho = np.stack([L - P[:, 0], L + P[:, 0]], 1)                  # (M,2)
        r = rho[:, :, None] / tau[None, None, :]
        Y = P[:, None, None, 0] + e[None, :, None] * r
        W = rho[:, :, None] ** (-sigma) * (wt * tau ** growth)[None, None, :]
        return Y.reshape(M, -1, 1), W.reshape(M, -1)
    # 2D: angular pieces split at the four corner directions of each point
    xg, wg = gl01(params.n_theta)
    corners = np.array([[L, L], [-L, L], [-L, -L], [L, -L]])
    ang = np.sort(np.mod(np.arctan2(corners[None, :, 1] - P[:, None, 1], corners[None, :, 0] - P[:, None, 0]),
                         2 * np.pi), axis=1)
    edges = np.concatenate([ang, ang[:, :1] + 2 * np.pi], axis=1)
    span = np.diff(edges, axis=1)                                       # (M,4)
    th = edges[:, :-1, None] + span[:, :, None] * xg[None, None, :]
    wth = span[:, :, None] * wg[None, None, :]
    th, wth = th.reshape(M, -1), wth.reshape(M, -1)
    e = np.stack([np.cos(th), np.sin(th)], -1)                          # (M,A,2)
    rho = _box_exit(P[:, None, :], e, L)                                # (M,A)
    r = rho[:, :, None] / tau[None, None, :]
    Y = P[:, None, None, :] + e[:, :, None, :] * r[..., None]
    W = (wth * rho ** (-sigma))[:, :, None] * (wt * tau ** growth)[None, None, :]
    return Y.reshape(M, -1, 2), W.reshape(M, -1)


def ray_rule(origin, start, sigma: float, growth: float, L: float, h: Optional[float] = None,
             params: QuadParams = DEFAULT, ball_center=None):
    """Rule for ``∫_{|y-origin| > start} G(y)|origin-y|^(-N-σ) dy``.

    When ``ball_center`` is given the excluded set is the ball of radius
    ``start`` about ``ball_center`` (which must contain ``origin``).  Inside
    the box ``[-L,L]^N`` the rays are cut into pieces of length at most ``h``
    (aligned to grid nodes in 1D); beyond the box a Gauss-Jacobi rule in
    ``τ = ρ/r`` absorbs the kernel and the declared growth.
    """
    x0 = np.atleast_1d(np.asarray(origin, dtype=float))
    dim = x0.size
    dirs, dw = _directions(dim, params.n_theta, 32)
    if callable(start):
        r0 = np.asarray(start(dirs), dtype=float)
    elif ball_center is None:
        r0 = np.full(dirs.shape[0], float(start))
    else:
        d = x0 - np.atleast_1d(np.asarray(ball_center, dtype=float))
        de = dirs @ d
        r0 = -de + np.sqrt(np.clip(de ** 2 - d @ d + start ** 2, 0.0, None))
    rb = _box_exit(x0[None, :], dirs, L)
    xg, wg = gl01(params.n_ray)
    tau, wt = _tau_rule(params.n_tau, sigma, growth)
    Ys, Ws = [], []
    for k in range(dirs.shape[0]):
        e, a, b = dirs[k], r0[k], rb[k]
        if a < b:
            step = h if h else (b - a) / 8
            if dim == 1 and h:
                # breakpoints at grid nodes along the ray
                s = x0[0] + e[0] * np.array([a, b])
                lo, hi = min(s), max(s)
                nodes = -L + h * np.arange(int(round(2 * L / h)) + 1)
                nodes = nodes[(nodes > lo + 1e-12) & (nodes < hi - 1e-12)]
                br = np.sort(np.concatenate([[a, b], np.abs(nodes - x0[0])]))
            else:
                m = max(1, int(math.ceil((b - a) / step)))
                br = np.linspace(a, b, m + 1)
            ln = np.diff(br)
            r = (br[:-1, None] + ln[:, None] * xg[None]).ravel()
            w = (ln[:, None] * wg[None]).ravel() * r ** (-1.0 - sigma)
            Ys.append(x0 + r[:, None] * e)
            Ws.append(dw[k] * w)
        rho = max(a, b)
        r = rho / tau
        Ys.append(x0 + r[:, None] * e)
        Ws.append(dw[k] * rho ** (-sigma) * wt * tau ** growth)
    return np.concatenate(Ys), np.concatenate(Ws)


SPHERE = {1: 2.0, 2: 2.0 * np.pi}


def exterior_radial_integral(x0, R: float, sigma: float, kappa: float = 0.0, m: float = 2.0) -> float:
    """``∫_{|y-x0|>R} |y|^(κ(m-1)) |x0-y|^(-N-σ) dy``.

    Closed form when ``x0 = 0``; adaptive radial quadrature otherwise.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = x0.size
    g = kappa * (m - 1.0)
    if not (R > 0):
        raise PreconditionError("R must be positive")
    if g >= sigma:
        raise PreconditionError(f"growth kappa*(m-1)={g:g} >= sigma={sigma:g}: the tail integral diverges")
    if np.all(x0 == 0):
        return SPHERE[dim] * R ** (g - sigma) / (sigma - g)
    if dim == 1:
        out = 0.0
        for e in (1.0, -1.0):
            f = lambda r: abs(x0[0] + e * r) ** g * r ** (-1.0 - sigma)
            kink = -e * x0[0]
            pts = [kink] if kink > R else None
            if pts:
                out += sint.quad(f, R, kink, limit=200)[0] + sint.quad(f, kink, np.inf, limit=200)[0]
            else:
                out += sint.quad(f, R, np.inf, limit=200)[0]
        return out

    def inner(th):
        e = np.array([np.cos(th), np.sin(th)])
        f = lambda r: np.linalg.norm(x0 + r * e) ** g * r ** (-1.0 - sigma)
        return sint.quad(f, R, np.inf, limit=200)[0]

    return sint.quad(inner, 0.0, 2 * np.pi, limit=200)[0]


# --------------------------------------------------------------------------
# principal value evaluation


def _symmetric_local(u0, u1, u2, a_fn, ell, sigma, zr, wr):
    """``∫_0^h ([u0-u(x+z)]^(l-1)a + [u0-u(x-z)]^(l-1)a') z^(-1-σ) dz`` with a quadratic model of u."""
    up = u0 + u1 * zr + 0.5 * u2 * zr ** 2
    um = u0 - u1 * zr + 0.5 * u2 * zr ** 2
    ap, am = a_fn(up, zr), a_fn(um, -zr)
    return np.sum(wr * (ap * bracket_power(u0 - up, ell) + am * bracket_power(u0 - um, ell)))


def pv_point_eval(u: GridFunction, kernel: KernelPair, spec: ProblemSpec, x,
                  params: QuadParams = DEFAULT) -> float:
    """``ℒu(x)`` at a grid node by symmetric pairing of ``z`` and ``-z``.

    Inside ``|z| < h`` the interpolant is replaced by the quadratic model
    built from nodal centred differences, which is the natural smooth
    surrogate at a node where the piecewise-linear interpolant has a kink.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dim = u.dim
    if x.size != dim:
        raise DomainError("point dimension mismatch")
    L, h = u.halfwidth, u.h
    if np.any(np.abs(x) >= L - 0.5 * h):
        raise DomainError(f"point {x} is on or outside the truncation box")
    u0 = float(u.evaluate(x[None])[0])
    terms = [(spec.p, spec.p * spec.s, None)]
    if kernel.has_b:
        terms.append((spec.q, spec.q * spec.t, "b"))
    total_val = 0.0
    dirs, dw = _directions(dim, params.n_theta, 16)
    if dim == 2:
        half = (dirs[:, 1] > 0) | ((dirs[:, 1] == 0) & (dirs[:, 0] > 0))
        dirs, dw = dirs[half], dw[half]
    else:
        dirs, dw = dirs[:1], dw[:1]
    for ell, sigma, which in terms:
        def coef(y, uy):
            if which is None:
                return kernel.a_values(x, y, u0, uy)
            return kernel.b_values(x, y)

        acc = 0.0
        # local symmetric part, |z| < h
        zr, wr, _ = radial_rule(h, sigma, 2.0 if ell == 2.0 else ell, params.depth, params.n_radial)
        for e, w_e in zip(dirs, dw):
            up_, um_ = u.evaluate((x + h * e)[None])[0], u.evaluate((x - h * e)[None])[0]
            u1 = (up_ - um_) / (2 * h)
            u2 = (up_ - 2 * u0 + um_) / h ** 2
            afn = lambda uy, z: coef(x[None] + z[:, None] * e[None], uy)
            acc += w_e * _symmetric_local(u0, u1, u2, afn, ell, sigma, zr, wr)
        # remaining rays, each side separately
        alld, allw = _directions(dim, params.n_theta, 16)
        xg, wg = gl01(params.n_ray + 1)
        tau, wt = _tau_rule(params.n_tau, sigma, 0.0)
        for e, w_e in zip(alld, allw):
            b = float(_box_exit(x[None], e[None], L)[0])
            m = max(1, int(round((b - h) / h)))
            br = np.linspace(h, b, m + 1)
            ln = np.diff(br)
            r = (br[:-1, None] + ln[:, None] * xg[None]).ravel()
            w = (ln[:, None] * wg[None]).ravel() * r ** (-1.0 - sigma)
            rr = b / tau
            r = np.concatenate([r, rr])
            w = np.concatenate([w, b ** (-sigma) * wt])
            y = x[None] + r[:, None] * e[None]
            uy = u.evaluate(y)
            acc += w_e * np.sum(w * coef(y, uy) * bracket_power(u0 - uy, ell))
        total_val += 2.0 * acc
    return float(total_val)
