"""Discrete weak form of the double-phase operator.

Unknowns are nodal values at grid nodes strictly inside the domain; all other
nodes carry the exterior datum.  Test functions are nodal hats.  Double
integrals over box × box are split into a dense far part (tensor Gauss points
per cell, kernel evaluated pointwise) and a sparse list of singular rules for
nearby cell pairs; pairs with one point beyond the box use per-point ray rules
against the exterior closure.  The frozen-coefficient problem is the gradient
of a convex energy, which the solver exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .functionals import Field, as_field
from .model import (
    ExteriorData, GridFunction, KernelPair, ProblemSpec, Region, bracket_power,
)
from .quadrature import (
    QuadParams, Tiling, _far_points, box_exterior_rule, near_pair_list, near_tile_mask, tiling_for, total,
)


class ConstraintError(ValueError):
    """A function violates the exterior constraint ``u = g`` outside the domain."""


class ModeError(RuntimeError):
    """An operation needs a frozen coefficient table but the assembly is live (or vice versa)."""


SOLVER_PARAMS_1D = QuadParams(n_far=2, near_factor=1.5, n_x=3, n_radial=4, depth=4, n_tau=16)
SOLVER_PARAMS_2D = QuadParams(depth=3, n_radial=3, n_angle=3, n_x=2, n_regular=3, n_far=2, n_tau=10, n_theta=4)


@dataclass(frozen=True)
class Phase:
    """Quadrature data of one kernel ``|x-y|^(-N-σ)`` with exponent ``ell``."""

    ell: float
    sigma: float
    K: np.ndarray              # (M, M) far weights, zero on near/inactive pairs
    near_x: np.ndarray
    near_y: np.ndarray
    near_w: np.ndarray
    Px: sp.csr_matrix          # near points -> nodes
    Py: sp.csr_matrix
    ext_y: np.ndarray          # (Ma, Ke, N)
    ext_w: np.ndarray          # (Ma, Ke)
    ext_g: np.ndarray          # (Ma, Ke)


@dataclass(frozen=True)
class Frozen:
    """Coefficient tables at the quadrature pairs of the p-phase."""

    far: np.ndarray
    near: np.ndarray
    ext: np.ndarray

    def max_diff(self, other: "Frozen") -> float:
        return float(max(np.max(np.abs(self.far - other.far), initial=0.0),
                         np.max(np.abs(self.near - other.near), initial=0.0),
                         np.max(np.abs(self.ext - other.ext), initial=0.0)))

    def bounds(self):
        parts = [a.ravel() for a in (self.far, self.near, self.ext) if a.size]
        v = np.concatenate(parts)
        return float(v.min()), float(v.max())


@dataclass(frozen=True)
class WeakFormAssembly:
    spec: ProblemSpec
    kernel: KernelPair
    domain: Region
    template: GridFunction
    params: QuadParams
    free: np.ndarray
    fixed_values: np.ndarray
    xf: np.ndarray
    wf: np.ndarray
    P: sp.csr_matrix
    act: np.ndarray            # indices of far points in active cells
    phase_p: Phase
    phase_q: Optional[Phase]
    bq_near: Optional[np.ndarray] = None
    bq_ext: Optional[np.ndarray] = None
    frozen: Optional[Frozen] = None
    KA: Optional[np.ndarray] = None

    # ------------------------------------------------------------------ info
    @property
    def collar(self) -> Region:
        return self.template.box

    @property
    def exterior(self) -> ExteriorData:
        return self.template.exterior

    @property
    def n_nodes(self) -> int:
        return self.fixed_values.size

    @property
    def is_frozen(self) -> bool:
        return self.frozen is not None

    def nodes(self) -> np.ndarray:
        return self.template.flat_nodes()

    def full(self, ufree) -> np.ndarray:
        un = self.fixed_values.copy()
        un[self.free] = ufree
        return un

    def to_grid(self, un) -> GridFunction:
        return self.template.with_values(np.asarray(un).reshape(self.template.values.shape))

    def nodal(self, u: GridFunction, check: bool = True) -> np.ndarray:
        """Flattened nodal values of ``u`` after checking the exterior constraint."""
        if (u.halfwidth, u.n, u.dim) != (self.template.halfwidth, self.template.n, self.template.dim):
            raise ConstraintError("grid function lives on a different grid")
        un = np.asarray(u.values, dtype=float).ravel().copy()
        if check:
            mask = np.ones(un.size, bool)
            mask[self.free] = False
            if not np.allclose(un[mask], self.fixed_values[mask], rtol=0, atol=1e-12):
                raise ConstraintError("u differs from the exterior datum at a node outside the domain")
            y = self.phase_p.ext_y.reshape(-1, self.template.dim)[:: max(1, self.phase_p.ext_y.size // 50)]
            if y.size and not np.allclose(u.exterior(y), self.exterior(y), rtol=0, atol=1e-12):
                raise ConstraintError("exterior closure of u differs from the datum")
        return un

    def load(self, f: Field) -> np.ndarray:
        """Nodal load ``∫ f φ_i`` for every node."""
        fv = as_field(f)(self.xf)
        return self.P.T @ (self.wf * fv)

    # ------------------------------------------------------------ coefficients
    def live_tables(self, un) -> Frozen:
        k, ph = self.kernel, self.phase_p
        v = self.P @ un
        far = k.a_values(self.xf[:, None, :], self.xf[None, :, :], v[:, None], v[None, :])
        near = k.a_values(ph.near_x, ph.near_y, ph.Px @ un, ph.Py @ un)
        va = v[self.act]
        ext = k.a_values(self.xf[self.act][:, None, :], ph.ext_y, va[:, None], ph.ext_g)
        return Frozen(np.array(far), np.array(near), np.array(ext))

    def tables_from(self, A: Callable) -> Frozen:
        """Tables of a coefficient ``A(x, y)`` given as a function of points."""
        ph = self.phase_p
        far = A(self.xf[:, None, :], self.xf[None, :, :]) * np.ones((self.xf.shape[0],) * 2)
        near = A(ph.near_x, ph.near_y) * np.ones(ph.near_w.shape)
        ext = A(self.xf[self.act][:, None, :], ph.ext_y) * np.ones(ph.ext_w.shape)
        return Frozen(np.asarray(far, float), np.asarray(near, float), np.asarray(ext, float))

    def freeze(self, tables: Frozen, check_bounds: bool = True) -> "WeakFormAssembly":
        if check_bounds:
            lo, hi = tables.bounds()
            lam = self.spec.lam
            if lo < 1 / lam - 1e-12 or hi > lam + 1e-12:
                raise ValueError(f"frozen table range [{lo:g}, {hi:g}] violates [1/Lambda, Lambda]")
        return replace(self, frozen=tables, KA=self.phase_p.K * tables.far)

    def freeze_at(self, u) -> "WeakFormAssembly":
        un = self.nodal(u) if isinstance(u, GridFunction) else np.asarray(u, float)
        return self.freeze(self.live_tables(un))

    def tables(self, un) -> Frozen:
        return self.frozen if self.frozen is not None else self.live_tables(un)

    # -------------------------------------------------------------- core sums
    def _phase_terms(self, un, ph: Phase, KA, near_c, ext_c, want):
        """Energy, nodal gradient and Hessian pieces of one phase."""
        ell = ph.ell
        v = self.P @ un
        D = v[:, None] - v[None, :]
        out = {}
        absD = np.abs(D)
        if "E" in want:
            out["E"] = total(KA * absD ** ell) / ell
        if "g" in want or "H" in want:
            pw = absD ** (ell - 2.0) if ell != 2.0 else None
            Cg = KA * D if pw is None else KA * pw * D
            gv = 2.0 * Cg.sum(axis=1)
        Dn = ph.Px @ un - ph.Py @ un
        cn = ph.near_w * near_c
        va = v[self.act]
        De = va[:, None] - ph.ext_g
        ce = ph.ext_w * ext_c
        if "E" in want:
            out["E"] += total(cn * np.abs(Dn) ** ell) / ell + 2.0 * total(ce * np.abs(De) ** ell) / ell
        if "g" in want:
            gn = cn * bracket_power(Dn, ell)
            ge = 2.0 * np.sum(ce * bracket_power(De, ell), axis=1)
            gv = gv.copy()
            gv[self.act] += ge
            out["g"] = self.P.T @ gv + ph.Px.T @ gn - ph.Py.T @ gn
        if "H" in want:
            c = (ell - 1.0)
            C = KA if ell == 2.0 else c * KA * absD ** (ell - 2.0)
            out["C"] = C
            dn = cn if ell == 2.0 else c * cn * np.abs(Dn) ** (ell - 2.0)
            de = 2.0 * np.sum(ce if ell == 2.0 else c * ce * np.abs(De) ** (ell - 2.0), axis=1)
            out["dn"], out["de"] = dn, de
        return out

    def _phases(self, un):
        tab = self.tables(un)
        KA = self.KA if (self.frozen is not None and self.KA is not None) else self.phase_p.K * tab.far
        res = [(self.phase_p, KA, tab.near, tab.ext)]
        if self.phase_q is not None:
            res.append((self.phase_q, self.phase_q.K, self.bq_near, self.bq_ext))
        return res

    def energy_vec(self, un, load) -> float:
        E = 0.0
        for ph, KA, nc, ec in self._phases(un):
            E += self._phase_terms(un, ph, KA, nc, ec, ("E",))["E"]
        return E - float(load @ un)

    def gradient_vec(self, un, load) -> np.ndarray:
        g = -np.asarray(load, dtype=float).copy()
        for ph, KA, nc, ec in self._phases(un):
            g += self._phase_terms(un, ph, KA, nc, ec, ("g",))["g"]
        return g

    def residual_vec(self, un, load) -> np.ndarray:
        return self.gradient_vec(un, load)[self.free]

    def hessian_free(self, un) -> np.ndarray:
        """Hessian of the frozen energy restricted to free nodes (dense)."""
        Pf = self.P[:, self.free].tocsc()
        nf = self.free.size
        H = np.zeros((nf, nf))
        for ph, KA, nc, ec in self._phases(un):
            t = self._phase_terms(un, ph, KA, nc, ec, ("H",))
            C = t["C"]
            d = 2.0 * C.sum(axis=1)
            d[self.act] += t["de"]
            H += (Pf.T @ Pf.multiply(d[:, None]).tocsc()).toarray()
            H -= 2.0 * np.asarray(Pf.T @ np.asarray(C @ Pf))
            G = (ph.Px - ph.Py)[:, self.free].tocsc()
            H += (G.T @ G.multiply(t["dn"][:, None]).tocsc()).toarray()
        return 0.5 * (H + H.T)

    def pair_values(self, un):
        return self.P @ un


def _scatter(idx, vals, n):
    out = np.zeros(n)
    out[idx] = vals
    return out


# --------------------------------------------------------------------------
# construction


def _phase(tl: Tiling, grid: GridFunction, ell: float, sigma: float, xf, act_tiles, act_pts, params: QuadParams,
           g: ExteriorData) -> Phase:
    mask = near_tile_mask(tl, tl, params.near_factor)
    keep = act_tiles[:, None] | act_tiles[None, :]
    nmask = mask & keep
    nx, ny, nw, _ = near_pair_list(tl, tl, nmask, sigma, ell, params)
    Px, Py = grid.interp_matrix(nx), grid.interp_matrix(ny)
    dim = grid.dim
    d = np.linalg.norm(xf[:, None, :] - xf[None, :, :], axis=-1)
    ntile = xf.shape[0] // tl.lo.shape[0]
    tid = np.repeat(np.arange(tl.lo.shape[0]), ntile)
    _, wf, _ = _far_points(tl, params.n_far)
    with np.errstate(divide="ignore"):
        K = wf[:, None] * wf[None, :] * d ** (-dim - sigma)
    drop = mask[tid[:, None], tid[None, :]] | ~keep[tid[:, None], tid[None, :]]
    K[drop] = 0.0
    del d, drop
    Ye, We = box_exterior_rule(xf[act_pts], grid.halfwidth, sigma, 0.0, params)
    We = We * wf[act_pts][:, None]
    Ge = g(Ye)
    return Phase(ell, sigma, K, nx, ny, nw, Px, Py, Ye, We, Ge)


def build_assembly(spec: ProblemSpec, kernel: KernelPair, domain: Region, template: GridFunction,
                   params: Optional[QuadParams] = None) -> WeakFormAssembly:
    """Precompute quadrature for the weak form on ``template``'s grid.

    ``template`` supplies the grid and the exterior closure ``g``; its nodal
    values are ignored (nodes outside the domain take ``g``).
    """
    if template.dim != spec.dim or domain.dim != spec.dim:
        raise ValueError("dimension mismatch between spec, domain and grid")
    if not domain.inside(template.box):
        raise ValueError("domain must lie inside the truncation box")
    params = params or (SOLVER_PARAMS_1D if spec.dim == 1 else SOLVER_PARAMS_2D)
    g = template.exterior
    if g.growth > 0 and not g.tail_finite(spec):
        raise ValueError("declared far-field growth of g is incompatible with finite tails")
    nodes = template.flat_nodes()
    free = np.nonzero(domain.contains(nodes, closed=False))[0]
    if free.size == 0:
        raise ValueError("no grid node lies strictly inside the domain")
    fixed = np.asarray(g(nodes), dtype=float)
    fixed[free] = 0.0
    tl = tiling_for(template.box, template)
    n, dim = template.n, template.dim
    isfree = np.zeros(nodes.shape[0], bool)
    isfree[free] = True
    F = isfree.reshape((n + 1,) * dim)
    if dim == 1:
        act_tiles = F[:-1] | F[1:]
    else:
        act_tiles = (F[:-1, :-1] | F[1:, :-1] | F[:-1, 1:] | F[1:, 1:]).ravel()
    xf, wf, tid = _far_points(tl, params.n_far)
    act = np.nonzero(act_tiles[tid])[0]
    P = template.interp_matrix(xf)
    php = _phase(tl, template, spec.p, spec.p * spec.s, xf, act_tiles, act, params, g)
    phq, bn, be = None, None, None
    if kernel.has_b:
        phq = _phase(tl, template, spec.q, spec.q * spec.t, xf, act_tiles, act, params, g)
        B = kernel.b_values(xf[:, None, :], xf[None, :, :])
        phq = replace(phq, K=phq.K * B)
        bn = kernel.b_values(phq.near_x, phq.near_y) * np.ones(phq.near_w.shape)
        be = kernel.b_values(xf[act][:, None, :], phq.ext_y) * np.ones(phq.ext_w.shape)
    return WeakFormAssembly(spec, kernel, domain, template, params, free, fixed, xf, wf, P, act, php, phq, bn, be)


# --------------------------------------------------------------------------
# public operations


def residual(u: GridFunction, f: Field, asm: WeakFormAssembly) -> np.ndarray:
    """Weak-form residual tested against the hats of the free nodes."""
    un = asm.nodal(u)
    return asm.residual_vec(un, asm.load(f))


def residual_split(u: GridFunction, f: Field, asm: WeakFormAssembly) -> dict:
    """Residual pieces: interior pairs, exterior pairs and the load, per free node."""
    un = asm.nodal(u)
    tab = asm.tables(un)
    inner = np.zeros(asm.n_nodes)
    outer = np.zeros(asm.n_nodes)
    phases = [(asm.phase_p, tab.far, tab.near, tab.ext)]
    if asm.phase_q is not None:
        phases.append((asm.phase_q, None, asm.bq_near, asm.bq_ext))
    v = asm.P @ un
    for ph, far, nc, ec in phases:
        KA = ph.K if far is None else ph.K * far
        D = v[:, None] - v[None, :]
        gv = 2.0 * np.sum(KA * bracket_power(D, ph.ell), axis=1)
        Dn = ph.Px @ un - ph.Py @ un
        gn = ph.near_w * nc * bracket_power(Dn, ph.ell)
        inner += asm.P.T @ gv + ph.Px.T @ gn - ph.Py.T @ gn
        De = v[asm.act][:, None] - ph.ext_g
        ge = 2.0 * np.sum(ph.ext_w * ec * bracket_power(De, ph.ell), axis=1)
        outer += asm.P.T @ _scatter(asm.act, ge, v.size)
    ld = asm.load(f)
    return {"interior": inner[asm.free], "exterior": outer[asm.free], "load": ld[asm.free]}


def residual_unsplit(u: GridFunction, f: Field, asm: WeakFormAssembly, swap: bool = False) -> np.ndarray:
    """Residual from one flat list of ordered pairs ``(x, y)`` with explicit test differences.

    Independent of the row-sum shortcut used by the main assembly; meant for
    small grids.  ``swap=True`` sums over ``(y, x)`` instead.
    """
    un = asm.nodal(u)
    k = asm.kernel
    nN = asm.n_nodes
    M = asm.xf.shape[0]
    out = -asm.load(f)
    phases = [(asm.phase_p, True)] + ([(asm.phase_q, False)] if asm.phase_q is not None else [])
    ia, ib = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    for ph, is_p in phases:
        keep = ph.K[ia, ib] != 0
        a, b = ia[keep], ib[keep]
        X = np.concatenate([asm.xf[a], ph.near_x])
        Y = np.concatenate([asm.xf[b], ph.near_y])
        dist = np.linalg.norm(asm.xf[a] - asm.xf[b], axis=1)
        Wfar = asm.wf[a] * asm.wf[b] * dist ** (-asm.template.dim - ph.sigma)
        W = np.concatenate([Wfar, ph.near_w])
        Px = sp.vstack([asm.P[a], ph.Px]).tocsr()
        Py = sp.vstack([asm.P[b], ph.Py]).tocsr()
        # exterior pairs in both orders
        Xe = np.repeat(asm.xf[asm.act], ph.ext_y.shape[1], axis=0)
        Ye = ph.ext_y.reshape(-1, asm.template.dim)
        We = ph.ext_w.ravel()
        Pe = asm.P[np.repeat(asm.act, ph.ext_y.shape[1])]
        Z = sp.csr_matrix((Ye.shape[0], nN))
        X = np.concatenate([X, Xe, Ye])
        Y = np.concatenate([Y, Ye, Xe])
        W = np.concatenate([W, We, We])
        Px = sp.vstack([Px, Pe, Z]).tocsr()
        Py = sp.vstack([Py, Z, Pe]).tocsr()
        if swap:
            X, Y, Px, Py = Y, X, Py, Px
        ux = Px @ un
        uy = Py @ un
        ext_x = np.asarray(Px.sum(axis=1)).ravel() == 0
        ext_y = np.asarray(Py.sum(axis=1)).ravel() == 0
        ux[ext_x] = asm.exterior(X[ext_x])
        uy[ext_y] = asm.exterior(Y[ext_y])
        coef = k.a_values(X, Y, ux, uy) if is_p else k.b_values(X, Y)
        if is_p and asm.frozen is not None:
            raise ModeError("unsplit residual is implemented for the live coefficient only")
        c = W * coef * bracket_power(ux - uy, ph.ell)
        out += Px.T @ c - Py.T @ c
    return out[asm.free]


def frozen_energy(u: GridFunction, f: Field, asm: WeakFormAssembly) -> float:
    """``(1/p)∬A|Δu|^p dμ1 + (1/q)∬b|Δu|^q dμ2 - ∫fu`` for a frozen assembly."""
    if asm.frozen is None:
        raise ModeError("frozen_energy needs a frozen coefficient table")
    un = asm.nodal(u)
    return asm.energy_vec(un, asm.load(f))


def seminorm_full(w: GridFunction, asm: WeakFormAssembly, power: bool = True) -> float:
    """``[w]^p_{W^{s,p}(ℝ^N)}`` for ``w`` vanishing outside the domain, using the p-phase rules."""
    un = np.asarray(w.values, float).ravel()
    mask = np.ones(un.size, bool)
    mask[asm.free] = False
    if np.any(un[mask] != 0):
        raise ConstraintError("w must vanish outside the domain")
    ph = asm.phase_p
    v = asm.P @ un
    p = ph.ell
    val = total(ph.K * np.abs(v[:, None] - v[None, :]) ** p)
    val += total(ph.near_w * np.abs(ph.Px @ un - ph.Py @ un) ** p)
    val += 2.0 * total(ph.ext_w * np.abs(v[asm.act])[:, None] ** p)
    return val if power else val ** (1 / p)


def monotonicity_pairing(u: GridFunction, v: GridFunction, asm: WeakFormAssembly) -> float:
    """``⟨𝒜(u) - 𝒜(v), u - v⟩`` for a frozen assembly."""
    if asm.frozen is None:
        raise ModeError("monotonicity_pairing needs a frozen coefficient table")
    un, vn = asm.nodal(u), asm.nodal(v)
    z = np.zeros(asm.n_nodes)
    ru = asm.gradient_vec(un, z)[asm.free]
    rv = asm.gradient_vec(vn, z)[asm.free]
    return float((ru - rv) @ (un - vn)[asm.free])


def residual_csv(u: GridFunction, f: Field, asm: WeakFormAssembly, path) -> None:
    """Write node coordinates and residual components as CSV."""
    r = residual(u, f, asm)
    X = asm.nodes()[asm.free]
    with open(path, "w") as fh:
        cols = ",".join(f"x{k}" for k in range(X.shape[1]))
        fh.write(f"{cols},residual\n")
        for x, v in zip(X, r):
            fh.write(",".join(repr(float(c)) for c in x) + f",{float(v)!r}\n")
