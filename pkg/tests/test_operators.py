import numpy as np
import pytest

from ndphase.functionals import gagliardo_seminorm
from ndphase.model import ZERO_EXTERIOR, GridFunction, ProblemSpec, Region, monotonicity_constant
from ndphase.operators import (
    ConstraintError, ModeError, build_assembly, frozen_energy, monotonicity_pairing, residual, residual_csv,
    residual_split, residual_unsplit, seminorm_full,
)
from ndphase.quadrature import total, volume_rule
from ndphase.registry import f_constant, f_cosine, make_kernel

L, N_GRID = 1.25, 40
DOMAIN = Region((0.0,), 1.0)
SPECS = {
    "linear": ProblemSpec(2, 2, 0.5, 0.5, dim=1),
    "double": ProblemSpec(2, 3, 0.7, 0.4, lam=2, dim=1),
    "p3": ProblemSpec(3, 3, 0.6, 0.6, lam=2, dim=1),
}
KERNELS = {
    "linear": make_kernel(),
    "double": make_kernel({"name": "checkerboard", "amplitude": 0.3}, "smooth"),
    "p3": make_kernel("oscillating", "zero"),
}


def assembly(name, g=None):
    g = g or f_cosine(0.5)
    T = GridFunction.from_function(g.fn, L, N_GRID, 1).with_exterior(g)
    return build_assembly(SPECS[name], KERNELS[name], DOMAIN, T)


def frozen(asm, un=None):
    return asm.freeze(asm.live_tables(asm.fixed_values if un is None else un))


def random_u(asm, rng, scale=1.0):
    un = asm.fixed_values.copy()
    un[asm.free] = rng.normal(0, scale, asm.free.size)
    return asm.to_grid(un)


@pytest.mark.parametrize("name", list(SPECS))
def test_constant_function_has_zero_residual(name):
    c = 0.7
    asm = assembly(name, f_constant(c))
    u = asm.to_grid(np.full(asm.n_nodes, c))
    assert np.max(np.abs(residual(u, 0.0, asm))) < 1e-12


@pytest.mark.parametrize("name", list(SPECS))
def test_energy_gradient_matches_residual(name, rng):
    asm = frozen(assembly(name))
    for _ in range(5):
        u = random_u(asm, rng, 0.5)
        phi = np.zeros(asm.n_nodes)
        phi[asm.free] = rng.normal(size=asm.free.size)
        r = residual(u, 0.3, asm)
        E = lambda t: frozen_energy(u.with_values(u.values + t * phi), 0.3, asm)
        hs = (1e-2, 5e-3)
        errs = [abs((E(h) - E(-h)) / (2 * h) - r @ phi[asm.free]) for h in hs]
        scale = abs(r @ phi[asm.free]) + 1.0
        assert errs[1] < 1e-6 * scale or errs[1] <= errs[0] / 3.5


@pytest.mark.parametrize("name", list(SPECS))
def test_energy_convex(name, rng):
    asm = frozen(assembly(name))
    for _ in range(20):
        u, v = random_u(asm, rng), random_u(asm, rng)
        mid = u.with_values(0.5 * (u.values + v.values))
        E = lambda w: frozen_energy(w, 0.3, asm)
        assert E(mid) <= 0.5 * E(u) + 0.5 * E(v) + 1e-10


def test_zero_energy_for_zero_data():
    asm = frozen(assembly("linear", ZERO_EXTERIOR))
    assert frozen_energy(asm.to_grid(np.zeros(asm.n_nodes)), 0.0, asm) == 0.0


def _seminorm_oracle(w: GridFunction, s, p):
    """[w]^p over ℝ: box part by pair quadrature plus the closed-form exterior weight of the box."""
    box = Region((0.0,), L)
    inner = gagliardo_seminorm(w, box, s, p, power=True)
    X, W = volume_rule(box, w, n=6, n_tiles=40)
    x = X[:, 0]
    sig = s * p
    ext = ((L - x) ** -sig + (L + x) ** -sig) / sig
    return inner + 2 * total(W * np.abs(w.evaluate(X)) ** p * ext)


def test_linear_pairing_equals_seminorm(rng):
    asm = assembly("linear")
    fr = asm.freeze(asm.tables_from(lambda x, y: np.ones(np.broadcast_shapes(x.shape, y.shape)[:-1])))
    for _ in range(3):
        u, v = random_u(fr, rng), random_u(fr, rng)
        w = fr.to_grid(u.values - v.values).with_exterior(ZERO_EXTERIOR)
        pair = monotonicity_pairing(u, v, fr)
        assert pair == pytest.approx(seminorm_full(w, fr), rel=1e-12)
        assert pair == pytest.approx(_seminorm_oracle(w, 0.5, 2.0), rel=2e-3)
    assert monotonicity_pairing(u, u, fr) == 0.0


@pytest.mark.parametrize("name", ["double", "p3"])
def test_pairing_lower_bound(name, rng):
    asm = frozen(assembly(name))
    spec = SPECS[name]
    c = monotonicity_constant(spec.p, seed=2)
    for _ in range(20):
        u, v = random_u(asm, rng), random_u(asm, rng)
        w = asm.to_grid(u.values - v.values).with_exterior(ZERO_EXTERIOR)
        assert monotonicity_pairing(u, v, asm) >= c / spec.lam * seminorm_full(w, asm) * (1 - 1e-10)


@pytest.mark.parametrize("name", list(SPECS))
def test_split_and_unsplit_agree(name, rng):
    asm = assembly(name)
    for _ in range(3):
        u = random_u(asm, rng)
        r = residual(u, 0.3, asm)
        parts = residual_split(u, 0.3, asm)
        assert np.allclose(parts["interior"] + parts["exterior"] - parts["load"], r, rtol=0, atol=1e-10)
        flat = residual_unsplit(u, 0.3, asm)
        assert np.max(np.abs(flat - r)) <= 1e-10 * max(1.0, np.max(np.abs(r)))


@pytest.mark.parametrize("name", list(SPECS))
def test_symmetric_kernel_pair_order_invariance(name, rng):
    asm = assembly(name)
    u = random_u(asm, rng)
    a, b = residual_unsplit(u, 0.0, asm), residual_unsplit(u, 0.0, asm, swap=True)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_residual_norm_growth_fit(rng):
    # ‖R(u)‖ ≲ c(‖u‖^{p-1} + ‖u‖^{q-1} + g-terms): the fitted c stays in a bounded band
    asm = assembly("double")
    ratios = []
    for scale in (0.1, 0.3, 1, 3, 10):
        for _ in range(4):
            u = random_u(asm, rng, scale)
            n = np.max(np.abs(u.values))
            ratios.append(np.max(np.abs(residual(u, 0.0, asm))) / (n ** 1 + n ** 2 + 1.0))
    assert max(ratios) / min(ratios) < 50


def test_errors():
    asm = assembly("linear")
    bad = asm.to_grid(np.zeros(asm.n_nodes))
    with pytest.raises(ConstraintError):
        residual(bad, 0.0, asm)
    u = asm.to_grid(asm.fixed_values)
    with pytest.raises(ModeError):
        frozen_energy(u, 0.0, asm)
    with pytest.raises(ModeError):
        monotonicity_pairing(u, u, asm)
    with pytest.raises(ConstraintError):
        seminorm_full(u, asm)


def test_residual_csv(tmp_path):
    asm = assembly("linear")
    u = asm.to_grid(asm.fixed_values)
    residual_csv(u, 0.0, asm, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "x0,residual" and len(lines) == asm.free.size + 1
