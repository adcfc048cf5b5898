"""Named built-in coefficients, forcing terms and exterior data."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .model import ExteriorData, KernelPair


def _cells(x, side):
    return np.floor(np.asarray(x, dtype=float) / side).astype(np.int64).sum(axis=-1)


def _parity(x, side):
    return np.where(_cells(x, side) % 2 == 0, 1.0, -1.0)


def _lip_modulus(c):
    return lambda t: c * np.asarray(t, dtype=float)


# --------------------------------------------------------------------------
# a(x, y, w, z)


def a_constant(value: float = 1.0) -> dict:
    return {"a": lambda x, y, w, z: value, "bounds": (value, value), "name": f"constant({value:g})"}


def a_checkerboard(amplitude: float = 0.25, side: float = 0.125, symmetric: bool = True) -> dict:
    """``1 + δ·ε(x)ε(y)`` (symmetric) or ``1 + δ·ε(x)`` with ``ε = ±1`` on cells of the given side."""
    if symmetric:
        fn = lambda x, y, w, z: 1.0 + amplitude * _parity(x, side) * _parity(y, side)
    else:
        fn = lambda x, y, w, z: 1.0 + amplitude * _parity(x, side)
    return {"a": fn, "bounds": (1 - amplitude, 1 + amplitude), "symmetric": symmetric,
            "name": f"checkerboard({amplitude:g},{side:g})"}


def a_log_oscillating(amplitude: float = 0.25) -> dict:
    """``1 + δ·sin(log log(1/r))`` with ``r = |x - y|`` capped at ``e^-2``: VMO but discontinuous on the diagonal."""
    def fn(x, y, w, z):
        r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
        r = np.clip(r, 1e-300, math.exp(-2.0))
        return 1.0 + amplitude * np.sin(np.log(-np.log(r)))
    return {"a": fn, "bounds": (1 - amplitude, 1 + amplitude), "name": f"log_oscillating({amplitude:g})"}


def a_oscillating(amplitude: float = 0.1, frequency: float = 8.0) -> dict:
    """``1 + δ·cos(kπx)cos(kπy)`` (product over coordinates)."""
    def fn(x, y, w, z):
        cx = np.prod(np.cos(frequency * np.pi * np.asarray(x, float)), axis=-1)
        cy = np.prod(np.cos(frequency * np.pi * np.asarray(y, float)), axis=-1)
        return 1.0 + amplitude * cx * cy
    return {"a": fn, "bounds": (1 - amplitude, 1 + amplitude), "name": f"oscillating({amplitude:g},{frequency:g})"}


def a_u_smooth(amplitude: float = 0.2, base: str = "constant") -> dict:
    """``1 + δ·sin(w + z)``; Lipschitz in ``(w, z)`` with modulus ``2δt``."""
    return {"a": lambda x, y, w, z: 1.0 + amplitude * np.sin(np.asarray(w) + np.asarray(z)),
            "bounds": (1 - amplitude, 1 + amplitude), "omega": _lip_modulus(2.0 * amplitude),
            "u_dependent": True, "name": f"u_smooth({amplitude:g})"}


A_BUILTINS = {
    "constant": a_constant,
    "checkerboard": a_checkerboard,
    "log_oscillating": a_log_oscillating,
    "oscillating": a_oscillating,
    "u_smooth": a_u_smooth,
}


# --------------------------------------------------------------------------
# b(x, y)


def b_zero() -> dict:
    return {"b": None, "sup": 0.0, "name": "zero"}


def b_constant(value: float = 1.0) -> dict:
    return {"b": lambda x, y: value, "sup": value, "name": f"constant({value:g})"}


def b_smooth(scale: float = 1.0) -> dict:
    """``c(1 + ½cos(πx)cos(πy))``."""
    def fn(x, y):
        cx = np.prod(np.cos(np.pi * np.asarray(x, float)), axis=-1)
        cy = np.prod(np.cos(np.pi * np.asarray(y, float)), axis=-1)
        return scale * (1.0 + 0.5 * cx * cy)
    return {"b": fn, "sup": 1.5 * scale, "name": f"smooth({scale:g})"}


def b_checkerboard(scale: float = 1.0, side: float = 0.125) -> dict:
    """``c`` where both points sit in even cells, zero otherwise (degenerate phase)."""
    def fn(x, y):
        return scale * ((_parity(x, side) > 0) & (_parity(y, side) > 0))
    return {"b": fn, "sup": scale, "name": f"checkerboard({scale:g},{side:g})"}


B_BUILTINS = {"zero": b_zero, "constant": b_constant, "smooth": b_smooth, "checkerboard": b_checkerboard}


# --------------------------------------------------------------------------
# fields for f and g


def _field(fn: Callable, bound: float, growth: float, name: str) -> ExteriorData:
    return ExteriorData(fn, bound, growth, name)


def f_zero() -> ExteriorData:
    return _field(lambda x: np.zeros(np.shape(x)[:-1]), 0.0, 0.0, "zero")


def f_constant(value: float = 1.0) -> ExteriorData:
    return _field(lambda x: np.full(np.shape(x)[:-1], float(value)), abs(value), 0.0, f"constant({value:g})")


def f_cosine(amplitude: float = 1.0, frequency: float = 1.0) -> ExteriorData:
    return _field(lambda x: amplitude * np.prod(np.cos(frequency * np.pi * np.asarray(x, float)), axis=-1),
                  abs(amplitude), 0.0, f"cosine({amplitude:g},{frequency:g})")


def f_sine(amplitude: float = 1.0, frequency: float = 1.0) -> ExteriorData:
    return _field(lambda x: amplitude * np.prod(np.sin(frequency * np.pi * np.asarray(x, float)), axis=-1),
                  abs(amplitude), 0.0, f"sine({amplitude:g},{frequency:g})")


def f_affine(slope=1.0, offset: float = 0.0) -> ExteriorData:
    """``offset + slope·x``; grows linearly, so only admissible when the tails stay finite."""
    def fn(x):
        x = np.asarray(x, float)
        return offset + x @ np.broadcast_to(np.asarray(slope, float), x.shape[-1:])
    return _field(fn, abs(offset) + float(np.linalg.norm(np.atleast_1d(slope))), 1.0, "affine")


def f_power_abs(alpha: float = 0.5, amplitude: float = 1.0, cap: float = 1.0) -> ExteriorData:
    """``A·min(|x|, cap)^α``."""
    def fn(x):
        r = np.minimum(np.linalg.norm(np.asarray(x, float), axis=-1), cap)
        return amplitude * r ** alpha
    return _field(fn, abs(amplitude) * cap ** alpha, 0.0, f"power_abs({alpha:g})")


def f_getoor(radius: float = 1.0) -> ExteriorData:
    """``(R² - |x|²)₊^{1/2}``."""
    def fn(x):
        r2 = np.sum(np.asarray(x, float) ** 2, axis=-1)
        return np.sqrt(np.clip(radius ** 2 - r2, 0.0, None))
    return _field(fn, radius, 0.0, f"getoor({radius:g})")


F_BUILTINS = {
    "zero": f_zero, "constant": f_constant, "cosine": f_cosine, "sine": f_sine,
    "affine": f_affine, "power_abs": f_power_abs, "getoor": f_getoor,
}


# --------------------------------------------------------------------------
# dispatch


def _split(cfg) -> tuple:
    if isinstance(cfg, str):
        return cfg, {}
    cfg = dict(cfg)
    name = cfg.pop("name")
    return name, cfg


def make_field(cfg) -> ExteriorData:
    """Field from ``"name"`` or ``{"name": ..., **params}``; a bare number is a constant."""
    if isinstance(cfg, (int, float)):
        return f_constant(float(cfg))
    name, kw = _split(cfg)
    if name not in F_BUILTINS:
        raise KeyError(f"unknown field {name!r}; choose from {sorted(F_BUILTINS)}")
    return F_BUILTINS[name](**kw)


def make_kernel(a_cfg="constant", b_cfg="zero") -> KernelPair:
    an, akw = _split(a_cfg)
    bn, bkw = _split(b_cfg)
    if an not in A_BUILTINS:
        raise KeyError(f"unknown coefficient a {an!r}; choose from {sorted(A_BUILTINS)}")
    if bn not in B_BUILTINS:
        raise KeyError(f"unknown coefficient b {bn!r}; choose from {sorted(B_BUILTINS)}")
    a = A_BUILTINS[an](**akw)
    b = B_BUILTINS[bn](**bkw)
    kw = {}
    if "omega" in a:
        kw["omega_a"] = a["omega"]
    return KernelPair(a["a"], b["b"], symmetry_declared=a.get("symmetric", True), u_dependent=a.get("u_dependent", False),
                      b_sup=b["sup"], a_bounds=a["bounds"], name=f"{a['name']}|{b['name']}", **kw)
