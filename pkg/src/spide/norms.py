"""Sobolev, Besov, mixed-jump and space-time norms on lattice fields.

Lattice L_p norms are h^d-weighted sums over the nodes; time integrals are
left-endpoint Riemann sums. Every norm accepts a space-time field and then
returns one value per slice through the ``*_slices`` helpers, which
``spacetime_norm`` integrates in time.
"""

from __future__ import annotations

import dataclasses
import math
from functools import lru_cache

import numpy as np
from scipy.special import j0

from .errors import ConfigurationError, ShapeError
from .grid import Field, LPFilterBank, apply_multiplier, bessel_potential, lp_blocks, lp_partition
from .symbols import YRule

FAMILIES = ("L", "H", "B", "Htilde", "Hbar", "Bbar")


@dataclasses.dataclass(frozen=True)
class NormSpec:
    family: str
    beta: float = 0.0
    p: float = 2.0
    r: float | None = None
    domain: str = "space"
    expectation: str = "none"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError("family", f"unknown norm family {self.family!r}")
        if not self.p >= 1:
            raise ConfigurationError("p", f"integrability must be >= 1, got {self.p}")
        if self.r is not None and not self.r >= 1:
            raise ConfigurationError("r", f"inner integrability must be >= 1, got {self.r}")
        if self.family in ("Hbar", "Bbar") and self.r is None:
            raise ConfigurationError("r", "mixed-jump norms need an inner exponent r")
        if not math.isfinite(self.beta):
            raise ConfigurationError("beta", f"smoothness must be finite, got {self.beta}")
        if self.domain not in ("space", "spacetime"):
            raise ConfigurationError("domain", f"unknown domain {self.domain!r}")
        if self.expectation not in ("none", "mc"):
            raise ConfigurationError("expectation", f"unknown expectation {self.expectation!r}")


@dataclasses.dataclass(frozen=True)
class NormValue:
    spec: NormSpec
    value: float
    mc_stderr: float | None = None
    seed_range: str = ""

    def __float__(self):
        return float(self.value)

    def csv_row(self) -> list:
        s = self.spec
        return [s.family, f"{s.beta:.6g}", f"{s.p:.6g}", "" if s.r is None else f"{s.r:.6g}", s.domain,
                f"{self.value:.12e}", "" if self.mc_stderr is None else f"{self.mc_stderr:.6e}", self.seed_range]


CSV_HEADER = ["family", "beta", "p", "r", "domain", "value", "stderr", "seed-range"]


# --------------------------------------------------------------------------
# per-slice norms
# --------------------------------------------------------------------------

def lattice_lp(values: np.ndarray, grid, p: float) -> np.ndarray:
    """(h^d sum |v|^p)^(1/p) over the trailing spatial axes."""
    axes = tuple(range(values.ndim - grid.d, values.ndim))
    a = np.abs(values)
    if p == 2:
        s = np.sum(a * a, axis=axes)
    else:
        s = np.sum(a**p, axis=axes)
    return (grid.cell * s) ** (1.0 / p)


def _physical(field: Field) -> np.ndarray:
    return field.to_physical().values


def sobolev_slices(field: Field, beta: float, p: float) -> np.ndarray:
    return lattice_lp(_physical(bessel_potential(field, beta)), field.grid, p)


def besov_slices(field: Field, beta: float, p: float, bank: LPFilterBank | None = None) -> np.ndarray:
    bank = bank or lp_partition(field.grid)
    blocks = lp_blocks(field, bank)
    per = lattice_lp(blocks, field.grid, p)  # (J, ...)
    w = 2.0 ** (np.arange(len(bank)) * beta * p)
    return np.tensordot(w, per**p, axes=(0, 0)) ** (1.0 / p)


def equivalent_H_slices(field: Field, beta: float, p: float, bank: LPFilterBank | None = None) -> np.ndarray:
    bank = bank or lp_partition(field.grid)
    blocks = lp_blocks(field, bank)
    w = 4.0 ** (np.arange(len(bank)) * beta)
    square = np.sqrt(np.tensordot(w, np.abs(blocks) ** 2, axes=(0, 0)))
    return lattice_lp(square, field.grid, p)


def _wrap(spec, vals):
    v = np.asarray(vals, dtype=float)
    if v.ndim:
        raise ShapeError("space-time field given to a space norm; use spacetime_norm")
    return NormValue(spec, float(v))


def sobolev_norm(field: Field, beta: float, p: float) -> NormValue:
    """|J^beta u|_{L_p}."""
    return _wrap(NormSpec("H", beta, p), sobolev_slices(field, beta, p))


def besov_norm(field: Field, beta: float, p: float, bank: LPFilterBank | None = None) -> NormValue:
    """(sum_j 2^{j beta p} |phi_j * u|_p^p)^(1/p), truncated at the bank's top level."""
    return _wrap(NormSpec("B", beta, p), besov_slices(field, beta, p, bank))


def equivalent_H_norm(field: Field, beta: float, p: float, bank: LPFilterBank | None = None) -> NormValue:
    """Square-function form |(sum_j 4^{j beta} |phi_j * u|^2)^(1/2)|_p."""
    return _wrap(NormSpec("Htilde", beta, p), equivalent_H_slices(field, beta, p, bank))


# --------------------------------------------------------------------------
# mixed jump norms
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class _Discrete:
    """Finite measure given by its weights, e.g. a mark measure or the Y coordinates."""

    weights: np.ndarray
    nodes: np.ndarray | None = None

    def __len__(self):
        return len(self.weights)


def _weights_at(rule, weight, t):
    if weight is None:
        return rule.weights
    lv = np.broadcast_to(np.asarray(weight(t, rule.nodes), dtype=float), rule.weights.shape)
    return rule.weights * lv


def mixed_jump_slices(g: Field, rule: YRule, r: float, beta: float, p: float, weight=None,
                      family: str = "Hbar", bank: LPFilterBank | None = None) -> np.ndarray:
    """Per-slice mixed norm of g sampled on the nodes of ``rule``.

    ``g.values`` has shape ``([S,] n_y) + grid.shape``. ``rule`` may also be
    a plain weight array (finite mark measure, or ones for Y-valued fields). The inner norm is
    (sum_k w_k l(t, y_k) |.|^r)^(1/r) with w_k the raw weights of dy/|y|^{d+alpha}.
    """
    grid = g.grid
    vals = g.values
    if not isinstance(rule, YRule):
        rule = _Discrete(np.asarray(rule, dtype=float).ravel())
    ny = vals.shape[vals.ndim - grid.d - 1] if vals.ndim > grid.d else 0
    if ny != len(rule):
        raise ShapeError(f"g carries {ny} y-samples, quadrature rule has {len(rule)}")
    times = g.times if g.times is not None else [0.0]
    out = []
    for s, t in enumerate(times):
        gs = Field(grid, vals[s] if g.times is not None else vals, spectral=g.spectral, real=g.real)
        w = _weights_at(rule, weight, float(t))
        shape = (-1,) + (1,) * grid.d
        if family == "Hbar":
            jg = np.abs(_physical(bessel_potential(gs, beta)))
            inner = np.tensordot(w, jg**r, axes=(0, 0)) ** (1.0 / r)
            out.append(lattice_lp(inner, grid, p))
        elif family == "Bbar":
            bank = bank or lp_partition(grid)
            blocks = np.abs(lp_blocks(gs, bank))  # (J, n_y, grid)
            inner = np.sum(w.reshape(shape) * blocks**r, axis=1) ** (1.0 / r)
            per = lattice_lp(inner, grid, p)
            out.append(np.sum(2.0 ** (np.arange(len(bank)) * beta * p) * per**p) ** (1.0 / p))
        else:
            raise ConfigurationError("family", f"mixed-jump family must be Hbar or Bbar, got {family!r}")
    return np.asarray(out) if g.times is not None else np.asarray(out[0])


def mixed_jump_norm(g: Field, rule: YRule, r: float, beta: float, p: float, weight=None,
                    family: str = "Hbar") -> NormValue:
    """Mixed norm of a space-only g; space-time g goes through ``spacetime_norm``."""
    spec = NormSpec(family, beta, p, r)
    return _wrap(spec, mixed_jump_slices(g, rule, r, beta, p, weight, family))


# --------------------------------------------------------------------------
# space-time and Monte Carlo
# --------------------------------------------------------------------------

def time_weights(field: Field) -> np.ndarray:
    """Left-endpoint widths for the slices that start a time interval."""
    if field.times is None or len(field.times) == 0:
        raise ShapeError("space-time norm needs a non-empty time mesh")
    t = field.times
    if field.closed:
        return np.diff(t)
    if field.dt is None:
        raise ShapeError("open time mesh needs dt for its last interval")
    return np.append(np.diff(t), field.dt)


def integrate_time(slice_norms: np.ndarray, field: Field, p: float) -> float:
    w = time_weights(field)
    n = np.asarray(slice_norms, dtype=float)[: len(w)]
    return float(np.sum(w * n**p) ** (1.0 / p))


def spacetime_norm(field: Field, spec: NormSpec, *, rule: YRule | None = None, weight=None) -> NormValue:
    """(sum_k dt_k |u(t_k)|^p)^(1/p) with the slice norm named by ``spec``."""
    if field.times is None or len(field.times) == 0:
        raise ShapeError("space-time norm needs a non-empty time mesh")
    fam, b, p = spec.family, spec.beta, spec.p
    if fam in ("H", "L"):
        sl = sobolev_slices(field, b if fam == "H" else 0.0, p)
    elif fam == "B":
        sl = besov_slices(field, b, p)
    elif fam == "Htilde":
        sl = equivalent_H_slices(field, b, p)
    else:
        if rule is None:
            raise ConfigurationError("rule", "mixed-jump norms need the y-quadrature rule")
        sl = mixed_jump_slices(field, rule, spec.r, b, p, weight, fam)
    spec = dataclasses.replace(spec, domain="spacetime")
    return NormValue(spec, integrate_time(sl, field, p))


def mc_norm(values, spec: NormSpec, seeds=None) -> NormValue:
    """(E |.|^p)^(1/p) from per-path norms, with a delta-method standard error.

    Paths are accumulated in seed order so the result does not depend on
    the order in which workers finished.
    """
    v = np.asarray(values, dtype=float)
    if seeds is not None:
        order = np.argsort(np.asarray(seeds), kind="stable")
        v = v[order]
    if v.size == 0:
        raise ShapeError("Monte Carlo norm needs at least one path")
    p = spec.p
    x = v**p
    mu = float(np.mean(x))
    se_x = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    val = mu ** (1.0 / p)
    se = 0.0 if mu == 0 else (1.0 / p) * mu ** (1.0 / p - 1.0) * se_x
    rng = "" if seeds is None else f"{int(np.min(seeds))}-{int(np.max(seeds))}"
    return NormValue(dataclasses.replace(spec, expectation="mc"), val, se, rng)


# --------------------------------------------------------------------------
# mollifier and Steklov smoothing
# --------------------------------------------------------------------------

def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=4)
def _bump_rule(d, n=400):
    x, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * (x + 1)
    w = 0.5 * w
    z = _bump(r)
    if d == 1:
        mass = 2 * np.sum(w * z)
        return r, 2 * w * z / mass
    mass = 2 * np.pi * np.sum(w * z * r)
    return r, 2 * np.pi * w * z * r / mass


def bump_transform(k: np.ndarray, d: int) -> np.ndarray:
    """Fourier transform of the unit-mass radial bump zeta at radial frequency k."""
    r, w = _bump_rule(d)
    k = np.asarray(k, dtype=float)
    flat, inv = np.unique(k.ravel(), return_inverse=True)
    out = np.empty_like(flat)
    for i in range(0, flat.size, 512):
        kk = flat[i:i + 512, None]
        kern = np.cos(kk * r) if d == 1 else j0(kk * r)
        out[i:i + 512] = kern @ w
    return out[inv].reshape(k.shape)


def mollify(field: Field, eps: float) -> Field:
    """u * zeta_eps with zeta_eps(x) = eps^{-d} zeta(x / eps)."""
    if not eps > 0:
        raise ConfigurationError("eps", f"mollifier radius must be positive, got {eps}")
    g = field.grid
    return apply_multiplier(field, bump_transform(eps * g.abs_xi, g.d))


def steklov_smooth(g: Field, n: float) -> Field:
    """g_n(t) = n int_{(t - 1/n) v 0}^t (g(s) * zeta_{1/n}) ds, trapezoid in s."""
    if not n >= 1:
        raise ConfigurationError("n", f"Steklov rate must be >= 1, got {n}")
    if g.times is None or len(g.times) < 2:
        raise ShapeError("Steklov smoothing needs a space-time field")
    t = g.times
    dt = np.diff(t)
    if dt.max() > 1.0 / n * (1 + 1e-12):
        raise ConfigurationError("n", f"time mesh step {dt.max():.3g} does not resolve 1/n = {1.0 / n:.3g}")
    vals = g.values
    # cumulative trapezoid integral G(t_k) = int_0^{t_k} g
    cum = np.zeros(vals.shape, dtype=np.result_type(vals.dtype, float))
    inc = 0.5 * (vals[1:] + vals[:-1]) * dt.reshape((-1,) + (1,) * (vals.ndim - 1))
    cum[1:] = np.cumsum(inc, axis=0)

    def primitive(s):
        """G at an arbitrary s by integrating the linear interpolant of g."""
        k = min(max(int(np.searchsorted(t, s, side="right")) - 1, 0), len(t) - 2)
        a = (s - t[k]) / dt[k]
        gs = (1 - a) * vals[k] + a * vals[k + 1]
        return cum[k] + 0.5 * (vals[k] + gs) * (s - t[k])

    out = np.empty_like(cum)
    h = 1.0 / n
    for k, tk in enumerate(t):
        lo = max(tk - h, 0.0)
        out[k] = n * (cum[k] - (primitive(lo) if lo > 0 else 0.0))
    smoothed = g.replace(values=out)
    return mollify(smoothed, h)
