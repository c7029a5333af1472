"""Equation coefficients, assumption checks and the generator symbol.

Jump densities are callables ``m(t, y)`` taking a time and an ``(n, d)``
array of jump vectors and returning ``n`` values. The Levy kernel they
weight is ``c(d, alpha) dy / |y|^{d+alpha}``, where the constant ``c`` is
chosen so that ``m == 1`` gives exactly the fractional Laplacian with symbol
``-|xi|^alpha``. Low-level primitives (``YRule``, the noise samplers) work
with the raw kernel ``dy / |y|^{d+alpha}``; callers that hold a
``CoefficientSet`` scale densities by ``levy_constant`` themselves.
"""

from __future__ import annotations

import dataclasses
import math
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import gamma, roots_jacobi

from .errors import ConfigurationError, ContractError, EvaluationError, NumericalError
from .grid import Field, SpectralGrid, apply_multiplier

Density = Callable[[float, np.ndarray], np.ndarray]

QUAD_TARGET = 1e-6
_S_TAIL = 512.0


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------

def sphere_moment(d: int, alpha: float) -> float:
    """Integral of |w_1|^alpha over the unit sphere S^{d-1}."""
    return 2.0 * math.pi ** ((d - 1) / 2) * gamma((alpha + 1) / 2) / gamma((d + alpha) / 2)


def stable_factor(alpha: float) -> float:
    """int_0^inf (1 - cos s) s^{-1-alpha} ds."""
    if alpha == 1.0:
        return math.pi / 2
    return float(gamma(1 - alpha) * math.cos(math.pi * alpha / 2) / alpha)


def closed_form_c0(d: int, alpha: float) -> float:
    """Normalisation in front of the sphere integral; pinned by m0 == 1 -> -|xi|^alpha."""
    return 1.0 / sphere_moment(d, alpha)


def levy_constant(d: int, alpha: float) -> float:
    """c(d, alpha) such that c int (1 - cos y_1) dy/|y|^{d+alpha} = 1."""
    return closed_form_c0(d, alpha) / stable_factor(alpha)


# --------------------------------------------------------------------------
# coefficient containers
# --------------------------------------------------------------------------

def constant(c: float) -> Density:
    def density(t, y):
        return np.full(np.shape(y)[0], float(c))

    density.constant = float(c)
    return density


def _zero_vec(d):
    return lambda t: np.zeros(d)


@dataclasses.dataclass(frozen=True, eq=False)
class CoefficientSet:
    """All coefficients of the model equation.

    ``m_homogeneous`` declares that ``m`` (and ``l``) depend on ``y`` only
    through its direction, which enables the closed-form symbol.
    ``sigma(t)`` returns a ``(d, M)`` array: row i is the truncated
    Y-valued coefficient sigma^i.
    """

    alpha: float
    d: int = 1
    m: Density | None = None
    l: Density | None = None
    m0: Density | None = None
    b: Callable | None = None
    B: Callable | None = None
    sigma: Callable | None = None
    lam: float = 0.0
    K: float = 1.0
    delta: float = 1.0
    T: float = 1.0
    M: int = 16
    m_homogeneous: bool = False
    time_homogeneous: bool = True
    name: str = "custom"
    validated: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0):
            raise ConfigurationError("alpha", f"must lie in (0, 2], got {self.alpha}")
        if self.d not in (1, 2):
            raise ConfigurationError("d", f"must be 1 or 2, got {self.d}")
        if self.lam < 0:
            raise ConfigurationError("lam", f"damping must be >= 0, got {self.lam}")
        if not self.delta > 0:
            raise ConfigurationError("delta", f"ellipticity constant must be > 0, got {self.delta}")
        if not self.T > 0:
            raise ConfigurationError("T", f"horizon must be > 0, got {self.T}")
        d = self.d
        zero = constant(0.0)
        defaults = {
            "m": zero,
            "l": zero,
            "b": _zero_vec(d),
            "B": lambda t: np.zeros((d, d)),
            "sigma": lambda t: np.zeros((d, self.M)),
        }
        for key, val in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, val)
        if self.m0 is None:
            object.__setattr__(self, "m0", self.m)

    @property
    def levy_scale(self) -> float:
        return levy_constant(self.d, self.alpha) if self.alpha < 2 else 0.0

    def replace(self, **kw) -> "CoefficientSet":
        kw.setdefault("validated", False)
        return dataclasses.replace(self, **kw)

    def validate(self, mesh=None) -> "CoefficientSet":
        """Return a validated copy, or raise ContractError listing violations."""
        report = validate_A(self, mesh)
        if not report.passed:
            raise ContractError(f"coefficients {self.name!r} violate assumptions: {report.violations[:5]}")
        return dataclasses.replace(self, validated=True)


@dataclasses.dataclass
class ValidationReport:
    passed: bool = True
    violations: list = dataclasses.field(default_factory=list)

    def add(self, clause, point, value):
        self.violations.append((clause, point, value))
        self.passed = False

    def extend(self, other):
        for v in other.violations:
            self.add(*v)


@dataclasses.dataclass(frozen=True)
class SampleMesh:
    times: np.ndarray
    radii: np.ndarray
    directions: np.ndarray  # (n, d) unit vectors
    xi_directions: np.ndarray  # (n, d) unit vectors

    @classmethod
    def default(cls, d: int, T: float, n_dir: int = 256):
        times = np.linspace(0.0, T, 5)
        radii = np.logspace(-3, 3, 13)
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            th = 2 * np.pi * (np.arange(n_dir) + 0.5) / n_dir
            dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return cls(times, radii, dirs, dirs.copy())


def _evaluate(fn, t, y, where):
    try:
        out = np.asarray(fn(t, y), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with the sample point
        raise EvaluationError(where, (t, y[:1].tolist()), exc) from exc
    return np.broadcast_to(out, (y.shape[0],))


def _sphere_weights(mesh, d):
    if d == 1:
        return np.ones(len(mesh.directions))
    return np.full(len(mesh.directions), 2 * np.pi / len(mesh.directions))


def validate_A0(m0: Density, alpha: float, delta: float, K: float, d: int = 1,
                mesh: SampleMesh | None = None, T: float = 1.0, tol: float = 1e-12) -> ValidationReport:
    """Check bound, degree-0 homogeneity, alpha = 1 cancellation and non-degeneracy of m0."""
    mesh = mesh or SampleMesh.default(d, T)
    rep = ValidationReport()
    W = mesh.directions
    wts = _sphere_weights(mesh, d)
    for t in mesh.times:
        for r in mesh.radii:
            y = W * r
            v = _evaluate(m0, t, y, "m0")
            for i in np.flatnonzero((v < -tol) | (v > K + tol)):
                rep.add("A0(i) bound", (t, y[i].tolist()), float(v[i]))
            for c in (0.5, 2.0):
                vc = _evaluate(m0, t, c * y, "m0")
                for i in np.flatnonzero(np.abs(vc - v) > tol * max(1.0, K)):
                    rep.add("A0(i) homogeneity", (t, y[i].tolist()), float(vc[i] - v[i]))
        on_sphere = _evaluate(m0, t, W, "m0")
        if alpha == 1.0:
            moment = (W * (wts * on_sphere)[:, None]).sum(axis=0)
            if np.abs(moment).max() > 1e-10 * max(1.0, K):
                rep.add("A0(ii) cancellation", (t,), moment.tolist())
        proj = np.abs(mesh.xi_directions @ W.T) ** alpha  # (n_xi, n_w)
        integral = proj @ (wts * on_sphere)
        j = int(np.argmin(integral))
        if integral[j] < delta - tol:
            rep.add("A0(iii) non-degeneracy", (t, mesh.xi_directions[j].tolist()), float(integral[j]))
    return rep


def _annulus_drift(m, t, d, r, R, n=64):
    """int_{r<=|y|<=R} y m(t,y) dy/|y|^{d+1} by Gauss-Legendre in log radius."""
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (math.log(R) - math.log(r)) * x + 0.5 * (math.log(R) + math.log(r))
    wu = 0.5 * (math.log(R) - math.log(r)) * w
    if d == 1:
        dirs, dw = np.array([[1.0], [-1.0]]), np.ones(2)
    else:
        th = 2 * np.pi * (np.arange(256) + 0.5) / 256
        dirs, dw = np.stack([np.cos(th), np.sin(th)], -1), np.full(256, 2 * np.pi / 256)
    total = np.zeros(d)
    for uj, wj in zip(u, wu):
        y = dirs * math.exp(uj)
        vals = _evaluate(m, t, y, "m")
        # y |y|^{-d-1} dy = w dr / r * r = w du
        total += wj * (dirs * (dw * vals)[:, None]).sum(axis=0)
    return total


def validate_A(coeffs: CoefficientSet, mesh: SampleMesh | None = None, tol: float = 1e-12) -> ValidationReport:
    """Bounds, alpha = 1 drift cancellation and superparabolicity."""
    c = coeffs
    mesh = mesh or SampleMesh.default(c.d, c.T)
    rep = ValidationReport()
    W = mesh.directions
    for t in mesh.times:
        b = np.asarray(c.b(t), dtype=float).reshape(c.d)
        B = np.asarray(c.B(t), dtype=float).reshape(c.d, c.d)
        sig = np.asarray(c.sigma(t), dtype=float).reshape(c.d, -1)
        if not np.allclose(B, B.T, atol=1e-14):
            rep.add("A(i) symmetry", (t,), B.tolist())
        fixed = np.abs(B).max() + np.abs(b).max() + np.linalg.norm(sig, axis=1).max()
        if fixed > c.K + tol:
            rep.add("A(ii) bound", (t,), float(fixed))
        if c.alpha < 2:
            for r in mesh.radii:
                y = W * r
                m = _evaluate(c.m, t, y, "m")
                l = _evaluate(c.l, t, y, "l")
                m0 = _evaluate(c.m0, t, y, "m0")
                for i in np.flatnonzero((m < -tol) | (l < -tol)):
                    rep.add("A(i) nonnegativity", (t, y[i].tolist()), float(min(m[i], l[i])))
                for i in np.flatnonzero(m + l + fixed > c.K + tol):
                    rep.add("A(ii) bound", (t, y[i].tolist()), float(m[i] + l[i] + fixed))
                for i in np.flatnonzero(m - l < m0 - tol):
                    rep.add("A(iii) superparabolicity", (t, y[i].tolist()), float(m[i] - l[i] - m0[i]))
            if c.alpha == 1.0:
                for r, R in ((1e-3, 1e-1), (1e-1, 1.0), (0.5, 2.0), (1.0, 10.0), (10.0, 1e3)):
                    drift = _annulus_drift(c.m, t, c.d, r, R)
                    if np.abs(drift).max() > 1e-9 * max(1.0, c.K) * math.log(R / r):
                        rep.add("A(ii) annulus cancellation", (t, r, R), drift.tolist())
        else:
            eff = B - 0.5 * sig @ sig.T
            lo = float(np.linalg.eigvalsh(0.5 * (eff + eff.T)).min())
            if lo < c.delta - tol:
                rep.add("A(iii) superparabolicity", (t,), lo)
    if c.alpha < 2:
        rep.extend(validate_A0(c.m0, c.alpha, c.delta, c.K, c.d, mesh, c.T, tol))
    return rep


# --------------------------------------------------------------------------
# sphere rules relative to a frequency direction
# --------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _jacobi(n, a):
    return roots_jacobi(n, a, a)


def _arc_rule(d, alpha, xi_unit, n_arc):
    """Directions w, signs of (w, xi), |(w, xi)| and weights that absorb |(w, xi)|^alpha dw.

    d = 1: the two-point sphere. d = 2: Gauss-Jacobi in t = sin(theta'), theta'
    measured from xi, on the two half circles where (w, xi) keeps its sign.
    """
    if d == 1:
        s = 1.0 if xi_unit[0] >= 0 else -1.0
        w = np.array([[1.0], [-1.0]])
        return w, np.array([s, -s]), np.ones(2), np.ones(2)
    t, wt = _jacobi(n_arc, (alpha - 1) / 2)
    th0 = math.atan2(xi_unit[1], xi_unit[0])
    th = th0 + np.arcsin(t)
    wA = np.stack([np.cos(th), np.sin(th)], axis=-1)
    c = np.sqrt(1 - t * t)
    w = np.concatenate([wA, -wA])
    sign = np.concatenate([np.ones(n_arc), -np.ones(n_arc)])
    return w, sign, np.concatenate([c, c]), np.concatenate([wt, wt])


# --------------------------------------------------------------------------
# closed form for direction-only densities
# --------------------------------------------------------------------------

def _homogeneous_integral(alpha, xi, t, density, d, n_arc=32):
    """int [e^{i xi.y} - 1 - chi i xi.y] m(w) dy/|y|^{d+alpha} / c(d, alpha) ... normalised.

    Returns c(d, alpha) times the Levy integral, i.e. the symbol contribution,
    for m depending on the direction only.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    out = np.zeros(xi.shape[0], dtype=complex)
    c0 = closed_form_c0(d, alpha)
    if d == 1:
        mp, mm = _evaluate(density, t, np.array([[1.0], [-1.0]]), "m")
        r = np.abs(xi[:, 0])
        s = np.sign(xi[:, 0])
        # w = +1 has sign s, w = -1 has sign -s
        if alpha == 1.0:
            with np.errstate(divide="ignore"):
                lr = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
            br = (mp + mm) + 1j * (2 / math.pi) * s * lr * (mp - mm)
        else:
            br = (mp + mm) - 1j * math.tan(alpha * math.pi / 2) * s * (mp - mm)
        return -c0 * r**alpha * br
    for n, v in enumerate(xi):
        r = float(np.linalg.norm(v))
        if r == 0.0:
            continue
        w, sgn, absc, wt = _arc_rule(d, alpha, v / r, n_arc)
        mv = _evaluate(density, t, w, "m")
        if alpha == 1.0:
            logc = np.log(absc * r)
            bracket = 1 + 1j * (2 / math.pi) * sgn * logc
        else:
            bracket = 1 - 1j * math.tan(alpha * math.pi / 2) * sgn
        out[n] = -c0 * r**alpha * np.sum(wt * bracket * mv)
    return out


def symbol_closed_form(t: float, xi, coeffs: CoefficientSet, n_arc: int = 32) -> np.ndarray:
    """psi_0 for the reference operator built from m0, b and delta."""
    c = coeffs
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if c.alpha == 2.0:
        return -0.5 * c.delta * np.sum(xi * xi, axis=1) + 0j
    if c.alpha == 1.0:
        rep = validate_A0(c.m0, 1.0, 0.0 + 1e-300, np.inf, c.d, T=c.T)
        bad = [v for v in rep.violations if v[0].startswith("A0(ii)")]
        if bad:
            raise ConfigurationError("m0", f"alpha = 1 needs a cancelling m0: {bad[0]}")
    out = _homogeneous_integral(c.alpha, xi, t, c.m0, c.d, n_arc)
    if c.alpha == 1.0:
        out = out + 1j * xi @ np.asarray(c.b(t), dtype=float).reshape(c.d)
    return out


# --------------------------------------------------------------------------
# radial quadrature along rays, in the scaled variable s = r |(w, xi)|
# --------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _gl(n):
    return np.polynomial.legendre.leggauss(n)


def _tail_osc(gamma_, S, terms=8):
    """int_S^inf e^{is} s^{-gamma} ds by the asymptotic recursion."""
    # I_g = i e^{iS} S^{-g} - i g I_{g+1}
    acc = 1j * np.exp(1j * S) * S ** -(gamma_ + terms)
    for k in range(terms - 1, -1, -1):
        g = gamma_ + k
        acc = 1j * np.exp(1j * S) * S**-g - 1j * g * acc
    return acc


def _segment_nodes(p, q, n_dec, n_pan):
    """Gauss-Legendre nodes and weights for ds on [p, q]."""
    xs, ws = [], []
    if p < 1.0:
        top = min(q, 1.0)
        dec = max(1, int(math.ceil(math.log10(top / p) - 1e-12)))
        edges = np.exp(np.linspace(math.log(p), math.log(top), dec + 1))
        x, w = _gl(n_dec)
        for a, b in zip(edges[:-1], edges[1:]):
            la, lb = math.log(a), math.log(b)
            u = 0.5 * (lb - la) * x + 0.5 * (lb + la)
            xs.append(np.exp(u))
            ws.append(0.5 * (lb - la) * w * np.exp(u))
    if q > 1.0:
        lo = max(p, 1.0)
        npan = max(1, int(math.ceil((q - lo) / (math.pi / 2))))
        edges = np.linspace(lo, q, npan + 1)
        x, w = _gl(n_pan)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        xs.append((half[:, None] * x + mid[:, None]).ravel())
        ws.append((half[:, None] * w).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def _ray_rule(alpha, lo, hi, chi_edge, centred, level, far=0.0):
    """Nodes s_j and complex weights W_j with sum_j W_j m(s_j) ~ int_lo^hi K(s) m(s) ds.

    K(s) = (e^{is} - 1 - i s chi(s)) s^{-1-alpha} with chi = 1 on s <= chi_edge
    when ``centred``; otherwise K(s) = (e^{is} - 1) s^{-1-alpha}. ``lo = 0``
    uses a Taylor cell near the origin. For ``hi = inf`` the oscillatory part
    beyond S is a frozen-density node at S, while the slowly decaying
    non-oscillatory part runs on log panels out to ``far`` and is frozen there.
    """
    n_dec, n_pan = (64, 8) if level == 0 else (128, 16)
    chi_edge = chi_edge if centred else 0.0
    S = max(_S_TAIL, 2.0 * chi_edge if math.isfinite(chi_edge) else 0.0, 2.0 * lo) if math.isinf(hi) else hi
    nodes, weights = [], []
    start = lo
    if lo == 0.0:
        s0 = 1e-4 * min(1.0, chi_edge if chi_edge > 0 else 1.0, S)
        a = alpha
        re = -(s0 ** (2 - a)) / (2 * (2 - a)) + s0 ** (4 - a) / (24 * (4 - a))
        if centred and chi_edge > 0:
            im = -(s0 ** (3 - a)) / (6 * (3 - a)) + s0 ** (5 - a) / (120 * (5 - a))
        else:
            if a >= 1:
                raise NumericalError("plain kernel is not integrable at 0 for alpha >= 1")
            im = s0 ** (1 - a) / (1 - a) - s0 ** (3 - a) / (6 * (3 - a))
        nodes.append(np.array([0.5 * s0]))
        weights.append(np.array([re + 1j * im]))
        start = s0
    breaks = sorted({start, S} | {b for b in (1.0, chi_edge) if start < b < S})
    for p, q in zip(breaks[:-1], breaks[1:]):
        s, w = _segment_nodes(p, q, n_dec, n_pan)
        chi = (s <= chi_edge).astype(float) if centred else 0.0
        k = (np.expm1(1j * s) - 1j * s * chi) * s ** (-1 - alpha)
        nodes.append(s)
        weights.append(w * k)
    if math.isinf(hi):
        drift = centred and chi_edge >= S
        nodes.append(np.array([S]))
        weights.append(np.array([_tail_osc(1 + alpha, S)]))
        top = max(far, S)
        if top > S:
            x, w = _gl(n_dec // 4)
            dec = max(1, int(math.ceil(math.log10(top / S))))
            edges = np.exp(np.linspace(math.log(S), math.log(top), dec + 1))
            for p, q in zip(edges[:-1], edges[1:]):
                lp, lq = math.log(p), math.log(q)
                u = 0.5 * (lq - lp) * x + 0.5 * (lq + lp)
                s = np.exp(u)
                k = -(s ** -alpha) - (1j * s ** (1 - alpha) if drift else 0.0)
                nodes.append(s)
                weights.append(0.5 * (lq - lp) * w * k)
        tail = -(top**-alpha) / alpha
        if drift:
            tail -= 1j * top ** (1 - alpha) / (alpha - 1)
        nodes.append(np.array([top]))
        weights.append(np.array([tail]))
    return np.concatenate(nodes), np.concatenate(weights)


def _chi_edge(alpha):
    if alpha < 1:
        return 0.0
    if alpha > 1:
        return math.inf
    return 1.0  # in units of |y|; converted to s by the caller


def _trapezoid_rule(alpha, xi_unit, n):
    """Uniform circle rule offset from the direction orthogonal to xi."""
    th0 = math.atan2(xi_unit[1], xi_unit[0])
    th = th0 + 2 * np.pi * (np.arange(n) + 0.5) / n
    w = np.stack([np.cos(th), np.sin(th)], axis=-1)
    c = np.cos(th - th0)
    return w, np.sign(c), np.abs(c), (2 * np.pi / n) * np.abs(c) ** alpha


_FAR = 1e8


def _far_field(density):
    """Direction profile m(t, R w) at a very large radius R."""
    def far(t, y):
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=1, keepdims=True)
        return _evaluate(density, t, _FAR * y / np.where(r > 0, r, 1.0), "m")

    return far


def _levy_integral(alpha, xi, t, density, d, *, lo_r=0.0, hi_r=math.inf, centred=True,
                   level=0, n_arc=32, homogeneous=False):
    """int_{lo_r < |y| < hi_r} K(xi, y) m(t, y) dy / |y|^{d+alpha} for each row of xi.

    K = e^{i(xi,y)} - 1 - chi(y) i(xi,y) when ``centred``, else e^{i(xi,y)} - 1.
    Raw kernel: no Levy constant applied. In d = 2 the density is split into
    its far-field direction profile, integrated with the Gauss-Jacobi arc
    rule that absorbs the |(w, xi)|^alpha kink, and a remainder that is
    smooth in the angle and uses a periodic trapezoid rule.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    out = np.zeros(xi.shape[0], dtype=complex)
    parts = [(density, "arc")]
    if d == 2 and not homogeneous:
        far = _far_field(density)
        rest = lambda t_, y: _evaluate(density, t_, y, "m") - far(t_, y)
        parts = [(far, "arc"), (rest, "trap")]
    edge_r = _chi_edge(alpha)
    cache = {}
    for n, v in enumerate(xi):
        r = float(np.linalg.norm(v))
        if r == 0.0:
            continue
        total = 0.0 + 0.0j
        for dens, kind in parts:
            if kind == "arc":
                w, sgn, absc, wt = _arc_rule(d, alpha, v / r, n_arc)
            else:
                w, sgn, absc, wt = _trapezoid_rule(alpha, v / r, 4 * n_arc)
            for k in range(len(w)):
                a = r * absc[k]
                if a == 0.0:
                    continue
                edge_s = edge_r * a if math.isfinite(edge_r) else math.inf
                key = (round(a, 15), sgn[k] > 0)
                if d == 1 and key in cache:
                    s, W = cache[key]
                else:
                    # along a ray dy/|y|^{d+alpha} = a^alpha ds/s^{1+alpha}, s = a|y|
                    far_s = 0.0 if homogeneous else _FAR * a
                    s, W = _ray_rule(alpha, lo_r * a, hi_r * a, edge_s if centred else 0.0, centred, level,
                                     far_s)
                    if sgn[k] < 0:
                        W = np.conj(W)
                    cache[key] = (s, W)
                mv = _evaluate(dens, t, np.outer(s / a, w[k]), "m")
                total += wt[k] * np.dot(W, mv)
        out[n] = total * r**alpha
    return out


def symbol_quadrature(t: float, xi, coeffs: CoefficientSet, *, density: str = "m",
                      check: bool = False, n_arc: int = 32) -> np.ndarray:
    """psi(t, xi) by radial-angular quadrature of the Levy integral (alpha < 2).

    ``density`` selects "m", "l", "m0" or "m-l". With ``check`` the rule is
    refined once and a NumericalError is raised when the two answers differ
    by more than ten times the 1e-6 relative target.
    """
    c = coeffs
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if c.alpha >= 2:
        raise ConfigurationError("alpha", "quadrature route needs alpha < 2")
    dens = _select_density(c, density)
    psi = c.levy_scale * _levy_integral(c.alpha, xi, t, dens, c.d, n_arc=n_arc)
    if check:
        fine = c.levy_scale * _levy_integral(c.alpha, xi, t, dens, c.d, level=1, n_arc=2 * n_arc)
        scale = np.maximum(np.abs(fine), 1e-300)
        bad = np.abs(fine - psi) > 10 * QUAD_TARGET * scale
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise NumericalError(f"symbol quadrature did not converge at xi={xi[j].tolist()}")
        psi = fine
    if c.alpha == 1.0 and density in ("m", "m-l"):
        psi = psi + 1j * xi @ np.asarray(c.b(t), dtype=float).reshape(c.d)
    return psi


def _select_density(c, name):
    if name == "m":
        return c.m
    if name == "l":
        return c.l
    if name == "m0":
        return c.m0
    if name == "m-l":
        return lambda t, y: _evaluate(c.m, t, y, "m") - _evaluate(c.l, t, y, "l")
    raise ConfigurationError("density", f"unknown density {name!r}")


@dataclasses.dataclass(frozen=True)
class TruncationSplit:
    """Pieces of psi relative to a jump cut-off eps.

    psi = small - compensator + centering, where ``small`` integrates over
    |y| <= eps, ``compensator`` is -int_{|y|>eps} (e^{i xi.y} - 1) and
    ``centering`` is -i xi . int_{|y|>eps} chi(y) y (Levy kernel throughout).
    """

    small: np.ndarray
    compensator: np.ndarray
    centering: np.ndarray

    def total(self):
        return self.small - self.compensator + self.centering


def _centering(alpha, xi, t, density, d, eps, n_arc=64):
    """-i (xi, int_{|y|>eps} chi(y) y m dy/|y|^{d+alpha}), raw kernel."""
    if alpha < 1:
        return np.zeros(len(xi), dtype=complex)
    hi = 1.0 if alpha == 1 else math.inf
    if eps >= hi:
        return np.zeros(len(xi), dtype=complex)
    # radial integral of r * r^{-1-alpha} dr = r^{-alpha} dr along each direction
    if d == 1:
        dirs, dw = np.array([[1.0], [-1.0]]), np.ones(2)
    else:
        th = 2 * np.pi * np.arange(4 * n_arc) / (4 * n_arc)
        dirs, dw = np.stack([np.cos(th), np.sin(th)], -1), np.full(4 * n_arc, 2 * np.pi / (4 * n_arc))
    top = hi if math.isfinite(hi) else _FAR * max(1.0, eps)
    s, w = _segment_nodes(eps, min(top, 1.0), 32, 8) if eps < 1.0 else (np.zeros(0), np.zeros(0))
    if top > 1.0:
        # r^{-alpha} m(r) is smooth in log r: log panels per decade
        lo = max(eps, 1.0)
        x, wl = _gl(16)
        dec = max(1, int(math.ceil(math.log10(top / lo))))
        edges = np.exp(np.linspace(math.log(lo), math.log(top), dec + 1))
        la, lb = np.log(edges[:-1]), np.log(edges[1:])
        u = (0.5 * (lb - la))[:, None] * x + (0.5 * (lb + la))[:, None]
        s = np.concatenate([s, np.exp(u).ravel()])
        w = np.concatenate([w, ((0.5 * (lb - la))[:, None] * wl * np.exp(u)).ravel()])
    vec = np.zeros(d)
    for j, u in enumerate(dirs):
        mv = _evaluate(density, t, np.outer(s, u), "m")
        val = np.dot(w * s**-alpha, mv)
        if math.isinf(hi):
            mtail = _evaluate(density, t, (top * u)[None, :], "m")[0]
            val += mtail * top ** (1 - alpha) / (alpha - 1)
        vec += dw[j] * val * u
    return -1j * (np.atleast_2d(xi) @ vec)


def truncation_correction(eps: float, t: float, xi, coeffs: CoefficientSet, *,
                          density: str = "l", n_arc: int = 32) -> TruncationSplit:
    """Split psi for the density into small-jump, compensator and centering parts.

    Each part is computed by its own quadrature; all carry the Levy constant.
    """
    c = coeffs
    if not eps > 0:
        raise ConfigurationError("eps", f"jump cut-off must be positive, got {eps}")
    if eps >= _S_TAIL:
        raise ConfigurationError("eps", f"jump cut-off {eps} beyond the quadrature range")
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    dens = _select_density(c, density)
    k = c.levy_scale
    small = k * _levy_integral(c.alpha, xi, t, dens, c.d, hi_r=eps, n_arc=n_arc)
    comp = -k * _levy_integral(c.alpha, xi, t, dens, c.d, lo_r=eps, centred=False, n_arc=n_arc)
    cent = k * _centering(c.alpha, xi, t, dens, c.d, eps)
    return TruncationSplit(small, comp, cent)


# --------------------------------------------------------------------------
# generator
# --------------------------------------------------------------------------

def generator_symbol(t: float, xi, coeffs: CoefficientSet, variant: str = "A") -> np.ndarray:
    """Symbol of A (variant "A") or of A with m - l and B - sigma sigma^T / 2 ("tilde")."""
    c = coeffs
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if c.alpha == 2.0:
        B = np.asarray(c.B(t), dtype=float).reshape(c.d, c.d)
        if variant == "tilde":
            sig = np.asarray(c.sigma(t), dtype=float).reshape(c.d, -1)
            B = B - 0.5 * sig @ sig.T
        return -0.5 * np.einsum("ni,ij,nj->n", xi, B, xi) + 0j
    dens = "m" if variant == "A" else "m-l"
    if c.m_homogeneous:
        out = _homogeneous_integral(c.alpha, xi, t, _select_density(c, dens), c.d)
    else:
        out = c.levy_scale * _levy_integral(c.alpha, xi, t, _select_density(c, dens), c.d)
    if c.alpha == 1.0:
        out = out + 1j * xi @ np.asarray(c.b(t), dtype=float).reshape(c.d)
    return out


@lru_cache(maxsize=256)
def symbol_table(grid: SpectralGrid, coeffs: CoefficientSet, t: float, variant: str = "A") -> np.ndarray:
    """Generator symbol on the lattice (FFT order), shared read-only."""
    vals = generator_symbol(t, grid.xi_vectors, coeffs, variant).reshape(grid.shape)
    vals = np.where(grid.nyquist, 0.0, vals)
    vals.setflags(write=False)
    return vals


def apply_generator(field: Field, t: float, coeffs: CoefficientSet, variant: str = "A") -> Field:
    if not coeffs.validated:
        raise ContractError("apply_generator needs validated coefficients (call .validate())")
    if coeffs.d != field.grid.d:
        raise ConfigurationError("d", f"coefficients are {coeffs.d}-dimensional, grid is {field.grid.d}")
    return apply_multiplier(field, symbol_table(field.grid, coeffs, float(t), variant))


# --------------------------------------------------------------------------
# raw radial rule in y for norms and the Lambda / I operators
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class YRule:
    """Quadrature nodes y_k and weights for dy / |y|^{d+alpha} on r_min < |y| < r_max.

    Radii use Gauss-Legendre in log r on panels whose edges include
    ``breaks``; directions are the two-point sphere (d = 1) or a uniform
    circle (d = 2).
    """

    d: int
    alpha: float
    nodes: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)
    radii: np.ndarray
    r_min: float
    r_max: float

    @classmethod
    def build(cls, d, alpha, r_min=1e-2, r_max=1e2, breaks=(), per_panel=16, n_dir=32, tail=False):
        """With ``tail`` a last node at r_max carries the mass of |y| > r_max."""
        edges = set(np.exp(np.linspace(math.log(r_min), math.log(r_max),
                                       max(2, int(math.ceil(math.log10(r_max / r_min)))) + 1)))
        edges |= {float(b) for b in breaks if r_min < b < r_max}
        edges = sorted(edges)
        x, w = _gl(per_panel)
        rs, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            la, lb = math.log(a), math.log(b)
            u = 0.5 * (lb - la) * x + 0.5 * (lb + la)
            rs.append(np.exp(u))
            # dr / r^{1+alpha} = e^{-alpha u} du (radial part of dy/|y|^{d+alpha})
            ws.append(0.5 * (lb - la) * w * np.exp(-alpha * u))
        if tail:
            rs.append(np.array([r_max]))
            ws.append(np.array([r_max**-alpha / alpha]))
        r = np.concatenate(rs)
        wr = np.concatenate(ws)
        if d == 1:
            dirs, dw = np.array([[1.0], [-1.0]]), np.ones(2)
        else:
            th = 2 * np.pi * (np.arange(n_dir) + 0.5) / n_dir
            dirs, dw = np.stack([np.cos(th), np.sin(th)], -1), np.full(n_dir, 2 * np.pi / n_dir)
        nodes = (dirs[:, None, :] * r[None, :, None]).reshape(-1, d)
        weights = (dw[:, None] * wr[None, :]).ravel()
        return cls(d, alpha, nodes, weights, r, r_min, math.inf if tail else r_max)

    def __len__(self):
        return len(self.weights)


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def half_sphere(d: int) -> Density:
    """Direction-only density vanishing on half of the sphere.

    d = 1: supported on y > 0. d = 2: symmetric, supported where
    |cos(angle)| >= 1/sqrt(2), so the alpha = 1 cancellation still holds.
    """
    if d == 1:
        return lambda t, y: (np.asarray(y)[:, 0] > 0).astype(float)

    def density(t, y):
        y = np.asarray(y)
        r = np.linalg.norm(y, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.abs(y[:, 0]) / r
        return (c >= 1 / math.sqrt(2)).astype(float)

    return density


def _sphere_integral(density, d, alpha, xi_dir, n=4096):
    if d == 1:
        w = np.array([[1.0], [-1.0]])
        return float(np.sum(np.abs(w @ xi_dir) ** alpha * density(0.0, w)))
    th = 2 * np.pi * (np.arange(n) + 0.5) / n
    w = np.stack([np.cos(th), np.sin(th)], -1)
    return float(np.sum(np.abs(w @ xi_dir) ** alpha * density(0.0, w)) * 2 * np.pi / n)


PRESETS = ("fractional-laplacian", "kim-form", "half-sphere-degenerate", "heat")


def preset(name: str, *, d: int = 1, alpha: float = 1.5, T: float = 1.0, lam: float = 0.0,
           delta: float | None = None, a: Callable | None = None, l_fraction: float = 0.0,
           b=None, validate: bool = True) -> CoefficientSet:
    """Named coefficient configurations.

    ``l_fraction`` sets l = l_fraction * m for the jump-driven presets.
    """
    if name == "heat":
        dl = 1.0 if delta is None else delta
        c = CoefficientSet(alpha=2.0, d=d, B=lambda t: dl * np.eye(d), lam=lam, K=dl, delta=dl,
                           T=T, name=name)
    elif name == "fractional-laplacian":
        if alpha == 2.0:
            c = CoefficientSet(alpha=2.0, d=d, B=lambda t: 2.0 * np.eye(d), lam=lam, K=2.0,
                               delta=2.0 if delta is None else delta, T=T, name=name)
        else:
            m0 = constant(1.0 - l_fraction)
            dl = _min_sphere(m0, d, alpha) if delta is None else delta
            bb = (lambda t: np.zeros(d)) if b is None else b
            c = CoefficientSet(alpha=alpha, d=d, m=constant(1.0), l=constant(l_fraction), m0=m0,
                               b=bb, lam=lam, K=1.0 + l_fraction + _bmax(bb, T), delta=dl, T=T,
                               m_homogeneous=True, name=name)
    elif name == "kim-form":
        if alpha >= 2:
            raise ConfigurationError("alpha", "kim-form is a jump preset, alpha < 2")
        af = a or (lambda t: 1.0 + 0.5 * math.sin(2 * math.pi * t))
        amin = min(af(s) for s in np.linspace(0, T, 257))
        amax = max(af(s) for s in np.linspace(0, T, 257))
        m = lambda t, y: np.full(np.shape(y)[0], af(t))
        m0 = constant(amin)
        dl = _min_sphere(m0, d, alpha) if delta is None else delta
        c = CoefficientSet(alpha=alpha, d=d, m=m, m0=m0, lam=lam, K=amax, delta=dl, T=T,
                           m_homogeneous=True, time_homogeneous=False, name=name)
    elif name == "half-sphere-degenerate":
        m = half_sphere(d)
        if alpha == 1.0 and d == 1:
            raise ConfigurationError("alpha", "a one-sided density cannot cancel the alpha = 1 drift in d = 1")
        dl = _min_sphere(m, d, alpha) if delta is None else delta
        c = CoefficientSet(alpha=alpha, d=d, m=m, m0=m, lam=lam, K=1.0, delta=dl, T=T,
                           m_homogeneous=True, name=name)
    else:
        raise ConfigurationError("preset", f"unknown coefficient preset {name!r}; known: {', '.join(PRESETS)}")
    return c.validate() if validate else c


def _bmax(b, T):
    return max(float(np.abs(np.asarray(b(s))).max()) for s in np.linspace(0, T, 17))


def _min_sphere(density, d, alpha):
    if d == 1:
        dirs = [np.array([1.0]), np.array([-1.0])]
    else:
        th = 2 * np.pi * (np.arange(256) + 0.5) / 256
        dirs = [np.array([math.cos(x), math.sin(x)]) for x in th]
    # validators sample the sphere more coarsely; keep a margin below the fine value
    return 0.9 * min(_sphere_integral(density, d, alpha, v) for v in dirs)
