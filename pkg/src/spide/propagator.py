"""Fundamental solution, solution operators and the mild solver.

Coefficients do not depend on x, so every operator is a Fourier multiplier
and the equation decouples into scalar ODEs, one per lattice frequency.
Coefficients and inputs are sampled at the left endpoint of each mesh
interval and held constant on it. Within an interval the linear part is
integrated exactly (exponential integrator); jumps are applied at their
continuous-time event times, which become extra solution slices.
"""

from __future__ import annotations

import dataclasses
import math
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import ConfigurationError, ContractError, NumericalError, ShapeError
from .grid import Field, SpectralGrid, forward, make_grid, shift_field
from .noise import MarkMeasure, NoisePath, make_path, stream
from .norms import sobolev_slices
from .symbols import CoefficientSet, YRule, generator_symbol, symbol_closed_form, symbol_table, truncation_correction

R_MAX = 1e4


def time_mesh(T: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ConfigurationError("steps", f"need at least one step, got {steps}")
    return np.linspace(0.0, T, steps + 1)


def phi1(z, dt):
    return _kernels.phi1(z, dt)


# --------------------------------------------------------------------------
# symbol tables
# --------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _closed_table(grid: SpectralGrid, coeffs: CoefficientSet, t: float) -> np.ndarray:
    vals = symbol_closed_form(t, grid.xi_vectors, coeffs).reshape(grid.shape)
    vals = np.where(grid.nyquist, 0.0, vals)
    vals.setflags(write=False)
    return vals


@lru_cache(maxsize=256)
def _compensator_table(grid: SpectralGrid, coeffs: CoefficientSet, t: float, eps: float) -> np.ndarray:
    if coeffs.alpha == 2.0 or getattr(coeffs.l, "constant", None) == 0.0:
        vals = np.zeros(grid.shape, dtype=complex)
    else:
        split = truncation_correction(eps, t, grid.xi_vectors, coeffs, density="l")
        vals = split.compensator.reshape(grid.shape)
        vals = np.where(grid.nyquist, 0.0, vals)
    vals.setflags(write=False)
    return vals


def psi_table(grid: SpectralGrid, coeffs: CoefficientSet, t: float, which: str = "A") -> np.ndarray:
    """Symbol on the lattice: "A" (generator), "m0" (reference), "tilde"."""
    if coeffs.time_homogeneous:
        t = 0.0
    if which == "m0":
        return _closed_table(grid, coeffs, float(t))
    return symbol_table(grid, coeffs, float(t), which)


def effective_symbol(grid, coeffs, t, eps) -> np.ndarray:
    """psi_m plus the drift compensating the simulated l-jumps above eps."""
    if coeffs.time_homogeneous:
        t = 0.0
    return psi_table(grid, coeffs, t, "A") + _compensator_table(grid, coeffs, float(t), float(eps))


def _coefficient_times(coeffs, s, t, steps):
    """Pieces of [s, t] on the coefficient mesh: (left endpoints, lengths)."""
    if coeffs.time_homogeneous:
        return np.array([0.0]), np.array([t - s])
    mesh = time_mesh(coeffs.T, steps)
    lo = np.clip(mesh[:-1], s, t)
    hi = np.clip(mesh[1:], s, t)
    keep = hi > lo
    return mesh[:-1][keep], (hi - lo)[keep]


# --------------------------------------------------------------------------
# fundamental solution
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class Kernel:
    """Spectral table of G^lambda_{s,t}: exp(int_s^t psi(r) dr - lambda (t - s))."""

    grid: SpectralGrid
    s: float
    t: float
    lam: float
    table: np.ndarray
    coeffs: CoefficientSet
    which: str = "m0"
    steps: int = 512

    def field(self) -> Field:
        return Field(self.grid, self.table, spectral=True, real=True)

    def _exponent(self, grid):
        nodes, lens = _coefficient_times(self.coeffs, self.s, self.t, self.steps)
        acc = np.zeros(grid.shape, dtype=complex)
        for r, w in zip(nodes, lens):
            if self.which == "m0":
                acc += w * _closed_table(grid, self.coeffs, float(r))
            else:
                acc += w * symbol_table(grid, self.coeffs, float(r), self.which)
        return acc - self.lam * (self.t - self.s)

    def physical(self, alias: bool = True, tol: float = 1e-17) -> np.ndarray:
        """Samples of the periodised kernel on the lattice.

        The plain inverse transform truncates the spectrum at Nyquist, which
        rings when the symbol decays slowly (small alpha, short times). With
        ``alias`` the table is extended to a J-times finer frequency lattice
        until it has decayed below ``tol`` and then folded back, which
        samples the periodised kernel exactly.
        """
        g = self.grid
        if not alias:
            return self.field().to_physical().values
        J = 1
        while True:
            fine = make_grid(g.d, g.N * J, g.L)
            ex = self._exponent(fine)
            band = (fine.abs_xi >= 0.5 * fine.abs_xi.max()) & ~fine.nyquist
            edge = np.abs(np.exp(ex))[band].max()
            if edge < tol or fine.N ** g.d >= 2**22:
                break
            J *= 2
        tab = np.where(fine.nyquist, 0.0, np.exp(ex))
        vals = Field(fine, tab, spectral=True, real=True).to_physical().values
        sl = tuple(slice(None, None, J) for _ in range(g.d))
        return vals[sl]


def fundamental_kernel(s: float, t: float, lam: float, coeffs: CoefficientSet, grid: SpectralGrid | None = None,
                       *, which: str = "m0", steps: int = 512) -> Kernel:
    """G^lambda_{s,t} for the reference symbol (``which="m0"``) or the generator ("A")."""
    if not s < t:
        raise ConfigurationError("t", f"need s < t, got s={s}, t={t}")
    if not coeffs.validated:
        raise ContractError("fundamental_kernel needs validated coefficients")
    grid = grid or make_grid(coeffs.d)
    k = Kernel(grid, float(s), float(t), float(lam), None, coeffs, which, steps)
    table = np.exp(k._exponent(grid))
    table = np.where(grid.nyquist, 0.0, table)
    return dataclasses.replace(k, table=table)


# --------------------------------------------------------------------------
# deterministic operators
# --------------------------------------------------------------------------

def semigroup_T(u0: Field, t, lam: float, coeffs: CoefficientSet, *, which: str = "A", steps: int = 512) -> Field:
    """T^lambda_t u0. A scalar ``t`` gives a field, an array of times a space-time field."""
    grid = u0.grid
    spec = u0.to_spectral().values
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = []
    for tk in ts:
        if tk == 0:
            out.append(np.where(grid.nyquist, 0.0, spec))
            continue
        ker = fundamental_kernel(0.0, tk, lam, coeffs, grid, which=which, steps=steps)
        out.append(ker.table * spec)
    if np.ndim(t) == 0:
        res = Field(grid, out[0], spectral=True, real=u0.real)
    else:
        res = Field(grid, np.stack(out), spectral=True, real=u0.real, times=ts, closed=True)
    return res if u0.spectral else res.to_physical()


def _slices_on_mesh(f: Field, mesh):
    """Left-endpoint spectral slices of a space-time input on the mesh."""
    spec = f.to_spectral()
    if f.times is None:
        return np.broadcast_to(spec.values, (len(mesh) - 1,) + spec.values.shape)
    idx = np.searchsorted(f.times, mesh[:-1], side="right") - 1
    if np.any(idx < 0):
        raise ShapeError("input field does not cover the start of the mesh")
    return spec.values[idx]


def duhamel_R(f: Field, lam: float, coeffs: CoefficientSet, *, T: float | None = None, steps: int = 512) -> Field:
    """R_lambda f on the mesh (closed space-time field), f piecewise constant per step."""
    grid = f.grid
    T = coeffs.T if T is None else T
    mesh = time_mesh(T, steps)
    F = _slices_on_mesh(f, mesh)
    u = np.zeros(grid.shape, dtype=complex)
    out = [u]
    for k in range(steps):
        z = psi_table(grid, coeffs, mesh[k], "A") - lam
        dt = mesh[k + 1] - mesh[k]
        u = np.exp(z * dt) * u + phi1(z, dt) * F[k]
        u = np.where(grid.nyquist, 0.0, u)
        out.append(u)
    return Field(grid, np.stack(out), spectral=True, real=f.real, times=mesh, closed=True).to_physical()


def jump_transport_Q(u_hat: np.ndarray, y, grid: SpectralGrid) -> np.ndarray:
    """Increment (e^{i(xi,y)} - 1) u_hat of one transport jump."""
    phase = sum(c * yi for c, yi in zip(grid.xi_mesh, np.atleast_1d(y)))
    return np.where(grid.nyquist, 0.0, np.expm1(1j * phase) * u_hat)


def _shift_table(grid, y):
    phase = sum(c * yi for c, yi in zip(grid.xi_mesh, np.atleast_1d(y)))
    return np.exp(1j * phase)


# --------------------------------------------------------------------------
# batched Monte Carlo kernels on a few modes
# --------------------------------------------------------------------------

def wiener_modes(z: np.ndarray, load: np.ndarray, T: float, steps: int, seeds, *, stride: int = 1,
                 chunk: int = 256, path_ids=None) -> np.ndarray:
    """Stochastic convolution on K modes for many paths.

    z: (K,) evolution rates psi - lambda; load: (M, K) input spectra h_m(xi_j).
    Each path draws its increments from the Wiener stream of (seed, path id).
    Returns (P, steps // stride + 1, K).
    """
    z = np.asarray(z, dtype=complex)
    load = np.asarray(load, dtype=complex)
    dt = T / steps
    decay = np.exp(z * dt)
    M = load.shape[0]
    seeds = list(seeds)
    path_ids = list(path_ids) if path_ids is not None else list(range(len(seeds)))
    out = []
    for i in range(0, len(seeds), chunk):
        dW = np.stack([stream(s, p, "wiener").standard_normal((steps, M)) for s, p in
                       zip(seeds[i:i + chunk], path_ids[i:i + chunk])]) * math.sqrt(dt)
        out.append(_kernels.ou_batch(decay, load, dW, stride))
    return np.concatenate(out)


def poisson_modes(z: np.ndarray, amps: np.ndarray, marks: MarkMeasure, T: float, seeds, rec_times,
                  *, path_ids=None) -> np.ndarray:
    """Compensated Poisson convolution on K modes for many paths.

    amps: (n_marks, K) spectra Phi(xi_j, mark). Between events the modes
    follow dz = (rate z - sum_k Pi_k amps_k) dt exactly.
    """
    from .noise import sample_poisson_marks

    z = np.asarray(z, dtype=complex)
    amps = np.asarray(amps, dtype=complex)
    drift = -(marks.masses @ amps)
    seeds = list(seeds)
    path_ids = list(path_ids) if path_ids is not None else list(range(len(seeds)))
    offsets = [0]
    times, idx = [], []
    for s, p in zip(seeds, path_ids):
        t, k = sample_poisson_marks(marks, T, s, path_id=p)
        times.append(t)
        idx.append(k)
        offsets.append(offsets[-1] + len(t))
    times = np.concatenate(times) if times else np.zeros(0)
    idx = np.concatenate(idx).astype(int) if idx else np.zeros(0, int)
    ev_amps = amps[idx] if len(idx) else np.zeros((0, len(z)), complex)
    return _kernels.jump_ou(z, drift, np.asarray(offsets, np.int64), times, ev_amps,
                            np.asarray(rec_times, dtype=float))


# --------------------------------------------------------------------------
# inputs
# --------------------------------------------------------------------------

def _spectral_array(v, grid):
    if isinstance(v, Field):
        return v.to_spectral().values
    v = np.asarray(v)
    return forward(Field(grid, v, real=not np.iscomplexobj(v))).values


def _input_fn(x, grid):
    """Normalise an input to a callable t -> spectral array, or None."""
    if x is None:
        return None
    if isinstance(x, Field):
        spec = x.to_spectral()
        if spec.times is None:
            vals = spec.values
            return lambda t: vals
        times, vals = spec.times, spec.values

        def lookup(t):
            i = int(np.searchsorted(times, t, side="right")) - 1
            return vals[max(i, 0)]

        return lookup
    if callable(x):
        return lambda t: _spectral_array(x(t), grid)
    raise ConfigurationError("input", f"unsupported input type {type(x).__name__}")


def default_y_rule(d: int, alpha: float, eps: float) -> YRule:
    """y-rule on |y| > eps used for g compensators and I_eps g."""
    return YRule.build(d, alpha, eps, R_MAX, breaks=(1.0,), tail=True)


def _g_spectra(g, t, ys, grid):
    """Spectra of g(t, ., y) for an (n, d) array of jumps -> (n,) + grid.shape."""
    v = g(t, ys)
    if isinstance(v, Field):
        return v.to_spectral().values
    v = np.asarray(v)
    return forward(Field(grid, v, real=not np.iscomplexobj(v))).values


# --------------------------------------------------------------------------
# Lambda and I
# --------------------------------------------------------------------------

@dataclasses.dataclass
class LambdaI:
    """Lambda g, the truncated integrals I_eps g and the limit Ig (if Cauchy)."""

    grid: SpectralGrid
    g: object
    coeffs: CoefficientSet
    eps: tuple
    I_eps: list  # spectral arrays at time t, one per eps
    increments: list  # H^beta_p distances between successive I_eps
    converged: bool
    t: float

    def Lambda(self, t, ys):
        """Spectra of Lambda g(t, ., y) = g(t, . - y, y)."""
        G = _g_spectra(self.g, t, ys, self.grid)
        return np.stack([np.conj(_shift_table(self.grid, y)) * Gi for y, Gi in zip(ys, G)])

    @property
    def Ig(self):
        return self.I_eps[-1] if self.converged else None


def I_eps_spectrum(g, t, eps, coeffs, grid, rule: YRule | None = None) -> np.ndarray:
    """I_eps g(t) = int_{|y|>eps} (Lambda g - g) l dy/|y|^{d+alpha} (Levy constant applied)."""
    if coeffs.alpha == 2.0:
        return np.zeros(grid.shape, dtype=complex)
    rule = rule or default_y_rule(grid.d, coeffs.alpha, eps)
    G = _g_spectra(g, t, rule.nodes, grid)
    w = rule.weights * np.asarray(coeffs.l(t, rule.nodes), dtype=float) * coeffs.levy_scale
    acc = np.zeros(grid.shape, dtype=complex)
    for wk, y, Gk in zip(w, rule.nodes, G):
        if wk != 0:
            acc += wk * (np.conj(_shift_table(grid, y)) - 1.0) * Gk
    return np.where(grid.nyquist, 0.0, acc)


def lambda_and_I(g, eps_seq, coeffs: CoefficientSet, grid: SpectralGrid, *, t: float = 0.0,
                 beta: float = 0.0, p: float = 2.0, tol: float = 1e-8) -> LambdaI:
    """Lambda g and I_eps g along a decreasing eps sequence.

    The limit is accepted when the last increment in H^beta_p is below
    ``tol``; otherwise ``converged`` is False. Divergence is a state, not
    an error.
    """
    eps_seq = tuple(float(e) for e in eps_seq)
    if any(b >= a for a, b in zip(eps_seq, eps_seq[1:])):
        raise ConfigurationError("eps", "eps sequence must be strictly decreasing")
    Is = [I_eps_spectrum(g, t, e, coeffs, grid) for e in eps_seq]
    inc = []
    for a, b in zip(Is, Is[1:]):
        diff = Field(grid, b - a, spectral=True, real=True)
        inc.append(float(sobolev_slices(diff, beta, p)))
    ok = bool(inc) and inc[-1] < tol
    return LambdaI(grid, g, coeffs, eps_seq, Is, inc, ok, t)


# --------------------------------------------------------------------------
# mild solver
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class SolutionBundle:
    """Cadlag solution slices in spectral form.

    ``spec[i]`` is u at ``times[i]`` after any jump; ``left[i]`` the left
    limit. ``interval[i]`` is the mesh interval on which the smooth segment
    starting at slice i lies. ``kind`` is "mesh", "stable" or "mark".
    """

    grid: SpectralGrid
    times: np.ndarray
    spec: np.ndarray
    left: np.ndarray
    interval: np.ndarray
    kind: tuple
    marks: tuple  # event mark (jump vector or mark index) per slice, None for mesh slices
    coeffs: CoefficientSet
    lam: float
    path: NoisePath
    inputs: dict
    diagnostics: dict

    @property
    def u(self) -> Field:
        return Field(self.grid, self.spec, spectral=True, real=True, times=self.times, closed=True).to_physical()

    @property
    def final(self) -> Field:
        return Field(self.grid, self.spec[-1], spectral=True, real=True).to_physical()

    def on_mesh(self) -> Field:
        """Slices at the mesh points only (uniform, for space-time norms)."""
        keep = np.array([k == "mesh" for k in self.kind])
        return Field(self.grid, self.spec[keep], spectral=True, real=True, times=self.times[keep],
                     closed=True).to_physical()


def path_for(coeffs: CoefficientSet, *, T: float | None = None, steps: int = 512, seed: int = 0, path_id: int = 0,
             eps_cut: float = 0.02, marks: MarkMeasure | None = None, M: int | None = None) -> NoisePath:
    """Noise path whose stable jumps follow the observation density l (Levy constant applied)."""
    c = coeffs
    zero_l = getattr(c.l, "constant", None) == 0.0 or c.alpha == 2.0
    scale = c.levy_scale
    dens = None if zero_l else (lambda t, y: scale * np.asarray(c.l(t, y), dtype=float))
    return make_path(c.T if T is None else T, steps, seed, path_id=path_id, alpha=c.alpha, d=c.d, density=dens,
                     K=scale * c.K, eps_cut=eps_cut, marks=marks, M=c.M if M is None else M,
                     time_homogeneous=c.time_homogeneous)


def _forcing(k_time, grid, coeffs, fns, path, rule, g_form):
    """Piecewise-constant forcing on one mesh interval."""
    F = np.zeros(grid.shape, dtype=complex)
    f, g, Phi = fns["f"], fns["g"], fns["Phi"]
    if f is not None:
        F = F + f(k_time)
    if g is not None and coeffs.alpha < 2:
        G = _g_spectra(g, k_time, rule.nodes, grid)
        w = rule.weights * np.asarray(coeffs.l(k_time, rule.nodes), dtype=float) * coeffs.levy_scale
        F = F - np.tensordot(w, G, axes=(0, 0))
    if Phi is not None and path.marks is not None:
        P = Phi(k_time)
        F = F - np.tensordot(path.marks.masses, P, axes=(0, 0))
    return np.where(grid.nyquist, 0.0, F)


def solve_mild(coeffs: CoefficientSet, u0: Field, f=None, g=None, Phi=None, h=None, path: NoisePath | None = None,
               *, lam: float | None = None, g_form: str = "native", y_rule: YRule | None = None) -> SolutionBundle:
    """Event-driven exponential integrator for the full equation.

    Inputs: ``f`` and ``h`` are Fields (space or space-time) or callables of
    t; ``h`` carries a leading mode axis of length M. ``Phi(t)`` returns one
    field per mark of the path's mark measure. ``g(t, ys)`` returns one
    field per jump vector in the (n, d) array ``ys``. With
    ``g_form="shifted"`` the supplied g is read as Lambda g: the jump update
    becomes e^{i xi y}(u + g) and its compensator is taken of that input.
    """
    c = coeffs
    if not c.validated:
        raise ContractError("solve_mild needs validated coefficients")
    grid = u0.grid
    if grid.d != c.d:
        raise ConfigurationError("d", f"coefficients are {c.d}-dimensional, grid is {grid.d}")
    if g_form not in ("native", "shifted"):
        raise ConfigurationError("g_form", f"unknown g form {g_form!r}")
    path = path if path is not None else path_for(c, M=0)
    lam = c.lam if lam is None else float(lam)
    mesh = path.mesh
    steps = len(mesh) - 1
    sig_on = c.alpha == 2.0 and any(np.any(np.asarray(c.sigma(t)) != 0) for t in mesh[:: max(1, steps // 8)])
    if not sig_on and c.alpha < 2:
        if any(np.any(np.asarray(c.sigma(t)) != 0) for t in mesh[:: max(1, steps // 8)]):
            raise ConfigurationError("sigma", "gradient noise is only defined for alpha = 2")
    fns = {"f": _input_fn(f, grid), "h": _input_fn(h, grid), "Phi": _input_fn(Phi, grid), "g": g}
    if Phi is not None and path.marks is None:
        raise ConfigurationError("Phi", "Phi given but the path has no mark measure")
    rule = y_rule or default_y_rule(grid.d, c.alpha, path.eps_cut) if (g is not None and c.alpha < 2) else None
    if fns["h"] is not None:
        probe = fns["h"](0.0)
        if probe.shape[0] != path.M or probe.shape[1:] != grid.shape:
            raise ShapeError(f"h has {probe.shape[0]} modes, path has M = {path.M}")
    # merged event list
    ev_t = np.concatenate([path.stable_times, path.mark_times])
    ev_kind = np.concatenate([np.zeros(len(path.stable_times), int), np.ones(len(path.mark_times), int)])
    ev_ref = np.concatenate([np.arange(len(path.stable_times)), path.mark_index]).astype(int)
    order = np.argsort(ev_t, kind="stable")
    ev_t, ev_kind, ev_ref = ev_t[order], ev_kind[order], ev_ref[order]

    u = np.where(grid.nyquist, 0.0, u0.to_spectral().values).astype(complex)
    times, spec, left, interval, kinds, mk = [0.0], [u], [u], [], ["mesh"], [None]
    cache = {}
    e = 0
    jump_log = []
    for k in range(steps):
        t0, t1 = mesh[k], mesh[k + 1]
        key = 0.0 if c.time_homogeneous else t0
        if key not in cache:
            cache[key] = effective_symbol(grid, c, t0, path.eps_cut) - lam
        z = cache[key]
        F = _forcing(t0, grid, c, fns, path, rule, g_form)
        s = t0
        last = k == steps - 1
        while e < len(ev_t) and (ev_t[e] < t1 or (last and ev_t[e] <= t1)):
            tau = ev_t[e]
            dt = tau - s
            if dt > 0:
                u = np.exp(z * dt) * u + phi1(z, dt) * F
            before = u
            if ev_kind[e] == 0:
                y = path.stable_marks[ev_ref[e]]
                sh = _shift_table(grid, y)
                if g is not None:
                    G = _g_spectra(g, t0, y[None, :], grid)[0]
                    u = sh * (u + G) if g_form == "shifted" else sh * u + G
                else:
                    u = sh * u
                mk.append(tuple(y))
                kinds.append("stable")
                jump_log.append((float(tau), "stable") + tuple(float(v) for v in y))
            else:
                if fns["Phi"] is not None:
                    u = u + fns["Phi"](t0)[ev_ref[e]]
                mk.append(int(ev_ref[e]))
                kinds.append("mark")
                jump_log.append((float(tau), "mark", float(ev_ref[e])))
            u = np.where(grid.nyquist, 0.0, u)
            interval.append(k)
            times.append(float(tau))
            spec.append(u)
            left.append(before)
            s = tau
            e += 1
        dt = t1 - s
        if dt > 0:
            u = np.exp(z * dt) * u + phi1(z, dt) * F
            before = u
            if sig_on:
                sig = np.asarray(c.sigma(t0), dtype=float).reshape(c.d, -1)
                dW = path.wiener[k, : sig.shape[1]]
                bxi = np.tensordot(np.stack(grid.xi_mesh), sig, axes=(0, 0))  # grid + (M,)
                expo = 1j * (bxi @ dW) + 0.5 * np.sum(bxi**2, axis=-1) * (t1 - t0)
                u = np.exp(expo) * u
            if fns["h"] is not None:
                u = u + np.tensordot(path.wiener[k], fns["h"](t0), axes=(0, 0))
            u = np.where(grid.nyquist, 0.0, u)
            interval.append(k)
            times.append(float(t1))
            spec.append(u)
            left.append(before)
            kinds.append("mesh")
            mk.append(None)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite solution at t = {t1:.6g}")
    interval.append(steps - 1)
    return SolutionBundle(grid, np.asarray(times), np.stack(spec), np.stack(left), np.asarray(interval),
                          tuple(kinds), tuple(mk), c, lam, path,
                          {"u0": u0, "f": f, "g": g, "Phi": Phi, "h": h, "g_form": g_form, "rule": rule,
                           "fns": fns},
                          {"jumps": jump_log})


def stoch_conv_wiener(h, lam: float, coeffs: CoefficientSet, path: NoisePath, grid: SpectralGrid | None = None) -> Field:
    """R-bar_lambda h along one path, on the mesh."""
    if isinstance(h, Field):
        grid = h.grid
        probe = h.values.shape[1 if h.times is not None else 0]
        if probe != path.M:
            raise ShapeError(f"h has {probe} modes, path has M = {path.M}")
    zero = Field(grid, np.zeros(grid.shape))
    return solve_mild(coeffs, zero, h=h, path=path, lam=lam).on_mesh()


def stoch_conv_poisson(Phi, lam: float, coeffs: CoefficientSet, path: NoisePath, grid: SpectralGrid) -> Field:
    """R-tilde_lambda Phi along one path; slices include the mark event times."""
    zero = Field(grid, np.zeros(grid.shape))
    nil = dataclasses.replace(path, stable_times=np.zeros(0), stable_marks=np.zeros((0, grid.d)))
    return solve_mild(coeffs, zero, Phi=Phi, path=nil, lam=lam).u


# --------------------------------------------------------------------------
# weak form
# --------------------------------------------------------------------------

def _pair(a_hat, phi_hat, grid):
    """<a, phi> from spectra (Parseval on the torus)."""
    return complex(np.sum(a_hat * np.conj(phi_hat)) / grid.volume)


def weak_residual(bundle: SolutionBundle, phi: Field, path: NoisePath | None = None) -> float:
    """Normalised mismatch of the integrated weak form at t = T.

    Time integrals of <(A - lambda) u + f, phi> are evaluated with the
    trapezoid rule plus the Euler-Maclaurin endpoint-derivative correction
    on each smooth segment; jump and Wiener terms use the realised sums of
    the path. The stable-jump measure is the one actually simulated (jumps
    above eps_cut, compensated on the same set).
    """
    b = bundle
    path = path or b.path
    grid, c = b.grid, b.coeffs
    ph = np.where(grid.nyquist, 0.0, phi.to_spectral().values)
    if not np.any(ph):
        return 0.0
    fns, g = b.inputs["fns"], b.inputs["g"]
    rule = b.inputs["rule"]
    mesh = path.mesh
    lhs = _pair(b.spec[-1] - b.spec[0], ph, grid)
    rhs = 0.0 + 0.0j
    zc, Fc = {}, {}
    for i in range(len(b.times) - 1):
        k = int(b.interval[i])
        tk = float(mesh[k])
        if k not in zc:
            psi = generator_symbol(tk if not c.time_homogeneous else 0.0, grid.xi_vectors, c).reshape(grid.shape)
            comp = _compensator_table(grid, c, 0.0 if c.time_homogeneous else tk, float(path.eps_cut))
            zc[k] = np.where(grid.nyquist, 0.0, psi + comp) - b.lam
            Fc[k] = _forcing(tk, grid, c, fns, path, rule, b.inputs["g_form"])
        z, F = zc[k], Fc[k]
        a, bb = b.spec[i], b.left[i + 1]
        dt = b.times[i + 1] - b.times[i]
        fa, fb = _pair(z * a + F, ph, grid), _pair(z * bb + F, ph, grid)
        da, db = _pair(z * (z * a + F), ph, grid), _pair(z * (z * bb + F), ph, grid)
        rhs += 0.5 * dt * (fa + fb) - dt * dt / 12.0 * (db - da)
        # discontinuity at slice i + 1 from the realised noise
        kind = b.kind[i + 1]
        pre = b.left[i + 1]
        if kind == "stable":
            y = np.asarray(b.marks[i + 1])
            jump = (_shift_table(grid, y) - 1.0) * pre
            if g is not None:
                G = _g_spectra(g, tk, y[None, :], grid)[0]
                jump = jump + (_shift_table(grid, y) * G if b.inputs["g_form"] == "shifted" else G)
            rhs += _pair(jump, ph, grid)
        elif kind == "mark":
            if fns["Phi"] is not None:
                rhs += _pair(fns["Phi"](tk)[b.marks[i + 1]], ph, grid)
        elif kind == "mesh" and fns["h"] is not None:
            rhs += _pair(np.tensordot(path.wiener[k], fns["h"](tk), axes=(0, 0)), ph, grid)
    scale = max(abs(lhs), abs(rhs))
    if scale == 0.0:
        return 0.0
    return float(abs(lhs - rhs) / scale)
