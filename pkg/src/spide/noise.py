"""Seeded sampling of the driving noises.

Three independent sources share one seed: large stable jumps (thinned
from ``K dy dt / |y|^{d+alpha}`` on ``|y| > eps_cut``), Poisson marks from a
finite measure on a finite mark set, and Wiener increments on the time
mesh. Each source draws from its own counter-based stream keyed by
``(seed, path_id, source)``, so adding a source never perturbs the others.
Densities here carry the raw kernel; callers fold in any normalisation.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractError, ShapeError
from .symbols import YRule

_TAGS = {"stable": 1, "marks": 2, "wiener": 3}


def stream(seed: int, path_id: int, source: str) -> np.random.Generator:
    if source not in _TAGS:
        raise ConfigurationError("source", f"unknown noise source {source!r}")
    if seed < 0 or path_id < 0:
        raise ConfigurationError("seed", "seed and path id must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_id), _TAGS[source]])))


def sphere_area(d: int) -> float:
    return 2.0 if d == 1 else 2.0 * math.pi


def tail_mass(alpha: float, eps: float, d: int = 1) -> float:
    """int_{|y| > eps} dy / |y|^{d+alpha}."""
    return sphere_area(d) * eps**-alpha / alpha


@dataclasses.dataclass(frozen=True)
class JumpEvent:
    time: float
    mark: tuple
    source: str


@dataclasses.dataclass(frozen=True, eq=False)
class MarkMeasure:
    """Finite measure Pi on a finite mark set.

    ``points`` has shape (k, q): mark k is the vector points[k] and carries
    mass masses[k]. Marks are reported by index so that inputs can be
    tabulated per mark.
    """

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 1 and np.ndim(self.points) == 1:
            pts = pts.T
        m = np.asarray(self.masses, dtype=float).ravel()
        if pts.shape[0] != m.shape[0]:
            raise ShapeError(f"{pts.shape[0]} mark points but {m.shape[0]} masses")
        if np.any(m < 0) or not m.sum() > 0:
            raise ConfigurationError("Pi", "mark measure needs nonnegative masses with positive total")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def __len__(self):
        return len(self.masses)


@dataclasses.dataclass(frozen=True, eq=False)
class NoisePath:
    """One realisation on [0, T].

    Stable events: ``stable_times`` (n,), ``stable_marks`` (n, d). Mark
    events: ``mark_times`` (k,), ``mark_index`` (k,) into ``marks``.
    ``wiener`` holds the increments (steps, M) on ``mesh``.
    """

    T: float
    mesh: np.ndarray
    stable_times: np.ndarray
    stable_marks: np.ndarray
    mark_times: np.ndarray
    mark_index: np.ndarray
    wiener: np.ndarray
    seed: int
    path_id: int = 0
    eps_cut: float = 0.02
    alpha: float = 1.0
    d: int = 1
    density: Callable | None = None
    marks: MarkMeasure | None = None

    @property
    def stable_events(self) -> list:
        return [JumpEvent(float(t), tuple(y), "stable") for t, y in zip(self.stable_times, self.stable_marks)]

    @property
    def mark_events(self) -> list:
        pts = self.marks.points if self.marks is not None else np.zeros((0, 1))
        return [JumpEvent(float(t), (int(k),) + tuple(pts[k]), "mark") for t, k in zip(self.mark_times, self.mark_index)]

    @property
    def M(self) -> int:
        return self.wiener.shape[1]

    def shifted(self, ys) -> "NoisePath":
        return dataclasses.replace(self, stable_marks=np.asarray(ys, dtype=float).reshape(-1, self.d))


def sample_stable_jumps(density, K: float, eps_cut: float, T: float, seed: int, *, alpha: float, d: int = 1,
                        path_id: int = 0, time_homogeneous: bool = True):
    """Thinned large jumps: returns (times, marks) sorted by time.

    Proposals come from K dy dt / |y|^{d+alpha} on |y| > eps_cut: Poisson
    count, uniform times, radius eps * U^(-1/alpha), uniform direction. A
    proposal at (t, y) is kept with probability density(t, y) / K.
    """
    if not eps_cut > 0:
        raise ConfigurationError("eps_cut", f"must be positive, got {eps_cut}")
    if not K > 0:
        raise ConfigurationError("K", f"must be positive, got {K}")
    rng = stream(seed, path_id, "stable")
    n = rng.poisson(K * tail_mass(alpha, eps_cut, d) * T)
    times = np.sort(rng.uniform(0.0, T, n))
    radius = eps_cut * (1.0 - rng.uniform(size=n)) ** (-1.0 / alpha)
    if d == 1:
        dirs = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)[:, None]
    else:
        th = rng.uniform(0.0, 2 * math.pi, n)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    ys = dirs * radius[:, None]
    accept_u = rng.uniform(size=n)
    if n == 0:
        return times, ys.reshape(0, d)
    if time_homogeneous:
        dens = np.broadcast_to(np.asarray(density(0.0, ys), dtype=float), (n,))
    else:
        dens = np.array([float(np.asarray(density(float(t), y[None, :])).ravel()[0]) for t, y in zip(times, ys)])
    if np.any(dens > K * (1 + 1e-12)) or np.any(dens < 0):
        i = int(np.argmax((dens > K * (1 + 1e-12)) | (dens < 0)))
        raise ContractError(f"jump density {dens[i]:.6g} outside [0, K={K}] at t={times[i]:.6g}, y={ys[i].tolist()}")
    keep = accept_u * K < dens
    times, ys = times[keep], ys[keep]
    uniq = np.concatenate([[True], np.diff(times) > 0]) if len(times) else np.zeros(0, bool)
    return times[uniq], ys[uniq]


def sample_poisson_marks(marks: MarkMeasure, T: float, seed: int, *, path_id: int = 0):
    """Returns (times, indices) of the mark events, sorted by time."""
    if marks is None:
        raise ConfigurationError("Pi", "mark measure is required")
    rng = stream(seed, path_id, "marks")
    n = rng.poisson(marks.total * T)
    times = np.sort(rng.uniform(0.0, T, n))
    idx = rng.choice(len(marks), size=n, p=marks.masses / marks.total)
    uniq = np.concatenate([[True], np.diff(times) > 0]) if n else np.zeros(0, bool)
    return times[uniq], idx[uniq]


def sample_wiener(M: int, mesh: np.ndarray, seed: int, *, path_id: int = 0) -> np.ndarray:
    """Increments of M independent Brownian motions over the mesh intervals."""
    if M < 0:
        raise ConfigurationError("M", f"mode count must be >= 0, got {M}")
    dt = np.diff(np.asarray(mesh, dtype=float))
    rng = stream(seed, path_id, "wiener")
    return rng.standard_normal((len(dt), M)) * np.sqrt(dt)[:, None]


def make_path(T: float = 1.0, steps: int = 512, seed: int = 0, *, path_id: int = 0, alpha: float = 1.0,
              d: int = 1, density=None, K: float = 1.0, eps_cut: float = 0.02, marks: MarkMeasure | None = None,
              M: int = 0, time_homogeneous: bool = True) -> NoisePath:
    """Sample every requested source on a uniform mesh of ``steps`` intervals."""
    if steps < 1:
        raise ConfigurationError("steps", f"need at least one step, got {steps}")
    mesh = np.linspace(0.0, T, steps + 1)
    if density is not None:
        st, sy = sample_stable_jumps(density, K, eps_cut, T, seed, alpha=alpha, d=d, path_id=path_id,
                                     time_homogeneous=time_homogeneous)
    else:
        st, sy = np.zeros(0), np.zeros((0, d))
    if marks is not None:
        mt, mi = sample_poisson_marks(marks, T, seed, path_id=path_id)
        clash = np.isin(mt, st) | np.isin(mt, mesh)
        mt, mi = mt[~clash], mi[~clash]
    else:
        mt, mi = np.zeros(0), np.zeros(0, dtype=int)
    w = sample_wiener(M, mesh, seed, path_id=path_id)
    return NoisePath(T, mesh, st, sy, mt, mi, w, seed, path_id, eps_cut, alpha, d, density, marks)


def compensated_integral(integrand, path: NoisePath, coeffs=None, *, source: str = "stable",
                         rule: YRule | None = None, n_time: int = 32) -> float:
    """Realised int int f dq: event sum minus the compensator integral.

    ``integrand(t, marks)`` takes a time and an (n, q) array of marks
    (jump vectors, or mark points for source "mark"). The stable compensator
    uses the path's own density and cut-off; pass ``coeffs`` to integrate
    against coeffs.l with the Levy constant applied instead.
    """
    T = path.T
    x, w = np.polynomial.legendre.leggauss(n_time)
    tq, wq = 0.5 * T * (x + 1), 0.5 * T * w
    if source == "stable":
        if path.stable_times.size:
            ev = sum(float(np.asarray(integrand(t, y[None, :])).ravel()[0])
                     for t, y in zip(path.stable_times, path.stable_marks))
        else:
            ev = 0.0
        if coeffs is not None:
            dens, scale = coeffs.l, coeffs.levy_scale
        else:
            dens, scale = path.density, 1.0
        if dens is None:
            return ev
        rule = rule or YRule.build(path.d, path.alpha, path.eps_cut, 1e4, breaks=(1.0,), tail=True)
        comp = 0.0
        for t, wt in zip(tq, wq):
            f = np.asarray(integrand(float(t), rule.nodes), dtype=float)
            comp += wt * np.sum(rule.weights * f * np.asarray(dens(float(t), rule.nodes), dtype=float))
        return ev - scale * comp
    if source == "mark":
        mk = path.marks
        if mk is None:
            return 0.0
        ev = 0.0
        for t, k in zip(path.mark_times, path.mark_index):
            ev += float(np.asarray(integrand(t, mk.points[k:k + 1])).ravel()[0])
        comp = sum(wt * float(np.dot(mk.masses, np.asarray(integrand(float(t), mk.points), dtype=float)))
                   for t, wt in zip(tq, wq))
        return ev - comp
    raise ConfigurationError("source", f"unknown source {source!r}")


def dump_events(path: NoisePath, fh) -> None:
    """CSV of events: time, source, mark components."""
    w = csv.writer(fh, lineterminator="\n")
    width = max(path.d, 1 + (path.marks.points.shape[1] if path.marks is not None else 0))
    w.writerow(["time", "source"] + [f"mark{i}" for i in range(width)])
    rows = [(e.time, e.source, e.mark) for e in path.stable_events + path.mark_events]
    for t, src, mark in sorted(rows, key=lambda r: r[0]):
        w.writerow([repr(t), src] + [repr(float(m)) for m in mark])
