"""Periodic lattice, discrete Fourier pair and elementary Fourier multipliers.

The whole space is replaced by the torus ``[-L, L)^d`` sampled at ``N`` nodes
per axis. Spectral arrays are kept in numpy FFT order and are scaled so that
they approximate the continuum transform ``F u(xi) = int e^{-i xi.x} u(x) dx``;
the inverse carries the ``(2 pi)^{-d}`` factor, which on the torus becomes
``(2L)^{-d}`` times a lattice sum.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, ShapeError

__all__ = [
    "SpectralGrid",
    "Field",
    "LPFilterBank",
    "make_grid",
    "forward",
    "inverse",
    "apply_multiplier",
    "bessel_potential",
    "fractional_derivative",
    "lp_partition",
    "lp_blocks",
    "shift_field",
    "write_snapshot",
    "read_snapshot",
]


@dataclasses.dataclass(frozen=True)
class SpectralGrid:
    d: int
    N: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError("d", f"dimension must be 1 or 2, got {self.d}")
        if not isinstance(self.N, (int, np.integer)) or self.N < 8 or self.N & (self.N - 1):
            raise ConfigurationError("N", f"nodes per axis must be a power of two >= 8, got {self.N}")
        if not (math.isfinite(self.L) and self.L > 0):
            raise ConfigurationError("L", f"half-width must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def cell(self) -> float:
        """Lattice volume element h^d."""
        return self.h**self.d

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** self.d

    @cached_property
    def x(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wave numbers per axis in FFT order."""
        return np.fft.fftfreq(self.N, d=1.0 / self.N).round().astype(np.int64)

    @cached_property
    def xi(self) -> np.ndarray:
        """Frequencies pi k / L per axis in FFT order."""
        return np.pi * self.k / self.L

    @property
    def freqs(self) -> np.ndarray:
        """Sorted lattice frequencies per axis, from -N/2 to N/2 - 1."""
        return np.pi * np.arange(-self.N // 2, self.N // 2) / self.L

    @cached_property
    def coords(self) -> tuple:
        return tuple(np.meshgrid(*([self.x] * self.d), indexing="ij"))

    @cached_property
    def xi_mesh(self) -> tuple:
        return tuple(np.meshgrid(*([self.xi] * self.d), indexing="ij"))

    @cached_property
    def xi_vectors(self) -> np.ndarray:
        """All lattice frequencies as an array of shape (N^d, d), FFT order."""
        return np.stack([c.ravel() for c in self.xi_mesh], axis=-1)

    @cached_property
    def abs_xi(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.xi_mesh))

    @cached_property
    def nyquist(self) -> np.ndarray:
        """True at frequencies with an unmatched -N/2 component."""
        mask = np.zeros(self.shape, dtype=bool)
        for c in np.meshgrid(*([self.k] * self.d), indexing="ij"):
            mask |= c == -self.N // 2
        return mask

    @cached_property
    def _phase(self) -> np.ndarray:
        # e^{-i xi_k x_0} with x_0 = -L is (-1)^k on every axis
        s = np.where(self.k % 2 == 0, 1.0, -1.0)
        out = np.ones(self.shape)
        for c in np.meshgrid(*([s] * self.d), indexing="ij"):
            out = out * c
        return out


def make_grid(d: int = 1, N: int = 256, L: float = 16.0) -> SpectralGrid:
    return SpectralGrid(int(d), int(N), float(L))


@dataclasses.dataclass(frozen=True, eq=False)
class Field:
    """Lattice function, optionally with a leading time axis.

    ``values`` has shape ``grid.shape`` for a space-only field, or
    ``(S,) + extra + grid.shape`` for a space-time field with ``times`` of
    length S. ``real`` records that the physical values are real so that
    inverse transforms drop the round-off imaginary part.
    """

    grid: SpectralGrid
    values: np.ndarray
    spectral: bool = False
    real: bool = True
    times: np.ndarray | None = None
    dt: float | None = None
    closed: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape[v.ndim - self.grid.d:] != self.grid.shape:
            raise ShapeError(f"values shape {v.shape} does not end with grid shape {self.grid.shape}")
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            if v.ndim < self.grid.d + 1 or v.shape[0] != t.shape[0]:
                raise ShapeError(f"{t.shape[0]} times but values shape {v.shape}")
            object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def physical(cls, grid, values, **kw):
        v = np.asarray(values)
        return cls(grid, v, spectral=False, real=not np.iscomplexobj(v), **kw)

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(*coords)`` on the lattice."""
        return cls.physical(grid, fn(*grid.coords))

    @property
    def is_spacetime(self) -> bool:
        return self.times is not None

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_spectral(self) -> "Field":
        return self if self.spectral else forward(self)

    def to_physical(self) -> "Field":
        return inverse(self) if self.spectral else self

    def left_endpoints(self) -> "Field":
        """Drop the closing slice at T, leaving the left Riemann nodes."""
        if not self.closed:
            return self
        return self.replace(values=self.values[:-1], times=self.times[:-1], closed=False)


def _axes(grid, values):
    return tuple(range(values.ndim - grid.d, values.ndim))


def forward(field: Field) -> Field:
    if field.spectral:
        return field
    g = field.grid
    vals = np.fft.fftn(field.values, axes=_axes(g, field.values)) * (g.cell * g._phase)
    return field.replace(values=vals, spectral=True)


def inverse(field: Field) -> Field:
    if not field.spectral:
        return field
    g = field.grid
    vals = np.fft.ifftn(field.values * g._phase, axes=_axes(g, field.values)) / g.cell
    if field.real:
        vals = vals.real.copy()
    return field.replace(values=vals, spectral=False)


def apply_multiplier(field: Field, symbol, *, hermitian=True) -> Field:
    """Multiply the spectrum by ``symbol`` (array over the lattice, FFT order).

    The unmatched Nyquist mode is zeroed. The result is returned in the same
    domain as the input. ``hermitian`` declares symbol(-xi) = conj(symbol(xi))
    so that real fields stay real.
    """
    spec = field.to_spectral()
    sym = np.where(field.grid.nyquist, 0.0, symbol)
    out = spec.replace(values=spec.values * sym, real=field.real and hermitian)
    return out if field.spectral else inverse(out)


def bessel_potential(field: Field, beta: float) -> Field:
    """J^beta = (I - Laplacian)^(beta/2)."""
    if not math.isfinite(beta):
        raise ConfigurationError("beta", f"regularity order must be finite, got {beta}")
    g = field.grid
    return apply_multiplier(field, (1.0 + g.abs_xi**2) ** (0.5 * beta))


def fractional_derivative(field: Field, alpha: float) -> Field:
    """-(|xi|^alpha) multiplier: the fractional Laplacian of order alpha."""
    if not (0.0 < alpha <= 2.0):
        raise ConfigurationError("alpha", f"order must lie in (0, 2], got {alpha}")
    return apply_multiplier(field, -field.grid.abs_xi**alpha)


def shift_field(field: Field, y) -> Field:
    """u(x) -> u(x + y), exactly, via the multiplier e^{i(xi, y)}."""
    g = field.grid
    y = np.broadcast_to(np.asarray(y, dtype=float), (g.d,))
    phase = sum(c * yi for c, yi in zip(g.xi_mesh, y))
    return apply_multiplier(field, np.exp(1j * phase))


# --------------------------------------------------------------------------
# Littlewood-Paley partition
# --------------------------------------------------------------------------

def _smooth_step(t):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1, strictly monotone between."""
    t = np.asarray(t, dtype=float)

    def bump_tail(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a = bump_tail(1.0 - t)
    b = bump_tail(t)
    return a / (a + b)


def _low_pass(r):
    """Radial cut-off: 1 for |xi| <= 1, 0 for |xi| >= 2."""
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    pos = r > 0
    out[pos] = _smooth_step(np.log2(r[pos]))
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class LPFilterBank:
    grid: SpectralGrid
    bank: np.ndarray  # (j_max + 1,) + grid.shape, FFT order
    j_max: int

    def __len__(self):
        return self.j_max + 1


def lp_partition(grid: SpectralGrid) -> LPFilterBank:
    """Dyadic blocks phi_j with phi_j = Theta(2^-j xi) - Theta(2^{1-j} xi).

    phi_0 is the low-pass Theta itself, so the partial sums telescope and the
    bank sums to one wherever Theta(2^-j_max xi) = 1, which j_max guarantees
    for every lattice frequency.
    """
    r = grid.abs_xi
    j_max = max(1, int(math.ceil(math.log2(float(r.max())))))
    theta = [_low_pass(r / 2.0**j) for j in range(j_max + 1)]
    bank = [theta[0]] + [theta[j] - theta[j - 1] for j in range(1, j_max + 1)]
    return LPFilterBank(grid, np.stack(bank), j_max)


def lp_blocks(field: Field, bank: LPFilterBank | None = None) -> np.ndarray:
    """Physical blocks phi_j * f stacked on a new leading axis."""
    bank = bank or lp_partition(field.grid)
    spec = field.to_spectral()
    vals = np.where(field.grid.nyquist, 0.0, spec.values)
    g = field.grid
    filt = bank.bank.reshape(bank.bank.shape[:1] + (1,) * (vals.ndim - g.d) + g.shape)
    blocks = Field(g, filt * vals, spectral=True, real=field.real)
    return inverse(blocks).values


# --------------------------------------------------------------------------
# Field snapshots
# --------------------------------------------------------------------------

_MAGIC = b"SPIDEFLD"
_HEADER = struct.Struct("<8sIIdII")


def write_snapshot(path, field: Field) -> None:
    """Write the physical values with the 32-byte little-endian header to a path or binary file."""
    f = field.to_physical()
    g = f.grid
    vals = np.asarray(f.values)
    slices = int(np.prod(vals.shape[: vals.ndim - g.d], dtype=np.int64)) if vals.ndim > g.d else 1
    is_complex = np.iscomplexobj(vals)
    dtype = "<c16" if is_complex else "<f8"
    payload = _HEADER.pack(_MAGIC, g.d, g.N, g.L, slices, int(is_complex))
    payload += np.ascontiguousarray(vals, dtype=dtype).tobytes()
    if hasattr(path, "write"):
        path.write(payload)
        return
    with open(path, "wb") as fh:
        fh.write(payload)


def read_snapshot(path) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, d, N, L, slices, is_complex = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ShapeError(f"{path}: not a field snapshot")
    g = SpectralGrid(d, N, L)
    vals = np.frombuffer(raw, dtype="<c16" if is_complex else "<f8", offset=_HEADER.size)
    shape = g.shape if slices == 1 else (slices,) + g.shape
    if vals.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: payload has {vals.size} values, header implies {int(np.prod(shape))}")
    vals = vals.reshape(shape).astype(np.complex128 if is_complex else np.float64)
    times = np.arange(slices, dtype=float) if slices > 1 else None
    return Field(g, vals, spectral=False, real=not is_complex, times=times)
