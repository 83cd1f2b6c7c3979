"""Periodic grids, Fourier multipliers, quadrature norms and moments.

The plane is replaced by the box ``[-L/2, L/2)²`` with ``N`` points per axis.
Grid point ``j`` sits at ``x_j = (j - N/2) dx`` so the origin is the sample
with index ``N/2``. Transforms use the plain DFT ordering of ``scipy.fft``;
since every operator here is diagonal in Fourier space the half-box phase
offset of the centred layout cancels between forward and inverse transforms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np
import scipy.fft as sfft

__all__ = [
    "BoundaryContaminationWarning",
    "Field",
    "Grid",
    "M1_CONVENTION",
    "MomentSet",
    "MultiplierOp",
    "TAIL_FRACTION",
    "TAIL_WARN",
    "apply_multiplier",
    "dealias",
    "dealias_mask",
    "discrete_delta",
    "forward",
    "inverse",
    "lq_norm",
    "make_grid",
    "moments",
    "skew_pairing",
]

#: Sign convention of :attr:`MomentSet.M1`: ``M1 = -∫ x u dx``.
M1_CONVENTION = "minus_first_moment"

#: Points whose sup-norm distance from the box centre exceeds this fraction of
#: the half-width belong to the tail annulus.
TAIL_FRACTION = 0.9

#: ``moments`` warns above this tail mass fraction.
TAIL_WARN = 1e-6

ROUNDTRIP_RTOL = 1e-12
IMAG_RESIDUE_RTOL = 1e-10


class BoundaryContaminationWarning(UserWarning):
    """Too much mass near the box edge for the moments to mean anything."""


def _workers() -> int:
    return -1


def forward(values: np.ndarray) -> np.ndarray:
    """Full complex 2D DFT of a real ``N×N`` array."""
    return sfft.fft2(values, workers=_workers())


def inverse(coeffs: np.ndarray) -> np.ndarray:
    return sfft.ifft2(coeffs, workers=_workers())


@dataclass(frozen=True)
class Grid:
    """Square periodic grid of side ``L`` with ``N`` points per axis."""

    N: int
    L: float

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
            raise TypeError(f"N must be an integer, got {self.N!r}")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"L must be positive and finite, got {self.L}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "L", float(self.L))

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @cached_property
    def x(self) -> np.ndarray:
        """Centred 1D coordinates, origin at index ``N // 2``."""
        return (np.arange(self.N) - self.N // 2) * self.dx

    @cached_property
    def k(self) -> np.ndarray:
        """1D wavenumbers in DFT order: ``(2π/L)·{0, 1, ..., N/2-1, -N/2, ..., -1}``."""
        return 2.0 * np.pi / self.L * np.fft.fftfreq(self.N, d=1.0 / self.N)

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Integer mode numbers ``m`` with ``k = 2πm/L``, DFT order."""
        return np.rint(np.fft.fftfreq(self.N, d=1.0 / self.N)).astype(int)

    @property
    def k_nyquist(self) -> float:
        return np.pi / self.dx

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    def wavenumbers(self, rfft: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """2D wavenumber arrays for the full (or half, ``rfft=True``) spectrum."""
        ky = self.k[: self.N // 2 + 1].copy() if rfft else self.k
        if rfft:
            # rfft keeps +N/2 as the last column
            ky[-1] = -ky[-1]
        return np.meshgrid(self.k, ky, indexing="ij")

    def nyquist_mask(self, rfft: bool = False) -> np.ndarray:
        """True on modes where either index is the unpaired Nyquist mode."""
        m = self.mode_index
        my = np.abs(m[: self.N // 2 + 1]) if rfft else np.abs(m)
        if rfft:
            my[-1] = self.N // 2
        MX, MY = np.meshgrid(np.abs(m), my, indexing="ij")
        return (MX == self.N // 2) | (MY == self.N // 2)

    def sample(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "Field":
        X, Y = self.mesh()
        return Field(self, func(X, Y))

    def zeros(self) -> "Field":
        return Field(self, np.zeros((self.N, self.N)))

    def from_transform(self, hat: np.ndarray) -> "Field":
        """Field from continuum Fourier transform values ``∫ e^{-ix·ξ} u dx`` at grid wavenumbers.

        Inverts the truncated Fourier series, so the result is the periodisation of
        ``u`` low-pass filtered at the Nyquist wavenumber.
        """
        vals = np.fft.fftshift(inverse(hat)) * (self.N * self.N / (self.L * self.L))
        return Field(self, _real_part(vals))

    def same_as(self, other: "Grid") -> bool:
        return self.N == other.N and self.L == other.L


def make_grid(N: int, L: float) -> Grid:
    return Grid(N, L)


def _real_part(vals: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(vals):
        scale = np.max(np.abs(vals.real)) if vals.size else 0.0
        resid = np.max(np.abs(vals.imag)) if vals.size else 0.0
        if resid > IMAG_RESIDUE_RTOL * max(scale, np.finfo(float).tiny):
            raise ValueError(
                f"imaginary residue {resid:.3e} exceeds {IMAG_RESIDUE_RTOL:g}·‖u‖∞ "
                f"(‖u‖∞ = {scale:.3e}); symbol is not conjugate symmetric"
            )
        return np.ascontiguousarray(vals.real)
    return vals


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples on a grid. Treat as immutable; the array is marked read-only."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != (self.grid.N, self.grid.N):
            raise ValueError(f"expected shape {(self.grid.N, self.grid.N)}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains NaN or Inf")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @cached_property
    def spectral(self) -> np.ndarray:
        coeffs = forward(self.values)
        coeffs.flags.writeable = False
        return coeffs

    def _check(self, other: "Field"):
        if not self.grid.same_as(other.grid):
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values * other.values)
        return Field(self.grid, self.values * other)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_area)


def discrete_delta(grid: Grid, mass: float = 1.0) -> Field:
    """Unit-mass spike at the origin sample."""
    vals = np.zeros((grid.N, grid.N))
    vals[grid.N // 2, grid.N // 2] = mass / grid.cell_area
    return Field(grid, vals)


SymbolFn = Callable[[np.ndarray, np.ndarray], Union[np.ndarray, tuple]]


@dataclass(frozen=True)
class MultiplierOp:
    """Fourier multiplier ``û(ξ) -> symbol(ξ)·û(ξ)``.

    ``symbol`` maps wavenumber arrays ``(kx, ky)`` to a complex array, or to a tuple
    of arrays for vector-valued operators. ``zero_mode`` overrides the value at
    ``ξ = 0``; ``odd`` symbols also get the unpaired Nyquist modes zeroed so that
    real input stays real.
    """

    name: str
    symbol: SymbolFn
    zero_mode: complex = 0.0
    odd: bool = False

    def evaluate(self, grid: Grid, rfft: bool = False) -> np.ndarray:
        """Symbol on the grid; shape ``(N, N)`` or ``(d, N, N)`` for vector symbols."""
        KX, KY = grid.wavenumbers(rfft=rfft)
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = self.symbol(KX, KY)
        vals = np.array(raw, dtype=complex) if isinstance(raw, tuple) else np.asarray(raw, dtype=complex)
        vals = np.array(vals, copy=True)
        vals[..., 0, 0] = self.zero_mode
        if self.odd:
            vals[..., grid.nyquist_mask(rfft=rfft)] = 0.0
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"symbol {self.name} is not finite on the grid")
        return vals

    @property
    def is_vector(self) -> bool:
        probe = self.symbol(np.ones((1, 1)), np.ones((1, 1)))
        return isinstance(probe, tuple)


def _safe_abs(KX, KY):
    mag = np.hypot(KX, KY)
    return np.where(mag == 0.0, 1.0, mag)


def riesz() -> MultiplierOp:
    """R = (R1, R2) with symbol ``iξ/|ξ|``."""
    return MultiplierOp(
        "riesz", lambda KX, KY: (1j * KX / _safe_abs(KX, KY), 1j * KY / _safe_abs(KX, KY)), odd=True
    )


def riesz_perp() -> MultiplierOp:
    """R⊥ = (-R2, R1) with symbol ``iξ⊥/|ξ|``, ``ξ⊥ = (-ξ2, ξ1)``."""
    return MultiplierOp(
        "riesz_perp", lambda KX, KY: (-1j * KY / _safe_abs(KX, KY), 1j * KX / _safe_abs(KX, KY)), odd=True
    )


def riesz_component(j: int) -> MultiplierOp:
    if j not in (1, 2):
        raise ValueError("component index must be 1 or 2")
    if j == 1:
        return MultiplierOp("riesz1", lambda KX, KY: 1j * KX / _safe_abs(KX, KY), odd=True)
    return MultiplierOp("riesz2", lambda KX, KY: 1j * KY / _safe_abs(KX, KY), odd=True)


def gradient() -> MultiplierOp:
    return MultiplierOp("grad", lambda KX, KY: (1j * KX, 1j * KY), odd=True)


def gradient_perp() -> MultiplierOp:
    return MultiplierOp("grad_perp", lambda KX, KY: (-1j * KY, 1j * KX), odd=True)


def partial(j: int) -> MultiplierOp:
    if j not in (1, 2):
        raise ValueError("component index must be 1 or 2")
    if j == 1:
        return MultiplierOp("d1", lambda KX, KY: 1j * KX, odd=True)
    return MultiplierOp("d2", lambda KX, KY: 1j * KY, odd=True)


def laplacian() -> MultiplierOp:
    return MultiplierOp("laplacian", lambda KX, KY: -(KX**2 + KY**2))


def heat(t: float) -> MultiplierOp:
    """Heat semigroup ``e^{tΔ}``: symbol ``e^{-t|ξ|²}``."""
    if t < 0:
        raise ValueError("heat semigroup needs t >= 0")
    return MultiplierOp(f"heat({t:g})", lambda KX, KY: np.exp(-t * (KX**2 + KY**2)), zero_mode=1.0)


def lap_pow_heat(k: int, t: float) -> MultiplierOp:
    """``(-Δ)^k e^{tΔ}``: symbol ``|ξ|^{2k} e^{-t|ξ|²}``."""
    zero = 1.0 if k == 0 else 0.0
    return MultiplierOp(
        f"lap_pow_heat({k},{t:g})",
        lambda KX, KY: (KX**2 + KY**2) ** k * np.exp(-t * (KX**2 + KY**2)),
        zero_mode=zero,
    )


def half_laplacian() -> MultiplierOp:
    """Λ = (-Δ)^{1/2}: symbol ``|ξ|``."""
    return MultiplierOp("Lambda", lambda KX, KY: np.hypot(KX, KY))


def apply_multiplier(op: MultiplierOp, f: Field) -> Union[Field, tuple[Field, ...]]:
    """Apply ``op`` spectrally. Vector symbols return one field per component."""
    sym = op.evaluate(f.grid)
    if sym.ndim == 3:
        return tuple(Field(f.grid, _real_part(inverse(s * f.spectral))) for s in sym)
    return Field(f.grid, _real_part(inverse(sym * f.spectral)))


def lq_norm(f: Field, q: float) -> float:
    """Rectangle-rule ``L^q`` norm; ``q = inf`` gives ``max |f|``."""
    q = float(q)
    if not q >= 1.0:
        raise ValueError(f"q must lie in [1, inf], got {q}")
    a = np.abs(f.values)
    if np.isinf(q):
        out = float(a.max())
    elif q == 1.0:
        out = float(a.sum() * f.grid.cell_area)
    elif q == 2.0:
        out = float(np.sqrt(np.sum(a * a) * f.grid.cell_area))
    else:
        scale = a.max()
        if scale == 0.0:
            return 0.0
        out = float(scale * (np.sum((a / scale) ** q) * f.grid.cell_area) ** (1.0 / q))
    assert np.isfinite(out), "non-finite norm"
    return out


def spectral_l2_norm(f: Field) -> float:
    """L² norm from the DFT coefficients (Parseval)."""
    n2 = f.grid.N * f.grid.N
    return float(np.sqrt(np.sum(np.abs(f.spectral) ** 2) * f.grid.cell_area / n2))


@dataclass(frozen=True)
class MomentSet:
    """Zeroth, first and second absolute moments plus the tail mass fraction.

    ``M1`` follows :data:`M1_CONVENTION`, i.e. ``M1 = -∫ x u dx``.
    """

    M0: float
    M1: tuple[float, float]
    M2: float
    tail_mass: float
    convention: str = field(default=M1_CONVENTION)


def tail_region(grid: Grid) -> np.ndarray:
    X, Y = grid.mesh()
    return np.maximum(np.abs(X), np.abs(Y)) > TAIL_FRACTION * grid.L / 2


def tail_mass(f: Field) -> float:
    a = np.abs(f.values)
    total = a.sum()
    if total == 0.0:
        return 0.0
    return float(a[tail_region(f.grid)].sum() / total)


def moments(f: Field, warn: bool = True) -> MomentSet:
    """Rectangle-rule moments about the box centre.

    Warns with :class:`BoundaryContaminationWarning` if the tail annulus holds
    more than ``TAIL_WARN`` of the absolute mass.
    """
    g = f.grid
    da = g.cell_area
    v = f.values
    x = g.x
    m0 = float(v.sum() * da)
    m1x = -float(np.dot(x, v.sum(axis=1)) * da)
    m1y = -float(np.dot(v.sum(axis=0), x) * da)
    a = np.abs(v)
    r2 = x[:, None] ** 2 + x[None, :] ** 2
    m2 = float(np.sum(r2 * a) * da)
    tm = tail_mass(f)
    if warn and tm > TAIL_WARN:
        warnings.warn(
            f"tail mass {tm:.2e} exceeds {TAIL_WARN:g}; moments are contaminated by the box edge",
            BoundaryContaminationWarning,
            stacklevel=2,
        )
    return MomentSet(m0, (m1x, m1y), m2, tm)


def dealias_mask(grid: Grid, rfft: bool = False) -> np.ndarray:
    """True on modes kept by the 2/3 rule: ``|k_j| <= (N/3)(2π/L)`` on both axes."""
    kc = grid.N / 3.0 * 2.0 * np.pi / grid.L
    KX, KY = grid.wavenumbers(rfft=rfft)
    # small slack so that exact multiples of 2π/L on the cutoff are kept
    tol = 1e-9 * 2.0 * np.pi / grid.L
    return (np.abs(KX) <= kc + tol) & (np.abs(KY) <= kc + tol)


def dealias(f_spectral: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero every mode above the 2/3 cutoff. Accepts full or half (rfft) spectra."""
    n = grid.N
    if f_spectral.shape[-2:] == (n, n):
        mask = dealias_mask(grid)
    elif f_spectral.shape[-2:] == (n, n // 2 + 1):
        mask = dealias_mask(grid, rfft=True)
    else:
        raise ValueError(f"spectrum shape {f_spectral.shape} does not match grid N={n}")
    return np.where(mask, f_spectral, 0.0)


def skew_pairing(f: Field, g: Field, op: MultiplierOp) -> float:
    """Quadrature of ``∫ f · (op g) dx`` for a scalar operator."""
    if not f.grid.same_as(g.grid):
        raise ValueError("fields live on different grids")
    og = apply_multiplier(op, g)
    if isinstance(og, tuple):
        raise ValueError("skew_pairing needs a scalar symbol")
    return float(np.sum(f.values * og.values) * f.grid.cell_area)


def smooth_random_field(grid: Grid, rng: np.random.Generator, width: float = 1.0, n_bumps: int = 4) -> Field:
    """Sum of a few random Gaussian bumps; used by property tests and sweeps."""
    X, Y = grid.mesh()
    vals = np.zeros_like(X)
    half = grid.L / 8
    for _ in range(n_bumps):
        amp = rng.normal()
        cx, cy = rng.uniform(-half, half, size=2)
        w = width * rng.uniform(0.7, 1.5)
        vals += amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * w * w))
    return Field(grid, vals)


def as_fields(values: Sequence[np.ndarray], grid: Grid) -> tuple[Field, ...]:
    return tuple(Field(grid, v) for v in values)
