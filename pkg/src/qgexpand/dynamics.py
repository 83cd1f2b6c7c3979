"""Model nonlinearities and integrating-factor RK4 time stepping.

Every model is written as ``u_t = Δu + ∇·f[u]``:

====  ==================  =========================
kind  flux ``f[u]``       equation
====  ==================  =========================
QG    ``-u R⊥u``           ``u_t + R⊥u·∇u = Δu``
CD    ``a |u| u``          ``u_t - Δu = a·∇(|u|u)``
CD2   ``a u²``             ``u_t - Δu = a·∇(u²)``
FR    ``u Ru``             ``u_t - ∇·(u Ru) = Δu``
====  ==================  =========================

Diffusion is integrated exactly by the factor ``e^{-dt|ξ|²}``; the
divergence term is evaluated pseudospectrally with 2/3-rule dealiasing.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from qgexpand.spectral import (
    Field,
    Grid,
    dealias_mask,
    make_grid,
    moments,
    tail_mass,
    tail_region,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Bump",
    "DiagnosticsRow",
    "InitialDataSpec",
    "ModelKind",
    "ModelSpec",
    "RunResult",
    "SimConfig",
    "SimulationError",
    "StabilityError",
    "TailMassError",
    "march",
    "nonlinear_flux",
    "run",
    "step",
]

TAIL_ABORT = 1e-6
BLOWUP_FACTOR = 10.0


class SimulationError(RuntimeError):
    pass


class StabilityError(SimulationError):
    """Solution amplitude jumped by more than ``BLOWUP_FACTOR`` in one step."""


class TailMassError(SimulationError):
    """Too much mass reached the box edge; periodic images are no longer negligible."""


class ModelKind(str, enum.Enum):
    QG = "QG"
    CD = "CD"
    CD2 = "CD2"
    FR = "FR"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    a: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        a = tuple(float(c) for c in self.a)
        if len(a) != 2 or not all(np.isfinite(a)):
            raise ValueError(f"drift vector must be two finite numbers, got {self.a!r}")
        if kind in (ModelKind.QG, ModelKind.FR) and any(a):
            raise ValueError(f"{kind.value} takes no drift vector, got a={a}")
        object.__setattr__(self, "a", a)

    @property
    def has_drift(self) -> bool:
        return self.kind in (ModelKind.CD, ModelKind.CD2)

    @classmethod
    def linear(cls) -> "ModelSpec":
        """Pure heat equation, realised as CD with zero drift."""
        return cls(ModelKind.CD, (0.0, 0.0))


@dataclass(frozen=True)
class Bump:
    """Gaussian of total mass ``amplitude`` and standard deviation ``width``."""

    amplitude: float
    center: tuple[float, float]
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("bump width must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def evaluate(self, X, Y, amplitude=None):
        amp = self.amplitude if amplitude is None else amplitude
        w2 = self.width * self.width
        r2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2
        return amp / (2 * np.pi * w2) * np.exp(-r2 / (2 * w2))


@dataclass(frozen=True)
class InitialDataSpec:
    """Sum of Gaussian bumps, optionally with amplitudes solved from target moments.

    With ``target_M0`` (and optionally ``target_M1``) given, the bump amplitudes
    are replaced by the minimum-norm solution of the linear moment equations
    ``Σ A_i = M0`` and ``-Σ A_i c_i = M1``.
    """

    bumps: tuple[Bump, ...]
    target_M0: Optional[float] = None
    target_M1: Optional[tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        if self.target_M1 is not None and self.target_M0 is None:
            raise ValueError("target_M1 needs target_M0")

    @classmethod
    def default(cls) -> "InitialDataSpec":
        """Two off-centre bumps with opposite offsets and unequal mass; M0 = 1, M1 ≠ 0."""
        return cls(
            (
                Bump(0.7, (-1.0, -0.5), 0.9),
                Bump(0.3, (1.0, 0.5), 1.2),
            )
        )

    @classmethod
    def gaussian(cls, mass: float = 1.0, width: float = 1.0, center=(0.0, 0.0)) -> "InitialDataSpec":
        return cls((Bump(mass, center, width),))

    @classmethod
    def zero(cls) -> "InitialDataSpec":
        return cls(())

    def amplitudes(self) -> np.ndarray:
        amps = np.array([b.amplitude for b in self.bumps], dtype=float)
        if self.target_M0 is None:
            return amps
        rows = [np.ones(len(self.bumps))]
        rhs = [self.target_M0]
        if self.target_M1 is not None:
            centres = np.array([b.center for b in self.bumps], dtype=float)
            rows += [-centres[:, 0], -centres[:, 1]]
            rhs += list(self.target_M1)
        A = np.vstack(rows)
        sol, *_ = np.linalg.lstsq(A, np.array(rhs), rcond=None)
        if not np.allclose(A @ sol, rhs, rtol=0, atol=1e-12):
            raise ValueError("bump centres cannot reproduce the requested moments")
        return sol

    def sample(self, grid: Grid) -> Field:
        X, Y = grid.mesh()
        vals = np.zeros_like(X)
        for bump, amp in zip(self.bumps, self.amplitudes()):
            vals += bump.evaluate(X, Y, amp)
        return Field(grid, vals)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one run.

    The step is ``min(dt_cfl·dx/max|v|, dt_max, dt_rel·(1 + t))``, then shrunk to
    land exactly on the next snapshot time.
    """

    N: int
    L: float
    model: ModelSpec
    t_end: float
    snapshot_times: tuple[float, ...]
    initial: InitialDataSpec = field(default_factory=InitialDataSpec.default)
    dt_cfl: float = 0.5
    dt_max: float = 1.0
    dt_rel: float = 0.05
    check_tail: bool = True

    def __post_init__(self):
        times = tuple(float(t) for t in self.snapshot_times)
        object.__setattr__(self, "snapshot_times", times)
        if not 0 < self.dt_cfl <= 1:
            raise ValueError("dt_cfl must lie in (0, 1]")
        if self.dt_max <= 0 or self.dt_rel <= 0:
            raise ValueError("dt_max and dt_rel must be positive")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must be strictly increasing")
        if times and (times[0] <= 0 or times[-1] > self.t_end):
            raise ValueError("snapshot times must lie in (0, t_end]")

    @property
    def grid(self) -> Grid:
        return make_grid(self.N, self.L)


@dataclass
class DiagnosticsRow:
    """Per-step record. ``flux`` is ``∫ f[u] dx``; ``flux_integral`` its running time integral."""

    t: float
    l1: float
    l2: float
    linf: float
    M0: float
    M1: tuple[float, float]
    tail_mass: float
    flux: tuple[float, float]
    flux_integral: tuple[float, float]
    residuals: dict = field(default_factory=dict)


@dataclass
class RunResult:
    config: SimConfig
    initial: Field
    snapshots: list
    diagnostics: list

    def __iter__(self):
        # allows ``snapshots, diagnostics = run(cfg)``
        return iter((self.snapshots, self.diagnostics))

    def snapshot_at(self, t: float) -> Field:
        for s_t, snap in zip(self.config.snapshot_times, self.snapshots):
            if s_t == t:
                return snap
        raise KeyError(t)


class _Stepper:
    """Precomputed half-spectrum tables for one (grid, model) pair.

    The state is carried as the ``rfft2`` of the centred samples.
    """

    def __init__(self, grid: Grid, model: ModelSpec):
        self.grid = grid
        self.model = model
        n = grid.N
        KX, KY = grid.wavenumbers(rfft=True)
        nyq = grid.nyquist_mask(rfft=True)
        self.ikx = np.where(nyq, 0.0, 1j * KX)
        self.iky = np.where(nyq, 0.0, 1j * KY)
        self.k2 = KX**2 + KY**2
        mag = np.hypot(KX, KY)
        mag[0, 0] = 1.0
        self.r1 = np.where(nyq, 0.0, 1j * KX / mag)
        self.r2 = np.where(nyq, 0.0, 1j * KY / mag)
        self.r1[0, 0] = 0.0
        self.r2[0, 0] = 0.0
        self.mask = dealias_mask(grid, rfft=True)
        self.shape = (n, n)
        self.da = grid.cell_area
        self._cache_dt = None

    def fwd(self, u):
        return sfft.rfft2(u, workers=-1)

    def inv(self, uh):
        return sfft.irfft2(uh, s=self.shape, workers=-1)

    def velocity(self, uh_d):
        """Drift velocity for QG (R⊥u) and FR (Ru) from a dealiased spectrum."""
        kind = self.model.kind
        if kind == ModelKind.QG:
            return self.inv(-self.r2 * uh_d), self.inv(self.r1 * uh_d)
        return self.inv(self.r1 * uh_d), self.inv(self.r2 * uh_d)

    def flux_physical(self, u_d, uh_d):
        """Flux components and the CFL speed of the dealiased field."""
        kind = self.model.kind
        if kind in (ModelKind.QG, ModelKind.FR):
            vx, vy = self.velocity(uh_d)
            speed = float(np.sqrt(np.max(vx * vx + vy * vy)))
            sign = -1.0 if kind == ModelKind.QG else 1.0
            return sign * u_d * vx, sign * u_d * vy, speed
        ax, ay = self.model.a
        s = np.abs(u_d) * u_d if kind == ModelKind.CD else u_d * u_d
        speed = 2.0 * float(np.hypot(ax, ay)) * float(np.max(np.abs(u_d)))
        return ax * s, ay * s, speed

    def rhs(self, uh):
        """Spectrum of ``∇·f[u]``, the flux integral ``∫ f[u] dx`` and the CFL speed."""
        uh_d = np.where(self.mask, uh, 0.0)
        u_d = self.inv(uh_d)
        fx, fy, speed = self.flux_physical(u_d, uh_d)
        fxh = np.where(self.mask, self.fwd(fx), 0.0)
        fyh = np.where(self.mask, self.fwd(fy), 0.0)
        div = self.ikx * fxh + self.iky * fyh
        total = np.array([fxh[0, 0].real, fyh[0, 0].real]) * self.da
        return div, total, speed

    def factors(self, dt):
        if self._cache_dt != dt:
            self._E = np.exp(-dt * self.k2)
            self._E2 = np.exp(-0.5 * dt * self.k2)
            self._cache_dt = dt
        return self._E, self._E2

    def advance(self, uh, dt, first=None):
        """One IF-RK4 step; returns the new spectrum and the RK4-weighted flux integral.

        ``first`` may carry ``rhs(uh)`` when the caller already has it.
        """
        E, E2 = self.factors(dt)
        k1, f1, _ = self.rhs(uh) if first is None else first
        k2, f2, _ = self.rhs(E2 * (uh + 0.5 * dt * k1))
        k3, f3, _ = self.rhs(E2 * uh + 0.5 * dt * k2)
        k4, f4, _ = self.rhs(E * uh + dt * E2 * k3)
        new = E * uh + dt / 6.0 * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
        flux_int = dt / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        return new, flux_int


def nonlinear_flux(model: ModelSpec, u: Field) -> tuple[Field, Field]:
    """Dealiased flux ``f[u]`` such that ``u_t = Δu + ∇·f[u]``."""
    st = _Stepper(u.grid, model)
    uh = st.fwd(u.values)
    uh_d = np.where(st.mask, uh, 0.0)
    fx, fy, _ = st.flux_physical(st.inv(uh_d), uh_d)
    fx = st.inv(np.where(st.mask, st.fwd(fx), 0.0))
    fy = st.inv(np.where(st.mask, st.fwd(fy), 0.0))
    return Field(u.grid, fx), Field(u.grid, fy)


def step(u: Field, model: ModelSpec, dt: float) -> Field:
    """Advance ``u`` by one integrating-factor RK4 step of size ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    st = _Stepper(u.grid, model)
    new, _ = st.advance(st.fwd(u.values), dt)
    out = st.inv(new)
    _guard(u.values, out)
    return Field(u.grid, out)


def _guard(before: np.ndarray, after: np.ndarray):
    if not np.all(np.isfinite(after)):
        raise StabilityError("non-finite values after step")
    m0 = float(np.max(np.abs(before)))
    m1 = float(np.max(np.abs(after)))
    if m0 > 0 and m1 > BLOWUP_FACTOR * m0:
        raise StabilityError(f"sup norm grew from {m0:.3e} to {m1:.3e} in one step")


def _row(t, u_field, flux, flux_int) -> DiagnosticsRow:
    v = u_field.values
    da = u_field.grid.cell_area
    a = np.abs(v)
    mom = moments(u_field, warn=False)
    return DiagnosticsRow(
        t=float(t),
        l1=float(a.sum() * da),
        l2=float(np.sqrt(np.sum(a * a) * da)),
        linf=float(a.max()),
        M0=mom.M0,
        M1=mom.M1,
        tail_mass=mom.tail_mass,
        flux=(float(flux[0]), float(flux[1])),
        flux_integral=(float(flux_int[0]), float(flux_int[1])),
    )


def run(config: SimConfig, initial: Optional[Field] = None) -> RunResult:
    """March from ``t = 0`` to ``t_end``, landing exactly on every snapshot time."""
    grid = config.grid
    u0 = config.initial.sample(grid) if initial is None else initial
    if not u0.grid.same_as(grid):
        raise ValueError("initial field is on a different grid")
    st = _Stepper(grid, config.model)
    tail_mask = tail_region(grid)

    uh = st.fwd(u0.values)
    u = u0.values
    t = 0.0
    flux_int = np.zeros(2)
    current = st.rhs(uh)
    diagnostics = [_row(0.0, u0, current[1], flux_int)]
    snapshots = []
    targets = list(config.snapshot_times)
    if not targets or targets[-1] != config.t_end:
        stops = targets + [config.t_end]
    else:
        stops = targets
    dx = grid.dx
    n_steps = 0

    for stop in stops:
        while t < stop:
            speed = current[2]
            dt = min(config.dt_max, config.dt_rel * (1.0 + t))
            if speed > 0:
                dt = min(dt, config.dt_cfl * dx / speed)
            # absorb slivers into the landing step
            if t + dt >= stop or stop - (t + dt) < 1e-9 * max(1.0, stop):
                dt = stop - t
                landing = True
            else:
                landing = False
            uh_new, dflux = st.advance(uh, dt, first=current)
            u_new = st.inv(uh_new)
            _guard(u, u_new)
            uh, u = uh_new, u_new
            t = stop if landing else t + dt
            flux_int = flux_int + dflux
            n_steps += 1
            a = np.abs(u)
            total = a.sum()
            tm = float(a[tail_mask].sum() / total) if total > 0 else 0.0
            if config.check_tail and tm > TAIL_ABORT:
                raise TailMassError(
                    f"tail mass {tm:.2e} > {TAIL_ABORT:g} at t={t:.4g}; enlarge L or shorten the run"
                )
            current = st.rhs(uh)
            diagnostics.append(_row(t, Field(grid, u), current[1], flux_int))
        if stop in targets:
            snapshots.append(Field(grid, u))
    logger.info("run finished: %d steps to t=%g", n_steps, t)
    return RunResult(config, u0, snapshots, diagnostics)


def default_snapshot_times(t_lo: float, t_hi: float, n: int) -> tuple[float, ...]:
    """``n`` geometrically spaced times from ``t_lo`` to ``t_hi`` inclusive."""
    return tuple(float(v) for v in np.geomspace(t_lo, t_hi, n))


def linear_reference(u0: Field, t: float) -> Field:
    """Exact heat-semigroup propagation of ``u0`` on the grid."""
    st = _Stepper(u0.grid, ModelSpec.linear())
    return Field(u0.grid, st.inv(np.exp(-t * st.k2) * st.fwd(u0.values)))


def sequence_times(rows: Sequence[DiagnosticsRow]) -> np.ndarray:
    return np.array([r.t for r in rows])


def march(u: Field, model: ModelSpec, dt: float, n_steps: int) -> Field:
    """``n_steps`` fixed steps of size ``dt``; used for convergence studies."""
    if n_steps < 1 or not dt > 0:
        raise ValueError("need n_steps >= 1 and dt > 0")
    st = _Stepper(u.grid, model)
    uh = st.fwd(u.values)
    prev = u.values
    for _ in range(n_steps):
        uh, _ = st.advance(uh, dt)
        cur = st.inv(uh)
        _guard(prev, cur)
        prev = cur
    return Field(u.grid, prev)
