"""Residuals of simulated fields against expansion stacks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from qgexpand.dynamics import DiagnosticsRow, ModelKind, RunResult, SimConfig, run
from qgexpand.harness.fitting import FitResult, fit_decay
from qgexpand.profiles import ExpansionFlags, expansion_stack, logshift_coefficient
from qgexpand.spectral import Field, lq_norm, moments

#: residual level labels; ``raw`` is the norm of the solution itself
LEVELS = ("raw", "0", "1", "1-nolog", "1-noj1")

Q_DEFAULT = (1.0, 2.0, math.inf)


def level_flags(kind, level: str) -> Optional[ExpansionFlags]:
    """Profile terms subtracted at a residual level (``None`` for ``raw``)."""
    kind = ModelKind(kind)
    level = str(level)
    if level == "raw":
        return None
    if level == "0":
        return ExpansionFlags.level(kind, 0)
    full = ExpansionFlags.full(kind)
    if level == "1":
        return full
    if level == "1-nolog":
        if not full.logshift:
            raise ValueError(f"{kind.value} has no log shift to drop")
        return ExpansionFlags(True, True, False, full.j1)
    if level == "1-noj1":
        if not full.j1:
            raise ValueError(f"{kind.value} has no distortion term to drop")
        return ExpansionFlags(True, True, full.logshift, False)
    raise ValueError(f"unknown level {level!r}; choose from {LEVELS}")


@dataclass(frozen=True)
class ExperimentPlan:
    """One simulation plus the residual levels, norms and fit window to report.

    ``time_shift`` is a number or ``"auto"``; ``auto`` evaluates profiles at
    ``t + ∫|x|²u0 / (4 M0)``, which absorbs the isotropic second moment of the
    data into the Gaussian.
    """

    name: str
    config: SimConfig
    levels: tuple = ("raw", "0", "1")
    q_list: tuple = Q_DEFAULT
    fit_window: tuple = (10.0, 100.0)
    time_shift: Union[float, str] = "auto"
    estimate_ambiguous: bool = True

    def __post_init__(self):
        for lev in self.levels:
            level_flags(self.config.model.kind, lev)
        lo, hi = self.fit_window
        inside = [t for t in self.config.snapshot_times if lo <= t <= hi]
        if len(inside) < 8:
            raise ValueError(f"plan {self.name}: need >= 8 snapshots inside the fit window, got {len(inside)}")
        if isinstance(self.time_shift, str) and self.time_shift != "auto":
            raise ValueError("time_shift must be a number or 'auto'")


@dataclass(frozen=True)
class ResidualRow:
    t: float
    q: float
    level: str
    norm: float
    M0: float
    M1x: float
    M1y: float
    tail_mass: float


@dataclass(frozen=True)
class AmbiguousEstimate:
    """Time integral ``∫_0^∞ ∫ (f[u] - f[M0 G](1+s)) dy ds`` split into its parts."""

    value: tuple
    partial: tuple
    tail: tuple
    exponent: tuple
    t_end: float


def estimate_ambiguous(diagnostics: Sequence[DiagnosticsRow], a, M0: float, square: bool = False,
                       tail_from: float = 1.0 / 3.0) -> AmbiguousEstimate:
    """Ambiguous first-moment correction of the convection-diffusion expansion.

    The integral up to ``T`` comes from the RK4-accumulated flux integral minus
    ``β a log(1 + T)``; the remainder beyond ``T`` is a power-law fit
    ``C s^p`` of the integrand over ``[tail_from·T, T]``, integrated to infinity.
    """
    rows = list(diagnostics)
    T = rows[-1].t
    beta = logshift_coefficient(M0, square)
    bvec = beta * np.asarray(a, dtype=float)
    partial = np.asarray(rows[-1].flux_integral) - bvec * math.log1p(T)
    ts = np.array([r.t for r in rows])
    g = np.array([r.flux for r in rows]) - np.outer(1.0 / (1.0 + ts), bvec)
    sel = ts >= tail_from * T
    tails, exps = [], []
    for j in range(2):
        gj = g[sel, j]
        if sel.sum() < 3 or np.all(gj == 0) or not (np.all(gj > 0) or np.all(gj < 0)):
            tails.append(0.0)
            exps.append(float("nan"))
            continue
        p, logc = np.polyfit(np.log(ts[sel]), np.log(np.abs(gj)), 1)
        # integrand decays at least like s^{-3/2}
        p = min(p, -1.5)
        c = math.copysign(math.exp(logc), gj[-1])
        tails.append(-c * T ** (p + 1.0) / (p + 1.0))
        exps.append(float(p))
    tail = np.array(tails)
    return AmbiguousEstimate(tuple(partial + tail), tuple(partial), tuple(tail), tuple(exps), T)


def signed_second_moment(f: Field) -> float:
    x = f.grid.x
    r2 = x[:, None] ** 2 + x[None, :] ** 2
    return float(np.sum(r2 * f.values) * f.grid.cell_area)


@dataclass
class ProfileParameters:
    M0: float
    M1: tuple
    time_shift: float
    ambiguous: Optional[AmbiguousEstimate] = None


def profile_parameters(result: RunResult, plan: ExperimentPlan) -> ProfileParameters:
    """``M0`` and ``M1 = -∫ x u0`` from the initial field, plus the CD correction."""
    mom = moments(result.initial, warn=False)
    M0 = mom.M0
    M1 = np.asarray(mom.M1, dtype=float)
    model = plan.config.model
    amb = None
    if model.has_drift and plan.estimate_ambiguous and result.diagnostics[-1].t > 0:
        amb = estimate_ambiguous(result.diagnostics, model.a, M0, square=model.kind == ModelKind.CD2)
        M1 = M1 + np.asarray(amb.value)
    if plan.time_shift == "auto":
        shift = signed_second_moment(result.initial) / (4.0 * M0) if M0 != 0 else 0.0
    else:
        shift = float(plan.time_shift)
    return ProfileParameters(M0, (float(M1[0]), float(M1[1])), shift, amb)


def residual_norms(snapshots: Sequence[Field], times: Sequence[float], plan: ExperimentPlan,
                   params: ProfileParameters) -> list:
    """Rows ``(t, q, level, norm, M0, M1x, M1y, tail_mass)`` for every snapshot, level and q."""
    model = plan.config.model
    rows = []
    for t, snap in zip(times, snapshots):
        if not snap.grid.same_as(plan.config.grid):
            raise ValueError("snapshot grid does not match the plan")
        mom = moments(snap, warn=False)
        for level in plan.levels:
            flags = level_flags(model.kind, level)
            if flags is None:
                diff = snap
            else:
                stack = expansion_stack(model, t, snap.grid, params.M0, params.M1, model.a, flags,
                                        time_shift=params.time_shift)
                diff = snap - stack
            for q in plan.q_list:
                rows.append(ResidualRow(float(t), float(q), str(level), lq_norm(diff, q),
                                        mom.M0, mom.M1[0], mom.M1[1], mom.tail_mass))
    return rows


def fit_rows(rows: Sequence[ResidualRow], level: str, q: float, window=(0.0, math.inf)) -> FitResult:
    lo, hi = window
    sel = [r for r in rows if r.level == str(level) and r.q == float(q) and lo <= r.t <= hi]
    sel.sort(key=lambda r: r.t)
    return fit_decay([r.t for r in sel], [r.norm for r in sel], q=float(q), level=str(level))


def norm_at(rows: Sequence[ResidualRow], level: str, q: float, t: float) -> float:
    for r in rows:
        if r.level == str(level) and r.q == float(q) and r.t == float(t):
            return r.norm
    raise KeyError((level, q, t))


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    run: RunResult
    params: ProfileParameters
    rows: list = field(default_factory=list)

    def fit(self, level: str, q: float, window=None) -> FitResult:
        return fit_rows(self.rows, level, q, window or self.plan.fit_window)

    def norm_at(self, level: str, q: float, t: float) -> float:
        return norm_at(self.rows, level, q, t)


def run_experiment(plan: ExperimentPlan) -> ExperimentResult:
    result = run(plan.config)
    params = profile_parameters(result, plan)
    rows = residual_norms(result.snapshots, plan.config.snapshot_times, plan, params)
    return ExperimentResult(plan, result, params, rows)
