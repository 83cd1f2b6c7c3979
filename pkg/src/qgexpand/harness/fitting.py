"""Power-law fits of norm histories."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class FloorError(ValueError):
    """A norm hit zero or went negative: the residual is below the quadrature floor."""


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    n_points: int
    q: Optional[float] = None
    level: Optional[str] = None

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def fit_decay(times: Sequence[float], norms: Sequence[float], q=None, level=None) -> FitResult:
    """Least-squares line through ``(log t, log norm)``.

    Needs at least 8 samples at strictly increasing positive times. Raises
    :class:`FloorError` on non-positive norms.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and norms must be 1D arrays of equal length")
    if t.size < 8:
        raise ValueError(f"need at least 8 samples, got {t.size}")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("times must be positive and strictly increasing")
    if np.any(~np.isfinite(y)):
        raise ValueError("norms must be finite")
    if np.any(y <= 0):
        raise FloorError("non-positive norm: residual below the quadrature floor")
    X = np.log(t)
    Y = np.log(y)
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    slope, intercept = coef
    resid = Y - A @ coef
    dof = t.size - 2
    sxx = np.sum((X - X.mean()) ** 2)
    stderr = float(np.sqrt(np.sum(resid**2) / dof / sxx))
    return FitResult(float(slope), float(intercept), stderr, int(t.size), q, level)
