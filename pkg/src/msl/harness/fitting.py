"""Log-log slope fitting for Monte Carlo rate tables."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Z95 = 1.959963984540054


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    band: float
    points: int

    @property
    def low(self) -> float:
        return self.slope - self.band

    @property
    def high(self) -> float:
        return self.slope + self.band


def fit_rate_exponent(xs: Sequence[float], means: Sequence[float], stderrs: Sequence[float] | None = None) -> SlopeFit:
    """OLS slope of ln(mean) on ln(x) with a delta-method 95% band.

    The band propagates each point's standard error through
    Var(ln m) ~ (se/m)^2 into the OLS weights; it reflects Monte Carlo
    noise only, not misfit of the power law.
    """
    x = np.asarray(xs, dtype=float)
    m = np.asarray(means, dtype=float)
    se = np.zeros_like(m) if stderrs is None else np.asarray(stderrs, dtype=float)
    keep = (m > 0) & (x > 0)
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} non-positive points from the rate fit", stacklevel=2)
    x, m, se = x[keep], m[keep], se[keep]
    if x.size < 4:
        raise FitError("rate fit needs at least 4 positive points")
    lx, ly = np.log(x), np.log(m)
    cx = lx - lx.mean()
    sxx = float(np.dot(cx, cx))
    if sxx == 0:
        raise FitError("rate fit needs distinct sweep values")
    w = cx / sxx
    slope = float(np.dot(w, ly))
    intercept = float(ly.mean() - slope * lx.mean())
    var = float(np.dot(w * w, (se / m) ** 2))
    return SlopeFit(slope, intercept, Z95 * math.sqrt(var), int(x.size))
