"""Closed-form rate, threshold and auxiliary bound calculators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

INF = math.inf


def positive_log(x: float) -> float:
    """max(ln x, 1); ln 0 is -inf so the clamp also covers x = 0."""
    if x < 0:
        raise ValueError("positive_log needs x >= 0")
    if x == 0:
        return 1.0
    return max(math.log(x), 1.0)


def eps(m: int, delta: float, vc: int) -> float:
    """Uniform Bernstein radius (vc/m) log(m/vc) + (1/m) log(1/delta)."""
    if m < 1:
        raise ValueError("eps needs m >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if vc < 1:
        raise ValueError("vc must be >= 1")
    return vc / m * positive_log(m / vc) + positive_log(1.0 / delta) / m


def eps_array(m, delta, vc: int) -> np.ndarray:
    """Vectorized eps over arrays of sizes and confidence levels."""
    m = np.asarray(m, dtype=float)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), m.shape)
    if np.any(m < 1) or np.any((delta <= 0) | (delta >= 1)) or vc < 1:
        raise ValueError("eps_array needs m >= 1, delta in (0, 1), vc >= 1")
    plog_m = np.maximum(np.log(m / vc), 1.0)
    plog_d = np.maximum(np.log(1.0 / delta), 1.0)
    return vc / m * plog_m + plog_d / m


def avg_rho(rhos: Sequence[float], sizes: Sequence[int], t: int) -> float:
    """Size-weighted mean of the first t (already sorted) exponents."""
    if not 1 <= t <= len(rhos):
        raise IndexError(f"t={t} outside [1, {len(rhos)}]")
    r = [float(v) for v in rhos[:t]]
    w = [float(v) for v in sizes[:t]]
    total = sum(w)
    if total == 0:
        # every weight vanishes; fall back to the plain mean
        w = [1.0] * t
        total = float(t)
    if any(math.isinf(ri) and wi > 0 for ri, wi in zip(r, w)):
        return INF
    return sum(ri * wi for ri, wi in zip(r, w) if wi > 0) / total


def rate_power(base: float, exponent_den: float) -> float:
    """base ** (1/exponent_den) with 1/inf = 0 and base^0 = 1."""
    if math.isinf(exponent_den):
        return 1.0
    if math.isinf(base):
        return INF
    return base ** (1.0 / exponent_den)


@dataclass(frozen=True)
class RateQuery:
    rhos: tuple
    sizes: tuple
    beta: float
    vc: int = 1
    delta: float = 0.1
    C_beta: float = 2.0
    C_rho: float = 2.0
    C0: float = 1.0

    def __post_init__(self):
        rhos = tuple(float(r) for r in self.rhos)
        sizes = tuple(int(n) for n in self.sizes)
        if len(rhos) != len(sizes) or not rhos:
            raise ValueError("rhos and sizes must be non-empty and aligned")
        if any(b < a for a, b in zip(rhos, rhos[1:])):
            raise ValueError("rhos must be sorted ascending")
        if any(n < 0 for n in sizes):
            raise ValueError("sizes must be non-negative")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        object.__setattr__(self, "rhos", rhos)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def ranked(cls, rhos, sizes, **kw) -> "RateQuery":
        """Sort (rho, size) pairs by rho, stable on task index."""
        order = sorted(range(len(rhos)), key=lambda i: float(rhos[i]))
        return cls(tuple(rhos[i] for i in order), tuple(sizes[i] for i in order), **kw)

    def prefix_sizes(self) -> list[int]:
        return list(np.cumsum(self.sizes, dtype=np.int64).tolist())

    @property
    def total(self) -> int:
        return int(sum(self.sizes))


@dataclass(frozen=True)
class BoundValue:
    value: float
    argmin_t: int
    per_t_terms: tuple = field(default_factory=tuple)

    @classmethod
    def from_terms(cls, terms: Sequence[float]) -> "BoundValue":
        terms = tuple(float(v) for v in terms)
        best = min(range(len(terms)), key=lambda i: (terms[i], i))
        return cls(terms[best], best + 1, terms)


def minimax_rate(q: RateQuery) -> BoundValue:
    terms = []
    for t, nt in enumerate(q.prefix_sizes(), start=1):
        rb = avg_rho(q.rhos, q.sizes, t)
        base = INF if nt == 0 else 1.0 / nt
        terms.append(rate_power(base, (2.0 - q.beta) * rb))
    return BoundValue.from_terms(terms)


def _bernstein_ratio(vc: int, log_size: float, delta: float, denom: float) -> float:
    if denom == 0:
        return INF
    return (vc * positive_log(log_size / vc) + positive_log(1.0 / delta)) / denom


def oracle_bound(q: RateQuery) -> BoundValue:
    const = 2.0**10 * q.C0**4 * q.C_beta
    terms = []
    for t, nt in enumerate(q.prefix_sizes(), start=1):
        base = const * _bernstein_ratio(q.vc, nt, q.delta, nt)
        terms.append(q.C_rho * rate_power(base, (2.0 - q.beta) * avg_rho(q.rhos, q.sizes, t)))
    return BoundValue.from_terms(terms)


def semi_adaptive_bound(q: RateQuery) -> BoundValue:
    # Same shape and log argument as the oracle bound; its universal
    # constant is left open, so the oracle constant is reused.
    return oracle_bound(q)


def pooling_bound_beta1(q: RateQuery) -> BoundValue:
    """Pooled-ERM bound for beta = 1: logs the total size, exponent 1/avg_rho."""
    const = 32.0 * q.C0**2 * q.C_beta
    total = q.total
    terms = []
    for t, nt in enumerate(q.prefix_sizes(), start=1):
        base = const * _bernstein_ratio(q.vc, total, q.delta, nt)
        terms.append(q.C_rho * rate_power(base, avg_rho(q.rhos, q.sizes, t)))
    return BoundValue.from_terms(terms)


def quantile_index(sizes: Sequence[int], alpha: float) -> int:
    """Smallest t with the first t sizes summing to at least alpha * total."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    total = Fraction(sum(int(n) for n in sizes))
    target = Fraction(alpha) * total
    acc = 0
    for t, n in enumerate(sizes, start=1):
        acc += int(n)
        if acc >= target:
            return t
    return len(sizes)


def quantile_pooling_bound(q: RateQuery, alpha: float) -> BoundValue:
    """Single-term bound at t(alpha); per_t_terms has that one term."""
    t = quantile_index(q.sizes, alpha)
    const = (32.0 * q.C0**2 / alpha) ** (2.0 - q.beta) * q.C_beta
    total = q.total
    base = const * _bernstein_ratio(q.vc, total, q.delta, total)
    value = q.C_rho * rate_power(base, (2.0 - q.beta) * avg_rho(q.rhos, q.sizes, t))
    return BoundValue(float(value), t, (float(value),))


def general_pooling_bound(q: RateQuery) -> BoundValue:
    const = (32.0 * q.C0**2) ** (2.0 - q.beta) * q.C_beta
    total = q.total
    terms = []
    for t, nt in enumerate(q.prefix_sizes(), start=1):
        denom = float(nt) ** (2.0 - q.beta) * float(total) ** (-(1.0 - q.beta)) if total else 0.0
        base = const * _bernstein_ratio(q.vc, total, q.delta, denom)
        terms.append(q.C_rho * rate_power(base, (2.0 - q.beta) * avg_rho(q.rhos, q.sizes, t)))
    return BoundValue.from_terms(terms)


def kl_bernoulli(p: float, q: float) -> float:
    if not (0 < p < 1 and 0 < q < 1):
        raise ValueError("kl_bernoulli needs p, q in the open unit interval")
    return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))


def slud_lower_bound(m: int, p: float, m0: float) -> float:
    """(1/4) exp(-m0^2 / (m p (1-p))) for 0 <= m0 <= m(1-2p)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0 < p <= 0.5:
        raise ValueError("p must lie in (0, 1/2]")
    # slack so the endpoint survives rounding of m(1-2p)
    if m0 < 0 or m0 > m * (1 - 2 * p) * (1 + 1e-12):
        raise ValueError("m0 must lie in [0, m(1-2p)]")
    return 0.25 * math.exp(-(m0 * m0) / (m * p * (1 - p)))


def binomial_log_pmf(m: int, p: float, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1) + k * math.log(p) + (m - k) * math.log1p(-p)


def binomial_tail_exact(m: int, p: float, k: float) -> float:
    """P(Bin(m, p) > k) summed in log space."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    first = math.floor(k) + 1
    if first <= 0:
        return 1.0
    if first > m:
        return 0.0
    if p == 0:
        return 0.0
    if p == 1:
        return 1.0
    ks = np.arange(first, m + 1)
    return float(min(1.0, math.exp(logsumexp(binomial_log_pmf(m, p, ks)))))
