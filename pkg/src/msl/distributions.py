"""Parametric task distributions with closed-form risks, samplers and the
Bernstein / transfer-exponent validators.

Finite-support families place point id 0 at x0 and ids 1..d at x1..xd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .hypothesis import (
    LEFT,
    FiniteClass,
    Hypothesis,
    LabeledSample,
    Table,
    Threshold,
    Thresholds,
    all_tables,
)

INF = math.inf
RATIO_TOL = 1e-9


class UnsupportedFamily(TypeError):
    pass


def _flip_error(labels: np.ndarray, etas: np.ndarray) -> np.ndarray:
    """Pointwise error of a label given P(Y=1|x) = eta."""
    return np.where(labels == 1, 1.0 - etas, etas)


class _FiniteSupport:
    """Shared risk logic for distributions on point ids."""

    @property
    def masses(self) -> np.ndarray:  # pragma: no cover - overridden
        raise NotImplementedError

    @property
    def etas(self) -> np.ndarray:  # pragma: no cover - overridden
        raise NotImplementedError

    @property
    def support_size(self) -> int:
        return int(self.masses.size)

    def _check_table(self, h) -> np.ndarray:
        if not isinstance(h, Table):
            raise UnsupportedFamily("finite-support distributions evaluate Table hypotheses only")
        labels = np.asarray(h.labels, dtype=np.int8)
        if labels.size != self.support_size:
            raise ValueError("table size does not match the distribution support")
        return labels

    def risk(self, h: Hypothesis) -> float:
        labels = self._check_table(h)
        return float(np.sum(self.masses * _flip_error(labels, self.etas)))

    def member_risks(self, cls: FiniteClass) -> np.ndarray:
        if not isinstance(cls, FiniteClass) or cls.support_size != self.support_size:
            raise UnsupportedFamily("class does not match the distribution support")
        # same arithmetic as risk() so h* gets exactly zero excess
        return np.sum(self.masses * _flip_error(cls.matrix, self.etas), axis=-1)

    def best_risk(self, cls: FiniteClass) -> float:
        return float(self.member_risks(cls).min())

    def bayes_in_class(self, cls: FiniteClass) -> Table:
        return cls.members[int(np.argmin(self.member_risks(cls)))]

    def disagreement(self, h: Hypothesis, h2: Hypothesis) -> float:
        a, b = self._check_table(h), self._check_table(h2)
        return float(self.masses[a != b].sum())

    def sample(self, n: int, rng: np.random.Generator) -> LabeledSample:
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return LabeledSample.empty()
        at = rng.multinomial(n, self.masses)
        plus = rng.binomial(at, self.etas)
        ids = np.arange(self.support_size, dtype=float)
        x = np.concatenate([ids, ids])
        y = np.concatenate([np.ones(self.support_size, np.int8), -np.ones(self.support_size, np.int8)])
        c = np.concatenate([plus, at - plus])
        keep = c > 0
        return LabeledSample(x[keep], y[keep], c[keep])


def _check_unit(name: str, v: float):
    if not 0.0 <= v <= 1.0 or math.isnan(v):
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class TwoPoint(_FiniteSupport):
    """Support {x0 (id 0), x1 (id 1)}."""

    mass_x1: float
    eta_x1: float
    eta_x0: float = 1.0

    def __post_init__(self):
        for name in ("mass_x1", "eta_x1", "eta_x0"):
            _check_unit(name, float(getattr(self, name)))

    @property
    def masses(self) -> np.ndarray:
        return np.array([1.0 - self.mass_x1, self.mass_x1])

    @property
    def etas(self) -> np.ndarray:
        return np.array([self.eta_x0, self.eta_x1])


@dataclass(frozen=True, eq=False)
class FinitePoints(_FiniteSupport):
    point_masses: tuple
    point_etas: tuple

    def __post_init__(self):
        m = np.asarray(self.point_masses, dtype=float)
        e = np.asarray(self.point_etas, dtype=float)
        if m.shape != e.shape or m.ndim != 1 or m.size == 0:
            raise ValueError("masses and etas must be aligned non-empty vectors")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("masses must be non-negative and sum to 1")
        if np.any((e < 0) | (e > 1)):
            raise ValueError("etas must lie in [0, 1]")
        object.__setattr__(self, "point_masses", tuple(m.tolist()))
        object.__setattr__(self, "point_etas", tuple(e.tolist()))

    @property
    def masses(self) -> np.ndarray:
        return np.asarray(self.point_masses)

    @property
    def etas(self) -> np.ndarray:
        return np.asarray(self.point_etas)


@dataclass(frozen=True)
class Uniform:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("Uniform needs a < b")

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def draw(self, n: int, rng) -> np.ndarray:
        return rng.uniform(self.a, self.b, n)


@dataclass(frozen=True)
class PowerLaw:
    """Density proportional to x^(rho-1) on (0, b], normalized there alone."""

    rho: float
    b: float = 1.0

    def __post_init__(self):
        if not self.rho >= 1:
            raise ValueError("PowerLaw needs rho >= 1")
        if not self.b > 0:
            raise ValueError("PowerLaw needs b > 0")

    def cdf(self, x):
        return np.clip(np.asarray(x, dtype=float) / self.b, 0.0, 1.0) ** self.rho

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x <= self.b)
        return np.where(inside, self.rho * np.abs(x) ** (self.rho - 1) / self.b**self.rho, 0.0)

    def draw(self, n: int, rng) -> np.ndarray:
        # inverse cdf; 1 - U keeps draws in (0, b]
        return self.b * (1.0 - rng.random(n)) ** (1.0 / self.rho)


Marginal = Union[Uniform, PowerLaw]


@dataclass(frozen=True)
class Realizable:
    @property
    def q(self) -> float:
        return 0.0


@dataclass(frozen=True)
class FlipProb:
    """Labels of h* flipped independently with constant probability q < 1/2."""

    q: float

    def __post_init__(self):
        if not 0.0 <= self.q < 0.5:
            raise ValueError("flip probability must lie in [0, 1/2)")


Noise = Union[Realizable, FlipProb]


@dataclass(frozen=True)
class ThresholdFamily:
    marginal: Marginal
    hstar_cut: float
    noise: Noise = field(default_factory=Realizable)
    positive_side: str = LEFT

    @property
    def hstar(self) -> Threshold:
        return Threshold(self.hstar_cut, self.positive_side)

    def disagreement(self, h: Hypothesis, h2: Hypothesis) -> float:
        if not (isinstance(h, Threshold) and isinstance(h2, Threshold)):
            raise UnsupportedFamily("threshold families evaluate Threshold hypotheses only")
        lo, hi = sorted((h.cut, h2.cut))
        between = float(self.marginal.cdf(hi) - self.marginal.cdf(lo))
        return between if h.positive_side == h2.positive_side else 1.0 - between

    def risk(self, h: Hypothesis) -> float:
        q = self.noise.q
        return q + (1.0 - 2.0 * q) * self.disagreement(h, self.hstar)

    def _candidates(self, cls: Thresholds) -> list[Threshold]:
        if not isinstance(cls, Thresholds):
            raise UnsupportedFamily("threshold families need a Thresholds class")
        a, b = cls.domain
        cuts = [float(np.clip(self.hstar_cut, a, b)), a, b]
        return [Threshold(c, cls.positive_side) for c in cuts]

    def best_risk(self, cls: Thresholds) -> float:
        return min(self.risk(h) for h in self._candidates(cls))

    def bayes_in_class(self, cls: Thresholds) -> Threshold:
        cands = self._candidates(cls)
        risks = [self.risk(h) for h in cands]
        return cands[int(np.argmin(risks))]

    def sample(self, n: int, rng: np.random.Generator) -> LabeledSample:
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return LabeledSample.empty()
        x = self.marginal.draw(n, rng)
        y = self.hstar.predict(x)
        q = self.noise.q
        if q > 0:
            flip = rng.random(n) < q
            y = np.where(flip, -y, y).astype(np.int8)
        return LabeledSample.from_arrays(x, y)


TaskDistribution = Union[TwoPoint, FinitePoints, ThresholdFamily]


def _require_closed_form(dist):
    if not hasattr(dist, "risk") or not hasattr(dist, "best_risk"):
        raise UnsupportedFamily(f"{type(dist).__name__} has no closed-form risk")


def sample(dist: TaskDistribution, n: int, rng: np.random.Generator) -> LabeledSample:
    return dist.sample(n, rng)


def bayes_in_class(dist: TaskDistribution, cls) -> Hypothesis:
    _require_closed_form(dist)
    return dist.bayes_in_class(cls)


def excess_risk(dist: TaskDistribution, cls, h: Hypothesis) -> float:
    return max(dist.risk(h) - dist.best_risk(cls), 0.0)


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    worst_hypothesis: Optional[Hypothesis]
    worst_ratio: float
    grid_size: int


def default_grid(dist: TaskDistribution, cls, points: int = 100) -> list[Hypothesis]:
    """All members of a finite class; otherwise cuts geometrically dense near h*."""
    if isinstance(cls, FiniteClass):
        return list(cls.members)
    if not isinstance(cls, Thresholds):
        raise UnsupportedFamily("unknown class")
    a, b = cls.domain
    center = dist.bayes_in_class(cls).cut
    steps = (b - a) * np.geomspace(1e-12, 1.0, points)
    cuts = np.unique(np.clip(np.concatenate([[center], center - steps, center + steps]), a, b))
    return [Threshold(float(c), cls.positive_side) for c in cuts]


def _power(base: float, exponent: float) -> float:
    """base**exponent with 0**0 = 1."""
    if exponent == 0:
        return 1.0
    return base**exponent


def _ratio(lhs: float, rhs: float) -> float:
    """lhs/rhs with 0/0 = 0 and x/0 = inf."""
    if lhs <= 0:
        return 0.0
    if rhs <= 0:
        return INF
    return lhs / rhs


def _report(ratios: list[float], grid: list) -> ConditionReport:
    i = int(np.argmax(ratios))
    return ConditionReport(bool(ratios[i] <= 1.0 + RATIO_TOL), grid[i], float(ratios[i]), len(grid))


def validate_bernstein(dist, cls, C_beta: float, beta: float, grid=None) -> ConditionReport:
    _require_closed_form(dist)
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    grid = list(grid) if grid is not None else default_grid(dist, cls)
    if not grid:
        raise ValueError("grid must be non-empty")
    hstar = dist.bayes_in_class(cls)
    best = dist.best_risk(cls)
    ratios = []
    for h in grid:
        e = max(dist.risk(h) - best, 0.0)
        ratios.append(_ratio(dist.disagreement(h, hstar), C_beta * _power(e, beta)))
    return _report(ratios, grid)


def _transfer_ratios(source, target, cls, C_rho: float, rho: float, grid) -> list[float]:
    inv = 0.0 if math.isinf(rho) else 1.0 / rho
    bs, bt = source.best_risk(cls), target.best_risk(cls)
    out = []
    for h in grid:
        ep = max(source.risk(h) - bs, 0.0)
        ed = max(target.risk(h) - bt, 0.0)
        out.append(_ratio(ed, C_rho * _power(ep, inv)))
    return out


def validate_transfer_exponent(source, target, cls, C_rho: float, rho: float, grid=None) -> ConditionReport:
    _require_closed_form(source)
    _require_closed_form(target)
    if not rho > 0:
        raise ValueError("rho must be > 0")
    grid = list(grid) if grid is not None else default_grid(target, cls)
    if not grid:
        raise ValueError("grid must be non-empty")
    return _report(_transfer_ratios(source, target, cls, C_rho, rho, grid), grid)


def estimate_min_rho(source, target, cls, C_rho: float, grid=None, lo: float = 1e-3, hi: float = 1e6, rtol: float = 1e-3) -> float:
    """Smallest rho for which the transfer condition holds on the grid.

    The ratio is non-increasing in rho (excess risks are at most 1), so a
    log-space bisection is valid.  Returns ``lo`` when even that holds and
    inf when no finite rho up to ``hi`` does.
    """
    _require_closed_form(source)
    _require_closed_form(target)
    grid = list(grid) if grid is not None else default_grid(target, cls)

    def ok(r: float) -> bool:
        return max(_transfer_ratios(source, target, cls, C_rho, r, grid)) <= 1.0 + RATIO_TOL

    if ok(lo):
        return lo
    if not ok(hi):
        return INF
    a, b = math.log(lo), math.log(hi)
    while b - a > math.log1p(rtol):
        mid = 0.5 * (a + b)
        if ok(math.exp(mid)):
            b = mid
        else:
            a = mid
    return math.exp(b)


def make_asymmetry_pair(beta: float, n_P: int, c2: float) -> tuple[TwoPoint, TwoPoint]:
    """Source P and target D sharing h* = h_- at x1 (sigma = -1)."""
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    if n_P < 1:
        raise ValueError("n_P must be >= 1")
    if not 0 < c2 <= 1 / (8 * math.sqrt(2)):
        raise ValueError("c2 must lie in (0, 1/(8 sqrt 2)]")
    e = n_P ** (-1.0 / (2.0 - beta))
    P = TwoPoint(mass_x1=e**beta, eta_x1=0.5 - c2 * e ** (1.0 - beta), eta_x0=1.0)
    D = TwoPoint(mass_x1=0.5, eta_x1=0.5 - 0.25, eta_x0=1.0)
    return P, D


def two_point_class() -> FiniteClass:
    """{h_+, h_-}: both label x0 as +1 and differ at x1."""
    return FiniteClass(2, (Table((1, 1)), Table((1, -1))))


def make_lower_bound_family(rhos: Sequence[float], beta: float, epsilon: float, d: int, sigma: Sequence[int]) -> list[FinitePoints]:
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    sig = np.asarray(sigma, dtype=int)
    if sig.shape != (d,) or not np.all(np.abs(sig) == 1):
        raise ValueError("sigma must be a length-d sign vector")
    out = []
    for rho in rhos:
        rho = float(rho)
        if not rho >= 1:
            raise ValueError("every rho must be >= 1 or inf")
        if math.isinf(rho):
            # point mass at (x0, +1); conditionals elsewhere are irrelevant
            masses = np.zeros(d + 1)
            masses[0] = 1.0
            etas = np.concatenate([[1.0], 0.5 + 0.5 * sig * (1.0 if beta == 1 else 0.0)])
        else:
            side = epsilon ** (rho * beta)
            masses = np.concatenate([[1.0 - side], np.full(d, side / d)])
            etas = np.concatenate([[1.0], 0.5 + 0.5 * sig * epsilon ** (rho * (1.0 - beta))])
        out.append(FinitePoints(tuple(masses), tuple(etas)))
    return out


def lower_bound_class(d: int, sigmas: Optional[Sequence[Sequence[int]]] = None) -> FiniteClass:
    """Tables with x0 = +1 (all 2^d, or only the given sign vectors) plus one
    table with x0 = -1 so the class has at least three members."""
    if sigmas is None:
        base = all_tables(d).members
        rows = [(1,) + m.labels for m in base]
    else:
        rows = [(1,) + tuple(int(v) for v in s) for s in sigmas]
    rows.append((-1,) + (1,) * d)
    return FiniteClass(d + 1, tuple(Table(r) for r in rows))
