"""Hypothesis classes, exact empirical risk minimization and risk evaluation.

Two families of classifiers are supported: one-sided thresholds on the real
line and label tables over a finite support of integer point ids.  Samples
are stored column-wise with a multiplicity column so that repeated points
(common on finite supports) cost one row.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

LEFT = "left"
RIGHT = "right"
_SIDES = (LEFT, RIGHT)


@dataclass(frozen=True)
class Threshold:
    """h(x) = +1 iff x <= cut (left) or x >= cut (right)."""

    cut: float
    positive_side: str = LEFT

    def __post_init__(self):
        if not np.isfinite(self.cut):
            raise ValueError("threshold cut must be finite")
        if self.positive_side not in _SIDES:
            raise ValueError(f"positive_side must be one of {_SIDES}")

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.positive_side == LEFT:
            return np.where(x <= self.cut, 1, -1).astype(np.int8)
        return np.where(x >= self.cut, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class Table:
    """Label table indexed by point id 0..len(labels)-1."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        if any(v not in (-1, 1) for v in labels):
            raise ValueError("table labels must be -1 or +1")
        object.__setattr__(self, "labels", labels)

    def predict(self, x) -> np.ndarray:
        idx = np.asarray(x).astype(np.int64)
        return np.asarray(self.labels, dtype=np.int8)[idx]


Hypothesis = Union[Threshold, Table]


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """Column-wise labeled sample; ``counts`` holds row multiplicities."""

    x: np.ndarray
    y: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=np.int8).reshape(-1)
        c = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if not (x.shape == y.shape == c.shape):
            raise ValueError("x, y and counts must have equal length")
        if y.size and not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be exactly -1 or +1")
        if c.size and c.min() < 0:
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_arrays(cls, x, y, counts=None) -> "LabeledSample":
        x = np.asarray(x, dtype=float).reshape(-1)
        if counts is None:
            counts = np.ones(x.shape, dtype=np.int64)
        return cls(x, y, counts)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]) -> "LabeledSample":
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        x, y = zip(*pairs)
        return cls.from_arrays(x, y)

    @classmethod
    def empty(cls) -> "LabeledSample":
        return cls(np.empty(0), np.empty(0, dtype=np.int8), np.empty(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return self.size

    def expanded(self) -> tuple[np.ndarray, np.ndarray]:
        """One row per draw."""
        return np.repeat(self.x, self.counts), np.repeat(self.y, self.counts)

    def label_counts(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sorted unique x with positive and negative label weights."""
        xu, inv = np.unique(self.x, return_inverse=True)
        pos = np.bincount(inv, weights=self.counts * (self.y == 1), minlength=xu.size)
        neg = np.bincount(inv, weights=self.counts * (self.y == -1), minlength=xu.size)
        return xu, pos, neg


def concat(samples: Sequence[LabeledSample]) -> LabeledSample:
    samples = list(samples)
    if not samples:
        return LabeledSample.empty()
    return LabeledSample(
        np.concatenate([s.x for s in samples]),
        np.concatenate([s.y for s in samples]),
        np.concatenate([s.counts for s in samples]),
    )


@dataclass(frozen=True)
class Thresholds:
    """All thresholds of one orientation with cuts in ``domain``."""

    domain: tuple = (0.0, 1.0)
    positive_side: str = LEFT

    def __post_init__(self):
        a, b = (float(v) for v in self.domain)
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError("threshold domain must be a finite interval a < b")
        if self.positive_side not in _SIDES:
            raise ValueError(f"positive_side must be one of {_SIDES}")
        object.__setattr__(self, "domain", (a, b))

    def default(self) -> Threshold:
        a, b = self.domain
        return Threshold(0.5 * (a + b), self.positive_side)

    def contains(self, h) -> bool:
        return isinstance(h, Threshold) and h.positive_side == self.positive_side

    def vc_dimension(self) -> int:
        return 1


@dataclass(frozen=True)
class FiniteClass:
    """Finite class of label tables over point ids 0..support_size-1."""

    support_size: int
    members: tuple
    matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        members = tuple(m if isinstance(m, Table) else Table(tuple(m)) for m in self.members)
        if not members:
            raise ValueError("finite class needs at least one member")
        if any(len(m.labels) != self.support_size for m in members):
            raise ValueError("every member must label every support point")
        object.__setattr__(self, "members", members)
        mat = np.array([m.labels for m in members], dtype=np.int8)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def support(self) -> list[int]:
        return list(range(self.support_size))

    def default(self) -> Table:
        return self.members[0]

    def contains(self, h) -> bool:
        return isinstance(h, Table) and h in self.members

    def index(self, h: Table) -> int:
        return self.members.index(h)

    def vc_dimension(self) -> int:
        """Largest shattered subset, by exhaustive check with early exit."""
        cached = self.__dict__.get("_vc")
        if cached is not None:
            return cached
        mat = self.matrix
        best = 0
        for k in range(1, self.support_size + 1):
            if (1 << k) > len(self.members):
                break
            found = False
            for cols in itertools.combinations(range(self.support_size), k):
                rows = {tuple(r) for r in mat[:, cols]}
                if len(rows) == (1 << k):
                    found = True
                    break
            if not found:
                break
            best = k
        self.__dict__["_vc"] = best
        return best


HypothesisClass = Union[Thresholds, FiniteClass]


def all_tables(support_size: int) -> FiniteClass:
    """Every labeling of the support, in lexicographic order starting at all +1."""
    rows = itertools.product((1, -1), repeat=support_size)
    return FiniteClass(support_size, tuple(Table(r) for r in rows))


def empirical_risk(h: Hypothesis, S: LabeledSample) -> float:
    n = S.size
    if n == 0:
        return 0.0
    wrong = h.predict(S.x) != S.y
    return float(np.dot(wrong, S.counts) / n)


def empirical_disagreement(h: Hypothesis, h2: Hypothesis, S: LabeledSample) -> float:
    n = S.size
    if n == 0:
        return 0.0
    diff = h.predict(S.x) != h2.predict(S.x)
    return float(np.dot(diff, S.counts) / n)


def excess_empirical_risk(h: Hypothesis, h2: Hypothesis, S: LabeledSample) -> float:
    n = S.size
    if n == 0:
        return 0.0
    c = S.counts
    return float((np.dot(h.predict(S.x) != S.y, c) - np.dot(h2.predict(S.x) != S.y, c)) / n)


@dataclass(frozen=True)
class CutIntervals:
    """Distinct threshold behaviors on a set of sorted points.

    Interval i puts the first i points on the negative-count side for
    ``right`` and the first i points on the positive side for ``left``.
    ``lo``/``hi`` are the interval endpoints, ``rep`` a cut realizing it.
    """

    lo: np.ndarray
    hi: np.ndarray
    rep: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


def cut_intervals(xu: np.ndarray, domain: tuple, side: str) -> CutIntervals:
    a, b = domain
    k = xu.size
    lo = np.empty(k + 1)
    hi = np.empty(k + 1)
    lo[0], hi[k] = a, b
    lo[1:] = xu
    hi[:k] = xu
    rep = 0.5 * (lo + hi)
    # Degenerate (zero or negative width) intervals need a cut that still
    # realizes the behavior: the midpoint would land on a sample point.
    bad = ~(hi > lo)
    if bad.any():
        idx = np.nonzero(bad)[0]
        for i in idx:
            if side == LEFT:
                # need xu[i-1] <= cut < xu[i]
                rep[i] = xu[i - 1] if i > 0 and (i == k or xu[i - 1] < xu[i]) else np.nextafter(xu[i], -np.inf)
            else:
                # need xu[i-1] < cut <= xu[i]
                rep[i] = xu[i] if i < k else np.nextafter(xu[k - 1], np.inf)
    return CutIntervals(lo, hi, rep)


def threshold_errors(pos: np.ndarray, neg: np.ndarray, side: str) -> np.ndarray:
    """Weighted error of each of the len(pos)+1 behaviors; works on trailing axis."""
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    zero = np.zeros(pos.shape[:-1] + (1,))
    if side == LEFT:
        # first i points predicted +1: errors are negatives among them, positives after
        base = pos.sum(axis=-1, keepdims=True)
        return base + np.concatenate([zero, np.cumsum(neg - pos, axis=-1)], axis=-1)
    base = neg.sum(axis=-1, keepdims=True)
    return base + np.concatenate([zero, np.cumsum(pos - neg, axis=-1)], axis=-1)


def best_interval(errors: np.ndarray, width: np.ndarray) -> int:
    """Widest minimizer, leftmost among equally wide ones."""
    opt = np.nonzero(errors == errors.min())[0]
    return int(opt[np.argmax(width[opt])])


def threshold_erm_from_counts(cls: Thresholds, xu, pos, neg) -> Threshold:
    xu = np.asarray(xu, dtype=float)
    keep = (np.asarray(pos) + np.asarray(neg)) > 0
    xu, pos, neg = xu[keep], np.asarray(pos)[keep], np.asarray(neg)[keep]
    if xu.size == 0:
        return cls.default()
    iv = cut_intervals(xu, cls.domain, cls.positive_side)
    err = threshold_errors(pos, neg, cls.positive_side)
    i = best_interval(err, iv.width)
    return Threshold(float(iv.rep[i]), cls.positive_side)


def finite_point_counts(S: LabeledSample, support_size: int) -> tuple[np.ndarray, np.ndarray]:
    ids = S.x.astype(np.int64)
    pos = np.bincount(ids, weights=S.counts * (S.y == 1), minlength=support_size)
    neg = np.bincount(ids, weights=S.counts * (S.y == -1), minlength=support_size)
    return pos, neg


def finite_errors(cls: FiniteClass, pos, neg) -> np.ndarray:
    """Weighted error of every member; pos/neg may carry leading axes."""
    plus = (cls.matrix == 1).astype(float)
    return np.asarray(neg, dtype=float) @ plus.T + np.asarray(pos, dtype=float) @ (1.0 - plus).T


def erm(cls: HypothesisClass, S: LabeledSample) -> Hypothesis:
    """Exact empirical risk minimizer with the deterministic tie-break."""
    if isinstance(cls, Thresholds):
        if S.size == 0:
            return cls.default()
        xu, pos, neg = S.label_counts()
        return threshold_erm_from_counts(cls, xu, pos, neg)
    if isinstance(cls, FiniteClass):
        if S.size == 0:
            return cls.default()
        pos, neg = finite_point_counts(S, cls.support_size)
        return cls.members[int(np.argmin(finite_errors(cls, pos, neg)))]
    raise TypeError(f"unsupported hypothesis class {type(cls).__name__}")


def population_excess_risk(h: Hypothesis, dist, cls: HypothesisClass) -> float:
    """Closed-form R_P(h) - min over the class of R_P."""
    return max(dist.risk(h) - dist.best_risk(cls), 0.0)
