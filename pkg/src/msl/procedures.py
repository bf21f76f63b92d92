"""Multisource learners: target-only ERM, pooled ERM, the oracle prefix
procedure and the rank-based semi-adaptive procedure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import theory
from .distributions import (
    excess_risk,
    validate_bernstein,
    validate_transfer_exponent,
)
from .hypothesis import (
    FiniteClass,
    Hypothesis,
    LabeledSample,
    Threshold,
    Thresholds,
    concat,
    cut_intervals,
    erm,
    finite_errors,
    threshold_erm_from_counts,
    threshold_errors,
)

POOLED = "pooled"
ANY = "any"


class DegenerateSample(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MultiSample:
    """N+1 datasets stored as one table; the last task is the target.

    ``origins`` optionally tags each task (used by the mixture sampler to
    remember whether a vector came from P or Q).
    """

    task: np.ndarray
    x: np.ndarray
    y: np.ndarray
    counts: np.ndarray
    sizes: np.ndarray
    origins: Optional[np.ndarray] = None

    @classmethod
    def from_datasets(cls, datasets: Sequence[LabeledSample], origins=None) -> "MultiSample":
        datasets = list(datasets)
        if not datasets:
            raise ValueError("a multisample needs at least the target dataset")
        task = np.concatenate([np.full(d.x.size, i, dtype=np.int64) for i, d in enumerate(datasets)])
        s = concat(datasets)
        sizes = np.array([d.size for d in datasets], dtype=np.int64)
        return cls(task, s.x, s.y, s.counts, sizes, None if origins is None else np.asarray(origins))

    @property
    def num_tasks(self) -> int:
        return int(self.sizes.size)

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    def dataset(self, t: int) -> LabeledSample:
        sel = self.task == t
        return LabeledSample(self.x[sel], self.y[sel], self.counts[sel])

    @property
    def datasets(self) -> list[LabeledSample]:
        return [self.dataset(t) for t in range(self.num_tasks)]

    def pooled(self) -> LabeledSample:
        return LabeledSample(self.x, self.y, self.counts)

    def target(self) -> LabeledSample:
        return self.dataset(self.num_tasks - 1)


@dataclass(frozen=True)
class Ranking:
    """Task indices (0-based) ordered by non-decreasing declared exponent."""

    order: tuple

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError("ranking must be a permutation of task indices")
        object.__setattr__(self, "order", order)

    @classmethod
    def from_rhos(cls, rhos: Sequence[float]) -> "Ranking":
        # Python's sort is stable, so equal exponents keep task-index order
        return cls(tuple(sorted(range(len(rhos)), key=lambda i: float(rhos[i]))))

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class ProcedureConfig:
    C0: float = 1.0
    delta: float = 0.1
    fallback: str = POOLED

    def __post_init__(self):
        if not self.C0 > 0:
            raise ValueError("C0 must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.fallback not in (POOLED, ANY):
            raise ValueError("fallback must be 'pooled' or 'any'")


@dataclass(frozen=True)
class MultisourceInstance:
    tasks: tuple
    sample_sizes: tuple
    declared_rhos: tuple
    beta: float
    C_beta: float
    C_rho: float
    cls: object

    def __post_init__(self):
        n = len(self.tasks)
        if n == 0 or len(self.sample_sizes) != n or len(self.declared_rhos) != n:
            raise ValueError("tasks, sample_sizes and declared_rhos must be aligned")
        if any(int(s) < 1 for s in self.sample_sizes[:-1]) or int(self.sample_sizes[-1]) < 0:
            raise ValueError("source sizes must be >= 1 and the target size >= 0")
        if float(self.declared_rhos[-1]) != 1.0:
            raise ValueError("the target's declared exponent must be 1")

    @property
    def target(self):
        return self.tasks[-1]

    def ranking(self) -> Ranking:
        return Ranking.from_rhos(self.declared_rhos)

    def sample(self, rng: np.random.Generator) -> MultiSample:
        return MultiSample.from_datasets([d.sample(int(n), rng) for d, n in zip(self.tasks, self.sample_sizes)])

    def validate(self) -> list[str]:
        """Return a list of violated assumptions; empty when all hold."""
        problems = []
        hstar = self.target.bayes_in_class(self.cls)
        for i, d in enumerate(self.tasks):
            if excess_risk(d, self.cls, hstar) > 1e-12:
                problems.append(f"task {i}: target's best-in-class hypothesis is not optimal (shared h*)")
            rep = validate_bernstein(d, self.cls, self.C_beta, self.beta)
            if not rep.holds:
                problems.append(f"task {i}: Bernstein condition fails (worst ratio {rep.worst_ratio:.6g})")
            rep = validate_transfer_exponent(d, self.target, self.cls, self.C_rho, float(self.declared_rhos[i]))
            if not rep.holds:
                problems.append(f"task {i}: transfer exponent fails (worst ratio {rep.worst_ratio:.6g})")
        return problems


def target_only_erm(Z: MultiSample, cls) -> Hypothesis:
    if Z.sizes[-1] == 0:
        raise DegenerateSample("target-only ERM needs n_D >= 1")
    return erm(cls, Z.target())


def pool_erm(Z: MultiSample, cls) -> Hypothesis:
    return erm(cls, Z.pooled())


def prefix_sample(Z: MultiSample, ranking: Ranking, t: int) -> LabeledSample:
    if not 1 <= t <= Z.num_tasks:
        raise IndexError(f"t={t} outside [1, {Z.num_tasks}]")
    sel = np.isin(Z.task, np.asarray(ranking.order[:t]))
    return LabeledSample(Z.x[sel], Z.y[sel], Z.counts[sel])


def _class_vc(cls) -> int:
    return max(cls.vc_dimension(), 1)


def oracle_select_t_star(rhos, sizes, beta, C_beta, C_rho, config: ProcedureConfig, vc: int = 1) -> int:
    """1-based prefix length minimizing the oracle bound (ties to smaller t)."""
    q = theory.RateQuery.ranked(
        list(rhos), list(sizes), beta=beta, vc=vc, delta=config.delta, C_beta=C_beta, C_rho=C_rho, C0=config.C0
    )
    return theory.oracle_bound(q).argmin_t


def oracle_procedure(Z: MultiSample, ranking: Ranking, rhos, beta, C_beta, C_rho, config: ProcedureConfig, cls) -> Hypothesis:
    t = oracle_select_t_star(rhos, Z.sizes.tolist(), beta, C_beta, C_rho, config, _class_vc(cls))
    return erm(cls, prefix_sample(Z, ranking, t))


def constraint_set_contains(h: Hypothesis, Z_prefix: LabeledSample, t: int, config: ProcedureConfig, cls) -> bool:
    n = Z_prefix.size
    if n == 0:
        return True
    ref = erm(cls, Z_prefix)
    wrong_h = np.dot(h.predict(Z_prefix.x) != Z_prefix.y, Z_prefix.counts)
    wrong_ref = np.dot(ref.predict(Z_prefix.x) != Z_prefix.y, Z_prefix.counts)
    dis = np.dot(h.predict(Z_prefix.x) != ref.predict(Z_prefix.x), Z_prefix.counts)
    return _within_radius(wrong_h - wrong_ref, dis, n, t, config, _class_vc(cls))


def _within_radius(excess_count, dis_count, n, t, config: ProcedureConfig, vc: int):
    e = theory.eps(int(n), config.delta / (6.0 * t * t), vc)
    lhs = np.asarray(excess_count, dtype=float) / n
    rhs = config.C0 * np.sqrt(np.asarray(dis_count, dtype=float) / n * e) + config.C0 * e
    return lhs <= rhs + 1e-12


@dataclass(frozen=True)
class RankBasedResult:
    hypothesis: Hypothesis
    fallback_used: bool
    feasible: int = 0
    candidates: int = 0


def _task_point_counts(Z: MultiSample, point_index: np.ndarray, width: int):
    pos = np.zeros((Z.num_tasks, width))
    neg = np.zeros((Z.num_tasks, width))
    np.add.at(pos, (Z.task, point_index), Z.counts * (Z.y == 1))
    np.add.at(neg, (Z.task, point_index), Z.counts * (Z.y == -1))
    return pos, neg


def _finite_tables(Z: MultiSample, ranking: Ranking, cls: FiniteClass):
    pos, neg = _task_point_counts(Z, Z.x.astype(np.int64), cls.support_size)
    order = np.asarray(ranking.order)
    ppos = np.cumsum(pos[order], axis=0)
    pneg = np.cumsum(neg[order], axis=0)
    err = finite_errors(cls, ppos, pneg)
    ref = np.argmin(err, axis=1)
    present = (ppos[-1] + pneg[-1]) > 0
    seen = {}
    for i, row in enumerate(cls.matrix[:, present]):
        seen.setdefault(row.tobytes(), i)
    cand = np.array(sorted(seen.values()), dtype=np.int64)
    cnt = ppos + pneg
    dis = np.empty((len(order), cand.size))
    for e in np.unique(ref):
        rows = ref == e
        diff = (cls.matrix[cand] != cls.matrix[e]).astype(float)
        dis[rows] = cnt[rows] @ diff.T
    excess = err[:, cand] - err[np.arange(len(order)), ref][:, None]
    pooled = err[-1, cand]
    sort_key = np.lexsort((cand, pooled))
    hyps = [cls.members[i] for i in cand]
    return excess, dis, cnt.sum(axis=1), pooled, sort_key, hyps


def _threshold_tables(Z: MultiSample, ranking: Ranking, cls: Thresholds):
    xu, inv = np.unique(Z.x, return_inverse=True)
    k = xu.size
    pos, neg = _task_point_counts(Z, inv.reshape(-1), k)
    order = np.asarray(ranking.order)
    ppos = np.cumsum(pos[order], axis=0)
    pneg = np.cumsum(neg[order], axis=0)
    iv = cut_intervals(xu, cls.domain, cls.positive_side)
    err = threshold_errors(ppos, pneg, cls.positive_side)
    cnt = ppos + pneg
    cum = np.concatenate([np.zeros((len(order), 1)), np.cumsum(cnt, axis=1)], axis=1)
    rows = np.arange(len(order))
    ref = np.empty(len(order), dtype=np.int64)
    for t in rows:
        h = threshold_erm_from_counts(cls, xu, ppos[t], pneg[t])
        side = "right" if cls.positive_side == "left" else "left"
        ref[t] = np.searchsorted(xu, h.cut, side=side)
    dis = np.abs(cum - cum[rows, ref][:, None])
    excess = err - err[rows, ref][:, None]
    pooled = err[-1]
    idx = np.arange(k + 1)
    sort_key = np.lexsort((idx, -iv.width, pooled))
    hyps = [Threshold(float(c), cls.positive_side) for c in iv.rep]
    return excess, dis, cnt.sum(axis=1), pooled, sort_key, hyps


def constraint_matrix(Z: MultiSample, ranking: Ranking, config: ProcedureConfig, cls, vc: Optional[int] = None):
    """Membership of every candidate behavior in every prefix constraint set.

    Returns (inside[t, c], candidates, order) where ``order`` lists
    candidate columns in the deterministic selection order.
    """
    if len(ranking) != Z.num_tasks:
        raise ValueError("ranking length does not match the number of tasks")
    if isinstance(cls, FiniteClass):
        excess, dis, sizes, _, order, hyps = _finite_tables(Z, ranking, cls)
    elif isinstance(cls, Thresholds):
        excess, dis, sizes, _, order, hyps = _threshold_tables(Z, ranking, cls)
    else:
        raise TypeError(f"unsupported hypothesis class {type(cls).__name__}")
    vc = _class_vc(cls) if vc is None else vc
    inside = np.ones(excess.shape, dtype=bool)
    live = sizes > 0
    if live.any():
        n = sizes[live][:, None]
        t = np.arange(1, excess.shape[0] + 1)[live]
        e = theory.eps_array(n[:, 0], config.delta / (6.0 * t * t), vc)[:, None]
        rhs = config.C0 * np.sqrt(dis[live] / n * e) + config.C0 * e
        inside[live] = excess[live] / n <= rhs + 1e-12
    return inside, hyps, order


def rank_based_procedure(Z: MultiSample, ranking: Ranking, config: ProcedureConfig, cls, vc: Optional[int] = None) -> RankBasedResult:
    inside, hyps, order = constraint_matrix(Z, ranking, config, cls, vc)
    feasible = inside.all(axis=0)
    for c in order:
        if feasible[c]:
            return RankBasedResult(hyps[c], False, int(feasible.sum()), len(hyps))
    if config.fallback == POOLED:
        return RankBasedResult(pool_erm(Z, cls), True, 0, len(hyps))
    return RankBasedResult(hyps[order[0]], True, 0, len(hyps))
