import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msl import theory
from msl.distributions import FlipProb, ThresholdFamily, TwoPoint, Uniform, two_point_class
from msl.hypothesis import FiniteClass, LabeledSample, Table, Threshold, Thresholds, all_tables, erm
from msl.procedures import (
    DegenerateSample,
    MultiSample,
    MultisourceInstance,
    ProcedureConfig,
    Ranking,
    constraint_matrix,
    constraint_set_contains,
    oracle_procedure,
    oracle_select_t_star,
    pool_erm,
    prefix_sample,
    rank_based_procedure,
    target_only_erm,
)


def test_ranking_is_stable():
    assert Ranking.from_rhos([2.0, 1.0, 1.0, 1.0]).order == (1, 2, 3, 0)
    with pytest.raises(ValueError):
        Ranking((0, 0))


def test_multisample_roundtrip():
    a = LabeledSample.from_pairs([(0.1, 1), (0.2, -1)])
    b = LabeledSample.from_pairs([(0.9, -1)])
    Z = MultiSample.from_datasets([a, b])
    assert Z.num_tasks == 2 and Z.total == 3
    assert Z.target().size == 1
    assert prefix_sample(Z, Ranking((1, 0)), 1).size == 1
    assert prefix_sample(Z, Ranking((1, 0)), 2).size == 3


def test_target_only_and_pooled():
    a = LabeledSample.from_pairs([(0.1, 1), (0.6, -1)])
    b = LabeledSample.from_pairs([(0.3, 1), (0.5, -1)])
    Z = MultiSample.from_datasets([a, b])
    cls = Thresholds((0.0, 1.0))
    assert target_only_erm(Z, cls).cut == pytest.approx(0.4)
    assert 0.3 <= pool_erm(Z, cls).cut < 0.5
    with pytest.raises(DegenerateSample):
        target_only_erm(MultiSample.from_datasets([a, LabeledSample.empty()]), cls)


def test_oracle_t_star():
    cfg = ProcedureConfig()
    # target-sized informative sources: use everything
    assert oracle_select_t_star([1, 1, 1], [100, 100, 100], 1.0, 2.0, 2.0, cfg) == 3
    # a useless source is never worth including
    assert oracle_select_t_star([1, 50], [100_000, 10], 1.0, 2.0, 2.0, cfg) == 1


def test_oracle_procedure_runs(rng):
    inst = MultisourceInstance(
        (ThresholdFamily(Uniform(0, 2), 0.5), ThresholdFamily(Uniform(0, 1), 0.5)),
        (50, 20), (1.0, 1.0), 1.0, 2.0, 2.0, Thresholds((0.0, 2.0)),
    )
    Z = inst.sample(rng)
    h = oracle_procedure(Z, inst.ranking(), inst.declared_rhos, 1.0, 2.0, 2.0, ProcedureConfig(), inst.cls)
    assert isinstance(h, Threshold)


def test_instance_validation():
    good = MultisourceInstance(
        (ThresholdFamily(Uniform(0, 2), 0.5), ThresholdFamily(Uniform(0, 1), 0.5)),
        (8, 8), (1.0, 1.0), 1.0, 2.0, 2.0, Thresholds((0.0, 2.0)),
    )
    assert good.validate() == []
    shifted = MultisourceInstance(
        (ThresholdFamily(Uniform(0, 2), 0.7), ThresholdFamily(Uniform(0, 1), 0.5)),
        (8, 8), (1.0, 1.0), 1.0, 2.0, 2.0, Thresholds((0.0, 2.0)),
    )
    assert any("shared" in p for p in shifted.validate())
    with pytest.raises(ValueError):
        MultisourceInstance((TwoPoint(0.5, 0.5),), (5,), (2.0,), 0.0, 2.0, 2.0, two_point_class())


CHAIN = FiniteClass(3, tuple(Table(r) for r in [(1, 1, 1), (1, 1, -1), (1, -1, -1), (-1, -1, -1)]))

datasets = st.lists(
    st.lists(st.tuples(st.integers(0, 2), st.sampled_from([-1, 1])), min_size=1, max_size=12),
    min_size=2,
    max_size=4,
)


@settings(max_examples=80, deadline=None)
@given(datasets, st.floats(0.05, 2.0), st.randoms(use_true_random=False))
def test_finite_constraint_matrix_matches_direct_check(data, C0, rnd):
    Z = MultiSample.from_datasets([LabeledSample.from_pairs([(float(a), b) for a, b in d]) for d in data])
    order = list(range(Z.num_tasks))
    rnd.shuffle(order)
    ranking = Ranking(tuple(order))
    cfg = ProcedureConfig(C0=C0)
    res = rank_based_procedure(Z, ranking, cfg, CHAIN)
    feasible = [
        all(constraint_set_contains(h, prefix_sample(Z, ranking, t), t, cfg, CHAIN) for t in range(1, Z.num_tasks + 1))
        for h in CHAIN.members
    ]
    # members that agree on every sampled point count as one candidate
    pooled = Z.pooled()
    behaviors = {tuple(h.predict(pooled.x)) for h, f in zip(CHAIN.members, feasible) if f}
    assert res.feasible == len(behaviors)
    if any(feasible):
        assert not res.fallback_used
        errs = [np.dot(h.predict(pooled.x) != pooled.y, pooled.counts) for h in CHAIN.members]
        best = min(e for e, f in zip(errs, feasible) if f)
        expected = next(i for i, (e, f) in enumerate(zip(errs, feasible)) if f and e == best)
        assert res.hypothesis == CHAIN.members[expected]
    else:
        assert res.fallback_used and res.hypothesis == pool_erm(Z, CHAIN)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 3.0))
def test_threshold_rank_based_output_is_feasible(seed, C0):
    gen = np.random.default_rng(seed)
    tasks = [ThresholdFamily(Uniform(0, 1), 0.5, FlipProb(0.2)), ThresholdFamily(Uniform(0, 2), 0.5), ThresholdFamily(Uniform(0, 1), 0.5)]
    Z = MultiSample.from_datasets([t.sample(int(gen.integers(1, 15)), gen) for t in tasks])
    cls = Thresholds((0.0, 2.0))
    ranking = Ranking(tuple(gen.permutation(3)))
    cfg = ProcedureConfig(C0=C0)
    res = rank_based_procedure(Z, ranking, cfg, cls)
    if not res.fallback_used:
        for t in range(1, 4):
            assert constraint_set_contains(res.hypothesis, prefix_sample(Z, ranking, t), t, cfg, cls)


def test_rank_based_zero_radius_reduces_to_prefix_structure():
    # huge C0 makes every constraint slack, so the pooled ERM is returned
    a = LabeledSample.from_pairs([(0.0, 1), (1.0, -1), (2.0, -1)])
    Z = MultiSample.from_datasets([a, a])
    res = rank_based_procedure(Z, Ranking((0, 1)), ProcedureConfig(C0=1e6), CHAIN)
    assert res.hypothesis == erm(CHAIN, Z.pooled()) and not res.fallback_used


def test_procedure_config_validation():
    for kw in ({"C0": 0}, {"delta": 1.0}, {"fallback": "x"}):
        with pytest.raises(ValueError):
            ProcedureConfig(**kw)
