"""Monte Carlo experiment runners.

Every replication draws from its own stream (see ``seeding``) and the
results are folded in replication order, so thread count never changes
the numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .. import adversarial as adv
from .. import theory
from ..distributions import (
    excess_risk,
    make_asymmetry_pair,
    two_point_class,
    validate_bernstein,
    validate_transfer_exponent,
)
from ..hypothesis import LabeledSample, concat, erm, population_excess_risk
from ..procedures import (
    MultiSample,
    ProcedureConfig,
    Ranking,
    oracle_procedure,
    pool_erm,
    rank_based_procedure,
    target_only_erm,
)
from .config import ConfigError, ExperimentConfig
from .fitting import FitError, SlopeFit, fit_rate_exponent
from .seeding import stream


class AssumptionError(RuntimeError):
    pass


@dataclass
class Report:
    experiment: str
    columns: tuple
    rows: list
    meta: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    xlabel: str = ""
    ylabel: str = ""
    flags: list = field(default_factory=list)


def replicate(fn: Callable[[int], object], reps: int, threads: int = 1) -> list:
    """fn(r) for r in range(reps), results in replication order."""
    if threads <= 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(reps)))


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _meta(cfg: ExperimentConfig) -> dict:
    import scipy

    from .. import __version__

    return {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "replications": cfg.replications,
        "versions": {"msl": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "config": cfg.canonical(),
    }


def _check_assumptions(cfg: ExperimentConfig, instances: Iterable, force: bool):
    problems = []
    for label, inst in instances:
        problems += [f"{label}: {p}" for p in inst.validate()]
    if problems and not force:
        head = "; ".join(problems[:3])
        more = f" (and {len(problems) - 3} more)" if len(problems) > 3 else ""
        raise AssumptionError(head + more)
    return problems


# rates / pooling ---------------------------------------------------------


def _run_procedure(name: str, Z: MultiSample, inst, ranking: Ranking, pconf: ProcedureConfig):
    cls = inst.cls
    if name == "target_erm":
        return target_only_erm(Z, cls), False
    if name == "pooled":
        return pool_erm(Z, cls), False
    if name == "oracle":
        return oracle_procedure(Z, ranking, inst.declared_rhos, inst.beta, inst.C_beta, inst.C_rho, pconf, cls), False
    res = rank_based_procedure(Z, ranking, pconf, cls)
    return res.hypothesis, res.fallback_used


def max_excess(inst) -> float:
    """Largest excess risk any class member can have on the target."""
    from ..distributions import default_grid

    target = inst.target
    best = target.best_risk(inst.cls)
    return max(target.risk(h) - best for h in default_grid(target, inst.cls))


def run_rate_experiment(cfg: ExperimentConfig, force: bool = False) -> Report:
    if cfg.sweep is None:
        raise ConfigError("rate experiments need a [sweep] table")
    if not cfg.procedure_list:
        raise ConfigError("no procedures listed")
    values = cfg.sweep.values
    instances = [cfg.instance(v) for v in values]
    if "target_erm" in cfg.procedure_list and any(i.sample_sizes[-1] == 0 for i in instances):
        raise ConfigError("target_erm needs a positive target sample size")
    flags = _check_assumptions(cfg, [(f"sweep={v}", i) for v, i in zip(values, instances)], force)
    procs = cfg.procedure_list
    reps = cfg.replications
    rows, series = [], {p: ([], [], []) for p in procs}
    for g, (v, inst) in enumerate(zip(values, instances)):
        ranking = inst.ranking()

        def one(r, inst=inst, ranking=ranking, g=g):
            rng = stream(cfg.seed, cfg.experiment, g, r)
            Z = inst.sample(rng)
            out = []
            for p in procs:
                h, fb = _run_procedure(p, Z, inst, ranking, cfg.procedure_config)
                out.append((population_excess_risk(h, inst.target, inst.cls), fb))
            return out

        results = replicate(one, reps, cfg.threads)
        total = int(sum(inst.sample_sizes))
        x = total if cfg.sweep.fit_against == "total" else v
        floor = None
        for j, p in enumerate(procs):
            risks = [res[j][0] for res in results]
            fallback = float(np.mean([res[j][1] for res in results]))
            mean, se = _mean_se(risks)
            clamped = mean <= 0
            if clamped:
                if floor is None:
                    top = max_excess(inst)
                    floor = 1.0 / (2.0 * reps * top) if top > 0 else 1.0 / (2.0 * reps)
                mean = floor
                flags.append(f"sweep={v} {p}: zero mean clamped to {floor:.6g}")
            rows.append((v, total, p, mean, se, reps, int(clamped), fallback))
            series[p][0].append(x)
            series[p][1].append(mean)
            series[p][2].append(se)
    slopes = {}
    for p, (xs, ms, ses) in series.items():
        try:
            slopes[p] = fit_rate_exponent(xs, ms, ses)
        except FitError as exc:
            flags.append(f"{p}: {exc}")
    meta = _meta(cfg)
    return Report(
        cfg.experiment,
        ("sweep_value", "total_samples", "procedure", "mean_excess_risk", "stderr", "replications", "clamped", "fallback_rate"),
        rows,
        meta,
        slopes,
        series,
        "total samples" if cfg.sweep.fit_against == "total" else f"sweep value ({cfg.sweep.axis})",
        "mean target excess risk",
        flags,
    )


# asymmetry ----------------------------------------------------------------


def run_asymmetry_experiment(cfg: ExperimentConfig, force: bool = False) -> Report:
    sec = cfg.section("asymmetry")
    beta = float(sec.get("beta", 0.0))
    n_P = int(sec.get("n_P", 1000))
    n_D = int(sec.get("n_D", 11))
    c2 = float(sec.get("c2", 0.08))
    try:
        P, D = make_asymmetry_pair(beta, max(n_P, 1), c2)
    except ValueError as exc:
        raise ConfigError(f"invalid asymmetry parameters: {exc}") from None
    cls = two_point_class()
    flags = []
    for name, dist in (("P", P), ("D", D)):
        rep = validate_bernstein(dist, cls, 2.0, beta)
        if not rep.holds:
            flags.append(f"{name}: Bernstein condition fails")
    if excess_risk(P, cls, D.bayes_in_class(cls)) > 1e-12:
        flags.append("P and D do not share h*")
    if flags and not force:
        raise AssumptionError("; ".join(flags))
    learners = ["pooled", "source_only"] + (["target_only"] if n_D > 0 else [])

    def one(r):
        rng = stream(cfg.seed, cfg.experiment, 0, r)
        zp = P.sample(n_P, rng)
        zd = D.sample(n_D, rng)
        hs = {"pooled": erm(cls, concat([zp, zd])), "source_only": erm(cls, zp)}
        if n_D > 0:
            hs["target_only"] = erm(cls, zd)
        out = []
        for name in learners:
            h = hs[name]
            out.append((excess_risk(D, cls, h), excess_risk(P, cls, h), float(h.labels[1] == 1)))
        return out

    results = replicate(one, cfg.replications, cfg.threads)
    rows = []
    for j, name in enumerate(learners):
        for k, metric in enumerate(("excess_D", "excess_P", "wrong_at_x1")):
            mean, se = _mean_se([res[j][k] for res in results])
            rows.append((name, metric, mean, se, cfg.replications))
    meta = _meta(cfg)
    meta["reference"] = {"two_over_sqrt_nP": 2.0 / math.sqrt(max(n_P, 1))}
    return Report(cfg.experiment, ("learner", "metric", "mean", "stderr", "replications"), rows, meta, flags=flags)


# adaptivity ---------------------------------------------------------------


def adaptivity_params(cfg: ExperimentConfig) -> tuple[adv.ImpossibilityParams, Optional[adv.ImpossibilityParams], dict]:
    sec = cfg.section("adaptivity")
    try:
        p = adv.ImpossibilityParams(
            beta=float(sec.get("beta", 0.0)),
            n=int(sec.get("n", 8)),
            n_D=int(sec.get("n_D", 16)),
            N_P=int(sec.get("N_P", 4096)),
            N_Q=int(sec.get("N_Q", 16)),
            c0=float(sec.get("c0", 0.25)),
            c1=float(sec.get("c1", 2.0**-10)),
            sigma=-1,
            strict=bool(sec.get("strict", False)),
        )
        hard = None
        if "hard_N_P" in sec:
            hard = adv.ImpossibilityParams(**{**p.__dict__, "N_P": int(sec["hard_N_P"]), "strict": False})
    except ValueError as exc:
        raise ConfigError(f"invalid adaptivity parameters: {exc}") from None
    extra = {
        "C0": float(sec.get("C0", 1.0)),
        "delta": float(sec.get("delta", 0.1)),
        "rank_reps": int(sec.get("rank_reps", cfg.replications)),
        "stats_reps": int(sec.get("stats_reps", cfg.replications)),
    }
    return p, hard, extra


def construction_checks(p: adv.ImpossibilityParams) -> list[tuple[str, bool, float]]:
    """Transfer exponents and Bernstein condition for the three tasks."""
    tk = adv.build_impossibility_tasks(p)
    cls = adv.impossibility_class()
    out = []
    rep = validate_transfer_exponent(tk.P, tk.D, cls, 3.0, p.rho_P())
    out.append(("transfer_P", rep.holds, rep.worst_ratio))
    rep = validate_transfer_exponent(tk.Q, tk.D, cls, 3.0, 1.0)
    out.append(("transfer_Q", rep.holds, rep.worst_ratio))
    for name, d in (("D", tk.D), ("P", tk.P), ("Q", tk.Q)):
        rep = validate_bernstein(d, cls, p.bernstein_constant(), p.beta)
        out.append((f"bernstein_{name}", rep.holds, rep.worst_ratio))
    return out


def true_ranking(Z: MultiSample, p: adv.ImpossibilityParams) -> Ranking:
    """Q vectors first, then the target, then P vectors."""
    rho_p = p.rho_P()
    rhos = [1.0 if o == adv.ORIGIN_Q else (rho_p if o == adv.ORIGIN_P else 1.0) for o in Z.origins]
    return Ranking.from_rhos(rhos)


def run_adaptivity_experiment(cfg: ExperimentConfig, force: bool = False) -> Report:
    p, hard, extra = adaptivity_params(cfg)
    checks = construction_checks(p)
    failed = [c[0] for c in checks if not c[1]]
    if failed and not force:
        raise AssumptionError("construction checks failed: " + ", ".join(failed))
    rows = []
    exp = cfg.experiment

    stats = replicate(lambda r: adv.sample_gamma_stats(p, stream(cfg.seed, exp, 0, r)), extra["stats_reps"], cfg.threads)
    fs = adv.flip_study(p, stats)
    m = fs.reps
    rows.append(("flip_probability", *fs.flip, m, 1.0 / (12 * 96 * 84)))
    rows.append(("homogeneous_plus_wins", *fs.homogeneous_plus_wins, m, fs.event_both[0] / 12.0))
    rows.append(("event_EP_and_EQ", *fs.event_both, m, float("nan")))
    rows.append(("target_event", *fs.target_event, m, 1.0 / 84))

    tk = adv.build_impossibility_tasks(p)
    cls = adv.impossibility_class()
    pconf = ProcedureConfig(extra["C0"], extra["delta"])

    # materializes every vector, so skip it with rank_reps = 0 at huge N_P
    if extra["rank_reps"] > 0:
        def one(r):
            Z = adv.sample_gamma(p, stream(cfg.seed, exp, 1, r))
            rb = rank_based_procedure(Z, true_ranking(Z, p), pconf, cls)
            pooled = pool_erm(Z, cls)
            return (
                float(rb.hypothesis.labels[1] == p.sigma),
                excess_risk(tk.D, cls, rb.hypothesis),
                float(rb.fallback_used),
                float(pooled.labels[1] == p.sigma),
                excess_risk(tk.D, cls, pooled),
            )

        res = np.asarray(replicate(one, extra["rank_reps"], cfg.threads), dtype=float)
        k = res.shape[0]
        rate = (p.n * p.N_Q) ** (-1.0 / (2.0 - p.beta))
        rows.append(("rank_based_correct", *_mean_se(res[:, 0]), k, 0.95))
        rows.append(("rank_based_excess_D", *_mean_se(res[:, 1]), k, rate))
        rows.append(("rank_based_fallback", *_mean_se(res[:, 2]), k, float("nan")))
        rows.append(("pooled_correct", *_mean_se(res[:, 3]), k, float("nan")))
        rows.append(("pooled_excess_D", *_mean_se(res[:, 4]), k, rate))

    if hard is not None:
        hs = replicate(lambda r: adv.sample_gamma_stats(hard, stream(cfg.seed, exp, 2, r)), extra["rank_reps"] or extra["stats_reps"], cfg.threads)
        wrong = [float(adv.pooled_label_from_stats(s) != hard.sigma) for s in hs]
        rows.append(("pooled_wrong_hard", *_mean_se(wrong), len(wrong), 0.08))
    meta = _meta(cfg)
    meta["construction_checks"] = [{"check": c, "holds": h, "worst_ratio": w} for c, h, w in checks]
    meta["strict_conditions"] = p.strict_conditions()
    return Report(exp, ("metric", "estimate", "stderr", "replications", "reference"), rows, meta, flags=failed)


# validate / bounds / pack -------------------------------------------------


def run_validate(cfg: ExperimentConfig) -> tuple[Report, bool]:
    rows = []
    if "instance" in cfg.data:
        values = cfg.sweep.values if cfg.sweep else (None,)
        for v in values:
            inst = cfg.instance(v)
            hstar = inst.target.bayes_in_class(inst.cls)
            for i, d in enumerate(inst.tasks):
                e = excess_risk(d, inst.cls, hstar)
                rows.append((v if v is not None else "", i, "shared_hstar", int(e <= 1e-12), e))
                rep = validate_bernstein(d, inst.cls, inst.C_beta, inst.beta)
                rows.append((v if v is not None else "", i, "bernstein", int(rep.holds), rep.worst_ratio))
                rep = validate_transfer_exponent(d, inst.target, inst.cls, inst.C_rho, float(inst.declared_rhos[i]))
                rows.append((v if v is not None else "", i, "transfer", int(rep.holds), rep.worst_ratio))
    if "adaptivity" in cfg.data:
        p, _, _ = adaptivity_params(cfg)
        for name, holds, ratio in construction_checks(p):
            rows.append(("", "construction", name, int(holds), ratio))
    if not rows:
        raise ConfigError("validate needs an [instance] or [adaptivity] table")
    ok = all(r[3] for r in rows)
    return Report("validate", ("sweep_value", "task", "check", "holds", "worst_ratio"), rows, _meta(cfg)), ok


def run_bounds(cfg: ExperimentConfig) -> Report:
    sec = cfg.section("query")
    if "rhos" not in sec or "sizes" not in sec:
        raise ConfigError("bounds needs [query] with rhos and sizes")
    try:
        q = theory.RateQuery.ranked(
            [float(r) for r in sec["rhos"]],
            [int(s) for s in sec["sizes"]],
            beta=float(sec.get("beta", 1.0)),
            vc=int(sec.get("vc", 1)),
            delta=float(sec.get("delta", 0.1)),
            C_beta=float(sec.get("C_beta", 2.0)),
            C_rho=float(sec.get("C_rho", 2.0)),
            C0=float(sec.get("C0", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid query: {exc}") from None
    alpha = float(sec.get("alpha", 0.5))
    calcs = {
        "minimax_rate": theory.minimax_rate(q),
        "oracle_bound": theory.oracle_bound(q),
        "semi_adaptive_bound": theory.semi_adaptive_bound(q),
        "pooling_bound_beta1": theory.pooling_bound_beta1(q),
        "general_pooling_bound": theory.general_pooling_bound(q),
    }
    rows, series = [], {}
    prefix = q.prefix_sizes()
    for name, bv in calcs.items():
        for t, term in enumerate(bv.per_t_terms, start=1):
            rows.append((name, t, prefix[t - 1], term, int(t == bv.argmin_t)))
        series[name] = (prefix, list(bv.per_t_terms), [0.0] * len(prefix))
    qb = theory.quantile_pooling_bound(q, alpha)
    rows.append(("quantile_pooling_bound", qb.argmin_t, prefix[qb.argmin_t - 1], qb.value, 1))
    return Report(
        "bounds", ("calculator", "t", "prefix_size", "term", "is_min"), rows, _meta(cfg), series=series,
        xlabel="prefix sample size", ylabel="bound term",
    )


def run_pack(cfg: ExperimentConfig) -> Report:
    sec = cfg.section("pack")
    d = int(sec.get("d", 8))
    try:
        vecs = adv.vg_packing(d, sec.get("max_size"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    arr = np.asarray(vecs)
    rows = []
    for i, v in enumerate(arr):
        others = np.delete(arr, i, axis=0)
        dmin = int((others != v).sum(axis=1).min()) if len(others) else d
        rows.append((i, "".join("+" if s > 0 else "-" for s in v), dmin))
    return Report("pack", ("index", "signs", "min_distance"), rows, _meta(cfg))


def run(cfg: ExperimentConfig, force: bool = False) -> Report:
    if cfg.experiment in ("rates", "pooling"):
        return run_rate_experiment(cfg, force)
    if cfg.experiment == "asymmetry":
        return run_asymmetry_experiment(cfg, force)
    if cfg.experiment == "adaptivity":
        return run_adaptivity_experiment(cfg, force)
    if cfg.experiment == "bounds":
        return run_bounds(cfg)
    if cfg.experiment == "pack":
        return run_pack(cfg)
    report, ok = run_validate(cfg)
    if not ok and not force:
        raise AssumptionError("instance assumptions fail; see the validate report", report)
    return report
