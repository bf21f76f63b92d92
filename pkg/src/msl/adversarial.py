"""Lower-bound instance generators and the mixture-of-tasks impossibility
machinery: sampling, sufficient statistics, likelihood ratios, the Bayes
discriminant and a greedy Hamming packing.

Point id 0 is x0 (label +1 under every task), id 1 is x1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.special import xlogy

from .distributions import (
    TwoPoint,
    lower_bound_class,
    make_lower_bound_family,
    two_point_class,
)
from .hypothesis import LabeledSample
from .procedures import MultiSample, MultisourceInstance

ORIGIN_P, ORIGIN_Q, ORIGIN_TARGET = 0, 1, 2


@dataclass(frozen=True)
class ImpossibilityParams:
    beta: float
    n: int
    n_D: int
    N_P: int
    N_Q: int
    c0: float = 0.25
    c1: float = 2.0**-10
    sigma: int = -1
    strict: bool = False
    relaxed: bool = False

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.beta > 0 and not self.n < 2.0 / self.beta - 1.0:
            raise ValueError("need n < 2/beta - 1")
        if self.n_D < 0 or self.N_P < 0 or self.N_Q < 0 or self.N_P + self.N_Q < 1:
            raise ValueError("sample counts must be non-negative with N_P + N_Q >= 1")
        if not self.relaxed and (self.N_P < 1 or self.N_P < 3 * self.N_Q):
            raise ValueError("need N_P >= 3 N_Q (pass relaxed=True for limit studies)")
        if not 0 < self.c0 <= 0.25:
            raise ValueError("c0 must lie in (0, 1/4]")
        if not 0 < self.c1 <= 2.0**-10:
            raise ValueError("c1 must lie in (0, 2^-10]")
        if self.sigma not in (-1, 1):
            raise ValueError("sigma must be -1 or +1")
        if self.strict:
            bad = [k for k, ok in self.strict_conditions().items() if not ok]
            if bad:
                warnings.warn(f"strict-mode conditions not met: {', '.join(bad)}", stacklevel=2)

    @property
    def N(self) -> int:
        return self.N_P + self.N_Q

    @property
    def epsilon(self) -> float:
        return (self.n * self.N_P) ** (-1.0 / (2.0 - self.beta)) if self.N_P else 1.0

    @property
    def epsilon0(self) -> float:
        if self.n_D == 0:
            return 1.0
        return min(1.0, self.n_D ** (-1.0 / (2.0 - self.beta)))

    @property
    def alpha_P(self) -> float:
        return self.N_P / self.N

    @property
    def alpha_Q(self) -> float:
        return self.N_Q / self.N

    def with_sigma(self, sigma: int) -> "ImpossibilityParams":
        return ImpossibilityParams(**{**self.__dict__, "sigma": sigma, "strict": False})

    def strict_conditions(self) -> dict[str, bool]:
        """The three sufficient conditions on (n N_P, N_P, N_Q) for the
        flip-probability lower bound."""
        b, n, c1 = self.beta, self.n, self.c1
        nNP = float(self.n * self.N_P)
        e1 = (2 - 2 * b) / (2 - b)
        e2 = (2 - (n + 1) * b) / (2 - b)
        return {
            "i": nNP**e1 >= 4096.0 * n * n / c1,
            "ii": nNP**e2 >= 4.0 * self.N_Q**2 * n * 2.0 ** (4 * n) * c1 ** (-n),
            "iii": float(self.N_P) ** e2 >= 22.0 * n * 2.0**n * c1 ** (-n),
        }

    def rho_P(self) -> float:
        """Transfer exponent the noisy source attains w.r.t. the target."""
        num = math.log(self.c1 ** (-(2 - self.beta)) * self.n * self.N_P)
        den = math.log(self.c0 ** (-(2 - self.beta)) * max(1, self.n_D))
        return num / den

    def bernstein_constant(self) -> float:
        return max(0.5 * self.c0 ** (-self.beta), 2.0)


@dataclass(frozen=True)
class ImpossibilityTasks:
    D: TwoPoint
    P: TwoPoint
    Q: TwoPoint


def build_impossibility_tasks(p: ImpossibilityParams) -> ImpossibilityTasks:
    s, b = p.sigma, p.beta
    e, e0 = p.epsilon, p.epsilon0
    D = TwoPoint(mass_x1=0.5 * e0**b, eta_x1=0.5 + s * p.c0 * e0 ** (1 - b), eta_x0=1.0)
    P = TwoPoint(mass_x1=p.c1 * e**b, eta_x1=0.5 + s * e ** (1 - b), eta_x0=1.0)
    Q = TwoPoint(mass_x1=1.0, eta_x1=0.5 + s * 0.5, eta_x0=1.0)
    return ImpossibilityTasks(D, P, Q)


impossibility_class = two_point_class


def sample_gamma(p: ImpossibilityParams, rng: np.random.Generator) -> MultiSample:
    """One draw of the mixture: each source vector comes from P^n or Q^n."""
    tk = build_impossibility_tasks(p)
    N, n = p.N, p.n
    from_q = rng.random(N) < p.alpha_Q
    at_x1 = np.where(from_q, n, rng.binomial(n, tk.P.mass_x1, size=N))
    eta1 = np.where(from_q, tk.Q.eta_x1, tk.P.eta_x1)
    plus1 = rng.binomial(at_x1, eta1)
    at_x0 = n - at_x1
    plus0 = rng.binomial(at_x0, tk.P.eta_x0)
    # four rows per source vector: (x0,+), (x0,-), (x1,+), (x1,-)
    task = np.repeat(np.arange(N), 4)
    x = np.tile(np.array([0.0, 0.0, 1.0, 1.0]), N)
    y = np.tile(np.array([1, -1, 1, -1], dtype=np.int8), N)
    c = np.stack([plus0, at_x0 - plus0, plus1, at_x1 - plus1], axis=1).reshape(-1)
    tgt = tk.D.sample(p.n_D, rng)
    keep = c > 0
    task = np.concatenate([task[keep], np.full(tgt.x.size, N)])
    sizes = np.concatenate([np.full(N, n), [p.n_D]]).astype(np.int64)
    origins = np.concatenate([np.where(from_q, ORIGIN_Q, ORIGIN_P), [ORIGIN_TARGET]])
    return MultiSample(
        task,
        np.concatenate([x[keep], tgt.x]),
        np.concatenate([y[keep], tgt.y]),
        np.concatenate([c[keep], tgt.counts]),
        sizes,
        origins,
    )


@dataclass(frozen=True)
class GammaStats:
    N_plus: int
    N_minus: int
    n_plus: int
    n_minus: int
    n_tilde_plus: int
    n_tilde_minus: int
    target_plus: int
    target_minus: int
    N_hat_P: int = 0
    N_hat_Q: int = 0

    def check_identity(self, n: int) -> bool:
        return self.n_plus == self.n_tilde_plus + n * self.N_plus and self.n_minus == self.n_tilde_minus + n * self.N_minus


def _per_task_counts(Z: MultiSample):
    T = Z.num_tasks
    at0 = Z.x == 0
    at1 = Z.x == 1
    if not np.all(at0 | at1):
        raise ValueError("point outside the two-point support")
    w = Z.counts
    x0p = np.bincount(Z.task, weights=w * (at0 & (Z.y == 1)), minlength=T).astype(np.int64)
    x0m = np.bincount(Z.task, weights=w * (at0 & (Z.y == -1)), minlength=T).astype(np.int64)
    x1p = np.bincount(Z.task, weights=w * (at1 & (Z.y == 1)), minlength=T).astype(np.int64)
    x1m = np.bincount(Z.task, weights=w * (at1 & (Z.y == -1)), minlength=T).astype(np.int64)
    return x0p, x0m, x1p, x1m


def gamma_stats(Z: MultiSample, p: ImpossibilityParams) -> GammaStats:
    x0p, x0m, x1p, x1m = _per_task_counts(Z)
    src = slice(0, Z.num_tasks - 1)
    n = p.n
    hp = (x1p[src] == n) & (x1m[src] == 0)
    hm = (x1m[src] == n) & (x1p[src] == 0)
    N_plus, N_minus = int(hp.sum()), int(hm.sum())
    n_plus, n_minus = int(x1p[src].sum()), int(x1m[src].sum())
    hat_P = hat_Q = 0
    if Z.origins is not None:
        hom = hp | hm
        hat_P = int((hom & (Z.origins[src] == ORIGIN_P)).sum())
        hat_Q = int((hom & (Z.origins[src] == ORIGIN_Q)).sum())
    return GammaStats(
        N_plus,
        N_minus,
        n_plus,
        n_minus,
        n_plus - n * N_plus,
        n_minus - n * N_minus,
        int(x1p[-1]),
        int(x1m[-1]),
        hat_P,
        hat_Q,
    )


def _vector_categories(p: ImpossibilityParams):
    """Category probabilities for one source vector.

    P-categories are (k points at x1, j of them labeled +) for 0 <= j <= k <= n;
    the last category is a Q-vector (always homogeneous with label sigma).
    """
    tk = build_impossibility_tasks(p)
    n = p.n
    from scipy.stats import binom

    ks, js, probs = [], [], []
    for k in range(n + 1):
        pk = binom.pmf(k, n, tk.P.mass_x1)
        for j in range(k + 1):
            ks.append(k)
            js.append(j)
            probs.append(p.alpha_P * pk * binom.pmf(j, k, tk.P.eta_x1))
    probs = np.asarray(probs)
    probs = np.append(probs, p.alpha_Q)
    probs = probs / probs.sum()
    return np.asarray(ks), np.asarray(js), probs


def _stats_from_category_counts(p: ImpossibilityParams, ks, js, counts: np.ndarray, tplus, tminus) -> list[GammaStats]:
    n = p.n
    pc, qc = counts[:, :-1], counts[:, -1]
    hom_plus = (ks == n) & (js == n)
    hom_minus = (ks == n) & (js == 0)
    Pp = pc[:, hom_plus].sum(axis=1)
    Pm = pc[:, hom_minus].sum(axis=1)
    if p.sigma == 1:
        Np, Nm = Pp + qc, Pm
    else:
        Np, Nm = Pp, Pm + qc
    q_label_plus = qc * n if p.sigma == 1 else 0 * qc
    q_label_minus = qc * n if p.sigma == -1 else 0 * qc
    npl = pc @ js + q_label_plus
    nmi = pc @ (ks - js) + q_label_minus
    out = []
    for r in range(counts.shape[0]):
        out.append(
            GammaStats(
                int(Np[r]),
                int(Nm[r]),
                int(npl[r]),
                int(nmi[r]),
                int(npl[r] - n * Np[r]),
                int(nmi[r] - n * Nm[r]),
                int(tplus[r]),
                int(tminus[r]),
                int(Pp[r] + Pm[r]),
                int(qc[r]),
            )
        )
    return out


def sample_gamma_stats_batch(p: ImpossibilityParams, reps: int, rng: np.random.Generator) -> list[GammaStats]:
    """Sufficient statistics of ``reps`` independent draws, without the data."""
    ks, js, probs = _vector_categories(p)
    counts = rng.multinomial(p.N, probs, size=reps)
    tk = build_impossibility_tasks(p)
    kd = rng.binomial(p.n_D, tk.D.mass_x1, size=reps)
    tplus = rng.binomial(kd, tk.D.eta_x1)
    return _stats_from_category_counts(p, ks, js, counts, tplus, kd - tplus)


def sample_gamma_stats(p: ImpossibilityParams, rng: np.random.Generator) -> GammaStats:
    return sample_gamma_stats_batch(p, 1, rng)[0]


def _mixture_log(log_p: np.ndarray, log_q: np.ndarray, alpha_P: float, alpha_Q: float) -> np.ndarray:
    a = np.log(alpha_P) if alpha_P > 0 else -np.inf
    b = np.log(alpha_Q) if alpha_Q > 0 else -np.inf
    return np.logaddexp(a + log_p, b + log_q)


def _vector_log_prob(dist: TwoPoint, x0p, x0m, x1p, x1m) -> np.ndarray:
    m = dist.mass_x1
    return (
        xlogy(x0p, (1 - m) * dist.eta_x0)
        + xlogy(x0m, (1 - m) * (1 - dist.eta_x0))
        + xlogy(x1p, m * dist.eta_x1)
        + xlogy(x1m, m * (1 - dist.eta_x1))
    )


def likelihood_ratio_direct(Z: MultiSample, p: ImpossibilityParams) -> float:
    """log Gamma_+(Z) - log Gamma_-(Z), vector by vector."""
    plus = build_impossibility_tasks(p.with_sigma(1))
    minus = build_impossibility_tasks(p.with_sigma(-1))
    x0p, x0m, x1p, x1m = _per_task_counts(Z)
    s = slice(0, Z.num_tasks - 1)
    with np.errstate(divide="ignore"):
        lp = _mixture_log(
            _vector_log_prob(plus.P, x0p[s], x0m[s], x1p[s], x1m[s]),
            _vector_log_prob(plus.Q, x0p[s], x0m[s], x1p[s], x1m[s]),
            p.alpha_P,
            p.alpha_Q,
        )
        lm = _mixture_log(
            _vector_log_prob(minus.P, x0p[s], x0m[s], x1p[s], x1m[s]),
            _vector_log_prob(minus.Q, x0p[s], x0m[s], x1p[s], x1m[s]),
            p.alpha_P,
            p.alpha_Q,
        )
        tp = _vector_log_prob(plus.D, x0p[-1], x0m[-1], x1p[-1], x1m[-1])
        tm = _vector_log_prob(minus.D, x0p[-1], x0m[-1], x1p[-1], x1m[-1])
    if np.any(np.isneginf(lp) & np.isneginf(lm)) or (np.isneginf(tp) and np.isneginf(tm)):
        raise ValueError("sample has zero probability under both hypotheses")
    return float(np.sum(lp - lm) + (tp - tm))


def _decomposition_terms(p: ImpossibilityParams):
    plus = build_impossibility_tasks(p.with_sigma(1))
    minus = build_impossibility_tasks(p.with_sigma(-1))
    eta_p, eta_m = plus.P.eta_x1, minus.P.eta_x1
    mass = plus.P.mass_x1
    return plus, minus, eta_p, eta_m, mass


def likelihood_ratio_decomposed(stats: GammaStats, p: ImpossibilityParams) -> float:
    plus, minus, eta_p, eta_m, mass = _decomposition_terms(p)
    dn = stats.n_plus - stats.n_minus
    dN = stats.N_plus - stats.N_minus
    dt = stats.target_plus - stats.target_minus
    out = 0.0
    if dn:
        out += dn * (math.log(eta_p) - math.log(eta_m))
    if dN:
        if p.alpha_P == 0:
            return math.copysign(math.inf, dN)
        # log(alpha_Q / (alpha_P (eta_+ m)^n)) computed in log space
        log_ratio = math.log(p.alpha_Q) - math.log(p.alpha_P) - p.n * math.log(eta_p * mass) if p.alpha_Q > 0 else -math.inf
        out += dN * float(np.logaddexp(0.0, log_ratio))
    if dt:
        out += dt * (math.log(plus.D.eta_x1) - math.log(minus.D.eta_x1))
    return out


def _exact_ratio_sign(stats: GammaStats, p: ImpossibilityParams) -> int:
    """Sign of log(Gamma_+/Gamma_-) with rational arithmetic."""
    plus, minus, eta_p, eta_m, mass = _decomposition_terms(p)
    fp, fm = Fraction(eta_p), Fraction(eta_m)
    aP, aQ = Fraction(p.N_P, p.N), Fraction(p.N_Q, p.N)
    hom = aP * (fp * Fraction(mass)) ** p.n
    ratio = (fp / fm) ** (stats.n_plus - stats.n_minus)
    ratio *= ((hom + aQ) / hom) ** (stats.N_plus - stats.N_minus)
    ratio *= (Fraction(plus.D.eta_x1) / Fraction(minus.D.eta_x1)) ** (stats.target_plus - stats.target_minus)
    return (ratio > 1) - (ratio < 1)


EXACT_BAND = 1e-9


def bayes_discriminant(stats: GammaStats, p: ImpossibilityParams) -> int:
    """+1 iff Gamma_+(Z) > Gamma_-(Z); ties go to -1."""
    lr = likelihood_ratio_decomposed(stats, p)
    small = p.n <= 4 and max(
        abs(stats.n_plus - stats.n_minus), abs(stats.N_plus - stats.N_minus), abs(stats.target_plus - stats.target_minus)
    ) <= 64
    if abs(lr) < EXACT_BAND and small and p.alpha_P > 0:
        return 1 if _exact_ratio_sign(stats, p) > 0 else -1
    return 1 if lr > 0 else -1


def _freq(hits: np.ndarray) -> tuple[float, float]:
    hits = np.asarray(hits, dtype=float)
    f = float(hits.mean())
    return f, float(math.sqrt(f * (1 - f) / hits.size))


def expected_homogeneous(p: ImpossibilityParams) -> tuple[float, float]:
    """E[N_hat_P], E[N_hat_Q] under the sigma of ``p``."""
    tk = build_impossibility_tasks(p)
    e = tk.P.eta_x1
    return p.N_P * tk.P.mass_x1**p.n * ((1 - e) ** p.n + e**p.n), float(p.N_Q)


def _events(stats: Sequence[GammaStats], p: ImpossibilityParams):
    eP, eQ = expected_homogeneous(p)
    hp = np.array([s.N_hat_P for s in stats])
    hq = np.array([s.N_hat_Q for s in stats])
    return (hp >= eP / 2) & (hp <= 2 * eP), hq <= 2 * eQ


@dataclass(frozen=True)
class FlipStudy:
    reps: int
    flip: tuple
    homogeneous_plus_wins: tuple
    event_both: tuple
    target_event: tuple
    event_P: tuple
    event_Q: tuple


def flip_study(p: ImpossibilityParams, stats: Sequence[GammaStats]) -> FlipStudy:
    """Monte Carlo frequencies (estimate, stderr) from sampled statistics."""
    if p.sigma != -1:
        raise ValueError("flip probabilities are computed under sigma = -1")
    flip = np.array([bayes_discriminant(s, p) == 1 for s in stats])
    hom = np.array([s.N_plus > s.N_minus for s in stats])
    tgt = np.array([s.target_plus >= s.target_minus for s in stats])
    eP, eQ = _events(stats, p)
    return FlipStudy(len(stats), _freq(flip), _freq(hom), _freq(eP & eQ), _freq(tgt), _freq(eP), _freq(eQ))


def estimate_flip_probability(p: ImpossibilityParams, reps: int, rng: np.random.Generator) -> tuple[float, float]:
    """P under Gamma_- that the likelihood ratio favors +, with its stderr."""
    if p.sigma != -1:
        raise ValueError("flip probabilities are computed under sigma = -1")
    return flip_study(p, sample_gamma_stats_batch(p, reps, rng)).flip


@dataclass(frozen=True)
class EventReport:
    expected_P: float
    expected_Q: float
    freq_not_P: float
    freq_not_Q: float
    stderr_not_P: float
    stderr_not_Q: float
    chernoff_P: float
    chernoff_Q: float


def verify_event_probabilities(p: ImpossibilityParams, reps: int, rng: np.random.Generator) -> EventReport:
    stats = sample_gamma_stats_batch(p, reps, rng)
    eP, eQ = _events(stats, p)
    mp, mq = expected_homogeneous(p)
    fP, sP = _freq(~eP)
    fQ, sQ = _freq(~eQ)
    return EventReport(mp, mq, fP, fQ, sP, sQ, 2 * math.exp(-mp / 8), math.exp(-mq / 3))


def _popcount(v: np.ndarray) -> np.ndarray:
    return np.bitwise_count(v)


def vg_packing(d: int, max_size: Optional[int] = None) -> list[tuple]:
    """Greedy lexicographic packing of {-1,+1}^d with Hamming floor ceil(d/8).

    Candidates are scanned as integers 0, 1, 2, ... where bit i set means
    coordinate i is -1, so the first admitted vector is all +1.  The scan
    stops once ``max_size`` vectors are admitted; the default is the
    smallest size meeting 2^(d/8).
    """
    if d < 8:
        raise ValueError("packing needs d >= 8")
    if d > 62:
        raise ValueError("packing supports d <= 62")
    floor = math.ceil(d / 8)
    if max_size is None:
        max_size = math.ceil(2.0 ** (d / 8))
    admitted = np.zeros(max_size, dtype=np.uint64)
    size = 0
    for v in range(1 << d):
        if size and _popcount(admitted[:size] ^ np.uint64(v)).min() < floor:
            continue
        admitted[size] = v
        size += 1
        if size >= max_size:
            break
    if size < 2.0 ** (d / 8):
        raise AssertionError("greedy packing fell short of the guaranteed size")
    bits = np.arange(d, dtype=np.uint64)
    out = []
    for v in admitted[:size]:
        signs = 1 - 2 * ((v >> bits) & np.uint64(1)).astype(np.int64)
        out.append(tuple(int(s) for s in signs))
    return out


def sign_vectors(d: int) -> list[tuple]:
    """All of {-1,+1}^d in the packing's scan order (for small d)."""
    bits = np.arange(d)
    return [tuple(int(1 - 2 * ((v >> b) & 1)) for b in bits) for v in range(1 << d)]


FULL_CLASS_MAX_D = 12


def build_lower_bound_instance(
    rhos: Sequence[float],
    beta: float,
    d: int,
    sigma_index: int,
    epsilon: float,
    sizes: Optional[Sequence[int]] = None,
    n_D: int = 1,
) -> MultisourceInstance:
    """Sources with the given exponents plus the target (exponent 1).

    The hypothesis class is every table with x0 = +1 when d is small, and the
    packing's tables otherwise, plus one table with x0 = -1.
    """
    packing = vg_packing(d) if d >= 8 else sign_vectors(d)
    if not 0 <= sigma_index < len(packing):
        raise IndexError("sigma index outside the packing")
    sigma = packing[sigma_index]
    all_rhos = [float(r) for r in rhos] + [1.0]
    tasks = make_lower_bound_family(all_rhos, beta, epsilon, d, sigma)
    cls = lower_bound_class(d) if d <= FULL_CLASS_MAX_D else lower_bound_class(d, packing)
    sizes = [1] * len(rhos) if sizes is None else [int(s) for s in sizes]
    return MultisourceInstance(
        tuple(tasks), tuple(sizes) + (int(n_D),), tuple(all_rhos), float(beta), 2.0, 2.0, cls
    )


def pooled_label_from_stats(stats: GammaStats) -> int:
    """x1 label chosen by pooled ERM over the two-member class.

    x0 is labeled +1 by both members, so only the x1 label counts matter;
    a tie goes to the lower-index member h_+.
    """
    plus = stats.n_plus + stats.target_plus
    minus = stats.n_minus + stats.target_minus
    return 1 if minus <= plus else -1
