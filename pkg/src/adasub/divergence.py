"""Divergences, closed-form stability bounds, and brute-force verifiers.

The central facts checked numerically here:

* the answer law of a w-ary query with range Y on a sample of size n is,
  on average over leave-one-out samples, chi-squared-close to the law on
  n-1 points, with the closed form w(|Y|-1)/((n-1)(n-w));
* the variance-contraction inequality behind it, tight for linear
  functions of the drawn subset;
* KL-vs-chi-squared comparison inequalities (with a pointwise mass-ratio
  floor, and against a uniform-smoothed mixture);
* a without-replacement sum exceeds its mean minus one with probability
  at least (2*sqrt(3)-3)/13 > 0.0357.

Divergences use the natural logarithm throughout. The reversed
chi-squared divergence puts the first argument in the denominator:
chi2(D || E) = sum_y (D(y)-E(y))^2 / D(y), finite iff supp(E) is
contained in supp(D). Infinite divergences are returned as math.inf.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import DEFAULT_ENUM_CAP, Dataset, EnumerationCapExceeded, Query
from .engine import RandomSource, ResponsePMF, exact_response_pmf

INEQ_TOL = 1e-10


def _check_same_range(dp: ResponsePMF, ep: ResponsePMF) -> None:
    if dp.outputs != ep.outputs:
        raise ValueError("distributions must share the same ordered range")


def kl_divergence(dp: ResponsePMF, ep: ResponsePMF) -> float:
    """KL(D || E) = sum_{y: D(y)>0} D(y) ln(D(y)/E(y)); +inf iff some y has
    D(y) > 0 but E(y) = 0."""
    _check_same_range(dp, ep)
    total = 0.0
    for d, e in zip(dp.masses, ep.masses):
        if d <= 0.0:
            continue
        if e <= 0.0:
            return math.inf
        total += d * math.log(d / e)
    return total


def chi2_divergence(dp: ResponsePMF, ep: ResponsePMF) -> float:
    """Reversed Neyman chi-squared: sum over supp(D) of (D(y)-E(y))^2/D(y);
    +inf iff supp(E) is not contained in supp(D)."""
    _check_same_range(dp, ep)
    total = 0.0
    for d, e in zip(dp.masses, ep.masses):
        if d <= 0.0:
            if e > 0.0:
                return math.inf
            continue
        total += (d - e) ** 2 / d
    return total


def chi2_stability_bound(n: int, w: int, ysize: int) -> float:
    """Closed-form average leave-one-out chi-squared stability of a w-ary
    query with range size |Y| on n points: w(|Y|-1)/((n-1)(n-w))."""
    if not 1 <= w <= n - 1:
        raise ValueError(f"need 1 <= w <= n-1, got w={w}, n={n}")
    if ysize < 1:
        raise ValueError("range size must be at least 1")
    return w * (ysize - 1) / ((n - 1) * (n - w))


@dataclass(frozen=True)
class StabilityReport:
    """Measured average leave-one-out divergence against its closed form."""

    measured: float
    bound: float
    per_index: tuple[float, ...]

    @property
    def slack(self) -> float:
        return self.bound - self.measured


def measure_leave_one_out_chi2(q: Query, S: Dataset, *,
                               enum_cap: int = DEFAULT_ENUM_CAP) -> StabilityReport:
    """Average over i of chi2(law on S || law on S minus point i), computed
    by exact enumeration, checked against the closed-form bound."""
    n = len(S)
    full = exact_response_pmf(q, S, enum_cap=enum_cap)
    per = []
    for i in range(n):
        loo = exact_response_pmf(q, S.leave_one_out(i), enum_cap=enum_cap)
        per.append(chi2_divergence(full, loo))
    measured = float(np.mean(per))
    bound = chi2_stability_bound(n, q.arity, len(q.outputs))
    if measured > bound + INEQ_TOL:
        raise RuntimeError(
            f"leave-one-out chi2 {measured} exceeds closed form {bound}")
    return StabilityReport(measured=measured, bound=bound, per_index=tuple(per))


def measure_leave_one_out_kl(q: Query, S: Dataset, mix: float, *,
                             enum_cap: int = DEFAULT_ENUM_CAP) -> float:
    """Average over i of KL(law on S || smoothed leave-one-out law), where
    the comparison law mixes the n-1-point law with Unif(Y) at weight
    ``mix``. Finite whenever mix > 0; at mix equal to the chi-squared
    stability bound the value is within the general ALKL closed form."""
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix weight must lie in [0, 1]")
    n = len(S)
    ysize = len(q.outputs)
    full = exact_response_pmf(q, S, enum_cap=enum_cap)
    vals = []
    for i in range(n):
        loo = exact_response_pmf(q, S.leave_one_out(i), enum_cap=enum_cap)
        mixed = ResponsePMF(q.outputs, (1.0 - mix) * loo.masses + mix / ysize)
        vals.append(kl_divergence(full, mixed))
    return float(np.mean(vals))


def alkl_bound_general(eps: float, ysize: int) -> float:
    """Average leave-one-out KL stability implied by eps chi-squared
    stability with uniform smoothing: eps * (3 + 2 ln(|Y|/eps))."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return eps * (3.0 + 2.0 * math.log(ysize / eps))


def alkl_bound_uniform(eps: float, w: int, n: int, p: float) -> float:
    """ALKL stability for a p-uniform query via the mass-ratio route:
    eps * (1 + ln(1 + w/(n p)))."""
    if p <= 0:
        raise ValueError("uniformity floor p must be positive")
    return eps * (1.0 + math.log(1.0 + w / (n * p)))


def _subset_values(f, combos) -> np.ndarray:
    if isinstance(f, Mapping):
        return np.array([float(f[c]) for c in combos])
    return np.array([float(f(c)) for c in combos])


def verify_variance_contraction(f, n: int, w: int) -> tuple[float, float]:
    """Evaluate both sides of the variance-contraction inequality for a
    function f of the drawn w-subset of [n]:

        Var_i[ E[f(T) | i not in T] ]  <=  w/((n-1)(n-w)) * Var_T[f(T)]

    f may be a mapping keyed by ascending index tuples or a callable on
    them. Returns (lhs, rhs); equality holds for linear f.
    """
    if not 1 <= w <= n - 1:
        raise ValueError(f"need 1 <= w <= n-1, got w={w}, n={n}")
    combos = list(itertools.combinations(range(n), w))
    vals = _subset_values(f, combos)
    mask = np.zeros((n, len(combos)), dtype=bool)
    for j, combo in enumerate(combos):
        mask[list(combo), j] = True
    cond_means = np.array([vals[~mask[i]].mean() for i in range(n)])
    lhs = float(cond_means.var())
    rhs = w / ((n - 1) * (n - w)) * float(vals.var())
    return lhs, rhs


@dataclass(frozen=True)
class InequalityCheck:
    passed: bool
    lhs: float
    rhs: float


def verify_kl_chi2_inequality(dp: ResponsePMF, ep: ResponsePMF,
                              tau: float) -> InequalityCheck:
    """Check KL(D || E) <= (1 + ln(1/tau)) chi2(D || E) under the pointwise
    floor E(y) >= tau * D(y). A violated floor raises (it is a precondition,
    not a failed check)."""
    _check_same_range(dp, ep)
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if np.any(ep.masses < tau * dp.masses - 1e-12):
        raise ValueError("precondition E(y) >= tau*D(y) violated")
    lhs = kl_divergence(dp, ep)
    rhs = (1.0 + math.log(1.0 / tau)) * chi2_divergence(dp, ep)
    return InequalityCheck(passed=lhs <= rhs + INEQ_TOL, lhs=lhs, rhs=rhs)


def verify_kl_mixture_inequality(dp: ResponsePMF, ep: ResponsePMF,
                                 tau: float) -> InequalityCheck:
    """Check KL(D || E') <= (1 + ln(|Y|/tau)) (chi2(D || E) + tau) + tau for
    the uniform-smoothed mixture E' = (1-tau) E + tau Unif(Y)."""
    _check_same_range(dp, ep)
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    ysize = len(dp.outputs)
    mixed = ResponsePMF(dp.outputs, (1.0 - tau) * ep.masses + tau / ysize)
    lhs = kl_divergence(dp, mixed)
    chi2 = chi2_divergence(dp, ep)
    rhs = (1.0 + math.log(ysize / tau)) * (chi2 + tau) + tau
    return InequalityCheck(passed=lhs <= rhs + INEQ_TOL, lhs=lhs, rhs=rhs)


def sample_exceeds_mean_probe(S: Sequence[float], n: int, trials: int,
                              rng: RandomSource | np.random.Generator,
                              *, chunk: int = 4096) -> float:
    """Monte Carlo estimate of Pr[sum of n without-replacement draws from S
    exceeds its mean minus 1]. Values must lie in [0, 1]."""
    vals = _probe_values(S, n)
    gen = rng.generator if isinstance(rng, RandomSource) else rng
    target = n * vals.mean() - 1.0
    hits = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        u = gen.random((m, vals.size))
        idx = np.argpartition(u, n - 1, axis=1)[:, :n]
        hits += int((vals[idx].sum(axis=1) > target).sum())
        done += m
    return hits / trials


def sample_exceeds_mean_exact(S: Sequence[float], n: int, *,
                              enum_cap: int = DEFAULT_ENUM_CAP) -> float:
    """Exact Pr[sum of n without-replacement draws > mean - 1] by
    enumerating all C(|S|, n) subsets."""
    vals = _probe_values(S, n)
    count = math.comb(vals.size, n)
    if count > enum_cap:
        raise EnumerationCapExceeded(f"C({vals.size},{n}) exceeds cap {enum_cap}")
    target = n * vals.mean() - 1.0
    hits = sum(1 for combo in itertools.combinations(range(vals.size), n)
               if vals[list(combo)].sum() > target)
    return hits / count


def _probe_values(S: Sequence[float], n: int) -> np.ndarray:
    vals = np.asarray(S, dtype=float)
    if vals.ndim != 1 or not 1 <= n < vals.size:
        raise ValueError("need a flat value list and 1 <= n < |S|")
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise ValueError("probe values must lie in [0, 1]")
    return vals


# ---------------------------------------------------------------------------
# Random instance generators for the verification suites. Instances are
# drawn from a caller-supplied stream so every suite run is reproducible
# from its seed.

def random_pmf(gen: np.random.Generator, size: int) -> ResponsePMF:
    """A Dirichlet(1, ..., 1) point of the given size over range 0..size-1."""
    return ResponsePMF(tuple(range(size)), gen.dirichlet(np.ones(size)))

def random_pmf_pair(gen: np.random.Generator,
                    size_range: tuple[int, int] = (2, 6)) -> tuple[ResponsePMF, ResponsePMF]:
    size = int(gen.integers(size_range[0], size_range[1] + 1))
    return random_pmf(gen, size), random_pmf(gen, size)


def random_query_instance(gen: np.random.Generator, *,
                          n_range: tuple[int, int] = (3, 8),
                          w_range: tuple[int, int] = (1, 3),
                          y_range: tuple[int, int] = (2, 4),
                          alphabet_range: tuple[int, int] = (2, 5),
                          ) -> tuple[Query, Dataset]:
    """A random deterministic query (a uniform random map from ordered
    w-tuples of a small alphabet to 0..|Y|-1) plus a random dataset over
    that alphabet. Datasets may contain duplicates."""
    n = int(gen.integers(n_range[0], n_range[1] + 1))
    w = int(gen.integers(w_range[0], min(w_range[1], n - 1) + 1))
    ysize = int(gen.integers(y_range[0], y_range[1] + 1))
    a = int(gen.integers(alphabet_range[0], alphabet_range[1] + 1))
    table = {key: int(gen.integers(0, ysize))
             for key in itertools.product(range(a), repeat=w)}
    q = Query.deterministic(w, tuple(range(ysize)),
                            lambda *sub, _t=table: _t[sub],
                            name=f"randmap(w={w},|Y|={ysize},a={a})")
    S = Dataset(gen.integers(0, a, size=n))
    return q, S


def random_subset_function(gen: np.random.Generator, n: int, w: int,
                           linear: bool = False) -> dict[tuple[int, ...], float]:
    """A random real function on w-subsets of [n]; optionally linear
    (f(T) = sum of per-index weights over T)."""
    combos = itertools.combinations(range(n), w)
    if linear:
        alpha = gen.uniform(-1.0, 1.0, size=n)
        return {c: float(sum(alpha[i] for i in c)) for c in combos}
    return {c: float(gen.uniform(-1.0, 1.0)) for c in combos}
