"""Adaptive analysts, baseline mechanisms, and the experiment runner.

An analyst sees only the mechanism's responses, never the sample: its
interface receives the round number, the response prefix, and a split
randomness source. The runner draws a fresh sample per trial, plays the
analyst against the configured mechanism (subsampling-SQ, naive empirical
means, or the approximate-median mechanism), and records per-query bias
against exactly computed population truths.

Populations with product structure (the ±1 cube) are represented
implicitly; only queries with closed-form truths (coordinate indicators,
sign-of-sum tests) are admitted against them, so the recorded truth stays
exact where the overfitting attack lives.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .core import (
    Dataset,
    GroundTruth,
    Query,
    TestQuery,
    query_expectation_on_population,
    query_expectation_on_sample,
    variance_on_population,
)
from .engine import RandomSource, ResponsePMF, population_response_pmf
from .mechanisms import (
    BudgetExhausted,
    BudgetLedger,
    MedianSession,
    SqSession,
    approximate_median_check,
    median_params,
    sq_accuracy_threshold,
    sq_params,
)

ROW_COLUMNS = ("trial", "t", "query_id", "mechanism", "answer", "sample_value",
               "truth", "bias", "threshold", "within_bound", "cost")

WITHIN_TOL = 1e-12

MEDIAN_CHECK_THRESHOLD = 0.4


# ---------------------------------------------------------------------------
# Queries with structured tags.

def identity_test() -> TestQuery:
    """phi(x) = x for populations over values in [0, 1]."""
    return TestQuery(1, lambda x: float(x), name="identity",
                     batch=lambda arr: arr.astype(float), tag=("identity",))


def constant_test(c: float) -> TestQuery:
    c = float(c)
    if not 0.0 <= c <= 1.0:
        raise ValueError("constant tests must lie in [0, 1]")
    return TestQuery(1, lambda x, _c=c: _c, name=f"const:{c:g}",
                     batch=lambda arr, _c=c: np.full(arr.shape[0], _c),
                     tag=("constant", c))


def coordinate_indicator(j: int) -> TestQuery:
    """phi(x) = 1[x_j = 1] on ±1 vector elements."""
    return TestQuery(
        1, lambda x, _j=j: 1.0 if x[_j] == 1 else 0.0, name=f"coord:{j}",
        batch=lambda arr, _j=j: (arr[:, _j] == 1).astype(float),
        tag=("coord", j))


def sign_sum_test(signs: Sequence[int]) -> TestQuery:
    """psi(x) = 1[sum_j s_j x_j > 0] on ±1 vector elements."""
    signs = tuple(int(s) for s in signs)
    if any(s not in (-1, 1) for s in signs):
        raise ValueError("signs must be ±1")
    s_arr = np.asarray(signs, dtype=np.int64)

    def ev(x, _s=s_arr):
        return 1.0 if int(np.dot(np.asarray(x), _s)) > 0 else 0.0

    return TestQuery(
        1, ev, name="test:sign-sum",
        batch=lambda arr, _s=s_arr: (arr.astype(np.int64) @ _s > 0).astype(float),
        tag=("sign_sum", signs))


def _grid_cell(total: float, w: int, shift: float, first_center: float,
               step: float, cells: int) -> int:
    """Cell index of round((total/w + shift - first_center)/step), clipped.

    Shared by the query evaluator and the exact convolution oracle so both
    round the identical float the identical way.
    """
    v = total / w + shift
    idx = int(np.rint((v - first_center) / step))
    return min(max(idx, 0), cells - 1)


def grid_mean_query(w: int, shift: float, centers: Sequence[float]) -> Query:
    """Query rounding the mean of w real elements (plus a shift) onto an
    ordered uniform grid of output values."""
    centers = tuple(float(c) for c in centers)
    step = centers[1] - centers[0]

    def ev(*xs, _c0=centers[0], _step=step, _m=len(centers), _w=w, _s=shift):
        return centers[_grid_cell(math.fsum(xs), _w, _s, _c0, _step, _m)]

    return Query(arity=w, outputs=centers, evaluator=ev,
                 name=f"grid-mean:w={w},shift={shift:g}",
                 tag=("grid_mean", w, float(shift)))


# ---------------------------------------------------------------------------
# Populations.

class Population:
    """A population the runner can sample from and compute exact truths on."""

    name = "population"

    def draw(self, n: int, rng: RandomSource) -> Dataset:
        raise NotImplementedError

    def truth(self, q: TestQuery) -> float:
        raise NotImplementedError

    def variance(self, q: TestQuery) -> float:
        raise NotImplementedError

    def response_dist(self, q: Query) -> ResponsePMF:
        raise NotImplementedError


class FinitePopulation(Population):
    """A population backed by an explicit finite distribution."""

    def __init__(self, ground_truth: GroundTruth, name: str = "finite"):
        self.ground_truth = ground_truth
        self.name = name
        self._support = np.asarray(ground_truth.support)
        self._masses = np.asarray(ground_truth.masses)

    def draw(self, n: int, rng: RandomSource) -> Dataset:
        idx = rng.generator.choice(self._support.shape[0], size=n, p=self._masses)
        return Dataset(self._support[idx])

    def truth(self, q: TestQuery) -> float:
        return query_expectation_on_population(q, self.ground_truth).value

    def variance(self, q: TestQuery) -> float:
        return variance_on_population(q, self.ground_truth)

    def response_dist(self, q: Query) -> ResponsePMF:
        if q.tag and q.tag[0] == "grid_mean" and self._is_uniform_grid():
            return self._grid_mean_dist(q, q.tag[1], q.tag[2])
        return population_response_pmf(q, self.ground_truth)

    def _is_uniform_grid(self) -> bool:
        if self._support.dtype.kind not in "fiu" or self._support.size < 2:
            return False
        steps = np.diff(self._support.astype(float))
        return bool(np.all(np.abs(steps - steps[0]) < 1e-9 * max(1.0, abs(steps[0]))))

    def _grid_mean_dist(self, q: Query, w: int, shift: float) -> ResponsePMF:
        """Exact law of a grid-mean query on w iid draws, by convolving the
        support masses w times (support sums stay on the same uniform grid)."""
        xs = self._support.astype(float)
        step = xs[1] - xs[0]
        conv = self._masses.astype(float)
        for _ in range(w - 1):
            conv = np.convolve(conv, self._masses)
        centers = tuple(float(c) for c in q.outputs)
        out = np.zeros(len(centers))
        cstep = centers[1] - centers[0]
        for j, mass in enumerate(conv):
            if mass == 0.0:
                continue
            total = xs[0] * w + step * j
            out[_grid_cell(total, w, shift, centers[0], cstep, len(centers))] += mass
        return ResponsePMF(q.outputs, out / out.sum())


@lru_cache(maxsize=None)
def _prob_sign_sum_positive(d: int) -> float:
    """Exact P[sum of d iid uniform ±1 coordinates > 0]."""
    acc = sum(math.comb(d, j) for j in range(d // 2 + 1, d + 1))
    return float(Fraction(acc, 2 ** d))


class CubePopulation(Population):
    """Uniform ±1 vectors of dimension d, represented in product form.

    The explicit support has 2^d points, so only queries with closed-form
    truths are admitted: coordinate indicators, sign-of-sum tests, and
    constants.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("cube dimension must be positive")
        self.d = int(d)
        self.name = f"uniform_pm1_cube(d={d})"

    def draw(self, n: int, rng: RandomSource) -> Dataset:
        bits = rng.generator.integers(0, 2, size=(n, self.d), dtype=np.int8)
        return Dataset(bits * 2 - 1)

    def truth(self, q: TestQuery) -> float:
        kind = q.tag[0] if q.tag else None
        if kind == "coord":
            return 0.5
        if kind == "sign_sum":
            if len(q.tag[1]) != self.d:
                raise ValueError("sign test dimension does not match the cube")
            return _prob_sign_sum_positive(self.d)
        if kind == "constant":
            return float(q.tag[1])
        raise ValueError(
            f"no closed-form truth for {q.name!r} on a product-form cube population")

    def variance(self, q: TestQuery) -> float:
        kind = q.tag[0] if q.tag else None
        if kind == "constant":
            return 0.0
        p = self.truth(q)
        return p * (1.0 - p)


def population_generators(name: str, params: dict) -> Population:
    """Named finite populations resolvable from experiment configs."""
    params = dict(params)
    if name == "bernoulli":
        p = float(params.pop("p"))
        _reject_extras(name, params)
        if not 0.0 <= p <= 1.0:
            raise ValueError("bernoulli parameter must lie in [0, 1]")
        gt = GroundTruth((0, 1), np.array([1.0 - p, p]))
        return FinitePopulation(gt, name=f"bernoulli({p:g})")
    if name == "uniform_pm1_cube":
        d = int(params.pop("d"))
        _reject_extras(name, params)
        return CubePopulation(d)
    if name == "discretized_gaussian":
        lo = float(params.pop("lo", -4.0))
        hi = float(params.pop("hi", 4.0))
        points = int(params.pop("points", 257))
        mu = float(params.pop("mu", 0.0))
        sigma = float(params.pop("sigma", 1.0))
        _reject_extras(name, params)
        if not (lo < hi and points >= 2 and sigma > 0):
            raise ValueError("discretized_gaussian needs lo < hi, points >= 2, sigma > 0")
        xs = np.linspace(lo, hi, points)
        masses = np.exp(-0.5 * ((xs - mu) / sigma) ** 2)
        masses /= masses.sum()
        gt = GroundTruth(tuple(float(x) for x in xs), masses)
        return FinitePopulation(gt, name=f"discretized_gaussian({points}pt)")
    raise ValueError(f"unknown population {name!r}")


def _reject_extras(name: str, leftovers: dict) -> None:
    if leftovers:
        key = sorted(leftovers)[0]
        raise ValueError(f"unknown {name} parameter {key!r}")


# ---------------------------------------------------------------------------
# Analysts.

class Analyst:
    """A query strategy. Receives only (round, response prefix, randomness);
    the sample itself is never exposed to it."""

    rounds: int = 0

    def next_query(self, t: int, responses: tuple, rng: RandomSource):
        raise NotImplementedError

    def final_tests(self, responses: tuple, rng: RandomSource) -> list[TestQuery]:
        return []


class FixedAnalyst(Analyst):
    """Replays a fixed query list, ignoring responses."""

    def __init__(self, queries: Sequence[TestQuery],
                 tests: Optional[Sequence[TestQuery]] = None):
        if not queries:
            raise ValueError("fixed analyst needs at least one query")
        self.queries = list(queries)
        self.rounds = len(self.queries)
        self.tests = list(tests) if tests is not None else list(queries)

    def next_query(self, t, responses, rng):
        return self.queries[t - 1]

    def final_tests(self, responses, rng):
        return list(self.tests)


class RandomCorrelationAnalyst(Analyst):
    """The classic overfitting adversary on a ±1 cube population.

    Round t asks the coordinate indicator 1[x_t = 1]; after T rounds the
    final test is 1[sum_t s_t x_t > 0] with s_t the sign of (answer_t - 1/2),
    ties counting as +1. Against exact empirical answers the test overfits
    the sample; subsampling noise breaks the per-coordinate sign recovery.
    """

    def __init__(self, T: int, tau: Optional[float] = None):
        if T < 1:
            raise ValueError("need T >= 1")
        self.rounds = int(T)
        self.tau = tau  # accuracy target of the surrounding run; unused here

    def next_query(self, t, responses, rng):
        return coordinate_indicator(t - 1)

    def final_tests(self, responses, rng):
        signs = [1 if y >= 0.5 else -1 for y in responses]
        return [sign_sum_test(signs)]


class ShiftingMeanAnalyst(Analyst):
    """Adaptive approximate-median queries over a real-valued population.

    Query t reports the mean of w_t subsampled values (w cycling 1..w_max),
    recentered by a shift that reacts to the previous answer, rounded onto
    a fixed 64-point output grid.
    """

    def __init__(self, T: int, w_max: int = 4, r_cells: int = 64,
                 r_step: float = 1.6, max_shift: int = 3):
        if T < 1 or w_max < 1 or r_cells < 2 or r_step <= 0 or max_shift < 0:
            raise ValueError("invalid shifting-means analyst parameters")
        self.rounds = int(T)
        self.w_max = int(w_max)
        self.max_shift = int(max_shift)
        self.r_step = float(r_step)
        self.centers = tuple((i - (r_cells - 1) / 2) * self.r_step
                             for i in range(r_cells))
        self.w_list = [((t % self.w_max) + 1) for t in range(self.rounds)]
        self.r_sizes = [r_cells] * self.rounds

    def _shift_cells(self, t: int, responses: tuple) -> int:
        if not responses:
            return 0
        prev_cell = int(round(responses[-1] / self.r_step))
        bounce = 1 if t % 2 == 0 else -1
        return max(-self.max_shift, min(self.max_shift, -prev_cell + bounce))

    def next_query(self, t, responses, rng):
        w = self.w_list[t - 1]
        shift = self._shift_cells(t, responses) * self.r_step
        return grid_mean_query(w, shift, self.centers)


def analyst_fixed(queries, tests=None) -> FixedAnalyst:
    return FixedAnalyst(queries, tests)


def analyst_random_correlation(T: int, tau: Optional[float] = None) -> RandomCorrelationAnalyst:
    return RandomCorrelationAnalyst(T, tau)


def make_analyst(name: str, params: dict) -> Analyst:
    params = dict(params)
    if name == "fixed":
        specs = params.pop("queries")
        _reject_extras(name, params)
        return FixedAnalyst([_query_from_spec(s) for s in specs])
    if name == "random-correlation":
        T = int(params.pop("T"))
        tau = params.pop("tau", None)
        _reject_extras(name, params)
        return RandomCorrelationAnalyst(T, tau)
    if name == "shifting-means":
        kwargs = {k: params.pop(k) for k in
                  ("T", "w_max", "r_cells", "r_step", "max_shift") if k in params}
        _reject_extras(name, params)
        return ShiftingMeanAnalyst(**kwargs)
    raise ValueError(f"unknown analyst {name!r}")


def _query_from_spec(spec) -> TestQuery:
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "identity":
        return identity_test()
    if kind == "constant":
        return constant_test(spec["value"])
    if kind == "coord":
        return coordinate_indicator(int(spec["j"]))
    raise ValueError(f"unknown query kind {kind!r}")


# ---------------------------------------------------------------------------
# Baseline and experiment runner.

def naive_answer(S: Dataset, phi: TestQuery) -> float:
    """The no-mechanism baseline: the exact sample mean phi(S)."""
    return query_expectation_on_sample(phi, S).value


@dataclass
class ExperimentConfig:
    seed: int
    trials: int
    n: int
    population: dict
    mechanism: dict
    analyst: dict
    out: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        for spec_name in ("population", "mechanism", "analyst"):
            spec = getattr(self, spec_name)
            if not isinstance(spec, dict) or "name" not in spec:
                raise ValueError(f"{spec_name} spec needs a 'name' key")


@dataclass
class ExperimentReport:
    rows: list[dict]
    summary: dict
    columns: tuple[str, ...] = ROW_COLUMNS

    def recompute_summary(self) -> dict:
        """Rebuild the summary from rows alone (test-error recomputation
        assumes the shipped analysts' {0,1}-valued arity-1 tests)."""
        return _summarize(self.rows, n=int(self.summary["n"]),
                          trials=int(self.summary["trials"]),
                          mechanism=str(self.summary["mechanism"]))

    def verify_consistency(self) -> None:
        recomputed = self.recompute_summary()
        for key, val in recomputed.items():
            ref = self.summary[key]
            if isinstance(val, float) and isinstance(ref, float):
                scale = max(1.0, abs(ref))
                ok = (math.isnan(val) and math.isnan(ref)) or \
                    abs(val - ref) <= 1e-9 * scale
            else:
                ok = val == ref
            if not ok:
                raise RuntimeError(
                    f"summary field {key!r} not recomputable from rows: "
                    f"{ref!r} vs {val!r}")


MECHANISM_NAMES = ("subsampling-sq", "naive-empirical", "median")


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run the configured analyst against the configured mechanism for
    ``trials`` independent samples; deterministic given the seed.

    Trials run concurrently on split randomness streams; aggregation is a
    commutative fold over trial-ordered rows.
    """
    population = population_generators(cfg.population["name"],
                                       _params_of(cfg.population))
    mech = dict(cfg.mechanism)
    mech_name = mech.pop("name")
    if mech_name not in MECHANISM_NAMES:
        raise ValueError(f"unknown mechanism {mech_name!r}")
    analyst_probe = make_analyst(cfg.analyst["name"], _params_of(cfg.analyst))
    _check_compatibility(population, analyst_probe, mech_name)
    plan = _mechanism_plan(mech_name, mech, cfg, analyst_probe)
    root = RandomSource(cfg.seed)

    def one_trial(trial: int) -> list[dict]:
        analyst = make_analyst(cfg.analyst["name"], _params_of(cfg.analyst))
        return _run_trial(trial, cfg, population, analyst, mech_name, plan, root)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_trial = list(pool.map(one_trial, range(cfg.trials)))
    else:
        per_trial = [one_trial(i) for i in range(cfg.trials)]
    rows = [row for chunk in per_trial for row in chunk]
    summary = _summarize(rows, n=cfg.n, trials=cfg.trials, mechanism=mech_name)
    summary.update(plan.get("summary_extras", {}))
    return ExperimentReport(rows=rows, summary=summary)


def _params_of(spec: dict) -> dict:
    params = dict(spec)
    params.pop("name", None)
    return params


def _check_compatibility(population, analyst, mech_name: str) -> None:
    if isinstance(analyst, RandomCorrelationAnalyst):
        if not isinstance(population, CubePopulation):
            raise ValueError("random-correlation analyst needs a ±1 cube population")
        if population.d != analyst.rounds:
            raise ValueError(
                f"cube dimension {population.d} must equal analyst rounds "
                f"{analyst.rounds}")
        if mech_name == "median":
            raise ValueError("random-correlation analyst asks statistical queries")
    if isinstance(analyst, ShiftingMeanAnalyst) and mech_name != "median":
        raise ValueError("shifting-means analyst asks median queries")


def _mechanism_plan(mech_name: str, mech: dict, cfg: ExperimentConfig,
                    analyst) -> dict:
    plan: dict = {"budget_mode": mech.pop("budget_mode", "expectation"),
                  "budget_limit": float(mech.pop("budget_limit", math.inf))}
    if mech_name == "subsampling-sq":
        delta = float(mech.pop("delta"))
        tau = mech.pop("tau", None)
        epsilon = mech.pop("epsilon", None)
        k = mech.pop("k", None)
        _reject_extras(mech_name, mech)
        if tau is not None and (epsilon is None or k is None):
            params = sq_params(cfg.n, analyst.rounds, float(tau), delta)
            epsilon = params.epsilon if epsilon is None else float(epsilon)
            k = params.k if k is None else int(k)
        if epsilon is None or k is None:
            raise ValueError("subsampling-sq needs tau or explicit epsilon and k")
        plan.update(delta=delta, tau=tau, epsilon=float(epsilon), k=int(k))
        plan["summary_extras"] = {"epsilon": float(epsilon), "k": int(k),
                                  "delta": delta}
    elif mech_name == "naive-empirical":
        plan["tau"] = mech.pop("tau", None)
        _reject_extras(mech_name, mech)
    elif mech_name == "median":
        delta = float(mech.pop("delta"))
        c_m = float(mech.pop("c_m", 8.0))
        noise = bool(mech.pop("noise", True))
        _reject_extras(mech_name, mech)
        if not hasattr(analyst, "w_list"):
            raise ValueError("median runs need an analyst declaring w_list/r_sizes")
        params = median_params(analyst.rounds, analyst.w_list, analyst.r_sizes,
                               delta, c_m=c_m)
        plan.update(delta=delta, k_groups=params.k, noise=noise)
        plan["summary_extras"] = {"k_groups": params.k,
                                  "advisory_min_n": params.advisory_min_n,
                                  "delta": delta}
    return plan


def _run_trial(trial: int, cfg: ExperimentConfig, population, analyst,
               mech_name: str, plan: dict, root: RandomSource) -> list[dict]:
    rng = root.child(trial)
    S = population.draw(cfg.n, rng.child(0))
    ledger = BudgetLedger(plan["budget_mode"], plan["budget_limit"])
    if mech_name == "median":
        rows = _median_trial(trial, cfg, population, analyst, plan, rng, S, ledger)
    else:
        rows = _sq_or_naive_trial(trial, cfg, population, analyst, mech_name,
                                  plan, rng, S, ledger)
    total = sum(r["cost"] for r in rows)
    if abs(total - ledger.total) > 1e-9 * max(1.0, ledger.total):
        raise RuntimeError("per-row costs do not sum to the ledger total")
    return rows


def _sq_or_naive_trial(trial, cfg, population, analyst, mech_name, plan,
                       rng, S, ledger) -> list[dict]:
    tau = plan.get("tau")
    session = None
    if mech_name == "subsampling-sq":
        session = SqSession(S, plan["epsilon"], plan["k"], rng.child(1),
                            plan["delta"], ledger=ledger)
    responses: list[float] = []
    rows = []
    for t in range(1, analyst.rounds + 1):
        phi = analyst.next_query(t, tuple(responses), rng.child(2, t))
        try:
            if session is not None:
                answer = session.answer(phi)
                cost = session.transcript.records[-1].cost
            else:
                answer = naive_answer(S, phi)
                cost = 0.0
        except BudgetExhausted:
            # refusals are recorded, not fatal; the session cannot continue
            rows.append(_refusal_row(trial, t, phi.name, mech_name,
                                     sample_value=naive_answer(S, phi),
                                     truth=population.truth(phi), tau=tau))
            break
        responses.append(answer)
        rows.append(_query_row(trial, t, phi.name, mech_name, answer,
                               sample_value=naive_answer(S, phi),
                               truth=population.truth(phi), tau=tau, cost=cost))
    else:
        tests = analyst.final_tests(tuple(responses), rng.child(3))
        for j, psi in enumerate(tests):
            psi_s = naive_answer(S, psi)
            rows.append(_query_row(trial, analyst.rounds + 1 + j,
                                   f"test:{psi.name.removeprefix('test:')}",
                                   mech_name, psi_s, sample_value=psi_s,
                                   truth=population.truth(psi), tau=tau, cost=0.0))
    return rows


def _refusal_row(trial, t, query_id, mechanism, sample_value, truth, tau) -> dict:
    threshold = sq_accuracy_threshold(truth, tau) if tau is not None else math.nan
    return {"trial": trial, "t": t, "query_id": query_id, "mechanism": mechanism,
            "answer": math.nan, "sample_value": sample_value, "truth": truth,
            "bias": math.nan, "threshold": threshold, "within_bound": 0,
            "cost": 0.0}


def _query_row(trial, t, query_id, mechanism, answer, sample_value, truth,
               tau, cost) -> dict:
    bias = abs(answer - truth)
    threshold = sq_accuracy_threshold(truth, tau) if tau is not None else math.nan
    within = 1 if (math.isnan(threshold) or bias <= threshold + WITHIN_TOL) else 0
    return {"trial": trial, "t": t, "query_id": query_id, "mechanism": mechanism,
            "answer": answer, "sample_value": sample_value, "truth": truth,
            "bias": bias, "threshold": threshold, "within_bound": within,
            "cost": cost}


def _median_trial(trial, cfg, population, analyst, plan, rng, S, ledger) -> list[dict]:
    session = MedianSession(S, plan["k_groups"], rng.child(1), ledger=ledger,
                            noise=plan["noise"])
    responses: list[float] = []
    rows = []
    for t in range(1, analyst.rounds + 1):
        q = analyst.next_query(t, tuple(responses), rng.child(2, t))
        dist = population.response_dist(q)
        truth = _dist_median(dist)
        try:
            answer = session.answer(q)
        except BudgetExhausted:
            rows.append({"trial": trial, "t": t, "query_id": q.name,
                         "mechanism": "median", "answer": math.nan,
                         "sample_value": math.nan, "truth": truth,
                         "bias": math.nan, "threshold": MEDIAN_CHECK_THRESHOLD,
                         "within_bound": 0, "cost": 0.0})
            break
        cost = session.transcript.records[-1].cost
        responses.append(answer)
        within = approximate_median_check(dist, answer, MEDIAN_CHECK_THRESHOLD)
        rows.append({"trial": trial, "t": t, "query_id": q.name,
                     "mechanism": "median", "answer": answer,
                     "sample_value": math.nan, "truth": truth,
                     "bias": abs(answer - truth),
                     "threshold": MEDIAN_CHECK_THRESHOLD,
                     "within_bound": 1 if within else 0, "cost": cost})
    return rows


def _dist_median(dist: ResponsePMF) -> float:
    acc = 0.0
    for y, m in zip(dist.outputs, dist.masses):
        acc += m
        if acc >= 0.5:
            return float(y)
    return float(dist.outputs[-1])


def _summarize(rows: list[dict], *, n: int, trials: int, mechanism: str) -> dict:
    query_rows = [r for r in rows if not str(r["query_id"]).startswith("test:")]
    test_rows = [r for r in rows if str(r["query_id"]).startswith("test:")]
    by_trial_within: dict[int, bool] = {}
    by_trial_cost: dict[int, float] = {}
    for r in query_rows:
        by_trial_within.setdefault(r["trial"], True)
        by_trial_cost.setdefault(r["trial"], 0.0)
        if not r["within_bound"]:
            by_trial_within[r["trial"]] = False
        by_trial_cost[r["trial"]] += r["cost"]
    per_trial_cost = [by_trial_cost.get(i, 0.0) for i in sorted(by_trial_cost)]
    mean_cost = float(np.mean(per_trial_cost)) if per_trial_cost else 0.0
    test_errors = [_test_error(r) for r in test_rows]
    biases = [r["bias"] for r in query_rows if not math.isnan(r["bias"])]
    summary = {
        "mechanism": mechanism,
        "trials": trials,
        "n": n,
        "rows": len(rows),
        "max_bias": max(biases, default=math.nan),
        "fraction_trials_all_within":
            float(np.mean([1.0 if ok else 0.0 for ok in by_trial_within.values()]))
            if by_trial_within else math.nan,
        "test_bias_mean": float(np.mean([r["bias"] for r in test_rows]))
            if test_rows else math.nan,
        "test_error_mean": float(np.mean(test_errors)) if test_errors else math.nan,
        "test_error_max": max(test_errors) if test_errors else math.nan,
        "total_cost_per_trial_mean": mean_cost,
        "mi_upper_bound": n * mean_cost,
    }
    return summary


def _test_error(row: dict) -> float:
    """error = min(Delta, Delta^2/Var)/w for a {0,1}-valued arity-1 test,
    with Var = truth (1 - truth) recomputed from the row."""
    delta = row["bias"]
    var = row["truth"] * (1.0 - row["truth"])
    if var <= 0.0:
        return delta
    return min(delta, delta * delta / var)
