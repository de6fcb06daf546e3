"""Data model for subsampling-based analysis: datasets, populations, queries.

A dataset is an ordered multiset of opaque elements (ints for categorical
alphabets, floats for median-style queries, fixed-length ±1 tuples for the
attack harness). A query evaluates on a size-w subsample drawn uniformly
without replacement; its answer distribution on a dataset S, and on fresh
iid draws from a population D, are the two laws everything else compares.

Subsamples are presented to evaluators in dataset-position order, so queries
are effectively functions of the drawn multiset.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_ENUM_CAP = 2_000_000

MASS_TOL = 1e-12


class EnumerationCapExceeded(RuntimeError):
    """Exact enumeration would exceed the configured cap and no Monte Carlo
    budget was supplied."""


def _as_element(row) -> object:
    if isinstance(row, np.ndarray):
        return tuple(row.tolist())
    if isinstance(row, np.generic):
        return row.item()
    return row


class Dataset:
    """Immutable ordered sequence of domain elements (a sample S of size n).

    Duplicates are allowed; enumeration treats positions, not values, as
    distinct. Backed by a numpy array so vectorized consumers can use
    ``.array`` directly (shape (n,) for scalar elements, (n, d) for
    fixed-length vector elements).
    """

    __slots__ = ("_array",)

    def __init__(self, elements):
        if isinstance(elements, Dataset):
            arr = elements._array
        else:
            arr = np.asarray(elements)
        if arr.ndim not in (1, 2) or arr.shape[0] < 1:
            raise ValueError("dataset needs a nonempty 1-D or 2-D element array")
        arr = arr.copy()
        arr.setflags(write=False)
        self._array = arr

    @property
    def array(self) -> np.ndarray:
        return self._array

    def __len__(self) -> int:
        return self._array.shape[0]

    def __getitem__(self, i: int):
        return _as_element(self._array[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def leave_one_out(self, i: int) -> "Dataset":
        """The sample with position i removed (size n-1)."""
        if not 0 <= i < len(self):
            raise IndexError(i)
        return Dataset(np.delete(self._array, i, axis=0))

    def subsample(self, positions: Sequence[int]) -> tuple:
        """Elements at the given positions, in ascending position order."""
        pos = sorted(positions)
        return tuple(self[p] for p in pos)

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)})"


@dataclass(frozen=True)
class GroundTruth:
    """A finite population distribution with explicit support and masses."""

    support: tuple
    masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "support", tuple(self.support))
        if len(self.support) != masses.shape[0]:
            raise ValueError("support and masses lengths differ")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        if abs(masses.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {masses.sum()!r}, not 1")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support entries must be distinct")

    def mass_of(self, x) -> float:
        try:
            return float(self.masses[self.support.index(x)])
        except ValueError:
            return 0.0


@dataclass(frozen=True)
class Query:
    """A query on w-tuples with a declared finite ordered range Y.

    Exactly one evaluation form is set:

    * ``evaluator`` -- deterministic, maps a w-tuple to a value in Y;
    * ``dist_evaluator`` -- randomized with an explicit law, maps a w-tuple
      to a length-|Y| probability vector aligned with ``outputs``;
    * ``sampler`` -- opaque randomized, maps (w-tuple, numpy Generator) to a
      value in Y. Opaque queries support sampling and spot checks only; no
      exact answer law can be computed for them.

    ``uniformity`` is the declared floor p: every output value has
    probability >= p on every input (0 when not claimed). It is guaranteed
    by construction for queries built via ``engine.uniformize`` and merely
    declared for others. ``tag`` is an opaque structured label used by
    harness populations to recognize queries with closed-form answer laws.
    """

    arity: int
    outputs: tuple
    evaluator: Optional[Callable] = None
    dist_evaluator: Optional[Callable] = None
    sampler: Optional[Callable] = None
    uniformity: float = 0.0
    name: str = ""
    tag: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.arity < 1:
            raise ValueError("arity must be positive")
        if not self.outputs:
            raise ValueError("output range must be nonempty")
        forms = [self.evaluator, self.dist_evaluator, self.sampler]
        if sum(f is not None for f in forms) != 1:
            raise ValueError("exactly one of evaluator/dist_evaluator/sampler required")
        if self.uniformity < 0 or self.uniformity * len(self.outputs) > 1 + MASS_TOL:
            raise ValueError("uniformity floor must satisfy 0 <= p*|Y| <= 1")

    @classmethod
    def deterministic(cls, arity, outputs, fn, name="") -> "Query":
        return cls(arity=arity, outputs=outputs, evaluator=fn, name=name)

    @classmethod
    def randomized(cls, arity, outputs, dist_fn, uniformity=0.0, name="") -> "Query":
        return cls(arity=arity, outputs=outputs, dist_evaluator=dist_fn,
                   uniformity=uniformity, name=name)

    @classmethod
    def opaque(cls, arity, outputs, sampler, uniformity=0.0, name="") -> "Query":
        return cls(arity=arity, outputs=outputs, sampler=sampler,
                   uniformity=uniformity, name=name)

    @property
    def is_opaque(self) -> bool:
        return self.sampler is not None

    def output_pmf(self, subsample: tuple) -> np.ndarray:
        """Exact output law on one subsample, as a vector aligned with Y."""
        if self.evaluator is not None:
            y = self.evaluator(*subsample)
            pmf = np.zeros(len(self.outputs))
            pmf[self._output_index(y)] = 1.0
            return pmf
        if self.dist_evaluator is not None:
            pmf = np.asarray(self.dist_evaluator(*subsample), dtype=float)
            if pmf.shape != (len(self.outputs),):
                raise ValueError(f"output distribution has shape {pmf.shape}")
            if np.any(pmf < -MASS_TOL) or abs(pmf.sum() - 1.0) > MASS_TOL:
                raise ValueError("output distribution is not a probability vector")
            return np.clip(pmf, 0.0, None)
        raise ValueError("opaque query has no computable output law")

    def sample_output(self, subsample: tuple, gen: np.random.Generator):
        if self.evaluator is not None:
            return self.evaluator(*subsample)
        if self.sampler is not None:
            return self.sampler(subsample, gen)
        pmf = self.output_pmf(subsample)
        return self.outputs[gen.choice(len(self.outputs), p=pmf / pmf.sum())]

    def _output_index(self, y) -> int:
        try:
            return self.outputs.index(y)
        except ValueError:
            raise ValueError(f"evaluator output {y!r} is outside the declared range") from None

    def mean_output(self, subsample: tuple) -> float:
        """Expected (real-valued) output on one subsample."""
        if self.evaluator is not None:
            return float(self.evaluator(*subsample))
        pmf = self.output_pmf(subsample)
        return float(np.dot(pmf, np.asarray(self.outputs, dtype=float)))


@dataclass(frozen=True)
class TestQuery:
    """A real-valued test on w-tuples with outputs in [0, 1].

    The evaluator must already respect the [0, 1] range; outputs outside it
    are a contract violation, never silently clamped. ``batch``, when given,
    vectorizes an arity-1 evaluator over a dataset's element array and must
    agree with ``evaluator`` pointwise. ``tag`` is an opaque structured label
    used by harness populations to recognize queries with closed-form truth.
    """

    __test__ = False  # pytest: not a test class despite the name

    arity: int
    evaluator: Callable[..., float]
    name: str = ""
    batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    tag: Optional[tuple] = None

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("arity must be positive")
        if self.batch is not None and self.arity != 1:
            raise ValueError("batch evaluation is defined for arity-1 tests only")

    def values_on(self, dataset: Dataset) -> np.ndarray:
        """Per-element values on a dataset (arity 1 only)."""
        if self.arity != 1:
            raise ValueError("per-element values require arity 1")
        if self.batch is not None:
            vals = np.asarray(self.batch(dataset.array), dtype=float)
        else:
            vals = np.array([float(self.evaluator(x)) for x in dataset], dtype=float)
        if vals.shape != (len(dataset),):
            raise ValueError("batch evaluator returned a wrong-shaped array")
        _check_unit_range(vals, self.name)
        return vals


def _check_unit_range(vals: np.ndarray, name: str) -> None:
    if vals.size and (vals.min() < -MASS_TOL or vals.max() > 1 + MASS_TOL):
        raise ValueError(f"test query {name!r} produced values outside [0, 1]")


@dataclass(frozen=True)
class TranscriptRecord:
    t: int
    query: str
    response: object
    cost: float


class Transcript:
    """Ordered record of (query, response, charged cost) for one session."""

    def __init__(self):
        self._records: list[TranscriptRecord] = []

    def append(self, query: str, response, cost: float) -> TranscriptRecord:
        if cost < 0:
            raise ValueError("charged cost must be nonnegative")
        rec = TranscriptRecord(t=len(self._records) + 1, query=query,
                               response=response, cost=cost)
        self._records.append(rec)
        return rec

    @property
    def records(self) -> tuple[TranscriptRecord, ...]:
        return tuple(self._records)

    @property
    def total_cost(self) -> float:
        return float(sum(r.cost for r in self._records))

    def __len__(self) -> int:
        return len(self._records)


@dataclass(frozen=True)
class ExpectationEstimate:
    """An expectation value plus its provenance.

    ``stderr`` is 0 for exact enumeration and the Monte Carlo standard error
    otherwise.
    """

    value: float
    stderr: float = 0.0
    exact: bool = True

    def __float__(self) -> float:
        return self.value


def _mean_value(q, subsample: tuple) -> float:
    if isinstance(q, TestQuery):
        v = float(q.evaluator(*subsample))
        if v < -MASS_TOL or v > 1 + MASS_TOL:
            raise ValueError(f"test query {q.name!r} produced {v} outside [0, 1]")
        return v
    return q.mean_output(subsample)


def query_expectation_on_sample(q, S: Dataset, *, enum_cap: int = DEFAULT_ENUM_CAP,
                                mc_draws: Optional[int] = None,
                                rng=None) -> ExpectationEstimate:
    """phi(S): the mean answer of q over a uniform without-replacement
    w-subset of S (and over q's internal randomness).

    Exact for w = 1 (plain average of per-element expectations) and, for
    w >= 2, by enumerating all C(n, w) position subsets while that count is
    within ``enum_cap``. Beyond the cap a Monte Carlo draw count must be
    supplied; the estimate then carries its standard error.
    """
    n = len(S)
    w = q.arity
    if w > n:
        raise ValueError(f"query arity {w} exceeds sample size {n}")
    if w == 1:
        if isinstance(q, TestQuery):
            return ExpectationEstimate(float(q.values_on(S).mean()))
        vals = [q.mean_output((x,)) for x in S]
        return ExpectationEstimate(float(np.mean(vals)))
    if math.comb(n, w) <= enum_cap:
        total = 0.0
        count = 0
        for pos in itertools.combinations(range(n), w):
            total += _mean_value(q, tuple(S[p] for p in pos))
            count += 1
        return ExpectationEstimate(total / count)
    if mc_draws is None:
        raise EnumerationCapExceeded(
            f"C({n},{w}) subsets exceed cap {enum_cap}; supply mc_draws")
    gen = _generator_of(rng)
    vals = np.empty(mc_draws)
    for j in range(mc_draws):
        pos = gen.choice(n, size=w, replace=False)
        vals[j] = _mean_value(q, S.subsample(pos))
    return ExpectationEstimate(float(vals.mean()),
                               stderr=float(vals.std(ddof=1) / math.sqrt(mc_draws)),
                               exact=False)


def query_expectation_on_population(q, D: GroundTruth, *,
                                    enum_cap: int = DEFAULT_ENUM_CAP,
                                    mc_draws: Optional[int] = None,
                                    rng=None) -> ExpectationEstimate:
    """phi(D): the mean answer of q on w iid draws from D."""
    return _population_moment(q, D, power=1, enum_cap=enum_cap,
                              mc_draws=mc_draws, rng=rng)


def variance_on_population(psi, D: GroundTruth, *,
                                enum_cap: int = DEFAULT_ENUM_CAP,
                                mc_draws: Optional[int] = None,
                                rng=None) -> float:
    """Var of psi over w iid draws from D (nonnegative, clamped at 0)."""
    e1 = _population_moment(psi, D, power=1, enum_cap=enum_cap,
                            mc_draws=mc_draws, rng=rng).value
    e2 = _population_moment(psi, D, power=2, enum_cap=enum_cap,
                            mc_draws=mc_draws, rng=rng).value
    return max(0.0, e2 - e1 * e1)


def _population_moment(q, D: GroundTruth, *, power: int, enum_cap: int,
                       mc_draws: Optional[int], rng) -> ExpectationEstimate:
    w = q.arity
    size = len(D.support)
    if size ** w <= enum_cap:
        total = 0.0
        for idx in itertools.product(range(size), repeat=w):
            weight = float(np.prod([D.masses[i] for i in idx]))
            if weight == 0.0:
                continue
            v = _mean_value(q, tuple(D.support[i] for i in idx))
            total += weight * v ** power
        return ExpectationEstimate(total)
    if mc_draws is None:
        raise EnumerationCapExceeded(
            f"|support|^{w} = {size ** w} exceeds cap {enum_cap}; supply mc_draws")
    gen = _generator_of(rng)
    vals = np.empty(mc_draws)
    for j in range(mc_draws):
        idx = gen.choice(size, size=w, replace=True, p=D.masses)
        vals[j] = _mean_value(q, tuple(D.support[i] for i in idx)) ** power
    return ExpectationEstimate(float(vals.mean()),
                               stderr=float(vals.std(ddof=1) / math.sqrt(mc_draws)),
                               exact=False)


def error_value(delta: float, var: float, w: int) -> float:
    """(1/w) * min(|Delta|, Delta^2 / Var); the ratio term counts as
    +infinity when Var = 0, so the result degrades to |Delta| / w."""
    delta = abs(delta)
    if var <= 0.0:
        return delta / w
    return min(delta, delta * delta / var) / w


def error_metric(psi: TestQuery, S: Dataset, D: GroundTruth, *,
                 enum_cap: int = DEFAULT_ENUM_CAP,
                 mc_draws: Optional[int] = None, rng=None) -> float:
    """Error of a test: (1/w) min(Delta, Delta^2 / Var_D(psi)) with
    Delta = |psi(S) - psi(D)| and Var_D(psi) the variance of psi on w iid
    draws from D.

    The Var = 0 case takes the Delta / w branch (consistent with the
    Var -> 0 limit for Delta > 0, and 0 when Delta = 0). The result always
    lies in [0, 1/w].
    """
    kw = dict(enum_cap=enum_cap, mc_draws=mc_draws, rng=rng)
    delta = abs(query_expectation_on_sample(psi, S, **kw).value
                - query_expectation_on_population(psi, D, **kw).value)
    return error_value(delta, variance_on_population(psi, D, **kw), psi.arity)


def _generator_of(rng) -> np.random.Generator:
    """Accept a RandomSource, a numpy Generator, or a seed-like value."""
    if rng is None:
        raise ValueError("a randomness source is required for Monte Carlo paths")
    gen = getattr(rng, "generator", None)
    if gen is not None:
        return gen
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
