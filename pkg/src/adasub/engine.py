"""The subsampling primitive and its exact small-instance oracles.

``subsample_answer`` draws a uniform without-replacement w-subset of dataset
positions and evaluates the query on it; ``exact_response_pmf`` computes the
same answer law in closed form by enumerating all C(n, w) subsets, and
``population_response_pmf`` the law on w fresh iid draws from a population.
The sampler and the enumerators agree by construction (subsamples are
canonicalized to dataset-position order), which the test suite checks by
frequency comparison.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_ENUM_CAP,
    Dataset,
    EnumerationCapExceeded,
    GroundTruth,
    MASS_TOL,
    Query,
)


class RandomSource:
    """A splittable deterministic stream identified by (seed, split path).

    Streams are counter-based (Philox) and derived via numpy's SeedSequence
    spawn keys, so the same (seed, path) always yields the identical stream
    and distinct paths yield independent-quality streams. ``child`` extends
    the path without touching this source's state.

    Vectorized consumers draw blocks from one stream; within a block, the
    i-th draw sits at a fixed counter offset, so any single draw is
    reproducible in isolation by replaying its block.
    """

    __slots__ = ("seed", "path", "_generator")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._generator: Optional[np.random.Generator] = None

    def child(self, *labels: int) -> "RandomSource":
        return RandomSource(self.seed, self.path + tuple(labels))

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
            self._generator = np.random.Generator(np.random.Philox(ss))
        return self._generator

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, path={self.path})"


@dataclass(frozen=True)
class ResponsePMF:
    """A probability mass function over an ordered finite range."""

    outputs: tuple
    masses: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "outputs", tuple(self.outputs))
        masses = np.asarray(self.masses, dtype=float)
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        if masses.shape != (len(self.outputs),):
            raise ValueError("masses must align index-for-index with outputs")
        if np.any(masses < -MASS_TOL):
            raise ValueError("masses must be nonnegative")
        if abs(masses.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {masses.sum()!r}, not 1")

    def mass_of(self, y) -> float:
        try:
            return float(self.masses[self.outputs.index(y)])
        except ValueError:
            return 0.0

    def mean(self) -> float:
        return float(np.dot(self.masses, np.asarray(self.outputs, dtype=float)))

    def support(self) -> tuple:
        return tuple(y for y, m in zip(self.outputs, self.masses) if m > 0.0)

    def prob_le(self, y) -> float:
        vals = np.asarray(self.outputs, dtype=float)
        return float(self.masses[vals <= float(y)].sum())

    def prob_ge(self, y) -> float:
        vals = np.asarray(self.outputs, dtype=float)
        return float(self.masses[vals >= float(y)].sum())


def draw_positions(gen: np.random.Generator, n: int, w: int) -> tuple[int, ...]:
    """A uniform without-replacement w-subset of [0, n), in ascending order.

    Positions are canonicalized by sorting, so a query sees the drawn
    multiset in dataset order regardless of draw order.
    """
    if w == n:
        return tuple(range(n))
    pos = gen.choice(n, size=w, replace=False)
    pos.sort()
    return tuple(int(p) for p in pos)


def subsample_answer(q: Query, S: Dataset, rng: RandomSource | np.random.Generator,
                     size: Optional[int] = None):
    """Draw y ~ q's answer law on S: evaluate q on a uniform
    without-replacement w-subset of S's positions.

    With ``size`` given, returns an array of that many independent answers
    (vectorized for arity-1 queries). The marginal law of each answer equals
    ``exact_response_pmf(q, S)``.
    """
    n = len(S)
    if q.arity > n:
        raise ValueError(f"query arity {q.arity} exceeds sample size {n}")
    gen = rng.generator if isinstance(rng, RandomSource) else rng
    if size is None:
        sub = tuple(S[p] for p in draw_positions(gen, n, q.arity))
        return q.sample_output(sub, gen)
    if q.arity == 1 and not q.is_opaque:
        return _batch_answers_arity1(q, S, gen, size)
    out = [subsample_answer(q, S, gen) for _ in range(size)]
    return np.asarray(out)


def _batch_answers_arity1(q: Query, S: Dataset, gen: np.random.Generator,
                          size: int) -> np.ndarray:
    n = len(S)
    pos = gen.integers(0, n, size=size)
    outputs = np.asarray(q.outputs)
    if q.evaluator is not None:
        per_elem = np.asarray([q._output_index(q.evaluator(S[i])) for i in range(n)])
        return outputs[per_elem[pos]]
    pmf_rows = np.vstack([q.output_pmf((S[i],)) for i in range(n)])
    cdf = np.cumsum(pmf_rows, axis=1)
    u = gen.random(size)
    idx = (u[:, None] > cdf[pos]).sum(axis=1)
    return outputs[np.minimum(idx, len(q.outputs) - 1)]


def exact_response_pmf(q: Query, S: Dataset, *,
                       enum_cap: int = DEFAULT_ENUM_CAP) -> ResponsePMF:
    """The exact answer law of q on S: the average over all C(n, w) position
    subsets of q's output distribution on that subset."""
    n = len(S)
    w = q.arity
    if w > n:
        raise ValueError(f"query arity {w} exceeds sample size {n}")
    count = math.comb(n, w)
    if count * len(q.outputs) > enum_cap:
        raise EnumerationCapExceeded(
            f"C({n},{w})*|Y| = {count * len(q.outputs)} exceeds cap {enum_cap}")
    masses = np.zeros(len(q.outputs))
    for pos in itertools.combinations(range(n), w):
        masses += q.output_pmf(tuple(S[p] for p in pos))
    return ResponsePMF(q.outputs, masses / count)


def population_response_pmf(q: Query, D: GroundTruth, *,
                            enum_cap: int = DEFAULT_ENUM_CAP) -> ResponsePMF:
    """The answer law of q on w iid draws from D (ordered tuples enumerated
    over support^w)."""
    size = len(D.support)
    w = q.arity
    if size ** w * len(q.outputs) > enum_cap:
        raise EnumerationCapExceeded(
            f"|support|^{w}*|Y| = {size ** w * len(q.outputs)} exceeds cap {enum_cap}")
    masses = np.zeros(len(q.outputs))
    for idx in itertools.product(range(size), repeat=w):
        weight = float(np.prod([D.masses[i] for i in idx]))
        if weight == 0.0:
            continue
        masses += weight * q.output_pmf(tuple(D.support[i] for i in idx))
    return ResponsePMF(q.outputs, masses)


def uniformize(q: Query, p: float) -> Query:
    """Mix q with uniform output noise so every output value has probability
    at least p on every input: with probability p*|Y| the answer is a uniform
    draw from Y, otherwise q's own answer."""
    ysize = len(q.outputs)
    if p < 0 or p * ysize > 1 + MASS_TOL:
        raise ValueError(f"need 0 <= p*|Y| <= 1, got p={p}, |Y|={ysize}")
    mix = p * ysize
    name = f"uniformize({q.name or 'query'},{p:g})"
    if q.is_opaque:
        base = q.sampler

        def sampler(sub, gen):
            if gen.random() < mix:
                return q.outputs[gen.integers(0, ysize)]
            return base(sub, gen)

        return Query.opaque(q.arity, q.outputs, sampler, uniformity=p, name=name)

    def dist_fn(*sub):
        return (1.0 - mix) * q.output_pmf(sub) + p

    return Query.randomized(q.arity, q.outputs, dist_fn, uniformity=p, name=name)


@dataclass(frozen=True)
class SpotCheckEntry:
    subsample: tuple
    min_mass: float
    threshold: float
    ok: bool


@dataclass(frozen=True)
class SpotCheckReport:
    declared: float
    entries: tuple[SpotCheckEntry, ...]

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def failures(self) -> tuple[SpotCheckEntry, ...]:
        return tuple(e for e in self.entries if not e.ok)


def spot_check_uniformity(q: Query, inputs: Sequence[tuple], *,
                          rng: Optional[RandomSource | np.random.Generator] = None,
                          draws: int = 100_000) -> SpotCheckReport:
    """Validate a declared uniformity floor on a sample of inputs.

    Output laws are evaluated exactly where possible; opaque queries are
    checked by ``draws``-sample frequencies with a 5-sigma Monte Carlo
    allowance below the declared floor.
    """
    if q.uniformity <= 0:
        raise ValueError("spot check requires a declared uniformity floor p > 0")
    p = q.uniformity
    entries = []
    for sub in inputs:
        sub = tuple(sub)
        if len(sub) != q.arity:
            raise ValueError(f"input {sub!r} does not match arity {q.arity}")
        if q.is_opaque:
            if rng is None:
                raise ValueError("opaque spot checks need a randomness source")
            gen = rng.generator if isinstance(rng, RandomSource) else rng
            counts = {y: 0 for y in q.outputs}
            for _ in range(draws):
                counts[q.sampler(sub, gen)] += 1
            min_mass = min(counts.values()) / draws
            slack = 5.0 * math.sqrt(p * (1 - p) / draws)
            threshold = p - slack
        else:
            min_mass = float(q.output_pmf(sub).min())
            threshold = p - MASS_TOL
        entries.append(SpotCheckEntry(sub, min_mass, threshold, min_mass >= threshold))
    return SpotCheckReport(declared=p, entries=tuple(entries))
