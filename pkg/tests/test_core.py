
import numpy as np
import pytest

from adasub.core import (
    Dataset,
    EnumerationCapExceeded,
    GroundTruth,
    Query,
    TestQuery,
    Transcript,
    error_metric,
    error_value,
    query_expectation_on_population,
    query_expectation_on_sample,
    variance_on_population,
)

IDENTITY = TestQuery(1, lambda x: float(x), name="identity")
PAIR_SUM = TestQuery(2, lambda a, b: float(a + b) / 2, name="halfpairsum")


def bernoulli(p):
    return GroundTruth((0, 1), np.array([1.0 - p, p]))


class TestDataset:
    def test_indexing_and_length(self):
        S = Dataset([3, 1, 4, 1, 5])
        assert len(S) == 5
        assert S[0] == 3 and S[3] == 1
        assert list(S) == [3, 1, 4, 1, 5]

    def test_leave_one_out(self):
        S = Dataset([1, 0, 0])
        assert list(S.leave_one_out(0)) == [0, 0]
        assert list(S.leave_one_out(2)) == [1, 0]
        with pytest.raises(IndexError):
            S.leave_one_out(3)

    def test_vector_elements_come_back_as_tuples(self):
        S = Dataset([(1, -1), (-1, 1)])
        assert S[0] == (1, -1)
        assert S.array.shape == (2, 2)

    def test_array_is_immutable(self):
        S = Dataset([1, 2, 3])
        with pytest.raises(ValueError):
            S.array[0] = 9

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Dataset([])


class TestGroundTruth:
    def test_valid(self):
        gt = bernoulli(0.3)
        assert gt.mass_of(1) == pytest.approx(0.3)
        assert gt.mass_of(7) == 0.0

    @pytest.mark.parametrize("masses", [[0.5, 0.6], [0.5, 0.4], [-0.1, 1.1]])
    def test_bad_masses(self, masses):
        with pytest.raises(ValueError):
            GroundTruth((0, 1), np.array(masses))

    def test_duplicate_support(self):
        with pytest.raises(ValueError):
            GroundTruth((0, 0), np.array([0.5, 0.5]))


class TestSampleExpectation:
    def test_identity_mean(self):
        # arithmetic mean for w = 1
        assert query_expectation_on_sample(IDENTITY, Dataset([1, 0, 0])).value \
            == pytest.approx(1 / 3, abs=1e-15)

    def test_pair_query_enumerates_all_pairs(self):
        # sums over the 6 position pairs of [1,1,0,0] are 2,1,1,1,1,0
        q = TestQuery(2, lambda a, b: float(a + b) / 2, name="pairsum")
        got = query_expectation_on_sample(q, Dataset([1, 1, 0, 0])).value
        assert got == pytest.approx(0.5, abs=1e-15)  # mean sum 1.0, halved

    def test_real_valued_query_pair_sum(self):
        q = Query.deterministic(2, (0, 1, 2), lambda a, b: a + b, name="sum")
        got = query_expectation_on_sample(q, Dataset([1, 1, 0, 0])).value
        assert got == pytest.approx(1.0, abs=1e-15)

    def test_constant(self):
        q = TestQuery(1, lambda x: 0.7, name="c")
        assert query_expectation_on_sample(q, Dataset([5, 6])).value == 0.7

    def test_w1_matches_direct_loop(self):
        gen = np.random.default_rng(7)
        for _ in range(25):
            vals = gen.random(int(gen.integers(1, 12)))
            S = Dataset(vals)
            got = query_expectation_on_sample(IDENTITY, S).value
            direct = sum(float(x) for x in S) / len(S)
            assert abs(got - direct) <= 1e-12

    def test_arity_exceeds_sample(self):
        with pytest.raises(ValueError):
            query_expectation_on_sample(PAIR_SUM, Dataset([1]))

    def test_cap_exceeded_requires_mc(self):
        S = Dataset(np.arange(40) % 2)
        q = TestQuery(4, lambda *xs: float(sum(xs)) / 4, name="mean4")
        with pytest.raises(EnumerationCapExceeded):
            query_expectation_on_sample(q, S, enum_cap=100)
        est = query_expectation_on_sample(q, S, enum_cap=100, mc_draws=4000,
                                          rng=np.random.default_rng(3))
        assert not est.exact and est.stderr > 0
        assert abs(est.value - 0.5) <= 4 * est.stderr + 1e-9

    def test_range_violation_raises(self):
        bad = TestQuery(1, lambda x: 1.5, name="bad")
        with pytest.raises(ValueError):
            query_expectation_on_sample(bad, Dataset([0, 1]))


class TestPopulationExpectation:
    def test_identity_bernoulli(self):
        assert query_expectation_on_population(IDENTITY, bernoulli(0.3)).value \
            == pytest.approx(0.3, abs=1e-15)

    def test_match_indicator_uniform(self):
        # 4 ordered pairs, two of them equal
        q = TestQuery(2, lambda a, b: 1.0 if a == b else 0.0, name="match")
        got = query_expectation_on_population(q, bernoulli(0.5)).value
        assert got == pytest.approx(0.5, abs=1e-15)

    def test_constant_zero(self):
        q = TestQuery(1, lambda x: 0.0, name="z")
        assert query_expectation_on_population(q, bernoulli(0.2)).value == 0.0

    def test_mc_path(self):
        gt = GroundTruth(tuple(range(10)), np.full(10, 0.1))
        q = TestQuery(3, lambda *xs: float(max(xs)) / 9, name="max3")
        exact = query_expectation_on_population(q, gt).value
        est = query_expectation_on_population(q, gt, enum_cap=10, mc_draws=4000,
                                              rng=np.random.default_rng(11))
        assert abs(est.value - exact) <= 4 * est.stderr + 1e-9


class TestErrorMetric:
    def test_zero_when_sample_matches_population(self):
        S = Dataset([1, 1, 0, 0, 0, 0, 0, 0, 0, 0])  # mean 0.2
        assert error_metric(IDENTITY, S, bernoulli(0.2)) == pytest.approx(0.0, abs=1e-15)

    def test_formula_cases(self):
        assert error_value(0.1, 0.25, 1) == pytest.approx(0.04, abs=1e-15)
        assert error_value(0.3, 0.01, 2) == pytest.approx(0.15, abs=1e-15)

    def test_end_to_end_matches_formula_case(self):
        # identity on Bernoulli(1/2): Var = 1/4; sample mean 0.6 gives
        # Delta = 0.1 and error min(0.1, 0.04) = 0.04
        S = Dataset([1, 1, 1, 0, 0])
        got = error_metric(IDENTITY, S, bernoulli(0.5))
        assert got == pytest.approx(0.04, abs=1e-12)

    def test_zero_variance_uses_delta_branch(self):
        q = TestQuery(1, lambda x: 0.7, name="c")
        S = Dataset([0, 1])
        assert error_metric(q, S, bernoulli(0.3)) == pytest.approx(0.0, abs=1e-15)
        assert error_value(0.25, 0.0, 1) == 0.25

    def test_depends_on_delta_only_through_absolute_value(self):
        assert error_value(0.1, 0.2, 1) == error_value(-0.1, 0.2, 1)

    def test_dominated_by_both_branches(self):
        gen = np.random.default_rng(5)
        for _ in range(200):
            delta = float(gen.random())
            var = float(gen.random()) + 1e-6
            w = int(gen.integers(1, 4))
            e = error_value(delta, var, w)
            assert e <= delta / w + 1e-15
            assert e <= delta * delta / (w * var) + 1e-15
            assert 0.0 <= e <= 1.0 / w + 1e-15

    def variance_on_population(self):
        assert variance_on_population(IDENTITY, bernoulli(0.5)) \
            == pytest.approx(0.25, abs=1e-15)


class TestTranscript:
    def test_cost_additivity_and_indexing(self):
        tr = Transcript()
        tr.append("a", 0.5, 0.125)
        tr.append("b", 0.25, 0.25)
        tr.append("c", 1.0, 0.0)
        assert [r.t for r in tr.records] == [1, 2, 3]
        assert tr.total_cost == pytest.approx(0.375, abs=1e-15)
        assert tr.total_cost == pytest.approx(sum(r.cost for r in tr.records))

    def test_negative_cost_rejected(self):
        tr = Transcript()
        with pytest.raises(ValueError):
            tr.append("a", 0.5, -1.0)


class TestQueryType:
    def test_exactly_one_evaluation_form(self):
        with pytest.raises(ValueError):
            Query(1, (0, 1))
        with pytest.raises(ValueError):
            Query(1, (0, 1), evaluator=lambda x: x, sampler=lambda s, g: 0)

    def test_output_outside_range_rejected(self):
        q = Query.deterministic(1, (0, 1), lambda x: 2)
        with pytest.raises(ValueError):
            q.output_pmf((5,))

    def test_randomized_pmf_validated(self):
        q = Query.randomized(1, (0, 1), lambda x: [0.7, 0.7])
        with pytest.raises(ValueError):
            q.output_pmf((0,))

    def test_mean_output(self):
        q = Query.randomized(1, (0, 1, 2), lambda x: [0.2, 0.3, 0.5])
        assert q.mean_output((None,)) == pytest.approx(1.3, abs=1e-15)
