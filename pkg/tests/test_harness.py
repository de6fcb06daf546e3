import math

import numpy as np
import pytest

from adasub.core import Dataset, TestQuery
from adasub.engine import RandomSource, population_response_pmf
from adasub.harness import (
    Analyst,
    CubePopulation,
    ExperimentConfig,
    FinitePopulation,
    ShiftingMeanAnalyst,
    _prob_sign_sum_positive,
    analyst_fixed,
    analyst_random_correlation,
    coordinate_indicator,
    constant_test,
    grid_mean_query,
    identity_test,
    naive_answer,
    population_generators,
    run_experiment,
    sign_sum_test,
)
from adasub.mechanisms import SqSession, cost_hp, sq_params


def sq_config(**over):
    cfg = dict(
        seed=11, trials=2, n=60,
        population={"name": "bernoulli", "p": 0.3},
        mechanism={"name": "subsampling-sq", "tau": 0.3, "delta": 0.2},
        analyst={"name": "fixed", "queries": ["identity", {"kind": "constant", "value": 0.0}]},
    )
    cfg.update(over)
    return ExperimentConfig(**cfg)


class TestPopulations:
    def test_bernoulli_masses(self):
        pop = population_generators("bernoulli", {"p": 0.3})
        assert np.allclose(pop.ground_truth.masses, [0.7, 0.3], atol=1e-15)
        assert pop.truth(identity_test()) == pytest.approx(0.3, abs=1e-15)

    def test_cube_coordinate_marginals(self):
        pop = population_generators("uniform_pm1_cube", {"d": 3})
        S = pop.draw(4000, RandomSource(1))
        assert S.array.shape == (4000, 3)
        means = (S.array == 1).mean(axis=0)
        assert np.all(np.abs(means - 0.5) <= 4 * 0.5 / math.sqrt(4000))
        assert pop.truth(coordinate_indicator(1)) == 0.5
        assert pop.variance(coordinate_indicator(1)) == 0.25

    def test_cube_sign_sum_truth_exact(self):
        assert _prob_sign_sum_positive(2) == pytest.approx(0.25, abs=1e-15)
        assert _prob_sign_sum_positive(3) == pytest.approx(0.5, abs=1e-15)
        pop = CubePopulation(2)
        assert pop.truth(sign_sum_test([1, -1])) == pytest.approx(0.25, abs=1e-15)

    def test_cube_rejects_unknown_queries(self):
        pop = CubePopulation(2)
        with pytest.raises(ValueError):
            pop.truth(TestQuery(1, lambda x: 0.5, name="opaque"))

    def test_discretized_gaussian_masses_normalized(self):
        pop = population_generators(
            "discretized_gaussian",
            {"lo": -4, "hi": 4, "points": 101, "mu": 0, "sigma": 1})
        assert abs(pop.ground_truth.masses.sum() - 1.0) <= 1e-12

    def test_unknown_population(self):
        with pytest.raises(ValueError):
            population_generators("cauchy", {})
        with pytest.raises(ValueError):
            population_generators("bernoulli", {"p": 0.3, "qq": 1})

    def test_grid_mean_dist_matches_enumeration(self):
        # dual route: exact convolution vs direct product enumeration
        xs = tuple(np.linspace(-1.0, 1.0, 5))
        masses = np.array([0.1, 0.2, 0.4, 0.2, 0.1])
        from adasub.core import GroundTruth
        pop = FinitePopulation(GroundTruth(xs, masses), "small-grid")
        centers = tuple(np.linspace(-2.0, 2.0, 9))
        for w, shift in ((1, 0.0), (2, 0.5), (3, -0.25)):
            q = grid_mean_query(w, shift, centers)
            conv = pop.response_dist(q)
            enum = population_response_pmf(q, pop.ground_truth)
            assert np.max(np.abs(conv.masses - enum.masses)) <= 1e-12


class TestAnalysts:
    def test_fixed_replays_queries(self):
        qs = [constant_test(0.2), identity_test()]
        a = analyst_fixed(qs)
        assert a.rounds == 2
        assert a.next_query(1, (), RandomSource(1)) is qs[0]
        assert a.final_tests((0.5, 0.5), RandomSource(1)) == qs

    def test_fixed_requires_queries(self):
        with pytest.raises(ValueError):
            analyst_fixed([])

    def test_random_correlation_round_one_truth(self):
        a = analyst_random_correlation(1)
        pop = CubePopulation(1)
        [test] = a.final_tests((0.7,), RandomSource(1))
        assert pop.truth(test) == pytest.approx(0.5, abs=1e-15)

    def test_random_correlation_signs(self):
        a = analyst_random_correlation(3)
        [test] = a.final_tests((0.9, 0.1, 0.5), RandomSource(1))
        assert test.tag == ("sign_sum", (1, -1, 1))  # ties count as +1

    def test_shifting_means_declares_profiles(self):
        a = ShiftingMeanAnalyst(T=6, w_max=4)
        assert a.w_list == [1, 2, 3, 4, 1, 2]
        assert a.r_sizes == [64] * 6
        q = a.next_query(1, (), RandomSource(1))
        assert q.arity == 1 and len(q.outputs) == 64

    def test_shifting_means_shift_bounded(self):
        a = ShiftingMeanAnalyst(T=10, w_max=2, max_shift=3)
        responses = ()
        for t in range(1, 11):
            q = a.next_query(t, responses, RandomSource(1))
            shift_cells = q.tag[2] / a.r_step
            assert abs(shift_cells) <= 3 + 1e-9
            responses = responses + (float(q.outputs[40]),)


class TestNaive:
    def test_constant_and_identity(self):
        S = Dataset([1, 0, 0])
        assert naive_answer(S, constant_test(0.7)) == pytest.approx(0.7, abs=1e-12)
        assert naive_answer(S, identity_test()) == pytest.approx(1 / 3, abs=1e-15)

    def test_sq_with_huge_k_agrees(self):
        S = Dataset([1, 1, 0, 0, 0, 0])
        sq = SqSession(S, 0.0, 1_000_000, RandomSource(2), 0.1)
        assert abs(sq.answer(identity_test()) - naive_answer(S, identity_test())) \
            <= 0.002

    def test_naive_answers_independent_of_query_order(self):
        queries = ["identity", {"kind": "constant", "value": 0.3}]
        a = run_experiment(sq_config(
            mechanism={"name": "naive-empirical"},
            analyst={"name": "fixed", "queries": queries}))
        b = run_experiment(sq_config(
            mechanism={"name": "naive-empirical"},
            analyst={"name": "fixed", "queries": list(reversed(queries))}))
        for report in (a, b):
            report.by_query = {
                (r["trial"], r["query_id"]): r["answer"]
                for r in report.rows if not r["query_id"].startswith("test:")}
        assert a.by_query == b.by_query


class TestRunExperiment:
    def test_constant_zero_query_is_exact(self):
        cfg = sq_config(analyst={"name": "fixed",
                                 "queries": [{"kind": "constant", "value": 0.0}]},
                        mechanism={"name": "subsampling-sq", "tau": 0.3,
                                   "delta": 0.2, "epsilon": 0.0})
        report = run_experiment(cfg)
        query_rows = [r for r in report.rows
                      if not r["query_id"].startswith("test:")]
        assert all(r["bias"] == 0.0 for r in query_rows)

    def test_same_seed_reproduces_rows(self):
        r1 = run_experiment(sq_config())
        r2 = run_experiment(sq_config())
        assert r1.rows == r2.rows
        assert r1.summary == r2.summary

    def test_threads_do_not_change_results(self):
        r1 = run_experiment(sq_config(trials=4, threads=1))
        r2 = run_experiment(sq_config(trials=4, threads=3))
        assert r1.rows == r2.rows

    def test_different_seed_changes_answers(self):
        r1 = run_experiment(sq_config(seed=1))
        r2 = run_experiment(sq_config(seed=2))
        assert r1.rows != r2.rows

    def test_ledger_and_row_costs_agree(self):
        cfg = sq_config(trials=3)
        report = run_experiment(cfg)
        k = report.summary["k"]
        eps = report.summary["epsilon"]
        per_query = k * cost_hp(60, 2, eps, 0.2)
        for trial in range(3):
            costs = [r["cost"] for r in report.rows if r["trial"] == trial
                     and not r["query_id"].startswith("test:")]
            assert sum(costs) == pytest.approx(2 * per_query, rel=1e-12)
        assert report.summary["mi_upper_bound"] \
            == pytest.approx(60 * 2 * per_query, rel=1e-9)

    def test_naive_mechanism_answers_sample_means(self):
        cfg = sq_config(mechanism={"name": "naive-empirical", "tau": 0.3})
        report = run_experiment(cfg)
        for r in report.rows:
            assert r["answer"] == pytest.approx(r["sample_value"], abs=1e-15)

    def test_summary_recomputable(self):
        report = run_experiment(sq_config(trials=3))
        report.verify_consistency()

    def test_row_count_includes_test_rows(self):
        report = run_experiment(sq_config(trials=2))
        # 2 queries + 2 fixed-analyst tests per trial
        assert len(report.rows) == 2 * 4
        assert report.summary["rows"] == 8

    def test_unknown_mechanism_rejected(self):
        with pytest.raises(ValueError):
            run_experiment(sq_config(mechanism={"name": "magic"}))

    def test_mechanism_param_typo_rejected(self):
        with pytest.raises(ValueError):
            run_experiment(sq_config(
                mechanism={"name": "subsampling-sq", "tau": 0.3, "delta": 0.2,
                           "kk": 3}))

    def test_analyst_population_mismatch(self):
        cfg = sq_config(analyst={"name": "random-correlation", "T": 2})
        with pytest.raises(ValueError):
            run_experiment(cfg)
        cfg = sq_config(population={"name": "uniform_pm1_cube", "d": 5},
                        analyst={"name": "random-correlation", "T": 2})
        with pytest.raises(ValueError):
            run_experiment(cfg)

    def test_protocol_hides_sample_from_analyst(self):
        seen = []

        class Spy(Analyst):
            rounds = 2

            def next_query(self, t, responses, rng):
                seen.append((t, responses, rng))
                return constant_test(0.5)

        import adasub.harness as hz
        orig = hz.make_analyst
        hz.make_analyst = lambda name, params: Spy()
        try:
            run_experiment(sq_config(trials=1))
        finally:
            hz.make_analyst = orig
        assert len(seen) == 2
        for t, responses, rng in seen:
            assert isinstance(responses, tuple)
            assert all(isinstance(v, float) for v in responses)
            assert isinstance(rng, RandomSource)

    def test_fixed_naive_bias_within_sampling_theory(self):
        # |phi(S) - phi(D)| beyond 3 sigma in at most 1% of trials
        cfg = sq_config(trials=300, n=400,
                        mechanism={"name": "naive-empirical"},
                        analyst={"name": "fixed", "queries": ["identity"]})
        report = run_experiment(cfg)
        sigma = math.sqrt(0.3 * 0.7 / 400)
        rows = [r for r in report.rows if not r["query_id"].startswith("test:")]
        exceed = sum(1 for r in rows if r["bias"] > 3 * sigma)
        assert exceed <= 3

    def test_budget_refusal_recorded_not_fatal(self):
        # room for exactly one answered query per trial in almost-sure mode
        params = sq_params(60, 2, 0.3, 0.2)
        per_query = params.k * cost_hp(60, 2, params.epsilon, 0.2)
        cfg = sq_config(mechanism={
            "name": "subsampling-sq", "tau": 0.3, "delta": 0.2,
            "budget_mode": "almost_sure", "budget_limit": 1.5 * per_query})
        report = run_experiment(cfg)
        for trial in (0, 1):
            rows = [r for r in report.rows if r["trial"] == trial]
            assert len(rows) == 2  # one answer, one recorded refusal, no tests
            assert not math.isnan(rows[0]["bias"])
            assert math.isnan(rows[1]["answer"]) and rows[1]["cost"] == 0.0
            assert rows[1]["within_bound"] == 0
        assert not math.isnan(report.summary["max_bias"])
        report.verify_consistency()

    def test_median_run_smoke(self):
        cfg = ExperimentConfig(
            seed=5, trials=2, n=400,
            population={"name": "discretized_gaussian", "points": 129},
            mechanism={"name": "median", "delta": 0.2},
            analyst={"name": "shifting-means", "T": 3, "w_max": 2,
                     "r_cells": 16, "r_step": 1.6},
        )
        report = run_experiment(cfg)
        rows = report.rows
        assert len(rows) == 2 * 3
        for r in rows:
            assert r["mechanism"] == "median"
            assert r["threshold"] == 0.4
            assert r["cost"] > 0
        # mechanism answers live on the query grid
        centers = ShiftingMeanAnalyst(T=3, w_max=2, r_cells=16, r_step=1.6).centers
        assert all(r["answer"] in centers for r in rows)
        report.verify_consistency()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            sq_config(trials=0)
        with pytest.raises(ValueError):
            sq_config(population={"p": 0.3})
