"""Reference schedulers and the exhaustive oracle."""

import numpy as np
import pytest

from conftest import GHZ, make_state, random_state, random_valid_decision
from edgesched import baselines, core
from edgesched.baselines import (BaselineConfig, OracleLimitError, kg_decide,
                                 largest_remainder_round, lbs_decide, myopic_decide,
                                 ns_decide, oracle_decide, sh_decide)
from edgesched.hierarchical import HsParams, PsoParams
from edgesched.lyapunov import DppConfig, dpp_objective
from edgesched.simulator import SchedulerParams, run_experiment

CFG = DppConfig(v_weight=1e8, budget=20.0)


class TestNs:
    def test_identity_decision(self):
        state = make_state([5, 7], [GHZ, GHZ])
        assert np.array_equal(ns_decide(state).flows, np.diag([5, 7]))

    def test_zero_arrivals(self):
        state = make_state([0, 0], [GHZ, GHZ])
        assert ns_decide(state).flows.sum() == 0

    def test_cost_is_pure_computation(self):
        state = make_state([5, 7], [GHZ, GHZ])
        d = ns_decide(state)
        assert core.scheduling_cost(state, d) == 0.0
        assert core.total_cost(state, d) == core.computation_cost(state, d)

    def test_infeasible_emitted_with_flag(self):
        state = make_state([5, 7], [GHZ, 0.0])
        d = ns_decide(state)
        assert not core.validate_decision(state, d).ok


class TestLargestRemainder:
    def test_exact_on_spec_example(self):
        rounded = largest_remainder_round(np.array([4.0, 2.0, 2.0]), 8)
        assert rounded.tolist() == [4, 2, 2]

    def test_ties_to_lower_index(self):
        rounded = largest_remainder_round(np.array([1.5, 1.5]), 3)
        assert rounded.tolist() == [2, 1]

    def test_sum_preserved_random(self, rng):
        for _ in range(200):
            k = int(rng.integers(2, 6))
            total = int(rng.integers(0, 50))
            weights = rng.random(k)
            shares = weights / weights.sum() * total
            assert largest_remainder_round(shares, total).sum() == total


class TestLbs:
    def test_proportional_split(self):
        state = make_state([8, 0, 0], [2 * GHZ, GHZ, GHZ])
        d = lbs_decide(state)
        assert d.flows[0].tolist() == [4, 2, 2]

    def test_single_able_node_takes_all(self):
        state = make_state([8, 3], [0.0, GHZ])
        d = lbs_decide(state)
        assert d.flows[:, 1].sum() == 11 and d.flows[:, 0].sum() == 0

    def test_rows_conserved_random(self, rng):
        for _ in range(50):
            state = random_state(rng, m=4, max_arrivals=9, zero_compute_prob=0.2)
            d = lbs_decide(state)
            assert core.validate_decision(state, d).ok


class TestKg:
    def test_recompute_slot_is_latency_greedy(self):
        state = make_state([5, 7], [GHZ, GHZ], queue=50.0)
        d = kg_decide(state, 0, 10, HsParams(), PsoParams(), seed=4)
        assert core.validate_decision(state, d).ok

    def test_between_recomputes_stays_local(self):
        state = make_state([5, 7], [GHZ, GHZ])
        for slot in (1, 2, 9):
            d = kg_decide(state, slot, 10, HsParams(), PsoParams(), seed=4)
            assert np.array_equal(d.flows, np.diag([5, 7]))

    def test_period_one_recomputes_every_slot(self):
        state = make_state([5, 7], [GHZ, GHZ])
        d0 = kg_decide(state, 0, 1, HsParams(), PsoParams(), seed=4)
        d3 = kg_decide(state, 3, 1, HsParams(), PsoParams(), seed=4)
        assert np.array_equal(d0.flows, d3.flows)

    def test_dead_nodes_drained_between_recomputes(self):
        state = make_state([5, 7], [0.0, GHZ])
        d = kg_decide(state, 1, 10, HsParams(), PsoParams(), seed=4)
        assert core.validate_decision(state, d).ok
        assert d.flows[0, 1] == 5

    def test_longer_period_cuts_cost_raises_delay(self):
        from edgesched.scenario import default_scenario
        spec = default_scenario(slots=60)
        fast = run_experiment(spec, "kg", CFG,
                              SchedulerParams(baseline=BaselineConfig(kg_period=1)), slots=60)
        slow = run_experiment(spec, "kg", CFG,
                              SchedulerParams(baseline=BaselineConfig(kg_period=10)), slots=60)
        assert slow.aggregates.avg_cost < fast.aggregates.avg_cost
        assert slow.aggregates.avg_delay > fast.aggregates.avg_delay


class TestMyopic:
    def test_unconstrained_matches_latency_greedy(self):
        state = make_state([15, 25], [40 * GHZ, 10 * GHZ], queue=30.0,
                           cycles=3e5, bandwidth=80e9)
        d_my = myopic_decide(state, 0, past_cost=-1e12, hs_params=HsParams(),
                             pso_params=PsoParams(), seed=99)
        d_kg = kg_decide(state, 0, 1, HsParams(), PsoParams(), seed=99)
        assert np.array_equal(d_my.flows, d_kg.flows)

    def test_exhausted_budget_goes_local(self):
        state = make_state([5, 7], [GHZ, GHZ])
        d = myopic_decide(state, 0, past_cost=1e9, hs_params=HsParams(),
                          pso_params=PsoParams(), seed=1)
        assert np.array_equal(d.flows, np.diag([5, 7]))

    def test_cumulative_ledger_respected(self):
        from edgesched.scenario import default_scenario
        spec = default_scenario(slots=60)
        result = run_experiment(spec, "myopic", CFG, SchedulerParams(), slots=60)
        budget = spec.budget
        spent = 0.0
        worst_single = 0.0
        for rec in result.records:
            spent += rec.metrics.total_cost
            worst_single = max(worst_single, rec.metrics.total_cost)
            cap = (rec.slot + 1) * budget
            assert spent <= cap + worst_single + 1e-9


class TestSh:
    def test_population_one_generation_zero(self):
        state = make_state([5, 7], [GHZ, GHZ], queue=10.0)
        cfgb = BaselineConfig(ga_population=1, ga_generations=0)
        d, score = sh_decide(state, CFG, cfgb, seed=3)
        assert core.validate_decision(state, d).ok
        assert score == pytest.approx(dpp_objective(state, d, CFG), rel=1e-9)

    def test_elitism_monotone_curve(self, rng):
        state = random_state(rng, m=4, max_arrivals=9, queue_max=20.0)
        cfgb = BaselineConfig(ga_population=10, ga_generations=60)
        _, _, curve = sh_decide(state, CFG, cfgb, seed=5, return_curve=True)
        assert len(curve) == 61
        assert np.all(np.diff(curve) <= 1e-12)

    def test_zero_compute_columns_never_used(self, rng):
        for seed in range(5):
            state = random_state(rng, m=3, max_arrivals=6, zero_compute_prob=0.3)
            cfgb = BaselineConfig(ga_population=8, ga_generations=20)
            d, _ = sh_decide(state, CFG, cfgb, seed=seed)
            assert core.validate_decision(state, d).ok

    def test_budget_matching_sets_generations(self):
        state = make_state([2, 3], [GHZ, GHZ])
        cfgb = BaselineConfig(ga_population=40, ga_generations=None)
        d, _, curve = sh_decide(state, CFG, cfgb, seed=1, evaluation_budget=4000,
                                return_curve=True)
        assert len(curve) == 4000 // 40  # init + 99 generations


class TestOracle:
    def test_single_able_node_unique_decision(self):
        state = make_state([2, 3], [0.0, GHZ])
        d, score = oracle_decide(state, CFG)
        assert d.flows[:, 1].tolist() == [2, 3]

    def test_two_candidate_instance(self):
        state = make_state([1, 0], [GHZ, 2 * GHZ], queue=5.0)
        d, score = oracle_decide(state, CFG)
        local = core.all_local_decision(state)
        moved = core.SchedulingDecision(np.array([[0, 1], [0, 0]]))
        candidates = [dpp_objective(state, local, CFG), dpp_objective(state, moved, CFG)]
        assert score == pytest.approx(min(candidates), rel=1e-12)

    def test_minimum_dominates_random_decisions(self, rng):
        for _ in range(10):
            state = random_state(rng, m=3, max_arrivals=3, queue_max=30.0)
            _, score = oracle_decide(state, CFG)
            for _ in range(20):
                d = random_valid_decision(rng, state)
                assert score <= dpp_objective(state, d, CFG) + 1e-9

    def test_guards(self):
        state = make_state([1] * 5, [GHZ] * 5)
        with pytest.raises(OracleLimitError):
            oracle_decide(state, CFG)
        state = make_state([7, 6], [GHZ, GHZ])
        with pytest.raises(OracleLimitError):
            oracle_decide(state, CFG)

    def test_kg_period_validation(self):
        with pytest.raises(ValueError):
            BaselineConfig(kg_period=0)
