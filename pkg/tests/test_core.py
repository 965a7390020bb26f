"""Latency/cost arithmetic and decision validation."""

import numpy as np
import pytest

from conftest import GHZ, make_state, random_state, random_valid_decision
from edgesched import core
from edgesched.core import (DecisionShapeError, SchedulingDecision, ServiceSpec,
                            all_local_decision, average_response_delay,
                            computation_cost, computation_latency, scheduling_cost,
                            scheduling_latency, total_cost, validate_decision)


def decision(rows):
    return SchedulingDecision(np.array(rows, dtype=np.int64))


class TestServiceSpec:
    @pytest.mark.parametrize("kwargs", [
        dict(request_size_bits=0, cycles_per_request=1e5, cost_budget_per_slot=20),
        dict(request_size_bits=4e5, cycles_per_request=-1, cost_budget_per_slot=20),
        dict(request_size_bits=4e5, cycles_per_request=1e5, cost_budget_per_slot=0),
    ])
    def test_rejects_non_positive(self, kwargs):
        with pytest.raises(ValueError):
            ServiceSpec(**kwargs)


class TestStateInvariants:
    def test_single_node_rejected(self):
        with pytest.raises(ValueError):
            make_state([3.0], [GHZ])

    def test_no_compute_anywhere_rejected(self):
        with pytest.raises(ValueError):
            make_state([3, 0], [0, 0])

    def test_negative_arrivals_rejected(self):
        with pytest.raises(ValueError):
            make_state([-1, 0], [GHZ, GHZ])

    def test_nonzero_cost_diagonal_rejected(self):
        from edgesched.core import SystemStateGraph
        with pytest.raises(ValueError):
            SystemStateGraph(np.array([1.0, 1.0]), np.array([GHZ, GHZ]),
                             np.full((2, 2), 1e10), np.ones((2, 2)), 1e-26, 0.0,
                             ServiceSpec(4e5, 1e5, 20.0))

    def test_arrays_frozen(self):
        state = make_state([3, 0], [GHZ, GHZ])
        with pytest.raises(ValueError):
            state.arrivals[0] = 5


class TestValidateDecision:
    def test_all_local_valid(self):
        state = make_state([3, 0], [GHZ, GHZ])
        report = validate_decision(state, decision([[3, 0], [0, 0]]))
        assert report.ok and not report.violations

    def test_row_conservation_violation(self):
        state = make_state([3, 0], [GHZ, GHZ])
        report = validate_decision(state, decision([[2, 0], [0, 0]]))
        assert not report.ok
        assert not report.row_conservation
        assert report.zero_compute_excluded and report.non_negative

    def test_flow_into_dead_node(self):
        state = make_state([3, 0], [GHZ, 0])
        report = validate_decision(state, decision([[2, 1], [0, 0]]))
        assert not report.ok
        assert not report.zero_compute_excluded
        # row conservation holds for this matrix
        assert report.row_conservation

    def test_negative_entries_reported(self):
        state = make_state([3, 0], [GHZ, GHZ])
        report = validate_decision(state, decision([[4, -1], [0, 0]]))
        assert not report.non_negative and not report.ok

    def test_dimension_mismatch_is_structural(self):
        state = make_state([3, 0, 0], [GHZ, GHZ, GHZ])
        with pytest.raises(DecisionShapeError):
            validate_decision(state, decision([[3, 0], [0, 0]]))

    def test_non_integral_flows_rejected_at_boundary(self):
        with pytest.raises(ValueError):
            SchedulingDecision(np.array([[1.5, 0.5], [0.0, 0.0]]))

    def test_float_integers_accepted(self):
        d = SchedulingDecision(np.array([[3.0, 0.0], [0.0, 0.0]]))
        assert d.flows.dtype == np.int64


class TestSchedulingLatency:
    def test_single_edge(self):
        state = make_state([0, 10, 0], [GHZ] * 3, bandwidth=1e10, request_size=4e5)
        d = decision([[0, 0, 0], [0, 0, 10], [0, 0, 0]])
        assert scheduling_latency(state, d) == pytest.approx(4e-4, rel=1e-9)

    def test_all_local_is_zero(self):
        state = make_state([5, 7], [GHZ, GHZ])
        assert scheduling_latency(state, all_local_decision(state)) == 0.0

    def test_two_edges_add(self):
        state = make_state([10, 10, 0], [GHZ] * 3, bandwidth=1e10, request_size=4e5)
        d = decision([[0, 0, 10], [0, 0, 10], [0, 0, 0]])
        assert scheduling_latency(state, d) == pytest.approx(8e-4, rel=1e-9)


class TestComputationLatency:
    def test_single_busy_node(self):
        state = make_state([30, 0], [3e10, GHZ], cycles=1e5)
        d = decision([[30, 0], [0, 0]])
        assert computation_latency(state, d) == pytest.approx(1e-4, rel=1e-9)

    def test_zero_arrivals(self):
        state = make_state([0, 0], [3e10, GHZ])
        assert computation_latency(state, all_local_decision(state)) == 0.0

    def test_two_busy_nodes_add(self):
        state = make_state([30, 30], [3e10, 3e10], cycles=1e5)
        d = decision([[30, 0], [0, 30]])
        assert computation_latency(state, d) == pytest.approx(2e-4, rel=1e-9)

    def test_flow_into_dead_node_raises(self):
        state = make_state([3, 0], [GHZ, 0])
        with pytest.raises(ValueError):
            computation_latency(state, decision([[2, 1], [0, 0]]))


class TestAverageResponseDelay:
    def test_components_divided_by_total(self):
        # tran = 0.4 s (10 requests on a slow link), comp = 0.45 + 0.15 s
        state = make_state([100, 0], [2e7, 1e6 / 0.15], bandwidth=1e7,
                           request_size=4e5, cycles=1e5)
        d = decision([[90, 10], [0, 0]])
        assert scheduling_latency(state, d) == pytest.approx(0.4, rel=1e-12)
        assert computation_latency(state, d) == pytest.approx(0.6, rel=1e-12)
        assert average_response_delay(state, d) == pytest.approx(0.01, rel=1e-9)

    def test_empty_slot_defined_as_zero(self):
        state = make_state([0, 0], [GHZ, GHZ])
        assert average_response_delay(state, all_local_decision(state)) == 0.0

    def test_all_local_single_busy_node(self):
        state = make_state([30, 0], [3e10, GHZ], cycles=1e5)
        d = all_local_decision(state)
        assert average_response_delay(state, d) == pytest.approx(1e-4 / 30, rel=1e-9)


class TestSchedulingCost:
    def test_single_edge(self):
        state = make_state([0, 10], [GHZ, GHZ], sched_cost=1.0)
        d = decision([[0, 0], [10, 0]])
        assert scheduling_cost(state, d) == pytest.approx(10.0, rel=1e-12)

    def test_all_local_is_zero(self):
        state = make_state([5, 7], [GHZ, GHZ])
        assert scheduling_cost(state, all_local_decision(state)) == 0.0

    def test_asymmetric_edge_costs(self):
        cost = np.array([[0.0, 0.4], [2.4, 0.0]])
        state = make_state([5, 5], [GHZ, GHZ], sched_cost=cost)
        d = decision([[0, 5], [5, 0]])
        assert scheduling_cost(state, d) == pytest.approx(14.0, rel=1e-12)


class TestComputationCost:
    def test_equal_share_quadratic(self):
        state = make_state([20, 0], [2e10, GHZ], cycles=1e5)
        d = decision([[20, 0], [0, 0]])
        assert computation_cost(state, d) == pytest.approx(0.02, rel=1e-9)

    def test_idle_node_free(self):
        state = make_state([20, 0], [2e10, GHZ], cycles=1e5)
        d = decision([[20, 0], [0, 0]])
        only_first = computation_cost(state, d)
        state2 = make_state([20, 5], [2e10, GHZ], cycles=1e5)
        both = computation_cost(state2, decision([[20, 0], [0, 5]]))
        assert both > only_first  # the second node now pays, first unchanged

    def test_doubling_load_halves_node_cost(self):
        state = make_state([20, 0], [2e10, GHZ], cycles=1e5)
        state2 = make_state([40, 0], [2e10, GHZ], cycles=1e5)
        c1 = computation_cost(state, decision([[20, 0], [0, 0]]))
        c2 = computation_cost(state2, decision([[40, 0], [0, 0]]))
        assert c2 == pytest.approx(c1 / 2, rel=1e-9)


class TestTotalCost:
    def test_component_sum(self):
        state = make_state([0, 10], [2e10, GHZ], sched_cost=1.0, cycles=1e5)
        d = decision([[0, 0], [10, 0]])
        assert scheduling_cost(state, d) == pytest.approx(10.0)
        assert total_cost(state, d) == scheduling_cost(state, d) + computation_cost(state, d)

    def test_idle_system_costs_nothing(self):
        state = make_state([0, 0], [GHZ, GHZ])
        assert total_cost(state, all_local_decision(state)) == 0.0

    def test_additivity_on_random_decisions(self, rng):
        for _ in range(100):
            state = random_state(rng, m=4, max_arrivals=6)
            d = random_valid_decision(rng, state)
            assert total_cost(state, d) == scheduling_cost(state, d) + computation_cost(state, d)


class TestInvariants:
    def test_row_conservation_on_random_valid(self, rng):
        for _ in range(50):
            state = random_state(rng, m=4, max_arrivals=5, zero_compute_prob=0.2)
            d = random_valid_decision(rng, state)
            assert validate_decision(state, d).ok

    def test_one_more_cross_request_strictly_increases_tran_terms(self, rng):
        checked = 0
        while checked < 50:
            state = random_state(rng, m=3, max_arrivals=5)
            base = random_valid_decision(rng, state)
            if base.flows[0, 0] == 0:
                continue
            flows = base.flows.copy()
            flows[0, 0] -= 1
            flows[0, 1] += 1
            moved = SchedulingDecision(flows)
            assert scheduling_latency(state, moved) > scheduling_latency(state, base)
            assert scheduling_cost(state, moved) > scheduling_cost(state, base)
            checked += 1

    def test_evaluate_decision_matches_components(self, rng):
        for _ in range(20):
            state = random_state(rng, m=4, max_arrivals=6)
            d = random_valid_decision(rng, state)
            ev = core.evaluate_decision(state, d)
            assert ev.tran_delay == scheduling_latency(state, d)
            assert ev.comp_delay == computation_latency(state, d)
            assert ev.avg_delay == average_response_delay(state, d)
            assert ev.total_cost == total_cost(state, d)
