"""Shared builders for the test suite."""

import numpy as np
import pytest

from edgesched.core import SchedulingDecision, ServiceSpec, SystemStateGraph

GHZ = 1e9
GBPS = 1e9


def make_state(arrivals, compute, *, bandwidth=10 * GBPS, sched_cost=1.0,
               request_size=4e5, cycles=1e5, budget=20.0, queue=0.0,
               energy_coeff=1e-26) -> SystemStateGraph:
    """State with uniform link attributes unless full matrices are given."""
    arrivals = np.asarray(arrivals, dtype=float)
    m = arrivals.shape[0]
    if np.isscalar(bandwidth) or np.ndim(bandwidth) == 0:
        bw = np.full((m, m), float(bandwidth))
    else:
        bw = np.array(bandwidth, dtype=float)
    np.fill_diagonal(bw, 0.0)
    if np.isscalar(sched_cost) or np.ndim(sched_cost) == 0:
        ec = np.full((m, m), float(sched_cost))
    else:
        ec = np.array(sched_cost, dtype=float)
    np.fill_diagonal(ec, 0.0)
    return SystemStateGraph(arrivals, np.asarray(compute, dtype=float), bw, ec,
                            energy_coeff, queue,
                            ServiceSpec(request_size, cycles, budget))


def random_state(rng, m=3, max_arrivals=4, zero_compute_prob=0.0, queue_max=0.0,
                 budget=20.0) -> SystemStateGraph:
    """Random instance in the stock parameter ranges."""
    while True:
        compute = rng.uniform(10 * GHZ, 60 * GHZ, m)
        dead = rng.random(m) < zero_compute_prob
        compute[dead] = 0.0
        if np.any(compute > 0):
            break
    arrivals = rng.integers(0, max_arrivals + 1, m).astype(float)
    bw = rng.uniform(10 * GBPS, 100 * GBPS, (m, m))
    cost = rng.uniform(0.4, 2.4, (m, m))
    queue = float(rng.uniform(0.0, queue_max)) if queue_max > 0 else 0.0
    return make_state(arrivals, compute, bandwidth=bw, sched_cost=cost,
                      request_size=float(rng.uniform(2e5, 5e5)),
                      cycles=float(rng.uniform(5e4, 5e5)), budget=budget, queue=queue)


def random_valid_decision(rng, state) -> SchedulingDecision:
    """Random row splits over nodes that can compute."""
    m = state.node_count
    allowed = np.nonzero(state.compute > 0)[0]
    flows = np.zeros((m, m), dtype=np.int64)
    probs = np.full(allowed.size, 1.0 / allowed.size)
    for node in range(m):
        n = int(state.arrivals[node])
        if n:
            flows[node, allowed] = rng.multinomial(n, probs)
    return SchedulingDecision(flows)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
