"""Compiled inner loops for the flow optimizers.

The harmony-search kernel consumes pre-generated uniform streams instead of
drawing inside compiled code: the same streams replayed through the pure
Python twin in the test suite must produce bit-identical trajectories, and
results stay reproducible across compiler versions.

Candidate vectors live in continuous space but are scored on the integer
lattice (round half down), so kernel scores are directly comparable with
exact enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import SystemStateGraph
from .structure import SINK, SOURCE, CategoryAssignment


@dataclass(frozen=True)
class FlowProblem:
    """Flattened (state, role assignment, objective) bundle for the kernels.

    One entry per (source, sink) pair, row-major by source then sink index.
    `cap_value`/`cap_weight` optionally add a soft cap on total slot cost,
    used by budget-capped schedulers; infinity disables it.
    """

    pair_source: np.ndarray   # int64[D]
    pair_sink: np.ndarray     # int64[D]
    tran_delay: np.ndarray    # float64[D], seconds per request on the pair
    tran_cost: np.ndarray     # float64[D], joules per request on the pair
    arrivals: np.ndarray      # float64[M]
    compute: np.ndarray       # float64[M]
    energy_coeff: np.ndarray  # float64[M]
    is_source: np.ndarray     # bool[M]
    is_sink: np.ndarray       # bool[M]
    cycles: float
    v_weight: float
    queue_backlog: float
    budget: float
    inv_mu: float
    cap_value: float
    cap_weight: float
    total_arrivals: float
    base_delay: float         # computation delay of isolated nodes (fixed)
    base_cost: float          # computation cost of isolated nodes (fixed)
    upper_bounds: np.ndarray  # float64[D], per-pair flow ceiling (source arrivals)

    def __post_init__(self):
        object.__setattr__(self, "_args", (
            self.pair_source, self.pair_sink, self.tran_delay, self.tran_cost,
            self.arrivals, self.compute, self.energy_coeff, self.is_source,
            self.is_sink, self.cycles, self.v_weight, self.queue_backlog,
            self.budget, self.inv_mu, self.cap_value, self.cap_weight,
            self.total_arrivals, self.base_delay, self.base_cost))

    def args(self) -> tuple:
        return self._args


def build_flow_problem(state: SystemStateGraph, cat: CategoryAssignment,
                       v_weight: float, budget: float, mu: float,
                       cap_value: float = np.inf, cap_weight: float = 0.0) -> FlowProblem:
    if mu <= 0:
        raise ValueError("penalty scale mu must be positive")
    labels = cat.labels
    sources = np.nonzero(labels == SOURCE)[0]
    sinks = np.nonzero(labels == SINK)[0]
    pair_source = np.repeat(sources, sinks.size).astype(np.int64)
    pair_sink = np.tile(sinks, sources.size).astype(np.int64)
    size = state.service.request_size_bits
    tran_delay = size / state.bandwidth[pair_source, pair_sink] if pair_source.size else np.zeros(0)
    tran_cost = state.sched_cost[pair_source, pair_sink] if pair_source.size else np.zeros(0)

    arrivals = np.asarray(state.arrivals, dtype=np.float64)
    cycles = state.service.cycles_per_request
    iso = labels == 2
    busy_iso = iso & (arrivals > 0)
    base_delay = float((arrivals[busy_iso] * cycles / state.compute[busy_iso]).sum())
    base_cost = float((state.energy_coeff[busy_iso] * state.compute[busy_iso] ** 2
                       * cycles / arrivals[busy_iso]).sum())
    return FlowProblem(
        pair_source, pair_sink, np.ascontiguousarray(tran_delay),
        np.ascontiguousarray(tran_cost), arrivals,
        np.asarray(state.compute, dtype=np.float64),
        np.asarray(state.energy_coeff, dtype=np.float64),
        labels == SOURCE, labels == SINK, cycles, v_weight,
        float(state.queue_backlog), budget, 1.0 / mu, cap_value, cap_weight,
        float(arrivals.sum()), base_delay, base_cost,
        arrivals[pair_source] if pair_source.size else np.zeros(0))


def round_half_down(x: np.ndarray) -> np.ndarray:
    """Nearest integer, ties resolved downward (0.5 -> 0)."""
    return np.ceil(np.asarray(x) - 0.5).astype(np.int64)


@njit(cache=True)
def _flow_objective(x, pair_source, pair_sink, tran_delay_pp, tran_cost_pp,
                    arrivals, compute, energy_coeff, is_source, is_sink, cycles,
                    v_weight, queue_backlog, budget, inv_mu, cap_value, cap_weight,
                    total_arrivals, base_delay, base_cost):
    m = arrivals.shape[0]
    d = x.shape[0]
    tran_t = 0.0
    tran_e = 0.0
    incoming = np.zeros(m)
    outflow = np.zeros(m)
    for i in range(d):
        xi = np.ceil(x[i] - 0.5)  # score on the integer lattice
        if xi < 0.0:
            xi = 0.0
        tran_t += xi * tran_delay_pp[i]
        tran_e += xi * tran_cost_pp[i]
        incoming[pair_sink[i]] += xi
        outflow[pair_source[i]] += xi
    comp_t = base_delay
    comp_e = base_cost
    penalty = 0.0
    for node in range(m):
        if is_sink[node]:
            load = incoming[node] + arrivals[node]
            if load > 0.0:
                comp_t += load * cycles / compute[node]
                comp_e += energy_coeff[node] * compute[node] * compute[node] * cycles / load
        elif is_source[node]:
            gap = outflow[node] - arrivals[node]
            if compute[node] > 0.0:
                if gap > 0.0:
                    penalty += gap
                    local = 0.0
                else:
                    local = -gap
                if local > 0.0:
                    comp_t += local * cycles / compute[node]
                    comp_e += energy_coeff[node] * compute[node] * compute[node] * cycles / local
            else:
                penalty += abs(gap)
    avg_delay = (tran_t + comp_t) / total_arrivals if total_arrivals > 0.0 else 0.0
    cost = tran_e + comp_e
    value = v_weight * avg_delay + queue_backlog * (cost - budget) + inv_mu * penalty
    if cap_weight > 0.0 and cost > cap_value:
        value += cap_weight * (cost - cap_value)
    return value


def flow_objective(x: np.ndarray, problem: FlowProblem) -> float:
    """Penalized score of a candidate pair-flow vector (rounds internally)."""
    return float(_flow_objective(np.asarray(x, dtype=np.float64), *problem.args()))


@njit(cache=True)
def _hs_search(init_u, iter_u, hmcr, par, sw, upper_bounds,
               pair_source, pair_sink, tran_delay_pp, tran_cost_pp,
               arrivals, compute, energy_coeff, is_source, is_sink, cycles,
               v_weight, queue_backlog, budget, inv_mu, cap_value, cap_weight,
               total_arrivals, base_delay, base_cost):
    hms = init_u.shape[0]
    d = upper_bounds.shape[0]
    ni = iter_u.shape[0]
    memory = np.empty((hms, d))
    scores = np.empty(hms)
    for j in range(hms):
        for i in range(d):
            memory[j, i] = init_u[j, i] * upper_bounds[i]
        scores[j] = _flow_objective(
            memory[j], pair_source, pair_sink, tran_delay_pp, tran_cost_pp,
            arrivals, compute, energy_coeff, is_source, is_sink, cycles,
            v_weight, queue_backlog, budget, inv_mu, cap_value, cap_weight,
            total_arrivals, base_delay, base_cost)
    best = int(np.argmin(scores))
    worst = int(np.argmax(scores))
    init_best = scores[best]
    candidate = np.empty(d)
    for it in range(ni):
        for i in range(d):
            if iter_u[it, i, 0] < hmcr:
                row = int(iter_u[it, i, 1] * hms)
                if row >= hms:
                    row = hms - 1
                candidate[i] = memory[row, i]
            else:
                candidate[i] = iter_u[it, i, 2] * upper_bounds[i]
            if iter_u[it, i, 3] < par:
                candidate[i] += (2.0 * iter_u[it, i, 4] - 1.0) * sw
                if candidate[i] < 0.0:
                    candidate[i] = 0.0
                elif candidate[i] > upper_bounds[i]:
                    candidate[i] = upper_bounds[i]
        score = _flow_objective(
            candidate, pair_source, pair_sink, tran_delay_pp, tran_cost_pp,
            arrivals, compute, energy_coeff, is_source, is_sink, cycles,
            v_weight, queue_backlog, budget, inv_mu, cap_value, cap_weight,
            total_arrivals, base_delay, base_cost)
        if score < scores[worst]:
            for i in range(d):
                memory[worst, i] = candidate[i]
            scores[worst] = score
            if score < scores[best]:
                best = worst
            worst = int(np.argmax(scores))
    return memory[best].copy(), scores[best], init_best


def hs_search(init_u: np.ndarray, iter_u: np.ndarray, hmcr: float, par: float,
              sw: float, problem: FlowProblem) -> tuple[np.ndarray, float, float]:
    """Run the harmony-search improvisation loop on pre-generated uniform
    streams; returns (best vector, best score, best score at init)."""
    return _hs_search(init_u, iter_u, hmcr, par, sw, problem.upper_bounds, *problem.args())
