"""Two-stage metaheuristic scheduler.

The outer stage is a discrete particle swarm over node-role assignments
(source / sink / isolated); the inner stage is a harmony search over the
amount of flow on every (source, sink) pair, followed by rounding and an
exact-marginal greedy repair back to feasibility. Role assignments are kept
feasible at all times, so every decision this module emits carries the
source/sink DAG shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import SchedulingDecision, SystemStateGraph
from .kernels import FlowProblem, build_flow_problem, flow_objective, hs_search, round_half_down
from .lyapunov import DppConfig
from .rng import child_seed, rng_for
from .structure import (SINK, SOURCE, CategoryAssignment, InfeasibleAssignmentError,
                        labels_feasible, repair_labels)


@dataclass(frozen=True)
class HsParams:
    """Harmony-search knobs. `sw` is the pitch step width in requests; None
    scales it to a tenth of the mean source arrivals (at least one)."""

    hms: int = 20
    ni: int = 200
    hmcr: float = 0.9
    par: float = 0.3
    sw: float | None = None

    def __post_init__(self):
        if self.hms < 2:
            raise ValueError("hms must be >= 2")
        if self.ni < 1:
            raise ValueError("ni must be >= 1")
        if not (0 <= self.hmcr <= 1 and 0 <= self.par <= 1):
            raise ValueError("hmcr and par must lie in [0, 1]")
        if self.sw is not None and not self.sw > 0:
            raise ValueError("sw must be positive")


@dataclass(frozen=True)
class PsoParams:
    swarm_size: int = 20
    max_iters: int = 30
    inertia: float = 0.4
    c1: float = 0.3
    c2: float = 0.3
    velocity_clamp: float = 6.0

    def __post_init__(self):
        if self.swarm_size < 1 or self.max_iters < 1:
            raise ValueError("swarm_size and max_iters must be >= 1")
        if min(self.inertia, self.c1, self.c2) < 0:
            raise ValueError("inertia, c1, c2 must be non-negative")
        if abs(self.inertia + self.c1 + self.c2 - 1.0) > 1e-9:
            raise ValueError("inertia + c1 + c2 must equal 1")


@dataclass(frozen=True)
class Harmony:
    """One memory row: continuous pair flows plus its penalized score."""

    flows_continuous: np.ndarray
    objective_value: float


@dataclass
class Particle:
    position: CategoryAssignment
    velocity: np.ndarray
    personal_best: CategoryAssignment
    personal_best_objective: float = math.inf


def default_mu(v_weight: float) -> float:
    """Penalty scale keeping constraint violations dominant over the
    delay/cost score at any V in the sweep range (score grows ~V)."""
    return 1e-6 / max(v_weight, 1.0)


def auto_step_width(state: SystemStateGraph, cat: CategoryAssignment) -> float:
    sources = cat.sources
    if sources.size == 0:
        return 1.0
    return max(1.0, math.ceil(float(state.arrivals[sources].mean()) / 10.0))


def penalized_objective(state: SystemStateGraph, cat: CategoryAssignment,
                        flows, cfg: DppConfig, mu: float,
                        cap_value: float = np.inf, cap_weight: float = 0.0) -> float:
    """Score of a candidate pair-flow vector: the drift-plus-penalty value of
    the induced (rounded) decision plus 1/mu times the outflow violations
    (overshoot for able sources, absolute mismatch for zero-compute ones)."""
    if isinstance(flows, Harmony):
        flows = flows.flows_continuous
    problem = build_flow_problem(state, cat, cfg.v_weight, cfg.budget, mu,
                                 cap_value, cap_weight)
    flows = np.asarray(flows, dtype=np.float64)
    if flows.shape != problem.pair_source.shape:
        raise ValueError("flows length must equal |sources| * |sinks|")
    return flow_objective(flows, problem)


def decision_from_pair_flows(state: SystemStateGraph, cat: CategoryAssignment,
                             pair_flows: np.ndarray) -> SchedulingDecision:
    """Materialize the M x M decision: sources route their pair flows and
    keep any remainder locally iff they can compute; everyone else is
    fully local."""
    m = state.node_count
    labels = cat.labels
    flows = np.zeros((m, m), dtype=np.int64)
    arrivals = state.arrivals.astype(np.int64)
    for node in range(m):
        if labels[node] != SOURCE:
            flows[node, node] = arrivals[node]
    sources = cat.sources
    sinks = cat.sinks
    pair_flows = np.asarray(pair_flows, dtype=np.int64).reshape(sources.size, sinks.size)
    for si, p in enumerate(sources):
        flows[p, sinks] = pair_flows[si]
        if state.compute[p] > 0:
            flows[p, p] = max(int(arrivals[p]) - int(pair_flows[si].sum()), 0)
    return SchedulingDecision(flows)


class _RepairState:
    """Incremental bookkeeping for the greedy repair: per-sink load, per-source
    local remainder, and the running total cost (for the optional cost cap)."""

    def __init__(self, problem: FlowProblem, x: np.ndarray):
        self.pb = problem
        self.x = x.astype(np.int64)
        m = problem.arrivals.shape[0]
        self.outflow = np.zeros(m)
        self.load = problem.arrivals * problem.is_sink  # sinks keep their own arrivals
        np.add.at(self.outflow, problem.pair_source, self.x)
        np.add.at(self.load, problem.pair_sink, self.x)
        self.local = np.where(problem.is_source & (problem.compute > 0),
                              np.maximum(problem.arrivals - self.outflow, 0.0), 0.0)
        self.cost = self._total_cost()

    def _node_cost(self, node: int, load: float) -> float:
        if load <= 0:
            return 0.0
        pb = self.pb
        return pb.energy_coeff[node] * pb.compute[node] ** 2 * pb.cycles / load

    def _total_cost(self) -> float:
        pb = self.pb
        cost = pb.base_cost + float((self.x * pb.tran_cost).sum())
        for node in range(pb.arrivals.shape[0]):
            if pb.is_sink[node]:
                cost += self._node_cost(node, self.load[node])
            elif pb.is_source[node] and pb.compute[node] > 0:
                cost += self._node_cost(node, self.local[node])
        return cost

    def _value_delta(self, d_delay: float, d_cost: float) -> float:
        pb = self.pb
        value = pb.v_weight * d_delay / pb.total_arrivals + pb.queue_backlog * d_cost
        if pb.cap_weight > 0:
            before = max(self.cost - pb.cap_value, 0.0)
            after = max(self.cost + d_cost - pb.cap_value, 0.0)
            value += pb.cap_weight * (after - before)
        return value

    def delta_add(self, i: int) -> tuple[float, float, float]:
        pb = self.pb
        q = pb.pair_sink[i]
        d_delay = pb.tran_delay[i] + pb.cycles / pb.compute[q]
        d_cost = pb.tran_cost[i] + self._node_cost(q, self.load[q] + 1) - self._node_cost(q, self.load[q])
        return self._value_delta(d_delay, d_cost), d_delay, d_cost

    def delta_remove(self, i: int) -> tuple[float, float, float]:
        pb = self.pb
        p, q = pb.pair_source[i], pb.pair_sink[i]
        d_delay = -pb.tran_delay[i] - pb.cycles / pb.compute[q]
        d_cost = -pb.tran_cost[i] + self._node_cost(q, self.load[q] - 1) - self._node_cost(q, self.load[q])
        if pb.compute[p] > 0:
            d_delay += pb.cycles / pb.compute[p]
            d_cost += self._node_cost(p, self.local[p] + 1) - self._node_cost(p, self.local[p])
        return self._value_delta(d_delay, d_cost), d_delay, d_cost

    def apply(self, i: int, step: int, d_cost: float):
        pb = self.pb
        self.x[i] += step
        self.outflow[pb.pair_source[i]] += step
        self.load[pb.pair_sink[i]] += step
        if pb.compute[pb.pair_source[i]] > 0:
            self.local[pb.pair_source[i]] -= step
        self.cost += d_cost


def repair_flows(state: SystemStateGraph, cat: CategoryAssignment,
                 rounded_flows: np.ndarray, cfg: DppConfig, mu: float | None = None,
                 cap_value: float = np.inf, cap_weight: float = 0.0) -> SchedulingDecision:
    """Patch a rounded pair-flow vector into a feasible decision: bring each
    zero-compute source's outflow to exactly its arrivals and clip every
    able source's outflow to at most its arrivals, moving one request at a
    time along the pair with the smallest exact objective change (ties to
    the lowest sink index)."""
    problem = build_flow_problem(state, cat, cfg.v_weight, cfg.budget,
                                 mu if mu is not None else default_mu(cfg.v_weight),
                                 cap_value, cap_weight)
    repaired = repair_pair_flows(problem, np.asarray(rounded_flows, dtype=np.int64))
    return decision_from_pair_flows(state, cat, repaired)


def _flows_feasible(problem: FlowProblem, x: np.ndarray) -> bool:
    outflow = np.zeros(problem.arrivals.shape[0])
    np.add.at(outflow, problem.pair_source, x)
    src = problem.is_source
    able = src & (problem.compute > 0)
    dead = src & ~able
    return (bool(np.all(outflow[able] <= problem.arrivals[able]))
            and bool(np.all(outflow[dead] == problem.arrivals[dead])))


def repair_pair_flows(problem: FlowProblem, x: np.ndarray) -> np.ndarray:
    if np.any(x < 0):
        raise ValueError("rounded flows must be non-negative")
    if _flows_feasible(problem, x):
        return x.astype(np.int64)
    bk = _RepairState(problem, x)
    sources = np.unique(problem.pair_source)
    for p in sources:
        pairs = np.nonzero(problem.pair_source == p)[0]
        arr = problem.arrivals[p]
        if problem.compute[p] == 0:
            while bk.outflow[p] < arr:
                best = None
                for i in pairs:
                    delta, _, d_cost = bk.delta_add(i)
                    if best is None or delta < best[0]:
                        best = (delta, i, d_cost)
                bk.apply(best[1], +1, best[2])
            while bk.outflow[p] > arr:
                best = None
                for i in pairs:
                    if bk.x[i] <= 0:
                        continue
                    delta, _, d_cost = bk.delta_remove(i)
                    if best is None or delta < best[0]:
                        best = (delta, i, d_cost)
                bk.apply(best[1], -1, best[2])
        else:
            while bk.outflow[p] > arr:
                best = None
                for i in pairs:
                    if bk.x[i] <= 0:
                        continue
                    delta, _, d_cost = bk.delta_remove(i)
                    if best is None or delta < best[0]:
                        best = (delta, i, d_cost)
                bk.apply(best[1], -1, best[2])
    return bk.x


@dataclass(frozen=True)
class HsSearchResult:
    """(decision, score) plus search diagnostics; iterable for the pair."""

    decision: SchedulingDecision
    score: float
    init_score: float
    search_score: float
    evaluations: int

    def __iter__(self):
        yield self.decision
        yield self.score


def _hs_core(state: SystemStateGraph, cat: CategoryAssignment, cfg: DppConfig,
             params: HsParams, mu: float | None, seed: int,
             cap_value: float, cap_weight: float, problem_cache: dict | None = None):
    """Search + round + repair, returning the repaired pair flows without
    materializing the decision matrix (the hot path of the outer swarm)."""
    key = cat.labels.tobytes() if problem_cache is not None else None
    cached = problem_cache.get(key) if problem_cache is not None else None
    if cached is None:
        if not labels_feasible(cat.labels, state.compute):
            raise InfeasibleAssignmentError("role assignment violates feasibility rules")
        if mu is None:
            mu = default_mu(cfg.v_weight)
        problem = build_flow_problem(state, cat, cfg.v_weight, cfg.budget, mu,
                                     cap_value, cap_weight)
        sw = params.sw if params.sw is not None else auto_step_width(state, cat)
        if problem_cache is not None:
            problem_cache[key] = (problem, sw)
    else:
        problem, sw = cached
    d = problem.pair_source.size
    if d == 0:
        score = flow_objective(np.zeros(0), problem)
        return None, score, score, score, 1

    rng = np.random.default_rng(seed)
    init_u = rng.random((params.hms, d))
    iter_u = rng.random((params.ni, d, 5))
    best, search_score, init_score = hs_search(init_u, iter_u, params.hmcr,
                                               params.par, sw, problem)
    repaired = repair_pair_flows(problem, round_half_down(best))
    score = flow_objective(repaired.astype(np.float64), problem)
    return repaired, score, init_score, search_score, params.hms + params.ni


def harmony_search(state: SystemStateGraph, cat: CategoryAssignment, cfg: DppConfig,
                   params: HsParams = HsParams(), mu: float | None = None, seed: int = 0,
                   cap_value: float = np.inf, cap_weight: float = 0.0) -> HsSearchResult:
    """Optimize the flow amounts for a fixed role assignment: improvise in
    continuous space with memory consideration and pitch adjustment, score
    candidates on the integer lattice, then round the best harmony and
    repair it to feasibility."""
    repaired, score, init_score, search_score, evals = _hs_core(
        state, cat, cfg, params, mu, seed, cap_value, cap_weight)
    if repaired is None:
        decision = core.all_local_decision(state)
    else:
        decision = decision_from_pair_flows(state, cat, repaired)
    return HsSearchResult(decision, score, init_score, search_score, evals)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-v))


def pso_velocity_update(particle: Particle, global_best: CategoryAssignment,
                        params: PsoParams, rng: np.random.Generator) -> np.ndarray:
    """Inertia plus cognitive/social pulls on the label values, clamped to
    keep the flip sigmoid away from saturation."""
    x = particle.position.labels.astype(np.float64)
    pb = particle.personal_best.labels.astype(np.float64)
    gb = global_best.labels.astype(np.float64)
    r1 = rng.random(x.shape[0])
    r2 = rng.random(x.shape[0])
    v = params.inertia * particle.velocity + params.c1 * r1 * (pb - x) + params.c2 * r2 * (gb - x)
    return np.clip(v, -params.velocity_clamp, params.velocity_clamp)


_POSITION_ATTEMPTS = 100


def pso_position_update(particle: Particle, params: PsoParams,
                        rng: np.random.Generator, compute: np.ndarray) -> CategoryAssignment:
    """Per dimension, flip to one of the two other labels with probability
    sigmoid(velocity). Re-draw while the result violates the feasibility
    rules; after 100 attempts fall back to the deterministic repair."""
    flip_prob = _sigmoid(particle.velocity)
    m = flip_prob.shape[0]
    current = particle.position.labels
    labels = current.copy()
    for _ in range(_POSITION_ATTEMPTS):
        flips = rng.random(m) < flip_prob
        offsets = rng.integers(1, 3, size=m)  # +1 or +2 mod 3 picks one of the other labels
        labels = np.where(flips, (current + offsets) % 3, current).astype(np.int8)
        if labels_feasible(labels, compute):
            return CategoryAssignment(labels)
    return CategoryAssignment(repair_labels(labels, compute))


@dataclass(frozen=True)
class HhResult:
    decision: SchedulingDecision
    objective: float
    labels: CategoryAssignment
    gbest_curve: tuple[float, ...]
    evaluations: int


def run_hh(state: SystemStateGraph, cfg: DppConfig,
           hs_params: HsParams = HsParams(), pso_params: PsoParams = PsoParams(),
           mu: float | None = None, seed: int = 0,
           cap_value: float = np.inf, cap_weight: float = 0.0) -> HhResult:
    """Full two-stage search. The swarm explores role assignments; each
    particle's fitness is the harmony-search score of its assignment, from
    a sub-seed fixed by (seed, iteration, particle) so evaluations may run
    in any order without changing the result."""
    if not np.any(state.compute > 0):
        raise InfeasibleAssignmentError("every node has zero compute capacity")
    if mu is None:
        mu = default_mu(cfg.v_weight)
    m = state.node_count
    swarm_rng = rng_for(seed, "pso")
    particles = []
    for _ in range(pso_params.swarm_size):
        labels = repair_labels(swarm_rng.integers(0, 3, size=m, dtype=np.int8), state.compute)
        position = CategoryAssignment(labels)
        particles.append(Particle(position, swarm_rng.uniform(-1.0, 1.0, m), position))

    gbest_objective = math.inf
    gbest_labels: CategoryAssignment | None = None
    gbest_flows: np.ndarray | None = None
    curve = []
    evaluations = 0
    shape = (pso_params.max_iters, pso_params.swarm_size)
    hs_seeds = rng_for(seed, "hs").integers(0, 2 ** 63, size=shape)
    pos_seeds = rng_for(seed, "pos").integers(0, 2 ** 63, size=shape)
    problem_cache: dict = {}
    for it in range(pso_params.max_iters):
        results = [_hs_core(state, p.position, cfg, hs_params, mu,
                            int(hs_seeds[it, i]), cap_value, cap_weight, problem_cache)
                   for i, p in enumerate(particles)]
        evaluations += sum(r[4] for r in results)
        gbest_for_update = []
        for particle, (flows, score, *_rest) in zip(particles, results):
            if score < particle.personal_best_objective:
                particle.personal_best = particle.position
                particle.personal_best_objective = score
            if score < gbest_objective:
                gbest_objective = score
                gbest_labels = particle.position
                gbest_flows = flows
            gbest_for_update.append(gbest_labels)
        for i, particle in enumerate(particles):
            particle.velocity = pso_velocity_update(particle, gbest_for_update[i],
                                                    pso_params, swarm_rng)
            particle.position = pso_position_update(particle, pso_params,
                                                    np.random.default_rng(int(pos_seeds[it, i])),
                                                    state.compute)
        curve.append(gbest_objective)
    if gbest_flows is None:
        gbest_decision = core.all_local_decision(state)
    else:
        gbest_decision = decision_from_pair_flows(state, gbest_labels, gbest_flows)
    return HhResult(gbest_decision, gbest_objective, gbest_labels, tuple(curve), evaluations)


def hh_decide(state: SystemStateGraph, cfg: DppConfig,
              hs_params: HsParams = HsParams(), pso_params: PsoParams = PsoParams(),
              mu: float | None = None, seed: int = 0) -> SchedulingDecision:
    return run_hh(state, cfg, hs_params, pso_params, mu, seed).decision
