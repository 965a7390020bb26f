"""Reference schedulers: no-scheduling, load-balanced, K-periodic greedy,
myopic budget-capped, a flat genetic algorithm over full flow matrices, and
an exhaustive oracle for tiny instances.

The genetic scheduler deliberately ignores the source/sink structure; it is
the ablation showing what the role-assignment prior buys."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import core
from .core import SchedulingDecision, SystemStateGraph
from .hierarchical import HsParams, PsoParams, default_mu, run_hh
from .lyapunov import DppConfig
from .rng import rng_for


@dataclass(frozen=True)
class BaselineConfig:
    """Knobs for the reference schedulers."""

    kg_period: int = 10
    ga_population: int = 40
    ga_generations: int | None = None  # None: match the two-stage evaluation budget
    ga_crossover: float = 0.9
    ga_mutation: float = 0.5

    def __post_init__(self):
        if self.kg_period < 1:
            raise ValueError("kg_period must be >= 1")
        if self.ga_population < 1:
            raise ValueError("ga_population must be >= 1")


class OracleLimitError(ValueError):
    """Instance exceeds the exhaustive-enumeration guard."""


def ns_decide(state: SystemStateGraph) -> SchedulingDecision:
    """No scheduling: every node processes its own arrivals. Infeasible when
    a zero-compute node has arrivals; the decision is emitted anyway and the
    run harness flags the slot."""
    return core.all_local_decision(state)


def largest_remainder_round(shares: np.ndarray, total: int) -> np.ndarray:
    """Round non-negative shares to integers preserving their sum; the
    remainder goes to the largest fractional parts, ties to lower index."""
    base = np.floor(shares).astype(np.int64)
    remainder = int(total) - int(base.sum())
    if remainder > 0:
        frac = shares - base
        order = np.lexsort((np.arange(shares.size), -frac))
        base[order[:remainder]] += 1
    return base


def lbs_decide(state: SystemStateGraph, seed: int | None = None) -> SchedulingDecision:
    """Split every node's arrivals across nodes in proportion to their
    compute allocations (deterministic; the seed is accepted for interface
    uniformity only)."""
    m = state.node_count
    weights = state.compute / state.compute.sum()
    flows = np.zeros((m, m), dtype=np.int64)
    for node in range(m):
        n = int(state.arrivals[node])
        if n:
            flows[node] = largest_remainder_round(weights * n, n)
    return SchedulingDecision(flows)


def _local_or_drain(state: SystemStateGraph) -> SchedulingDecision:
    """All-local, except that nodes without compute hand their arrivals to
    the strongest able node."""
    flows = np.diag(state.arrivals.astype(np.int64)).copy()
    dead = state.compute == 0
    if np.any(flows[dead] != 0):
        target = int(np.argmax(state.compute))
        for node in np.nonzero(dead)[0]:
            flows[node, target] += flows[node, node]
            flows[node, node] = 0
    return SchedulingDecision(flows)


def kg_decide(state: SystemStateGraph, slot: int, period: int,
              hs_params: HsParams, pso_params: PsoParams, seed: int) -> SchedulingDecision:
    """K-periodic latency greedy: every `period` slots optimize pure delay
    (backlog zeroed, cost ignored) with the two-stage search; between
    recomputations requests are processed where they arrive. Larger K
    therefore trades response delay for lower scheduling cost, mirroring
    the effect of a smaller V in the online scheme."""
    if slot % period == 0:
        greedy_state = replace(state, queue_backlog=0.0)
        cfg = DppConfig(v_weight=1.0, budget=state.budget)
        return run_hh(greedy_state, cfg, hs_params, pso_params, seed=seed).decision
    return _local_or_drain(state)


def myopic_decide(state: SystemStateGraph, slot: int, past_cost: float,
                  hs_params: HsParams, pso_params: PsoParams, seed: int) -> SchedulingDecision:
    """Minimize the current slot's delay subject to the cumulative budget
    cap (slots elapsed times the per-slot budget minus costs already
    spent); backlog is ignored. When even the chosen decision busts the
    cap, fall back to keeping everything local."""
    remaining = (slot + 1) * state.budget - past_cost
    greedy_state = replace(state, queue_backlog=0.0)
    cfg = DppConfig(v_weight=1.0, budget=state.budget)
    mu = default_mu(cfg.v_weight)
    result = run_hh(greedy_state, cfg, hs_params, pso_params, mu=mu, seed=seed,
                    cap_value=max(remaining, 0.0), cap_weight=1.0 / mu)
    decision = result.decision
    if core.total_cost(state, decision) > remaining:
        local = core.all_local_decision(state)
        if core.validate_decision(state, local).ok:
            return local
    return decision


def _batch_objective(flows: np.ndarray, state: SystemStateGraph, cfg: DppConfig) -> np.ndarray:
    """Drift-plus-penalty score of a stack of candidate flow matrices."""
    size = state.service.request_size_bits
    cycles = state.service.cycles_per_request
    off = flows.copy()
    idx = np.arange(state.node_count)
    off[:, idx, idx] = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        tran_t = np.where(off > 0, off * size / state.bandwidth, 0.0).sum(axis=(1, 2))
    tran_e = (off * state.sched_cost).sum(axis=(1, 2))
    incoming = flows.sum(axis=1).astype(np.float64)
    busy = incoming > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        comp_t = np.where(busy, incoming * cycles / state.compute, 0.0).sum(axis=1)
        comp_e = np.where(busy, state.energy_coeff * state.compute ** 2 * cycles
                          / np.maximum(incoming, 1e-300), 0.0).sum(axis=1)
    total = state.total_arrivals
    avg_delay = (tran_t + comp_t) / total if total > 0 else np.zeros(flows.shape[0])
    cost = tran_e + comp_e
    return cfg.v_weight * avg_delay + state.queue_backlog * (cost - cfg.budget)


def _random_split(rng: np.random.Generator, n: int, usable: np.ndarray) -> np.ndarray:
    probs = usable / usable.sum()
    return rng.multinomial(n, probs)


def sh_decide(state: SystemStateGraph, cfg: DppConfig, baseline: BaselineConfig,
              seed: int, evaluation_budget: int | None = None,
              return_curve: bool = False):
    """Flat genetic search over full flow matrices: random row-splits,
    tournament selection of size two, row-wise uniform crossover, and a
    mutation that moves one request between two columns of a row. Keeps one
    elite per generation."""
    rng = rng_for(seed, "ga")
    m = state.node_count
    pop_size = baseline.ga_population
    usable = (state.compute > 0).astype(np.float64)
    arrivals = state.arrivals.astype(np.int64)

    if baseline.ga_generations is not None:
        generations = baseline.ga_generations
    else:
        budget = evaluation_budget
        if budget is None:
            hs, pso = HsParams(), PsoParams()
            budget = pso.swarm_size * pso.max_iters * (hs.hms + hs.ni)
        generations = max(int(budget) // pop_size - 1, 0)

    pop = np.zeros((pop_size, m, m), dtype=np.int64)
    for k in range(pop_size):
        for node in range(m):
            if arrivals[node]:
                pop[k, node] = _random_split(rng, int(arrivals[node]), usable)
    fitness = _batch_objective(pop, state, cfg)
    curve = [float(fitness.min())]

    for _ in range(generations):
        elite = int(np.argmin(fitness))
        children = np.empty_like(pop)
        children[0] = pop[elite]
        for k in range(1, pop_size):
            a, b = rng.integers(0, pop_size, 2)
            pa = a if fitness[a] <= fitness[b] else b
            a, b = rng.integers(0, pop_size, 2)
            pb = a if fitness[a] <= fitness[b] else b
            child = pop[pa].copy()
            if rng.random() < baseline.ga_crossover:
                take_b = rng.random(m) < 0.5
                child[take_b] = pop[pb][take_b]
            if rng.random() < baseline.ga_mutation:
                rows = np.nonzero((arrivals > 0))[0]
                if rows.size:
                    row = rows[rng.integers(rows.size)]
                    loaded = np.nonzero(child[row] > 0)[0]
                    targets = np.nonzero(usable)[0]
                    if loaded.size and targets.size:
                        src = loaded[rng.integers(loaded.size)]
                        dst = targets[rng.integers(targets.size)]
                        child[row, src] -= 1
                        child[row, dst] += 1
            children[k] = child
        pop = children
        fitness = _batch_objective(pop, state, cfg)
        curve.append(float(fitness.min()))

    best = int(np.argmin(fitness))
    if return_curve:
        return SchedulingDecision(pop[best]), float(fitness[best]), curve
    return SchedulingDecision(pop[best]), float(fitness[best])


ORACLE_MAX_NODES = 3
ORACLE_MAX_ARRIVALS = 12


def _compositions(total: int, slots: int):
    """All ways to split `total` into `slots` ordered non-negative parts,
    in lexicographic order."""
    if slots == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, slots - 1):
            yield (first,) + rest


def oracle_decide(state: SystemStateGraph, cfg: DppConfig) -> tuple[SchedulingDecision, float]:
    """Exact minimizer by exhaustive enumeration of every valid integer flow
    matrix; ties fall to the lexicographically smallest matrix. Guarded to
    tiny instances."""
    m = state.node_count
    total = state.total_arrivals
    if m > ORACLE_MAX_NODES or total > ORACLE_MAX_ARRIVALS:
        raise OracleLimitError(
            f"oracle handles at most {ORACLE_MAX_NODES} nodes and "
            f"{ORACLE_MAX_ARRIVALS} total arrivals (got {m}, {total})")
    allowed = np.nonzero(state.compute > 0)[0]
    row_options = []
    for node in range(m):
        n = int(state.arrivals[node])
        options = []
        for parts in _compositions(n, allowed.size):
            row = np.zeros(m, dtype=np.int64)
            row[allowed] = parts
            options.append(row)
        row_options.append(options)

    best_flows = None
    best_score = np.inf
    chunk, buffer = 2048, []

    def flush():
        nonlocal best_flows, best_score
        if not buffer:
            return
        batch = np.stack(buffer)
        scores = _batch_objective(batch, state, cfg)
        k = int(np.argmin(scores))
        if scores[k] < best_score:
            best_score = float(scores[k])
            best_flows = batch[k].copy()
        buffer.clear()

    for rows in itertools.product(*row_options):
        buffer.append(np.stack(rows))
        if len(buffer) >= chunk:
            flush()
    flush()
    return SchedulingDecision(best_flows), best_score
