"""Domain types and per-slot latency/cost arithmetic.

All quantities are SI base units internally (bits, Hz, seconds, joules);
scenario files may use GHz/Gbps/Kbits and are converted on load.

A scheduling decision is an M x M matrix of request counts: row m holds the
requests that arrived at access point m, column m' names the edge server
that processes them. The AP and its co-located server are wired directly,
so diagonal transfers are free and never enter the transmission sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DecisionShapeError(ValueError):
    """Decision matrix dimensions do not match the system graph."""


def frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ServiceSpec:
    """Immutable per-service constants."""

    request_size_bits: float
    cycles_per_request: float
    cost_budget_per_slot: float

    def __post_init__(self):
        for name in ("request_size_bits", "cycles_per_request", "cost_budget_per_slot"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class SystemStateGraph:
    """Snapshot of the system at one slot: per-node load/capacity, per-pair
    link attributes, and the two globals (queue backlog, cost budget).

    arrivals     requests arriving per node this slot
    compute      Hz allocated per node (0 means the node cannot process)
    bandwidth    bits/s for each ordered node pair; the diagonal is ignored
    sched_cost   joules per request for each ordered pair; zero diagonal
    energy_coeff joule*s^2/cycle^3 per node
    """

    arrivals: np.ndarray
    compute: np.ndarray
    bandwidth: np.ndarray
    sched_cost: np.ndarray
    energy_coeff: np.ndarray
    queue_backlog: float
    service: ServiceSpec

    def __post_init__(self):
        object.__setattr__(self, "arrivals", frozen_array(self.arrivals))
        object.__setattr__(self, "compute", frozen_array(self.compute))
        object.__setattr__(self, "bandwidth", frozen_array(self.bandwidth))
        object.__setattr__(self, "sched_cost", frozen_array(self.sched_cost))
        m = self.arrivals.shape[0]
        coeff = np.broadcast_to(np.asarray(self.energy_coeff, dtype=np.float64), (m,))
        object.__setattr__(self, "energy_coeff", frozen_array(coeff))
        self._check(m)

    def _check(self, m: int):
        if m < 2:
            raise ValueError("need at least two nodes")
        for name in ("compute",):
            if getattr(self, name).shape != (m,):
                raise ValueError(f"{name} must have shape ({m},)")
        for name in ("bandwidth", "sched_cost"):
            if getattr(self, name).shape != (m, m):
                raise ValueError(f"{name} must have shape ({m}, {m})")
        if np.any(self.arrivals < 0) or np.any(self.compute < 0):
            raise ValueError("arrivals and compute must be non-negative")
        if not np.any(self.compute > 0):
            raise ValueError("at least one node must have compute capacity")
        off = ~np.eye(m, dtype=bool)
        if np.any(self.bandwidth[off] <= 0):
            raise ValueError("off-diagonal bandwidth must be positive")
        if np.any(self.sched_cost < 0) or np.any(np.diag(self.sched_cost) != 0):
            raise ValueError("sched_cost must be non-negative with a zero diagonal")
        if self.queue_backlog < 0:
            raise ValueError("queue backlog must be non-negative")

    @property
    def node_count(self) -> int:
        return self.arrivals.shape[0]

    @property
    def budget(self) -> float:
        return self.service.cost_budget_per_slot

    @property
    def total_arrivals(self) -> int:
        return int(self.arrivals.sum())


@dataclass(frozen=True)
class SchedulingDecision:
    """M x M non-negative integer request-flow matrix. Integrality is
    enforced here; the remaining constraints are checked by
    validate_decision so that violations can be reported individually."""

    flows: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.flows)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DecisionShapeError(f"flows must be a square matrix, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            rounded = np.rint(arr)
            if not np.allclose(arr, rounded, rtol=0, atol=1e-9):
                raise ValueError("flows must be integral")
            arr = rounded
        object.__setattr__(self, "flows", frozen_array(arr, dtype=np.int64))

    @property
    def node_count(self) -> int:
        return self.flows.shape[0]

    def cross_flows(self) -> np.ndarray:
        off = self.flows.copy()
        np.fill_diagonal(off, 0)
        return off


@dataclass(frozen=True)
class ValidityReport:
    """Per-constraint outcome of validating a decision against a state."""

    row_conservation: bool
    zero_compute_excluded: bool
    non_negative: bool
    integral: bool
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return (self.row_conservation and self.zero_compute_excluded
                and self.non_negative and self.integral)


@dataclass(frozen=True)
class SlotMetrics:
    """Outcome of one slot: delay/cost components, post-update backlog, and
    the decision's drift-plus-penalty score at decision time."""

    avg_delay: float
    total_cost: float
    tran_delay: float
    comp_delay: float
    tran_cost: float
    comp_cost: float
    queue_after: float
    objective: float = 0.0
    valid: bool = True
    empty: bool = False


class DecisionEvaluation(NamedTuple):
    tran_delay: float
    comp_delay: float
    avg_delay: float
    tran_cost: float
    comp_cost: float
    total_cost: float


def validate_decision(state: SystemStateGraph, decision: SchedulingDecision) -> ValidityReport:
    """Check row conservation, the zero-compute exclusion, non-negativity
    and integrality. A shape mismatch is a structural error, not a
    constraint violation."""
    m = state.node_count
    if decision.flows.shape != (m, m):
        raise DecisionShapeError(
            f"decision is {decision.flows.shape}, state has {m} nodes")
    flows = decision.flows
    violations = []

    row_sums = flows.sum(axis=1)
    rows_ok = bool(np.array_equal(row_sums, state.arrivals.astype(np.int64)))
    if not rows_ok:
        bad = np.nonzero(row_sums != state.arrivals.astype(np.int64))[0]
        violations.append(f"row sums differ from arrivals at nodes {bad.tolist()}")

    dead = state.compute == 0
    cols_ok = bool(not np.any(flows[:, dead] != 0))
    if not cols_ok:
        bad = np.nonzero(flows[:, dead].any(axis=0))[0]
        violations.append(f"flow routed to zero-compute node(s) {np.nonzero(dead)[0][bad].tolist()}")

    nonneg = bool(np.all(flows >= 0))
    if not nonneg:
        violations.append("negative flow entries")

    # integral by construction of SchedulingDecision
    return ValidityReport(rows_ok, cols_ok, nonneg, True, tuple(violations))


def scheduling_latency(state: SystemStateGraph, decision: SchedulingDecision) -> float:
    """Total cross-node transmission time, in seconds. Diagonal flows ride
    the free intra-node link and contribute nothing."""
    off = decision.cross_flows()
    with np.errstate(divide="ignore", invalid="ignore"):
        per_edge = np.where(off > 0, off * state.service.request_size_bits / state.bandwidth, 0.0)
    return float(per_edge.sum())


def computation_latency(state: SystemStateGraph, decision: SchedulingDecision) -> float:
    """Sum over nodes of (incoming requests * cycles / Hz), in seconds.
    Flow into a zero-compute node is a contract violation."""
    incoming = decision.flows.sum(axis=0).astype(np.float64)
    busy = incoming > 0
    if np.any(state.compute[busy] == 0):
        raise ValueError("flow routed to a node with no compute capacity")
    cycles = state.service.cycles_per_request
    return float((incoming[busy] * cycles / state.compute[busy]).sum())


def average_response_delay(state: SystemStateGraph, decision: SchedulingDecision) -> float:
    """Per-request average of transmission plus computation time. A slot
    with no arrivals carries nothing to delay and is defined as 0."""
    total = state.total_arrivals
    if total == 0:
        return 0.0
    return (scheduling_latency(state, decision) + computation_latency(state, decision)) / total


def scheduling_cost(state: SystemStateGraph, decision: SchedulingDecision) -> float:
    """Joules spent moving requests across nodes; the diagonal is free."""
    return float((decision.cross_flows() * state.sched_cost).sum())


def computation_cost(state: SystemStateGraph, decision: SchedulingDecision) -> float:
    """Processing energy, in joules. Requests on a node share its capacity
    equally, so a node running n requests grants each f = F/n and spends
    n * k * f^2 * C = k * F^2 * C / n; idle nodes spend nothing."""
    incoming = decision.flows.sum(axis=0).astype(np.float64)
    busy = incoming > 0
    f_share = state.compute[busy] / incoming[busy]
    per_node = incoming[busy] * state.energy_coeff[busy] * f_share ** 2 * state.service.cycles_per_request
    return float(per_node.sum())


def total_cost(state: SystemStateGraph, decision: SchedulingDecision) -> float:
    return scheduling_cost(state, decision) + computation_cost(state, decision)


def evaluate_decision(state: SystemStateGraph, decision: SchedulingDecision) -> DecisionEvaluation:
    """All latency/cost components of a decision in one pass."""
    tran_delay = scheduling_latency(state, decision)
    comp_delay = computation_latency(state, decision)
    total = state.total_arrivals
    avg_delay = (tran_delay + comp_delay) / total if total > 0 else 0.0
    tran_cost = scheduling_cost(state, decision)
    comp_cost = computation_cost(state, decision)
    return DecisionEvaluation(tran_delay, comp_delay, avg_delay, tran_cost, comp_cost,
                              tran_cost + comp_cost)


def all_local_decision(state: SystemStateGraph) -> SchedulingDecision:
    """Every node processes its own arrivals."""
    return SchedulingDecision(np.diag(state.arrivals.astype(np.int64)))
