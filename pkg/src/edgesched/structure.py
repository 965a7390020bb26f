"""Node-role structure of good scheduling decisions.

An optimal per-slot decision never relays: each node either sends its
surplus away (source), absorbs flow from others (sink), or keeps to itself
(isolated). Nodes with no compute capacity are forced sources, and a source
can only exist alongside at least one sink. These rules cut the search
space for the outer optimizer and are re-validated on every emitted
decision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SchedulingDecision, SystemStateGraph, frozen_array

SOURCE, SINK, ISOLATED = 0, 1, 2
LABEL_NAMES = {SOURCE: "source", SINK: "sink", ISOLATED: "isolated"}


class InfeasibleAssignmentError(ValueError):
    """No feasible role assignment exists (e.g. no node can compute)."""


@dataclass(frozen=True)
class CategoryAssignment:
    """Per-node role labels: 0 = source, 1 = sink, 2 = isolated."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int8)
        if arr.ndim != 1:
            raise ValueError("labels must be a vector")
        if not ((arr >= SOURCE) & (arr <= ISOLATED)).all():
            raise ValueError("labels must be drawn from {source, sink, isolated}")
        object.__setattr__(self, "labels", frozen_array(arr, dtype=np.int8))

    @property
    def sources(self) -> np.ndarray:
        return np.nonzero(self.labels == SOURCE)[0]

    @property
    def sinks(self) -> np.ndarray:
        return np.nonzero(self.labels == SINK)[0]

    @property
    def isolated(self) -> np.ndarray:
        return np.nonzero(self.labels == ISOLATED)[0]


def labels_feasible(labels: np.ndarray, compute: np.ndarray) -> bool:
    """True iff zero-compute nodes are all sources and no source exists
    without a sink."""
    labels = np.asarray(labels)
    if not ((labels >= SOURCE) & (labels <= ISOLATED)).all():
        return False
    if (labels[np.asarray(compute) == 0] != SOURCE).any():
        return False
    has_source = (labels == SOURCE).any()
    return not has_source or bool((labels == SINK).any())


def repair_labels(labels: np.ndarray, compute: np.ndarray) -> np.ndarray:
    """Deterministically patch a label vector into a feasible one: force
    zero-compute nodes to source, then, if sources exist without a sink,
    promote the strongest non-source node (preferring isolated ones) to
    sink."""
    labels = np.array(labels, dtype=np.int8)
    compute = np.asarray(compute, dtype=np.float64)
    if not np.any(compute > 0):
        raise InfeasibleAssignmentError("every node has zero compute capacity")
    labels[compute == 0] = SOURCE
    if np.any(labels == SOURCE) and not np.any(labels == SINK):
        able = compute > 0
        isolated_able = able & (labels == ISOLATED)
        pool = isolated_able if np.any(isolated_able) else able
        # strongest candidate; ties resolved by lowest index via argmax
        candidates = np.where(pool, compute, -1.0)
        labels[int(np.argmax(candidates))] = SINK
    return labels


@dataclass(frozen=True)
class StructureReport:
    """Outcome of checking the source/sink shape of a decision."""

    no_relay: bool
    dead_nodes_drain: bool
    outflow_within_arrivals: bool
    sink_exists: bool
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return (self.no_relay and self.dead_nodes_drain
                and self.outflow_within_arrivals and self.sink_exists)


def validate_structure(state: SystemStateGraph, decision: SchedulingDecision) -> StructureReport:
    """Check the role structure: no node both sends and receives cross-node
    flow, zero-compute nodes forward every arrival, senders with capacity
    keep outflow within arrivals, and a receiver exists whenever a sender
    does. Assumes the decision already passed validate_decision."""
    cross = decision.cross_flows()
    out = cross.sum(axis=1)
    inc = cross.sum(axis=0)
    violations = []

    relays = np.nonzero((out > 0) & (inc > 0))[0]
    no_relay = relays.size == 0
    if not no_relay:
        violations.append(f"node(s) {relays.tolist()} both send and receive")

    dead = state.compute == 0
    arrivals = state.arrivals.astype(np.int64)
    drained = bool(np.all(out[dead] == arrivals[dead]))
    if not drained:
        bad = np.nonzero(out[dead] != arrivals[dead])[0]
        violations.append(f"zero-compute node(s) {np.nonzero(dead)[0][bad].tolist()} keep arrivals")

    senders = out > 0
    within = bool(np.all(out[senders & ~dead] <= arrivals[senders & ~dead]))
    if not within:
        violations.append("sender outflow exceeds arrivals")

    sink_exists = bool((not np.any(senders)) or np.any(inc > 0))
    if not sink_exists:
        violations.append("senders exist but no receiver")

    return StructureReport(no_relay, drained, within, sink_exists, tuple(violations))


def categories_of(decision: SchedulingDecision) -> CategoryAssignment:
    """Read the role labels off a structurally valid decision: senders are
    sources, receivers sinks, everyone else isolated."""
    cross = decision.cross_flows()
    labels = np.full(decision.node_count, ISOLATED, dtype=np.int8)
    labels[cross.sum(axis=0) > 0] = SINK
    labels[cross.sum(axis=1) > 0] = SOURCE
    return CategoryAssignment(labels)
