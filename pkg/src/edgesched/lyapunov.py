"""Virtual-queue bookkeeping and the drift-plus-penalty control loop.

The long-term cost budget is tracked by a virtual queue: each slot the
backlog absorbs the cost overshoot (or drains by the unused budget) and is
clamped at zero. Keeping the queue stable is equivalent to meeting the
budget in long-term average, so the per-slot scheduler minimizes
V * delay + backlog * (cost - budget) instead of the intractable long-term
problem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

from . import core
from .core import SchedulingDecision, SlotMetrics, SystemStateGraph


@dataclass(frozen=True)
class VirtualQueue:
    """Scalar cost-overrun backlog with its update history."""

    backlog: float = 0.0
    history: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.backlog < 0:
            raise ValueError("backlog must be non-negative")


@dataclass(frozen=True)
class DppConfig:
    """Weight V of the delay term and the per-slot cost budget."""

    v_weight: float
    budget: float

    def __post_init__(self):
        if self.v_weight < 0:
            raise ValueError("v_weight must be non-negative")


def queue_update(queue: VirtualQueue, slot_cost: float, budget: float) -> VirtualQueue:
    """Clamped backlog recursion: max(backlog + cost - budget, 0)."""
    slot = queue.history[-1][0] + 1 if queue.history else 0
    backlog = max(queue.backlog + slot_cost - budget, 0.0)
    return VirtualQueue(backlog, queue.history + ((slot, backlog),))


def dpp_objective(state: SystemStateGraph, decision: SchedulingDecision,
                  cfg: DppConfig) -> float:
    """Per-slot score V*T + Q*(E - budget). The constant drift-bound term is
    the same for every candidate decision and is left out of the score."""
    ev = core.evaluate_decision(state, decision)
    return cfg.v_weight * ev.avg_delay + state.queue_backlog * (ev.total_cost - cfg.budget)


def bound_check(q_before: VirtualQueue, q_after: VirtualQueue, t_delay: float,
                slot_cost: float, cfg: DppConfig, e_max: float) -> bool:
    """One-slot drift bound: the quadratic backlog change plus the weighted
    delay must stay below the constant term plus the linear backlog term.
    e_max must dominate |slot_cost - budget| over the run."""
    lhs = 0.5 * (q_after.backlog ** 2 - q_before.backlog ** 2) + cfg.v_weight * t_delay
    rhs = (0.5 * e_max ** 2 + cfg.v_weight * t_delay
           + q_before.backlog * (slot_cost - cfg.budget))
    return lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


class Scheduler(Protocol):
    """Per-slot decision provider."""

    name: str
    #: whether decisions are guaranteed to carry the source/sink DAG shape
    structured: bool
    #: NS may emit a flagged infeasible decision instead of aborting the run
    tolerates_invalid: bool

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision: ...

    def observe(self, slot: int, metrics: SlotMetrics) -> None: ...


class InvalidDecisionError(RuntimeError):
    def __init__(self, slot: int, report: core.ValidityReport):
        super().__init__(f"invalid decision at slot {slot}: {'; '.join(report.violations)}")
        self.slot = slot
        self.report = report


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    metrics: SlotMetrics
    decision: SchedulingDecision
    decision_seconds: float
    bound_ok: bool


def run_control_loop(state_provider: Callable[[int, float], SystemStateGraph],
                     scheduler: Scheduler, cfg: DppConfig, slots: int,
                     validate_structure: Callable[[SystemStateGraph, SchedulingDecision], bool] | None = None,
                     ) -> tuple[list[SlotRecord], VirtualQueue]:
    """Drive `slots` decision epochs: observe state (arrivals, resources,
    current backlog), ask the scheduler, validate, score, update the queue.

    Invalid decisions abort the run unless the scheduler explicitly
    tolerates them (then the slot is recorded as failed: flagged, no cost
    charged). The drift bound is checked at every slot with the running
    maximum of |cost - budget| standing in for the unobservable constant.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    queue = VirtualQueue()
    records: list[SlotRecord] = []
    e_max = 0.0
    for slot in range(slots):
        state = state_provider(slot, queue.backlog)
        t0 = time.perf_counter()
        try:
            decision = scheduler.decide(state, slot)
        except Exception as exc:
            raise RuntimeError(f"scheduler {scheduler.name!r} failed at slot {slot}") from exc
        elapsed = time.perf_counter() - t0

        report = core.validate_decision(state, decision)
        if not report.ok:
            if not getattr(scheduler, "tolerates_invalid", False):
                raise InvalidDecisionError(slot, report)
            metrics = SlotMetrics(float("nan"), float("nan"), float("nan"), float("nan"),
                                  float("nan"), float("nan"), queue.backlog,
                                  objective=float("nan"), valid=False,
                                  empty=state.total_arrivals == 0)
            records.append(SlotRecord(slot, metrics, decision, elapsed, True))
            scheduler.observe(slot, metrics)
            continue
        if validate_structure is not None and not validate_structure(state, decision):
            raise InvalidDecisionError(slot, replace(report, violations=("structure violation",)))

        ev = core.evaluate_decision(state, decision)
        objective = cfg.v_weight * ev.avg_delay + queue.backlog * (ev.total_cost - cfg.budget)
        q_next = queue_update(queue, ev.total_cost, cfg.budget)
        e_max = max(e_max, abs(ev.total_cost - cfg.budget))
        ok = bound_check(queue, q_next, ev.avg_delay, ev.total_cost, cfg, e_max)
        metrics = SlotMetrics(ev.avg_delay, ev.total_cost, ev.tran_delay, ev.comp_delay,
                              ev.tran_cost, ev.comp_cost, q_next.backlog,
                              objective=objective, valid=True,
                              empty=state.total_arrivals == 0)
        records.append(SlotRecord(slot, metrics, decision, elapsed, ok))
        scheduler.observe(slot, metrics)
        queue = q_next
    return records, queue


def fold_queue(costs: Sequence[float], budget: float) -> float:
    """Replay the backlog recursion over a cost trace (independent check)."""
    q = 0.0
    for cost in costs:
        q = max(q + cost - budget, 0.0)
    return q
