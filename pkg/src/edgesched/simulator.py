"""Experiment harness: binds scenarios, schedulers and the control loop,
and emits per-slot CSV traces plus sweep summaries.

Runs are deterministic given (scenario, scheduler, seed): every stochastic
component draws from a stream derived from the run seed and a structural
key, so a sweep produces identical bytes no matter how many worker
processes execute it. The decision wallclock column is the one physically
non-reproducible quantity; determinism checks must mask it.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import baselines, core, hierarchical, imitation, lyapunov
from .baselines import BaselineConfig
from .core import SchedulingDecision, SystemStateGraph
from .hierarchical import HsParams, PsoParams
from .lyapunov import DppConfig, SlotRecord
from .rng import child_seed
from .scenario import ScenarioSpec, generate_slot_state
from .structure import validate_structure

RUN_CSV_COLUMNS = ("slot", "avg_delay_s", "tran_delay_s", "comp_delay_s", "total_cost_j",
                   "tran_cost_j", "comp_cost_j", "queue_after", "decision_ms", "valid")
SUMMARY_CSV_COLUMNS = ("scheduler", "v", "m_factor", "slots", "seed", "avg_delay_s",
                       "avg_cost_j", "final_queue", "final_queue_over_slots",
                       "mean_decision_ms", "mean_objective")

SCHEDULER_IDS = ("hh", "il", "myopic", "kg", "ns", "lbs", "sh", "oracle")


@dataclass(frozen=True)
class SchedulerParams:
    """Everything a scheduler might need beyond the state itself."""

    hs: HsParams = HsParams()
    pso: PsoParams = PsoParams()
    mu: float | None = None
    baseline: BaselineConfig = BaselineConfig()
    model_path: str | None = None


class _Base:
    structured = False
    tolerates_invalid = False

    def observe(self, slot: int, metrics: core.SlotMetrics) -> None:
        pass


class NsScheduler(_Base):
    name = "ns"
    tolerates_invalid = True

    def __init__(self, *_args, **_kwargs):
        pass

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        return baselines.ns_decide(state)


class LbsScheduler(_Base):
    name = "lbs"

    def __init__(self, cfg: DppConfig, params: SchedulerParams, seed: int):
        self.seed = seed

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        return baselines.lbs_decide(state, child_seed(self.seed, "sched", slot))


class HhScheduler(_Base):
    name = "hh"
    structured = True

    def __init__(self, cfg: DppConfig, params: SchedulerParams, seed: int):
        self.cfg = cfg
        self.params = params
        self.seed = seed

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        return hierarchical.hh_decide(state, self.cfg, self.params.hs, self.params.pso,
                                      self.params.mu, child_seed(self.seed, "sched", slot))


class IlScheduler(_Base):
    name = "il"
    structured = True

    def __init__(self, cfg: DppConfig, params: SchedulerParams, seed: int,
                 model: "imitation.GraphNetModel | None" = None):
        if model is None:
            if params.model_path is None:
                raise ValueError("il scheduler needs a trained model (--model)")
            model = imitation.load_checkpoint(params.model_path)
        self.model = model
        self.cfg = cfg
        self.params = params
        self.seed = seed

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        return imitation.il_decide(state, self.model, self.cfg, self.params.hs,
                                   self.params.mu, child_seed(self.seed, "sched", slot))


class KgScheduler(_Base):
    name = "kg"

    def __init__(self, cfg: DppConfig, params: SchedulerParams, seed: int):
        self.params = params
        self.seed = seed

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        return baselines.kg_decide(state, slot, self.params.baseline.kg_period,
                                   self.params.hs, self.params.pso,
                                   child_seed(self.seed, "sched", slot))


class MyopicScheduler(_Base):
    name = "myopic"

    def __init__(self, cfg: DppConfig, params: SchedulerParams, seed: int):
        self.params = params
        self.seed = seed
        self.spent = 0.0

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        return baselines.myopic_decide(state, slot, self.spent, self.params.hs,
                                       self.params.pso, child_seed(self.seed, "sched", slot))

    def observe(self, slot: int, metrics: core.SlotMetrics) -> None:
        if metrics.valid:
            self.spent += metrics.total_cost


class ShScheduler(_Base):
    name = "sh"

    def __init__(self, cfg: DppConfig, params: SchedulerParams, seed: int):
        self.cfg = cfg
        self.params = params
        self.seed = seed

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        decision, _ = baselines.sh_decide(state, self.cfg, self.params.baseline,
                                          child_seed(self.seed, "sched", slot))
        return decision


class OracleScheduler(_Base):
    name = "oracle"

    def __init__(self, cfg: DppConfig, params: SchedulerParams, seed: int):
        self.cfg = cfg

    def decide(self, state: SystemStateGraph, slot: int) -> SchedulingDecision:
        decision, _ = baselines.oracle_decide(state, self.cfg)
        return decision


_SCHEDULERS = {
    "ns": NsScheduler, "lbs": LbsScheduler, "hh": HhScheduler, "il": IlScheduler,
    "kg": KgScheduler, "myopic": MyopicScheduler, "sh": ShScheduler,
    "oracle": OracleScheduler,
}


def make_scheduler(scheduler_id: str, cfg: DppConfig, params: SchedulerParams,
                   seed: int, model=None):
    if scheduler_id not in _SCHEDULERS:
        raise ValueError(f"unknown scheduler {scheduler_id!r}; expected one of {SCHEDULER_IDS}")
    if scheduler_id == "il":
        return IlScheduler(cfg, params, seed, model=model)
    return _SCHEDULERS[scheduler_id](cfg, params, seed)


@dataclass(frozen=True)
class RunAggregates:
    avg_delay: float
    avg_cost: float
    final_queue: float
    final_queue_over_slots: float
    mean_decision_ms: float
    mean_objective: float
    failed_slots: int
    bound_violations: int


@dataclass(frozen=True)
class RunResult:
    scheduler: str
    v_weight: float
    seed: int
    slots: int
    records: tuple[SlotRecord, ...]
    aggregates: RunAggregates
    config_echo: dict
    decisions_kept: bool = False

    @property
    def metrics(self):
        return [r.metrics for r in self.records]


def compute_aggregates(records: list[SlotRecord]) -> RunAggregates:
    valid = [r for r in records if r.metrics.valid]
    failed = len(records) - len(valid)
    if valid:
        avg_delay = float(np.mean([r.metrics.avg_delay for r in valid]))
        avg_cost = float(np.mean([r.metrics.total_cost for r in valid]))
        mean_obj = float(np.mean([r.metrics.objective for r in valid]))
    else:
        avg_delay = avg_cost = mean_obj = float("nan")
    final_queue = records[-1].metrics.queue_after
    return RunAggregates(
        avg_delay=avg_delay,
        avg_cost=avg_cost,
        final_queue=final_queue,
        final_queue_over_slots=final_queue / len(records),
        mean_decision_ms=float(np.mean([r.decision_seconds for r in records])) * 1e3,
        mean_objective=mean_obj,
        failed_slots=failed,
        bound_violations=sum(0 if r.bound_ok else 1 for r in records),
    )


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_run_csv(records: list[SlotRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RUN_CSV_COLUMNS)
        for rec in records:
            m = rec.metrics
            writer.writerow([
                _fmt(rec.slot), _fmt(m.avg_delay), _fmt(m.tran_delay), _fmt(m.comp_delay),
                _fmt(m.total_cost), _fmt(m.tran_cost), _fmt(m.comp_cost),
                _fmt(m.queue_after), _fmt(rec.decision_seconds * 1e3), _fmt(m.valid),
            ])


def config_echo(spec: ScenarioSpec, scheduler_id: str, cfg: DppConfig,
                params: SchedulerParams, seed: int, slots: int) -> dict:
    return {
        "scenario": asdict(spec),
        "scheduler": scheduler_id,
        "v": cfg.v_weight,
        "budget": cfg.budget,
        "slots": slots,
        "seed": seed,
        "hs": asdict(params.hs),
        "pso": asdict(params.pso),
        "mu": params.mu,
        "baseline": asdict(params.baseline),
        "model": params.model_path,
    }


def run_experiment(spec: ScenarioSpec, scheduler_id: str, cfg: DppConfig,
                   params: SchedulerParams = SchedulerParams(), seed: int | None = None,
                   slots: int | None = None, out_csv=None, keep_decisions: bool = False,
                   model=None) -> RunResult:
    """One full run: generate states, drive the control loop, aggregate, and
    optionally stream the per-slot trace to a CSV file."""
    seed = spec.seed if seed is None else seed
    slots = spec.slots if slots is None else slots
    scheduler = make_scheduler(scheduler_id, cfg, params, seed, model=model)

    def provider(slot: int, backlog: float) -> SystemStateGraph:
        return generate_slot_state(spec, slot, backlog)

    checker = None
    if getattr(scheduler, "structured", False):
        checker = lambda state, decision: validate_structure(state, decision).ok
    try:
        records, _queue = lyapunov.run_control_loop(provider, scheduler, cfg, slots,
                                                    validate_structure=checker)
    except lyapunov.InvalidDecisionError:
        raise
    if not keep_decisions:
        records = [replace(r, decision=None) for r in records]
    result = RunResult(scheduler_id, cfg.v_weight, seed, slots, tuple(records),
                       compute_aggregates(records),
                       config_echo(spec, scheduler_id, cfg, params, seed, slots),
                       decisions_kept=keep_decisions)
    if out_csv is not None:
        write_run_csv(records, out_csv)
    return result


@dataclass(frozen=True)
class SweepRow:
    scheduler: str
    v: float
    m_factor: int
    slots: int
    seed: int
    avg_delay: float
    avg_cost: float
    final_queue: float
    final_queue_over_slots: float
    mean_decision_ms: float
    mean_objective: float


def _summary_row(result: RunResult, m_factor: int) -> SweepRow:
    agg = result.aggregates
    return SweepRow(result.scheduler, result.v_weight, m_factor, result.slots, result.seed,
                    agg.avg_delay, agg.avg_cost, agg.final_queue, agg.final_queue_over_slots,
                    agg.mean_decision_ms, agg.mean_objective)


def write_summary_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row.scheduler, _fmt(row.v), _fmt(row.m_factor), _fmt(row.slots),
                _fmt(row.seed), _fmt(row.avg_delay), _fmt(row.avg_cost),
                _fmt(row.final_queue), _fmt(row.final_queue_over_slots),
                _fmt(row.mean_decision_ms), _fmt(row.mean_objective),
            ])


def write_long_csv(rows: list[SweepRow], path) -> None:
    """Plot-ready long format: one (config, metric, value) triple per line."""
    metrics = ("avg_delay_s", "avg_cost_j", "final_queue", "final_queue_over_slots",
               "mean_decision_ms")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("scheduler", "v", "m_factor", "metric", "value"))
        for row in rows:
            values = (row.avg_delay, row.avg_cost, row.final_queue,
                      row.final_queue_over_slots, row.mean_decision_ms)
            for metric, value in zip(metrics, values):
                writer.writerow((row.scheduler, _fmt(row.v), _fmt(row.m_factor),
                                 metric, _fmt(value)))


def _run_sweep_cell(args) -> tuple[int, SweepRow]:
    index, spec, scheduler_id, v, params, seed, slots, out_csv, m_factor = args
    cfg = DppConfig(v_weight=v, budget=spec.budget)
    result = run_experiment(spec, scheduler_id, cfg, params, seed=seed, slots=slots,
                            out_csv=out_csv)
    return index, _summary_row(result, m_factor)


def v_sweep(spec: ScenarioSpec, scheduler_id: str, v_grid, params: SchedulerParams = SchedulerParams(),
            seed: int | None = None, slots: int | None = None, out_dir=None,
            jobs: int = 1, m_factor: int = 1) -> list[SweepRow]:
    """Repeat the run per V with the same master seed; rows come back in
    grid order regardless of worker count."""
    v_grid = list(v_grid)
    if not v_grid:
        raise ValueError("v grid must not be empty")
    seed = spec.seed if seed is None else seed
    slots = spec.slots if slots is None else slots
    tasks = []
    for index, v in enumerate(v_grid):
        out_csv = None
        if out_dir is not None:
            out_csv = os.path.join(out_dir, f"run_{scheduler_id}_v{v:g}_seed{seed}.csv")
        tasks.append((index, spec, scheduler_id, float(v), params, seed, slots, out_csv, m_factor))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            indexed = list(pool.map(_run_sweep_cell, tasks))
    else:
        indexed = [_run_sweep_cell(task) for task in tasks]
    rows = [row for _, row in sorted(indexed, key=lambda item: item[0])]
    return rows


def sweep(spec: ScenarioSpec, scheduler_id: str, v_grid, m_factors=(1,),
          params: SchedulerParams = SchedulerParams(), seed: int | None = None,
          slots: int | None = None, out_dir=None, jobs: int = 1) -> list[SweepRow]:
    """Grid of runs over size factors and V values; per-run CSVs land in
    `out_dir` and rows come back in grid order regardless of `jobs`."""
    from .scenario import scale_scenario

    v_grid = list(v_grid)
    m_factors = list(m_factors)
    if not v_grid:
        raise ValueError("v grid must not be empty")
    if not m_factors:
        raise ValueError("m factor list must not be empty")
    seed = spec.seed if seed is None else seed
    slots = spec.slots if slots is None else slots
    tasks = []
    index = 0
    for factor in m_factors:
        cell_spec = scale_scenario(spec, factor)
        for v in v_grid:
            out_csv = None
            if out_dir is not None:
                out_csv = os.path.join(
                    out_dir, f"run_{scheduler_id}_m{factor}_v{float(v):g}_seed{seed}.csv")
            tasks.append((index, cell_spec, scheduler_id, float(v), params, seed, slots,
                          out_csv, factor))
            index += 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            indexed = list(pool.map(_run_sweep_cell, tasks))
    else:
        indexed = [_run_sweep_cell(task) for task in tasks]
    return [row for _, row in sorted(indexed, key=lambda item: item[0])]


def paired_eval(spec: ScenarioSpec, model, cfg: DppConfig,
                params: SchedulerParams = SchedulerParams(), seed: int | None = None,
                slots: int = 200) -> dict:
    """Run the two-stage scheduler and the imitation scheduler over the same
    scenario seed (each with its own backlog evolution) and compare their
    time-averaged objectives."""
    hh = run_experiment(spec, "hh", cfg, params, seed=seed, slots=slots)
    il = run_experiment(spec, "il", cfg, params, seed=seed, slots=slots, model=model)
    ratio = il.aggregates.mean_objective / hh.aggregates.mean_objective
    return {
        "hh_mean_objective": hh.aggregates.mean_objective,
        "il_mean_objective": il.aggregates.mean_objective,
        "objective_ratio": ratio,
        "hh_avg_delay": hh.aggregates.avg_delay,
        "il_avg_delay": il.aggregates.avg_delay,
        "hh_mean_decision_ms": hh.aggregates.mean_decision_ms,
        "il_mean_decision_ms": il.aggregates.mean_decision_ms,
    }


def scaling_study(factors, scheduler_ids, params: SchedulerParams = SchedulerParams(),
                  slots: int = 20, seed: int = 7, v_weight: float = 1e8,
                  il_dataset_slots: int = 40, il_epochs: int = 20,
                  out_dir=None) -> list[SweepRow]:
    """Replicate the five-node block by each factor (budget scales along)
    and record delay / cost / decision wallclock per (M, scheduler). The
    imitation scheduler gets a small expert dataset and a quick training
    run at each size, since heads are per-node."""
    from .scenario import default_scenario

    rows = []
    for factor in factors:
        spec = default_scenario(m_factor=factor, slots=slots, seed=seed, v_weight=v_weight)
        cfg = DppConfig(v_weight=v_weight, budget=spec.budget)
        for scheduler_id in scheduler_ids:
            model = None
            if scheduler_id == "il":
                dataset = imitation.build_expert_dataset(
                    spec, cfg, params.hs, params.pso, params.mu,
                    seed=child_seed(seed, "ildata", factor), slots=il_dataset_slots)
                model = imitation.init_model(spec.node_count, scaler=dataset.scaler,
                                             seed=child_seed(seed, "ilinit", factor))
                model, _ = imitation.train_bc(dataset, model,
                                              imitation.TrainConfig(epochs=il_epochs,
                                                                    seed=child_seed(seed, "iltrain", factor)))
            out_csv = None
            if out_dir is not None:
                out_csv = os.path.join(out_dir, f"scaling_{scheduler_id}_m{spec.node_count}.csv")
            result = run_experiment(spec, scheduler_id, cfg, params, seed=seed, slots=slots,
                                    out_csv=out_csv, model=model)
            rows.append(_summary_row(result, factor))
    return rows


def dump_config(echo: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(echo, handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")
