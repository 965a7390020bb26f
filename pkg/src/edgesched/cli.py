"""Command-line entry point.

Subcommands: `run` (one experiment), `sweep` (V and size grids), `dataset` /
`train` / `eval` (the imitation pipeline), and `report` (render figures from
emitted CSVs). Every flag has a scenario-file equivalent; flags override the
file, and the effective configuration is frozen into the output directory
as config.json.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage or configuration
errors.
"""

from __future__ import annotations

import dataclasses
import os
import sys

import click
import numpy as np

from . import imitation, report, simulator
from .baselines import BaselineConfig, OracleLimitError
from .hierarchical import HsParams, PsoParams
from .lyapunov import DppConfig, InvalidDecisionError
from .scenario import ScenarioDocument, ScenarioError, load_scenario
from .simulator import SCHEDULER_IDS, SchedulerParams


def _parse_grid(text: str, cast=float) -> list:
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise click.UsageError("expected a non-empty comma-separated list")
    try:
        return [cast(part) for part in items]
    except ValueError as exc:
        raise click.UsageError(f"cannot parse list {text!r}: {exc}") from exc


def _load_document(path) -> ScenarioDocument:
    try:
        return load_scenario(path)
    except FileNotFoundError:
        raise click.UsageError(f"scenario file not found: {path}")
    except ScenarioError as exc:
        raise click.UsageError(f"{path}: {exc}")


def _merge(cls, file_overrides: dict, flag_overrides: dict):
    merged = dict(file_overrides)
    merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"bad {cls.__name__} settings: {exc}")


_FILE_KEY_MAP = {
    "hs": {"hms": "hms", "ni": "ni", "hmcr": "hmcr", "par": "par", "sw": "sw"},
    "pso": {"swarm": "swarm_size", "iters": "max_iters", "inertia": "inertia",
            "c1": "c1", "c2": "c2"},
    "ga": {"population": "ga_population", "generations": "ga_generations"},
    "kg": {"period": "kg_period"},
}


def _params_from(doc: ScenarioDocument, flags: dict) -> SchedulerParams:
    def filemap(section):
        src = getattr(doc, section)
        return {_FILE_KEY_MAP[section][k]: v for k, v in src.items() if k in _FILE_KEY_MAP[section]}

    hs = _merge(HsParams, filemap("hs"),
                {k: flags.get(k) for k in ("hms", "ni", "hmcr", "par", "sw")})
    pso = _merge(PsoParams, filemap("pso"),
                 {"swarm_size": flags.get("swarm"), "max_iters": flags.get("pso_iters"),
                  "inertia": flags.get("inertia"), "c1": flags.get("c1"), "c2": flags.get("c2")})
    base_file = {}
    base_file.update(filemap("ga"))
    base_file.update(filemap("kg"))
    baseline = _merge(BaselineConfig, base_file,
                      {"kg_period": flags.get("k_period"),
                       "ga_population": flags.get("ga_pop"),
                       "ga_generations": flags.get("ga_gens")})
    return SchedulerParams(hs=hs, pso=pso, mu=flags.get("mu"), baseline=baseline,
                           model_path=flags.get("model"))


def _apply_spec_flags(doc: ScenarioDocument, slots, seed, redraw_bandwidth, permute):
    spec = doc.spec
    if slots is not None:
        spec = dataclasses.replace(spec, slots=slots)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    if redraw_bandwidth:
        spec = dataclasses.replace(spec, redraw_bandwidth=True)
    if permute:
        order = tuple(_parse_grid(permute, int))
        try:
            spec = spec.with_compute_permutation(order)
        except ScenarioError as exc:
            raise click.UsageError(str(exc))
    return spec


def _scenario_options(fn):
    for option in reversed([
        click.option("--config", "config_path", required=True,
                     type=click.Path(exists=True, dir_okay=False),
                     help="Scenario file."),
        click.option("--slots", type=int, default=None, help="Override slot count."),
        click.option("--seed", type=int, default=None, help="Override master seed."),
        click.option("--redraw-bandwidth", is_flag=True, default=False,
                     help="Redraw link bandwidth every slot."),
        click.option("--permute-compute", "permute", default=None,
                     help="Permutation of 1..M reassigning compute ranges, e.g. 5,4,3,2,1."),
    ]):
        fn = option(fn)
    return fn


def _optimizer_options(fn):
    for option in reversed([
        click.option("--v", type=float, default=None, help="Delay weight V."),
        click.option("--hms", type=int, default=None), click.option("--ni", type=int, default=None),
        click.option("--hmcr", type=float, default=None), click.option("--par", type=float, default=None),
        click.option("--sw", type=float, default=None),
        click.option("--swarm", type=int, default=None), click.option("--pso-iters", type=int, default=None),
        click.option("--inertia", type=float, default=None),
        click.option("--c1", type=float, default=None), click.option("--c2", type=float, default=None),
        click.option("--mu", type=float, default=None),
        click.option("--k-period", type=int, default=None, help="KG recompute period."),
        click.option("--ga-pop", type=int, default=None), click.option("--ga-gens", type=int, default=None),
        click.option("--model", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Trained model checkpoint (il scheduler)."),
    ]):
        fn = option(fn)
    return fn


_OUT_OPTION = click.option("--out", "out_dir", envvar="EDGESCHED_OUT", default="runs",
                           show_default=True, help="Output directory (env: EDGESCHED_OUT).")


@click.group()
def main():
    """Collaborative edge scheduling simulator."""


@main.command()
@_scenario_options
@_optimizer_options
@_OUT_OPTION
@click.option("--scheduler", "scheduler_id", type=click.Choice(SCHEDULER_IDS), default="hh",
              show_default=True)
def run(config_path, slots, seed, redraw_bandwidth, permute, out_dir, scheduler_id, v, **flags):
    """Execute one experiment and write its per-slot trace CSV."""
    doc = _load_document(config_path)
    spec = _apply_spec_flags(doc, slots, seed, redraw_bandwidth, permute)
    params = _params_from(doc, flags)
    cfg = DppConfig(v_weight=v if v is not None else spec.v_weight, budget=spec.budget)
    os.makedirs(out_dir, exist_ok=True)
    out_csv = os.path.join(out_dir,
                           f"run_{scheduler_id}_m1_v{cfg.v_weight:g}_seed{spec.seed}.csv")
    try:
        result = simulator.run_experiment(spec, scheduler_id, cfg, params, out_csv=out_csv)
    except OracleLimitError as exc:
        raise click.UsageError(str(exc))
    except InvalidDecisionError as exc:
        raise click.ClickException(str(exc))
    simulator.dump_config(result.config_echo, os.path.join(out_dir, "config.json"))
    agg = result.aggregates
    click.echo(f"scheduler={scheduler_id} v={cfg.v_weight:g} slots={result.slots} "
               f"seed={result.seed} avg_delay_s={agg.avg_delay!r} avg_cost_j={agg.avg_cost!r} "
               f"final_queue_over_slots={agg.final_queue_over_slots!r} "
               f"mean_decision_ms={agg.mean_decision_ms:.3f} failed_slots={agg.failed_slots}")


@main.command()
@_scenario_options
@_optimizer_options
@_OUT_OPTION
@click.option("--scheduler", "scheduler_id", type=click.Choice(SCHEDULER_IDS), default="hh",
              show_default=True)
@click.option("--v-grid", required=True, help="Comma-separated V values.")
@click.option("--m-factors", default="1", show_default=True,
              help="Comma-separated size factors (tiles the node blocks).")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Worker processes; results are identical for any value.")
def sweep(config_path, slots, seed, redraw_bandwidth, permute, out_dir, scheduler_id,
          v, v_grid, m_factors, jobs, **flags):
    """Run a V (and optionally size) grid; write per-run CSVs, a summary
    table, and a plot-ready long-format file."""
    doc = _load_document(config_path)
    spec = _apply_spec_flags(doc, slots, seed, redraw_bandwidth, permute)
    params = _params_from(doc, flags)
    grid = _parse_grid(v_grid, float)
    factors = _parse_grid(m_factors, int)
    os.makedirs(out_dir, exist_ok=True)
    try:
        rows = simulator.sweep(spec, scheduler_id, grid, factors, params,
                               out_dir=out_dir, jobs=jobs)
    except OracleLimitError as exc:
        raise click.UsageError(str(exc))
    simulator.write_summary_csv(rows, os.path.join(out_dir, "sweep_summary.csv"))
    simulator.write_long_csv(rows, os.path.join(out_dir, "sweep_long.csv"))
    echo = simulator.config_echo(spec, scheduler_id,
                                 DppConfig(v_weight=grid[0], budget=spec.budget),
                                 params, spec.seed, spec.slots)
    echo["v_grid"] = grid
    echo["m_factors"] = factors
    simulator.dump_config(echo, os.path.join(out_dir, "config.json"))
    for row in rows:
        click.echo(f"m={row.m_factor} v={row.v:g} avg_delay_s={row.avg_delay!r} "
                   f"avg_cost_j={row.avg_cost!r} final_queue_over_slots={row.final_queue_over_slots!r}")


@main.command()
@_scenario_options
@_optimizer_options
@click.option("--dataset-slots", "dataset_slots", type=int, default=2000, show_default=True,
              help="Expert slots to collect.")
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False),
              help="Dataset file (.npz).")
def dataset(config_path, slots, seed, redraw_bandwidth, permute, v, dataset_slots,
            out_file, **flags):
    """Collect (state, role-assignment) pairs from the two-stage scheduler."""
    if dataset_slots < 1:
        raise click.UsageError("--dataset-slots must be >= 1")
    doc = _load_document(config_path)
    spec = _apply_spec_flags(doc, slots, seed, redraw_bandwidth, permute)
    params = _params_from(doc, flags)
    cfg = DppConfig(v_weight=v if v is not None else spec.v_weight, budget=spec.budget)
    ds = imitation.build_expert_dataset(spec, cfg, params.hs, params.pso, params.mu,
                                        seed=spec.seed, slots=dataset_slots)
    imitation.save_dataset(ds, out_file)
    click.echo(f"dataset: {ds.size} samples, {ds.node_count} nodes, "
               f"train={ds.train_idx.size} heldout={ds.test_idx.size} -> {out_file}")


@main.command()
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False),
              help="Checkpoint file (.npz).")
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.option("--batch", type=int, default=32, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--beta1", type=float, default=0.9, show_default=True)
@click.option("--beta2", type=float, default=0.999, show_default=True)
@click.option("--hidden", type=int, default=32, show_default=True)
@click.option("--layers", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def train(dataset_path, out_file, lr, batch, epochs, beta1, beta2, hidden, layers, seed):
    """Fit the role-prediction network on an expert dataset."""
    ds = imitation.load_dataset(dataset_path)
    try:
        cfg = imitation.TrainConfig(learning_rate=lr, batch_size=batch, epochs=epochs,
                                    beta1=beta1, beta2=beta2, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    model = imitation.init_model(ds.node_count, hidden=hidden, layers=layers,
                                 scaler=ds.scaler, seed=seed)
    model, history = imitation.train_bc(ds, model, cfg)
    imitation.save_checkpoint(model, out_file)
    heldout = imitation.accuracy(model, ds, ds.test_idx) if ds.test_idx.size else float("nan")
    click.echo(f"train: final_loss={history.final_train_loss:.4f} "
               f"heldout_loss={history.heldout_loss[-1]:.4f} heldout_accuracy={heldout:.3f} "
               f"-> {out_file}")


@main.command("eval")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Scenario for the paired fresh-seed run.")
@click.option("--slots", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=None, help="Fresh seed for the paired run.")
@click.option("--v", type=float, default=None)
def eval_cmd(model_path, dataset_path, config_path, slots, seed, v):
    """Report held-out accuracy and the paired two-stage vs imitation
    objective ratio on a fresh seed."""
    model = imitation.load_checkpoint(model_path)
    ds = imitation.load_dataset(dataset_path)
    if ds.node_count != model.node_count:
        raise click.UsageError(f"model has {model.node_count} nodes, dataset {ds.node_count}")
    heldout = imitation.accuracy(model, ds, ds.test_idx) if ds.test_idx.size else float("nan")
    click.echo(f"heldout_accuracy={heldout:.4f} over {ds.test_idx.size} samples")
    if config_path is not None:
        doc = _load_document(config_path)
        spec = doc.spec
        if seed is not None:
            spec = dataclasses.replace(spec, seed=seed)
        cfg = DppConfig(v_weight=v if v is not None else spec.v_weight, budget=spec.budget)
        result = simulator.paired_eval(spec, model, cfg, SchedulerParams(), slots=slots)
        click.echo(f"paired: hh_objective={result['hh_mean_objective']!r} "
                   f"il_objective={result['il_mean_objective']!r} "
                   f"ratio={result['objective_ratio']:.4f} "
                   f"hh_ms={result['hh_mean_decision_ms']:.2f} "
                   f"il_ms={result['il_mean_decision_ms']:.2f}")


@main.command("report")
@click.option("--runs", "src_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory holding run/sweep CSVs.")
@click.option("--out", "out_dir", default=None, help="Figure directory (default: alongside).")
def report_cmd(src_dir, out_dir):
    """Render figures from emitted CSVs."""
    written = report.render_directory(src_dir, out_dir)
    if not written:
        raise click.ClickException(f"no run_*.csv or sweep_summary.csv found in {src_dir}")
    for path in written:
        click.echo(path)


if __name__ == "__main__":
    main()
