# app/api/cli_commands.py

import functools
import glob
import json
import os
import sys
from typing import Dict, List, Optional, Sequence

import click
import numpy as np
import yaml
from pydantic import ValidationError
from scipy.stats import spearmanr
from tqdm import tqdm

from app.core.config import settings
from app.core.errors import InputError, SpotPlanError
from app.core.logger import get_logger
from app.models.experiment_schema import ExperimentSpec, parse_seeds, split_list
from app.models.forecast_schema import FORECAST_METHODS, ForecastConfig
from app.models.sim_schema import LEDGER_CATEGORIES, Policy, SimReport
from app.models.trace_schema import IntervalSeries
from app.models.workload_schema import CostTable, ParallelConfig, WorkloadProfile
from app.services import simulator
from app.services.liveput_optimizer import LiveputOptimizer, reactive_plan
from app.services.predictor_service import predict, sliding_window_eval
from app.services.preemption_model import ExpectationMode, ScenarioCache, default_cache
from app.services.profile_catalog import load_profile
from app.services.trace_service import gen_multigpu, gen_synthetic
from app.utils.report_io import read_report, write_report, write_rows_csv
from app.utils.trace_io import load_trace, write_interval_csv

logger = get_logger("cli")

SUMMARY_COLUMNS = ["trace", "policy", "seed", "committed_samples", "spot_cost", "per_sample_cost", "rollbacks", "vs_first"]
BREAKDOWN_COLUMNS = (
    ["trace", "policy", "seed", "committed_samples", "instance_hours"]
    + [f"{c}_h" for c in LEDGER_CATEGORIES]
    + ["ledger_h", "speedup"]
)


class InputFailure(click.ClickException):
    """Bad input files or fields: exit code 3 (usage errors keep click's 2)."""

    exit_code = 3


def _describe(error: Exception) -> str:
    if isinstance(error, ValidationError):
        return "; ".join(
            f"{'.'.join(str(part) for part in e['loc']) or 'input'}: {e['msg']}" for e in error.errors()
        )
    return str(error)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SpotPlanError, ValidationError) as e:
            message = _describe(e)
            logger.error(f"{fn.__name__}: {message}")
            raise InputFailure(message) from e
    return wrapper


# ============================================================
# SHARED INPUT HANDLING
# ============================================================

def _read_structured(path: str) -> Dict:
    if not os.path.isfile(path):
        raise InputError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f) if path.endswith(".json") else yaml.safe_load(f)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise InputError(f"{path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a mapping at the top level")
    return data


def load_costs(path: Optional[str]) -> CostTable:
    if not path:
        return CostTable()
    try:
        return CostTable(**_read_structured(path))
    except ValidationError as e:
        raise InputError(f"cost table {path}: {_describe(e)}") from e


def load_experiment(spec_path: Optional[str], **flags) -> ExperimentSpec:
    """ExperimentSpec from an optional YAML file, with every flag that was given taking precedence."""
    data = _read_structured(spec_path) if spec_path else {}
    cost_table = flags.pop("cost_table", None) or data.pop("cost_table", None)
    data.update({k: v for k, v in flags.items() if v is not None})
    if cost_table:
        data["costs"] = load_costs(cost_table)
    if "trace" not in data:
        raise InputError("trace: pass --trace or set it in the experiment spec")
    return ExperimentSpec(**data)


def _parse_config(text: Optional[str]) -> Optional[ParallelConfig]:
    """`DxP`, e.g. `4x2`; `none` for a suspended job."""
    if text is None or text.strip().lower() == "none":
        return None
    D, sep, P = text.lower().partition("x")
    if not sep:
        raise InputError(f"config '{text}' is not of the form DxP")
    try:
        return ParallelConfig(D=int(D), P=int(P))
    except ValueError as e:
        raise InputError(f"config '{text}': {e}") from e


def _parse_ints(text: str, field: str) -> List[int]:
    try:
        return [int(v) for v in split_list(text)]
    except ValueError as e:
        raise InputError(f"{field}: {e}") from e


def _echo_table(rows: Sequence[Dict], columns: Sequence[str]) -> None:
    def cell(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.4g}"
        return str(value)

    cells = [[cell(row.get(c)) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(r[k]) for r in cells]) for k, c in enumerate(columns)]
    click.echo("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in cells:
        click.echo("  ".join(v.ljust(w) for v, w in zip(r, widths)))


def _ratio(value: float, base: float) -> Optional[float]:
    return value / base if base else None


def _load_scenarios(path: Optional[str], cache: ScenarioCache) -> None:
    """Warm a scenario cache from a JSON file written by an earlier run, if there is one."""
    if not path or not os.path.isfile(path):
        return
    try:
        cache.load(path)
    except (json.JSONDecodeError, KeyError, ValueError, AttributeError) as e:
        raise InputError(f"scenario cache {path}: {e}") from e


# ============================================================
# SIMULATE
# ============================================================

def run_experiment(
    spec: ExperimentSpec,
    series: IntervalSeries,
    profile: WorkloadProfile,
    policies: List[Policy],
    quiet: bool = False,
) -> List[SimReport]:
    runs = [(policy, seed) for policy in policies for seed in spec.seeds]
    reports = []
    for policy, seed in tqdm(runs, desc=f"simulate {series.name}", unit="run", file=sys.stderr, disable=quiet):
        report = simulator.run(series, profile, policy, seed=seed, costs=spec.costs, epoch_size=spec.epoch_size)
        write_report(report, spec.out)
        reports.append(report)
    return reports


def summary_rows(reports: List[SimReport], baseline: str) -> List[Dict]:
    base = {(r.trace_name, r.seed): r.committed_samples for r in reports if r.policy == baseline}
    return [
        {
            "trace": r.trace_name,
            "policy": r.policy,
            "seed": r.seed,
            "committed_samples": r.committed_samples,
            "spot_cost": r.spot_cost,
            "per_sample_cost": r.per_sample_cost,
            "rollbacks": r.rollbacks,
            "vs_first": _ratio(r.committed_samples, base.get((r.trace_name, r.seed), 0)),
        }
        for r in reports
    ]


def mean_commit_ratios(reports: List[SimReport], first: str) -> Dict[str, Optional[float]]:
    """Mean over seeds of first-policy commits divided by each other policy's commits."""
    by_seed: Dict[str, Dict[int, int]] = {}
    for r in reports:
        by_seed.setdefault(r.policy, {})[r.seed] = r.committed_samples
    ratios = {}
    for label, commits in by_seed.items():
        if label == first:
            continue
        values = [
            by_seed[first][seed] / n for seed, n in commits.items() if n and seed in by_seed.get(first, {})
        ]
        ratios[label] = float(np.mean(values)) if values else None
    return ratios


def experiment_options(fn):
    options = [
        click.option("--spec", "spec_path", type=click.Path(dir_okay=False), help="Experiment YAML file."),
        click.option("--trace", help="Interval CSV, event CSV or synthetic:seed,capacity,length,preemptions,allocations[,min_mag,max_mag]."),
        click.option("--profile", help="Catalog profile name or JSON file."),
        click.option("--policies", help="Comma-separated policies, e.g. parcae,reactive or redundancy:fixed_P=16."),
        click.option("--seeds", help="Seed list such as 1..5 or 1,2,3."),
        click.option("--interval-seconds", type=float),
        click.option("--capacity", type=int, help="Capacity for event traces."),
        click.option("--lookahead", type=int),
        click.option("--history", type=int),
        click.option("--mc-trials", type=int),
        click.option("--epoch-size", type=int),
        click.option("--cost-table", type=click.Path(dir_okay=False), help="JSON or YAML cost table."),
        click.option("--scenario-cache", type=click.Path(dir_okay=False), help="Scenario table JSON, loaded if present and saved after the run."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--quiet", is_flag=True, help="No progress bar."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.command("simulate")
@experiment_options
@handle_errors
def simulate(spec_path, quiet, scenario_cache, **flags):
    """Replay policies over a trace and write one report per (policy, seed)."""
    spec = load_experiment(spec_path, **flags)
    _load_scenarios(scenario_cache, default_cache)
    series = load_trace(spec.trace, spec.interval_seconds, spec.capacity)
    profile = load_profile(spec.profile)
    policies = spec.build_policies()
    logger.info(f"Experiment: {len(policies)} policies x {len(spec.seeds)} seeds on '{series.name}'")

    reports = run_experiment(spec, series, profile, policies, quiet)
    if scenario_cache:
        default_cache.save(scenario_cache)
    first = policies[0].label
    rows = summary_rows(reports, first)
    write_rows_csv(rows, os.path.join(spec.out, "summary.csv"), SUMMARY_COLUMNS)
    _echo_table(rows, SUMMARY_COLUMNS)
    for label, ratio in mean_commit_ratios(reports, first).items():
        click.echo(f"mean {first}/{label} commit ratio: {'-' if ratio is None else f'{ratio:.3f}'}")


# ============================================================
# PREDICT / OPTIMIZE
# ============================================================

@click.command("predict")
@click.option("--trace", required=True, help="Trace file or synthetic: specifier.")
@click.option("--history", type=int, default=settings.HISTORY_LEN, show_default=True)
@click.option("--lookahead", type=int, default=settings.LOOKAHEAD_LEN, show_default=True)
@click.option("--methods", default=",".join(FORECAST_METHODS), show_default=True)
@click.option("--at", "at_index", type=int, help="Forecast only after this interval index.")
@click.option("--interval-seconds", type=float)
@click.option("--capacity", type=int)
@click.option("--out", type=click.Path(dir_okay=False), help="CSV of every scored window.")
@handle_errors
def predict_cmd(trace, history, lookahead, methods, at_index, interval_seconds, capacity, out):
    """Forecast availability, or score forecasters over every sliding window of a trace."""
    series = load_trace(trace, interval_seconds, capacity)
    config = ForecastConfig(history_len=history, lookahead_len=lookahead, capacity=series.capacity)
    method_list = split_list(methods)
    unknown = [m for m in method_list if m not in FORECAST_METHODS]
    if unknown:
        raise InputError(f"methods: unknown forecast method(s) {', '.join(unknown)}")

    if at_index is not None:
        if not 0 <= at_index < len(series.counts):
            raise InputError(f"at: interval {at_index} outside the trace")
        window = series.counts[: at_index + 1]
        window = [window[0]] * max(0, history - len(window)) + window
        for method in method_list:
            forecast = predict(window, config, method)
            click.echo(f"{method}: {','.join(str(v) for v in forecast.values)}")
        return

    rows = sliding_window_eval(series, config, method_list)
    if not rows:
        raise InputError(f"trace: {len(series.counts)} intervals is shorter than history + lookahead")
    if out:
        write_rows_csv(
            [dict(r, forecast=" ".join(map(str, r["forecast"])), actual=" ".join(map(str, r["actual"]))) for r in rows],
            out,
            ["window_start", "method", "l1", "forecast", "actual"],
        )
    summary = []
    for method in method_list:
        scores = [r["l1"] for r in rows if r["method"] == method]
        summary.append({"method": method, "windows": len(scores), "mean_l1": float(np.mean(scores))})
    _echo_table(summary, ["method", "windows", "mean_l1"])


@click.command("optimize")
@click.option("--profile", required=True, help="Catalog profile name or JSON file.")
@click.option("--counts", required=True, help="Current count then predicted counts, e.g. 8,8,6,6.")
@click.option("--current", help="Current config DxP or none; defaults to the throughput-optimal config.")
@click.option("--expectation", type=click.Choice(["auto", "exact", "mc"]), default="auto", show_default=True)
@click.option("--mc-trials", type=int, default=settings.MC_TRIALS, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--interval-seconds", type=float, default=settings.INTERVAL_SECONDS, show_default=True)
@click.option("--rollback-penalty", type=float, default=settings.ROLLBACK_PENALTY, show_default=True)
@click.option("--cost-table", type=click.Path(dir_okay=False))
@click.option("--scenario-cache", type=click.Path(dir_okay=False), help="Scenario table JSON, loaded if present and saved after planning.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the plan as JSON.")
@handle_errors
def optimize_cmd(profile, counts, current, expectation, mc_trials, seed, interval_seconds, rollback_penalty, cost_table, scenario_cache, out):
    """Plan configurations over predicted availability with the liveput dynamic program."""
    w = load_profile(profile)
    N_seq = _parse_ints(counts, "counts")
    if len(N_seq) < 2:
        raise InputError("counts: need the current count plus at least one predicted interval")
    start = _parse_config(current) if current is not None else reactive_plan(N_seq[0], w)
    mode = ExpectationMode(kind=expectation, trials=mc_trials, seed=seed)
    cache = ScenarioCache()
    _load_scenarios(scenario_cache, cache)
    optimizer = LiveputOptimizer(w, load_costs(cost_table), interval_seconds, mode, rollback_penalty, cache=cache)
    steps = optimizer.optimize(start, N_seq)
    if scenario_cache:
        cache.save(scenario_cache)

    rows = [
        {
            "interval": s.interval_index,
            "N": s.predicted_instances,
            "config": str(s.config) if s.config else "suspended",
            "expected_committed": s.expected_committed,
            "migration_s": s.expected_mig_cost,
        }
        for s in steps
    ]
    _echo_table(rows, ["interval", "N", "config", "expected_committed", "migration_s"])
    total = sum(s.expected_committed for s in steps)
    click.echo(f"from {start or 'suspended'}: expected committed samples {total:.1f}")
    if out:
        os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
        with open(out, "w", encoding="utf-8") as f:
            json.dump(
                {
                    "profile": w.name,
                    "current": str(start) if start else None,
                    "counts": N_seq,
                    "expectation": str(mode),
                    "steps": [s.model_dump() for s in steps],
                    "expected_committed": total,
                },
                f,
                indent=2,
            )
            f.write("\n")


# ============================================================
# TRACES AND REPORTS
# ============================================================

@click.command("gen-trace")
@click.option("--seed", type=int, required=True)
@click.option("--capacity", type=int, required=True)
@click.option("--length", type=int, required=True, help="Intervals.")
@click.option("--preemptions", type=int, required=True, help="Preemption events.")
@click.option("--allocations", type=int, required=True, help="Allocation events.")
@click.option("--min-mag", type=int, default=1, show_default=True)
@click.option("--max-mag", type=int, default=4, show_default=True)
@click.option("--start", type=int, help="Initial count; defaults to capacity.")
@click.option("--interval-seconds", type=float, default=settings.INTERVAL_SECONDS, show_default=True)
@click.option("--gpus-per-instance", type=int, default=1, show_default=True)
@click.option("--name")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Interval CSV path.")
@handle_errors
def gen_trace(seed, capacity, length, preemptions, allocations, min_mag, max_mag, start, interval_seconds, gpus_per_instance, name, out):
    """Generate a seeded synthetic availability trace."""
    series = gen_synthetic(
        seed,
        capacity,
        length,
        preemptions,
        allocations,
        magnitude_range=(min_mag, max_mag),
        start=start,
        interval_seconds=interval_seconds,
        name=name,
    )
    if gpus_per_instance > 1:
        series = gen_multigpu(series, gpus_per_instance)
    write_interval_csv(series, out)
    click.echo(f"{series.name}: {len(series.counts)} intervals, capacity {series.capacity} -> {out}")


def _report_paths(paths: Sequence[str]) -> List[str]:
    found = []
    for path in paths:
        if os.path.isdir(path):
            found.extend(p for p in sorted(glob.glob(os.path.join(path, "*.json"))) if not p.endswith(".meta.json"))
        elif os.path.isfile(path):
            found.append(path)
        else:
            raise InputError(f"reports: no such file or directory: {path}")
    if not found:
        raise InputError("reports: no report JSON files found")
    return found


def breakdown_rows(reports: List[SimReport], baseline: str) -> List[Dict]:
    """One row per run: GPU-hours per ledger category and commits relative to the baseline policy."""
    base = {(r.trace_name, r.seed): r.committed_samples for r in reports if r.policy == baseline}
    rows = []
    for r in reports:
        hours = r.gpu_hours
        row = {
            "trace": r.trace_name,
            "policy": r.policy,
            "seed": r.seed,
            "committed_samples": r.committed_samples,
            "instance_hours": r.instance_seconds / 3600.0,
            "ledger_h": sum(hours[c] for c in LEDGER_CATEGORIES),
            "speedup": _ratio(r.committed_samples, base.get((r.trace_name, r.seed), 0)),
        }
        row.update({f"{c}_h": hours[c] for c in LEDGER_CATEGORIES})
        if not np.isclose(row["ledger_h"], row["instance_hours"], rtol=1e-6, atol=1e-9):
            logger.warning(
                f"{r.trace_name}/{r.policy}/seed{r.seed}: ledger {row['ledger_h']:.6f} h "
                f"!= allocated {row['instance_hours']:.6f} h"
            )
        rows.append(row)
    return rows


@click.command("compare")
@click.argument("reports", nargs=-1, required=True)
@click.option("--baseline", default="reactive", show_default=True, help="Policy the speedup column divides by.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Breakdown CSV path.")
@handle_errors
def compare(reports, baseline, out):
    """GPU-hour breakdown by category across simulation reports (files or directories)."""
    loaded = []
    for path in _report_paths(reports):
        try:
            loaded.append(read_report(path))
        except (json.JSONDecodeError, ValidationError) as e:
            raise InputError(f"{path}: not a simulation report ({_describe(e) if isinstance(e, ValidationError) else e})") from e
    loaded.sort(key=lambda r: (r.trace_name, r.seed, r.policy))
    rows = breakdown_rows(loaded, baseline)
    write_rows_csv(rows, out, BREAKDOWN_COLUMNS)
    _echo_table(rows, ["trace", "policy", "seed", "committed_samples", "effective_h", "migration_h", "idle_h", "speedup"])
    logger.info(f"Wrote {len(rows)} breakdown rows to {out}")


# ============================================================
# SWEEPS
# ============================================================

def sweep_trace(seed: int, events: int, capacity: int, length: int, interval_seconds: float) -> IntervalSeries:
    """Synthetic trace with `events` preemptions and as many allocations as fit."""
    allocations = max(0, min(events, length - 1 - events))
    return gen_synthetic(
        seed,
        capacity,
        length,
        events,
        allocations,
        interval_seconds=interval_seconds,
        name=f"sweep_s{seed}_e{events}",
    )


@click.command("sweep")
@click.option("--mode", type=click.Choice(["intensity", "lookahead"]), default="intensity", show_default=True)
@click.option("--profile", default="gpt2", show_default=True)
@click.option("--policy", "policy_text", default="parcae", show_default=True, help="Policy compared against reactive.")
@click.option("--events", default="3,10,20,30", show_default=True, help="Preemption events per trace.")
@click.option("--seeds", default="1..5", show_default=True)
@click.option("--capacity", type=int, default=32, show_default=True)
@click.option("--length", type=int, default=60, show_default=True, help="Intervals per trace.")
@click.option("--interval-seconds", type=float, default=settings.INTERVAL_SECONDS, show_default=True)
@click.option("--lookahead", default=str(settings.LOOKAHEAD_LEN), show_default=True, help="Lookahead, or a list in lookahead mode.")
@click.option("--mc-trials", type=int, default=settings.MC_TRIALS, show_default=True)
@click.option("--cost-table", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default="results", show_default=True)
@click.option("--quiet", is_flag=True)
@handle_errors
def sweep(mode, profile, policy_text, events, seeds, capacity, length, interval_seconds, lookahead, mc_trials, cost_table, out, quiet):
    """Preemption-intensity scaling (policy vs reactive) or lookahead ablation (parcae_ideal)."""
    w = load_profile(profile)
    costs = load_costs(cost_table)
    event_counts = _parse_ints(events, "events")
    lookaheads = _parse_ints(lookahead, "lookahead")
    try:
        seed_list = parse_seeds(seeds)
    except ValueError as e:
        raise InputError(f"seeds: {e}") from e
    if not event_counts or not lookaheads or not seed_list:
        raise InputError("events, lookahead and seeds must be non-empty")

    rows = []
    if mode == "intensity":
        policy = Policy.parse(policy_text, lookahead=lookaheads[0], mc_trials=mc_trials)
        reactive = Policy(kind="reactive")
        runs = [(e, s) for e in event_counts for s in seed_list]
        for e, seed in tqdm(runs, desc="sweep intensity", unit="trace", file=sys.stderr, disable=quiet):
            series = sweep_trace(seed, e, capacity, length, interval_seconds)
            ours = simulator.run(series, w, policy, seed=seed, costs=costs).committed_samples
            base = simulator.run(series, w, reactive, seed=seed, costs=costs).committed_samples
            rows.append({"events": e, "seed": seed, "policy_commits": ours, "reactive_commits": base, "ratio": _ratio(ours, base)})
        key, columns = "events", ["events", "seed", "policy_commits", "reactive_commits", "ratio"]
        value = "ratio"
    else:
        dense = max(event_counts)
        runs = [(I, s) for I in lookaheads for s in seed_list]
        for I, seed in tqdm(runs, desc="sweep lookahead", unit="run", file=sys.stderr, disable=quiet):
            series = sweep_trace(seed, dense, capacity, length, interval_seconds)
            policy = Policy(kind="parcae_ideal", lookahead=I, mc_trials=mc_trials)
            commits = simulator.run(series, w, policy, seed=seed, costs=costs).committed_samples
            rows.append({"lookahead": I, "seed": seed, "commits": commits})
        key, columns = "lookahead", ["lookahead", "seed", "commits"]
        value = "commits"

    write_rows_csv(rows, os.path.join(out, f"sweep_{mode}.csv"), columns)
    xs = sorted({r[key] for r in rows})
    means = []
    for x in xs:
        values = [r[value] for r in rows if r[key] == x and r[value] is not None]
        means.append(float(np.mean(values)) if values else float("nan"))
    _echo_table([{key: x, f"mean_{value}": m} for x, m in zip(xs, means)], [key, f"mean_{value}"])
    if len(xs) > 1:
        rho = spearmanr(xs, means)[0]
        click.echo(f"spearman({key}, mean {value}) = {rho:.3f}")


commands = [simulate, predict_cmd, optimize_cmd, gen_trace, compare, sweep]
