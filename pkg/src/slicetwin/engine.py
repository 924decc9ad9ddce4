"""Slot-by-slot simulation loop, KPI computation, and experiment harness.

Each slot runs the same ordered phases: workload step, queue evaluation
at current allocations, twin synchronization and scoring, controller
decision, clamped application of decisions (taking effect next slot),
and logging.  Repetitions of an experiment are independent seeded runs
that may execute in parallel; aggregation joins them by repetition index
so output bytes never depend on scheduling.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import streams
from .domain import (ConfigError, ScenarioConfig, SliceClass, SliceRuntime,
                     TelemetryVector, build_slices, class_sla, require_valid)
from .forecast import make_forecaster
from .netmodel import (ResourcePool, eta_with_steering, latency_with_steering,
                       service_rate, try_allocate, utilization)
from .orchestrate import (ProvisioningDecision, ReconfigAction, Trigger, Unsatisfiable,
                          make_controller, r_needed)
from .textio import fmt9, round9
from .traffic import generate_trace
from .twin import SliceTwin

CONTROLLERS = ("dtaas", "rso", "cdrl")
METRICS = ("sla_compliance_pct", "over_provisioning_pct", "avg_latency_ms",
           "mean_fidelity", "mean_prediction_error")

_TRACE_BASE = ("slot", "slice_id", "arrivals", "in_burst", "rate", "gamma", "lambda",
               "rho", "eta", "latency_ms", "service_rate", "alloc_before", "alloc_after",
               "steering", "compliant", "fidelity", "prediction_error", "risk",
               "residual_std")
_INT_COLUMNS = {"slot", "arrivals", "in_burst", "alloc_before", "alloc_after", "compliant"}

DECISION_COLUMNS = ("slot", "controller", "slice_id", "delta_units", "steering_fraction",
                    "trigger", "objective_value", "clamped")
REPORT_COLUMNS = ("controller", "slice_id", "metric", "mean", "std")
REPS_COLUMNS = ("controller", "slice_id", "metric", "repetition", "seed", "value")


class EngineError(RuntimeError):
    """An internal invariant was violated during a run."""


def trace_columns(h: int) -> list[str]:
    return list(_TRACE_BASE) + [f"forecast_{j}" for j in range(1, h + 1)]


@dataclass
class RunResult:
    controller: str
    seed: int
    config: ScenarioConfig
    trace_rows: list[tuple]
    decision_rows: list[tuple]
    metrics: dict[tuple[str, str], float]
    slice_ids: list[str]
    degenerate: bool = False


def initial_allocations(config: ScenarioConfig, slices: list[SliceRuntime]) -> list[int]:
    """Start every controller from the allocation the mean load needs."""
    units = []
    for sl in slices:
        try:
            u = r_needed(sl.base_rate * config.load_scale, sl.sla,
                         config.unit_service_rate, 1.0, config.min_units)
        except Unsatisfiable:
            u = config.min_units
        units.append(min(u, config.edge_capacity_units))
    while sum(units) > config.edge_capacity_units:
        biggest = max(range(len(units)), key=lambda k: units[k])
        if units[biggest] <= config.min_units:
            raise ConfigError("edge capacity cannot hold minimum allocations")
        units[biggest] -= 1
    return units


def run_scenario(config: ScenarioConfig, seed: int,
                 controller_kind: str | None = None) -> RunResult:
    """Execute one seeded repetition with one controller."""
    require_valid(config)
    kind = controller_kind or config.controller_kind
    h = config.prediction_horizon
    slices = build_slices(config)
    if config.horizon_slots == 0:
        return RunResult(kind, seed, config, [], [],
                         {(sid, m): math.nan for sid in [s.id for s in slices] + ["all"]
                          for m in METRICS},
                         [s.id for s in slices], degenerate=True)

    trace = generate_trace(config, slices, seed)
    pool = ResourcePool(config.edge_capacity_units, config.min_units)
    for sl, units in zip(slices, initial_allocations(config, slices)):
        pool.register(sl.id, units)
        sl.allocated_units = units

    slot_ms = config.slot_ms
    twins = []
    for idx, sl in enumerate(slices):
        oracle_rates = None
        if config.forecaster_kind == "oracle":
            oracle_rates = np.array([round9(a / slot_ms) for a in trace.arrivals[idx]])
        forecaster = make_forecaster(config, idx, round9(sl.base_rate * config.load_scale),
                                     seed, oracle_rates)
        twins.append(SliceTwin(sl.id, idx, forecaster, config))
    controller = make_controller(kind, config, twins, seed)

    from .orchestrate import Observation  # local alias to keep module import order flat

    c_rate = config.unit_service_rate
    trace_rows: list[tuple] = []
    decision_rows: list[tuple] = []
    pending: dict[int, list[tuple[int, ProvisioningDecision]]] = {}

    def apply_provision(decision_slot: int, d: ProvisioningDecision) -> None:
        sl = by_id[d.slice_id]
        headroom = pool.available()
        floor = config.min_units - pool.allocation(d.slice_id)
        applied = max(floor, min(d.delta_units, headroom))
        clamped = d.clamped or (applied != d.delta_units)
        if applied != 0:
            try_allocate(pool, d.slice_id, applied)
            sl.allocated_units = pool.allocation(d.slice_id)
        decision_rows.append((decision_slot, kind, d.slice_id, applied,
                              round9(sl.steering_fraction), d.trigger.value,
                              round9(d.objective_value), int(clamped)))

    by_id = {sl.id: sl for sl in slices}
    for t in range(config.horizon_slots):
        alloc_before = [pool.allocation(sl.id) for sl in slices]
        steer_before = [sl.steering_fraction for sl in slices]

        observations = []
        outcome_cache = []
        for k, sl in enumerate(slices):
            arrivals = int(trace.arrivals[k][t])
            gamma = float(trace.gamma[k][t])
            lam = round9(arrivals / slot_ms)
            phi = steer_before[k]
            mu = round9(alloc_before[k] * c_rate * gamma)
            sla = sl.sla
            eta = round9(eta_with_steering(lam, mu, phi, sla.latency_threshold_ms,
                                           config.overflow_margin_rate,
                                           config.steering_penalty_ms))
            latency = round9(latency_with_steering(lam, mu, phi, sl.transport_offset_ms,
                                                   config.latency_cap_ms,
                                                   config.overflow_margin_rate,
                                                   config.steering_penalty_ms))
            rho = round9(utilization((1.0 - phi) * lam, mu))
            telemetry = TelemetryVector(lam, rho, gamma, eta)
            sl.telemetry = telemetry
            outcome_cache.append((arrivals, gamma, lam, mu, eta, latency, rho))
            observations.append(Observation(k, sl, eta, rho, lam, gamma, twins[k]))

        fid = []
        pe = []
        for k, sl in enumerate(slices):
            twins[k].sync(sl.telemetry, t)
            fid.append(twins[k].record_fidelity(sl.telemetry))
            err = twins[k].prediction_error(sl.telemetry, t)
            pe.append(math.nan if err is None else err)

        provisions, reconfigs, risks = controller.decide(t, observations, pool)

        for decision_slot, d in pending.pop(t, []):
            apply_provision(decision_slot, d)
        extra = controller.extra_apply_delay
        if extra == 0:
            for d in provisions:
                apply_provision(t, d)
        else:
            pending.setdefault(t + extra, []).extend((t, d) for d in provisions)
        for action in reconfigs:
            sl = by_id[action.slice_id]
            sl.steering_fraction = action.steering_fraction
            decision_rows.append((t, kind, action.slice_id, 0,
                                  round9(action.steering_fraction), "RECONFIG",
                                  round9(action.predicted_violation_sum), 0))

        if pool.total() > config.edge_capacity_units:
            raise EngineError(f"slot {t}: pool over capacity ({pool.total()})")

        for k, sl in enumerate(slices):
            arrivals, gamma, lam, mu, eta, latency, rho = outcome_cache[k]
            forecast = twins[k].last_forecast
            trace_rows.append((
                t, sl.id, arrivals, int(trace.in_burst[k][t]), float(trace.rate[k][t]),
                gamma, lam, rho, eta, latency, mu, alloc_before[k],
                pool.allocation(sl.id), round9(steer_before[k]),
                int(eta >= sl.sla.satisfaction_threshold), fid[k], pe[k],
                risks.get(k, math.nan), forecast.residual_std, *forecast.point))

    table = TraceTable.from_rows(trace_rows, h)
    metrics = compute_metrics(table, config)
    return RunResult(kind, seed, config, trace_rows, decision_rows, metrics,
                     [sl.id for sl in slices])


# --- trace tables and KPIs ------------------------------------------------

class TraceTable:
    """Columnar view of a run trace, buildable from rows or a CSV file."""

    def __init__(self, columns: dict[str, object], h: int):
        self.columns = columns
        self.h = h

    @classmethod
    def from_rows(cls, rows: list[tuple], h: int) -> "TraceTable":
        names = trace_columns(h)
        cols: dict[str, object] = {}
        if rows:
            transposed = list(zip(*rows))
        else:
            transposed = [[] for _ in names]
        for name, values in zip(names, transposed):
            if name == "slice_id":
                cols[name] = list(values)
            elif name in _INT_COLUMNS:
                cols[name] = np.asarray(values, dtype=np.int64)
            else:
                cols[name] = np.asarray(values, dtype=float)
        return cls(cols, h)

    @classmethod
    def from_csv(cls, path) -> "TraceTable":
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        h = sum(1 for c in header if c.startswith("forecast_"))
        cols: dict[str, object] = {}
        for i, name in enumerate(header):
            raw = [r[i] for r in rows]
            if name == "slice_id":
                cols[name] = raw
            elif name in _INT_COLUMNS:
                cols[name] = np.asarray([int(v) for v in raw], dtype=np.int64)
            else:
                cols[name] = np.asarray([float(v) for v in raw], dtype=float)
        return cls(cols, h)

    def slice_ids(self) -> list[str]:
        seen: list[str] = []
        for sid in self.columns["slice_id"]:
            if sid not in seen:
                seen.append(sid)
        return seen

    def mask(self, slice_id: str) -> np.ndarray:
        return np.asarray([sid == slice_id for sid in self.columns["slice_id"]])

    def __len__(self) -> int:
        return len(self.columns["slice_id"])


def _slice_sla(config: ScenarioConfig, slice_id: str):
    return class_sla(config, SliceClass(slice_id.rsplit("-", 1)[0]))


def compliance_pct(table: TraceTable, slice_id: str) -> float:
    """Share of slots whose satisfaction ratio met the threshold."""
    m = table.mask(slice_id)
    if not m.any():
        raise ValueError(f"no rows for slice {slice_id!r}")
    return round9(100.0 * float(np.mean(table.columns["compliant"][m])))


def true_requirement(table: TraceTable, slice_id: str, config: ScenarioConfig) -> np.ndarray:
    """Minimum units per slot for the realized demand (not the forecast)."""
    m = table.mask(slice_id)
    sla = _slice_sla(config, slice_id)
    lam = table.columns["lambda"][m]
    gamma = table.columns["gamma"][m]
    out = np.empty(len(lam), dtype=np.int64)
    for i in range(len(lam)):
        try:
            out[i] = r_needed(float(lam[i]), sla, config.unit_service_rate, float(gamma[i]),
                              config.min_units, config.edge_capacity_units)
        except Unsatisfiable:
            out[i] = config.edge_capacity_units
    return out


def over_provisioning_pct(table: TraceTable, slice_id: str, config: ScenarioConfig) -> float:
    """Allocated units beyond the realized requirement, relative to it."""
    m = table.mask(slice_id)
    if not m.any():
        raise ValueError(f"no rows for slice {slice_id!r}")
    needed = true_requirement(table, slice_id, config)
    alloc = table.columns["alloc_before"][m]
    denom = int(needed.sum())
    if denom == 0:
        return math.nan
    excess = np.maximum(alloc - needed, 0).sum()
    return round9(100.0 * float(excess) / denom)


def avg_latency_ms(table: TraceTable, slice_id: str) -> float:
    """Arrival-weighted mean of per-slot mean latency."""
    m = table.mask(slice_id)
    if not m.any():
        raise ValueError(f"no rows for slice {slice_id!r}")
    lat = table.columns["latency_ms"][m]
    arr = table.columns["arrivals"][m]
    total = int(arr.sum())
    if total == 0:
        return round9(float(np.mean(lat)))
    return round9(float(np.dot(lat, arr)) / total)


def compute_metrics(table: TraceTable, config: ScenarioConfig) -> dict[tuple[str, str], float]:
    """All KPIs per slice plus the pooled aggregate row ``all``."""
    out: dict[tuple[str, str], float] = {}
    ids = table.slice_ids()
    over_num = 0
    over_den = 0
    for sid in ids:
        m = table.mask(sid)
        out[(sid, "sla_compliance_pct")] = compliance_pct(table, sid)
        out[(sid, "over_provisioning_pct")] = over_provisioning_pct(table, sid, config)
        out[(sid, "avg_latency_ms")] = avg_latency_ms(table, sid)
        out[(sid, "mean_fidelity")] = round9(float(np.mean(table.columns["fidelity"][m])))
        pe = table.columns["prediction_error"][m]
        pe = pe[~np.isnan(pe)]
        out[(sid, "mean_prediction_error")] = round9(float(np.mean(pe))) if len(pe) else math.nan
        needed = true_requirement(table, sid, config)
        over_num += int(np.maximum(table.columns["alloc_before"][m] - needed, 0).sum())
        over_den += int(needed.sum())
    out[("all", "sla_compliance_pct")] = round9(
        100.0 * float(np.mean(table.columns["compliant"])))
    out[("all", "over_provisioning_pct")] = \
        round9(100.0 * over_num / over_den) if over_den else math.nan
    arr = table.columns["arrivals"]
    lat = table.columns["latency_ms"]
    total = int(arr.sum())
    out[("all", "avg_latency_ms")] = round9(float(np.dot(lat, arr)) / total) if total \
        else round9(float(np.mean(lat)))
    out[("all", "mean_fidelity")] = round9(
        sum(out[(sid, "mean_fidelity")] for sid in ids))
    pe_all = table.columns["prediction_error"]
    pe_all = pe_all[~np.isnan(pe_all)]
    out[("all", "mean_prediction_error")] = \
        round9(float(np.mean(pe_all))) if len(pe_all) else math.nan
    return out


# --- CSV writers/readers --------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, float):
        return fmt9(v)
    return str(v)


def write_trace_csv(path, rows: list[tuple], h: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(trace_columns(h))
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_decisions_csv(path, rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DECISION_COLUMNS)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_decisions_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for r in reader:
            rows.append({
                "slot": int(r["slot"]), "controller": r["controller"],
                "slice_id": r["slice_id"], "delta_units": int(r["delta_units"]),
                "steering_fraction": float(r["steering_fraction"]),
                "trigger": r["trigger"],
                "objective_value": float(r["objective_value"]),
                "clamped": int(r["clamped"]),
            })
    return rows


def write_report_csv(path, rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_reps_csv(path, rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPS_COLUMNS)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_report_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return [{"controller": r["controller"], "slice_id": r["slice_id"],
                 "metric": r["metric"], "mean": float(r["mean"]), "std": float(r["std"])}
                for r in csv.DictReader(fh)]


def read_reps_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return [{"controller": r["controller"], "slice_id": r["slice_id"],
                 "metric": r["metric"], "repetition": int(r["repetition"]),
                 "seed": int(r["seed"]), "value": float(r["value"])}
                for r in csv.DictReader(fh)]


# --- experiments ----------------------------------------------------------

def mean_std(values: list[float]) -> tuple[float, float]:
    """Mean and sample standard deviation, ignoring NaNs; std is 0 for n < 2."""
    clean = [v for v in values if not math.isnan(v)]
    if not clean:
        return math.nan, 0.0
    mu = sum(clean) / len(clean)
    if len(clean) < 2:
        return round9(mu), 0.0
    var = sum((v - mu) ** 2 for v in clean) / (len(clean) - 1)
    return round9(mu), round9(math.sqrt(var))


@dataclass
class ExperimentReport:
    config: ScenarioConfig
    controllers: list[str]
    report_rows: list[tuple]  # (controller, slice_id, metric, mean, std)
    reps_rows: list[tuple]    # (controller, slice_id, metric, repetition, seed, value)

    def mean(self, controller: str, slice_id: str, metric: str) -> float:
        for row in self.report_rows:
            if row[0] == controller and row[1] == slice_id and row[2] == metric:
                return row[3]
        raise KeyError((controller, slice_id, metric))

    def values(self, controller: str, slice_id: str, metric: str) -> list[float]:
        return [row[5] for row in self.reps_rows
                if row[0] == controller and row[1] == slice_id and row[2] == metric]


def _run_repetition(args) -> tuple[str, int, int, dict, list[str]]:
    config, controller, rep, out_dir = args
    seed = streams.repetition_seed(config.seed, rep)
    result = run_scenario(config, seed, controller)
    if out_dir is not None:
        write_trace_csv(os.path.join(out_dir, f"trace_{controller}_{seed}.csv"),
                        result.trace_rows, config.prediction_horizon)
        write_decisions_csv(os.path.join(out_dir, f"decisions_{controller}_{seed}.csv"),
                            result.decision_rows)
    return controller, rep, seed, result.metrics, result.slice_ids + ["all"]


def run_experiment(config: ScenarioConfig, controllers=None, out_dir=None,
                   jobs: int = 1) -> ExperimentReport:
    """Run every (controller, repetition) cell and aggregate KPIs.

    Repetition seeds are master seed + index; traffic is paired across
    controllers because its streams do not depend on the controller.
    """
    require_valid(config)
    controllers = list(controllers) if controllers else list(CONTROLLERS)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        from .domain import save as save_config
        save_config(config, os.path.join(out_dir, "scenario.cfg"))
    tasks = [(config, ctrl, rep, out_dir)
             for ctrl in controllers for rep in range(config.repetitions)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_repetition, tasks))
    else:
        results = [_run_repetition(t) for t in tasks]

    reps_rows: list[tuple] = []
    by_cell: dict[tuple[str, str, str], list[float]] = {}
    slice_order: list[str] = []
    for controller, rep, seed, metrics, ids in results:
        for sid in ids:
            if sid not in slice_order:
                slice_order.append(sid)
            for metric in METRICS:
                value = metrics[(sid, metric)]
                reps_rows.append((controller, sid, metric, rep, seed, value))
                by_cell.setdefault((controller, sid, metric), []).append(value)

    report_rows: list[tuple] = []
    for ctrl in controllers:
        for sid in slice_order:
            for metric in METRICS:
                values = by_cell.get((ctrl, sid, metric))
                if not values:
                    continue
                mean, std = mean_std(values)
                report_rows.append((ctrl, sid, metric, mean, std))

    if out_dir is not None:
        write_report_csv(os.path.join(out_dir, "report.csv"), report_rows)
        write_reps_csv(os.path.join(out_dir, "report_reps.csv"), reps_rows)
    return ExperimentReport(config, controllers, report_rows, reps_rows)


# --- sweeps ---------------------------------------------------------------

LOAD_GRID = tuple(round(0.4 + 0.1 * i, 1) for i in range(9))
HORIZON_GRID = tuple(range(1, 11))
SLICES_GRID = tuple(range(3, 25, 3))
SWEEP_VARIABLES = ("load", "horizon", "slices")


def sweep_point_config(config: ScenarioConfig, variable: str, value) -> ScenarioConfig:
    if variable == "load":
        return replace(config, load_scale=float(value))
    if variable == "horizon":
        return replace(config, prediction_horizon=int(value))
    if variable == "slices":
        k = int(value)
        # Capacity grows with the slice count so per-slice feasibility is
        # preserved and latency differences reflect orchestration, not
        # structural scarcity.
        capacity = int(round(config.edge_capacity_units * k / 3))
        return replace(config, num_slices=k, edge_capacity_units=capacity)
    raise ValueError(f"unknown sweep variable {variable!r}")


def sweep_grid(variable: str):
    return {"load": LOAD_GRID, "horizon": HORIZON_GRID, "slices": SLICES_GRID}[variable]


def run_sweep(config: ScenarioConfig, variable: str, controllers=None, jobs: int = 1,
              grid=None) -> list[tuple]:
    """Rows (x_value, controller, metric, mean, std) over the sweep grid,
    using the aggregate slice row of each point's experiment."""
    controllers = list(controllers) if controllers else list(CONTROLLERS)
    rows: list[tuple] = []
    for value in (grid if grid is not None else sweep_grid(variable)):
        point_cfg = sweep_point_config(config, variable, value)
        report = run_experiment(point_cfg, controllers, out_dir=None, jobs=jobs)
        for ctrl in controllers:
            for metric in METRICS:
                mean = report.mean(ctrl, "all", metric)
                std = next(r[4] for r in report.report_rows
                           if r[0] == ctrl and r[1] == "all" and r[2] == metric)
                rows.append((float(value), ctrl, metric, mean, std))
    return rows


def write_sweep_csv(path, rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("x_value", "controller", "metric", "mean", "std"))
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_sweep_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return [{"x_value": float(r["x_value"]), "controller": r["controller"],
                 "metric": r["metric"], "mean": float(r["mean"]), "std": float(r["std"])}
                for r in csv.DictReader(fh)]
