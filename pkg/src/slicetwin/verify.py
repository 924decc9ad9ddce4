"""Log replay: recompute everything a run reported from its persisted files.

Checks per experiment directory:
  * per-slot derived quantities (service rate, eta, latency, utilization,
    compliance, fidelity, prediction error) re-derived from logged inputs
  * KPIs recomputed from traces against report_reps.csv
  * mean/std aggregation against report.csv
  * every twin-driven provisioning decision re-minimized by an
    independent objective scan with the replayed noise stream
  * every steering decision re-scored across all candidates

All numeric comparisons are to 1e-9; logged values are snapped to the
same 9-significant-digit grid the engine computes with, so honest runs
match exactly.
"""

from __future__ import annotations

import glob
import math
import os
import re

import numpy as np

from . import streams
from .domain import ScenarioConfig, SliceClass, class_sla, load as load_config
from .engine import (METRICS, TraceTable, avg_latency_ms, compliance_pct, compute_metrics,
                     over_provisioning_pct, read_decisions_csv, read_report_csv,
                     read_reps_csv)
from .netmodel import eta_with_steering, latency_with_steering, utilization
from .orchestrate import STEERING_CANDIDATES
from .textio import round9

TOL = 1e-9


def _close(a: float, b: float) -> bool:
    if math.isnan(a) and math.isnan(b):
        return True
    return abs(a - b) <= TOL * max(1.0, abs(a), abs(b))


def _eta_scalar(lam: float, mu: float, threshold_ms: float) -> float:
    # Re-derived here on purpose: the replay must not lean on netmodel.
    if lam <= 0.0:
        return 1.0
    if lam >= mu:
        return 0.0
    return 1.0 - math.exp(-(mu - lam) * threshold_ms)


def _slice_sla(config: ScenarioConfig, slice_id: str):
    return class_sla(config, SliceClass(slice_id.rsplit("-", 1)[0]))


class _SliceView:
    """Per-slice columns of a trace, indexed by slot."""

    def __init__(self, table: TraceTable, slice_id: str):
        m = table.mask(slice_id)
        self.cols = {k: (np.asarray(v)[m] if not isinstance(v, list)
                         else [x for x, keep in zip(v, m) if keep])
                     for k, v in table.columns.items()}
        self.h = table.h

    def forecast(self, slot: int) -> np.ndarray:
        return np.array([float(self.cols[f"forecast_{j}"][slot]) for j in range(1, self.h + 1)])


def _mirror_slots(config: ScenarioConfig, horizon: int) -> list[int]:
    out = []
    m = 0
    for s in range(horizon):
        if s % config.twin_update_interval_slots == 0 or s == 0:
            m = max(0, s - config.sync_delay_slots)
        out.append(m)
    return out


def verify_trace(table: TraceTable, config: ScenarioConfig, label: str) -> list[str]:
    problems: list[str] = []
    ids = table.slice_ids()
    horizon = config.horizon_slots
    mirrors = _mirror_slots(config, horizon)
    for sid in ids:
        view = _SliceView(table, sid)
        sla = _slice_sla(config, sid)
        offset = {SliceClass.EMBB: config.transport_offset_embb_ms,
                  SliceClass.URLLC: config.transport_offset_urllc_ms,
                  SliceClass.MMTC: config.transport_offset_mmtc_ms}[
                      SliceClass(sid.rsplit("-", 1)[0])]
        pending: dict[int, float] = {}
        for t in range(len(view.cols["slot"])):
            lam = float(view.cols["lambda"][t])
            gamma = float(view.cols["gamma"][t])
            phi = float(view.cols["steering"][t])
            alloc = int(view.cols["alloc_before"][t])
            mu = round9(alloc * config.unit_service_rate * gamma)
            checks = {
                "service_rate": (mu, float(view.cols["service_rate"][t])),
                "lambda": (round9(int(view.cols["arrivals"][t]) / config.slot_ms), lam),
                "eta": (round9(eta_with_steering(lam, mu, phi, sla.latency_threshold_ms,
                                                 config.overflow_margin_rate,
                                                 config.steering_penalty_ms)),
                        float(view.cols["eta"][t])),
                "latency_ms": (round9(latency_with_steering(
                    lam, mu, phi, offset, config.latency_cap_ms,
                    config.overflow_margin_rate, config.steering_penalty_ms)),
                    float(view.cols["latency_ms"][t])),
                "rho": (round9(utilization((1.0 - phi) * lam, mu)),
                        float(view.cols["rho"][t])),
            }
            for name, (want, got) in checks.items():
                if not _close(want, got):
                    problems.append(f"{label} {sid} slot {t}: {name} {got} != {want}")
            want_compliant = int(float(view.cols["eta"][t]) >= sla.satisfaction_threshold)
            if want_compliant != int(view.cols["compliant"][t]):
                problems.append(f"{label} {sid} slot {t}: compliant flag mismatch")

            mslot = mirrors[t]
            d_rate = (lam - float(view.cols["lambda"][mslot])) / config.rate_scale
            d_rho = float(view.cols["rho"][t]) - float(view.cols["rho"][mslot])
            d_gamma = gamma - float(view.cols["gamma"][mslot])
            d_eta = float(view.cols["eta"][t]) - float(view.cols["eta"][mslot])
            fid = round9(math.sqrt(d_rate ** 2 + d_rho ** 2 + d_gamma ** 2 + d_eta ** 2))
            if not _close(fid, float(view.cols["fidelity"][t])):
                problems.append(f"{label} {sid} slot {t}: fidelity "
                                f"{view.cols['fidelity'][t]} != {fid}")

            # The twin publishes its forecast before the error for the slot
            # is scored, so this slot's writes can target this slot.
            logged_pe = float(view.cols["prediction_error"][t])
            point = view.forecast(t)
            for j in range(1, table.h + 1):
                pending[mslot + j] = float(point[j - 1])
            predicted = pending.get(t)
            if predicted is None:
                want_pe = math.nan
            else:
                want_pe = round9(abs(predicted - lam) / config.rate_scale)
            if not _close(want_pe, logged_pe):
                problems.append(f"{label} {sid} slot {t}: prediction_error "
                                f"{logged_pe} != {want_pe}")
            if len(problems) > 200:
                return problems
    return problems


def _replay_objective(deltas: np.ndarray, r: int, needed: int, point: np.ndarray,
                      sigma: float, gamma: float, sla, config: ScenarioConfig,
                      noise: np.ndarray) -> np.ndarray:
    """Independent re-implementation of the provisioning objective."""
    units = r + deltas
    lam = np.maximum(point[None, :] + sigma * noise, 0.0)
    mu = units.astype(float) * config.unit_service_rate * gamma
    theta = sla.satisfaction_threshold
    thr = sla.latency_threshold_ms
    if config.risk_mode == "final_step":
        lam_used = lam[:, -1][None, :]
        gap = np.maximum(mu[:, None] - lam_used, 0.0)
        eta = np.where(lam_used >= mu[:, None], 0.0, 1.0 - np.exp(-gap * thr))
        eta = np.where(lam_used <= 0.0, 1.0, eta)
        risk = np.mean(eta < theta, axis=1)
    else:
        gap = np.maximum(mu[:, None, None] - lam[None, :, :], 0.0)
        eta = np.where(lam[None, :, :] >= mu[:, None, None], 0.0, 1.0 - np.exp(-gap * thr))
        eta = np.where(lam[None, :, :] <= 0.0, 1.0, eta)
        risk = np.mean(eta < theta, axis=(1, 2))
    over = np.maximum(0, units - needed) / config.edge_capacity_units
    return config.alpha * over + config.beta * risk


def _replay_needed(lambda_hat: float, sla, config: ScenarioConfig, gamma: float) -> int:
    per_unit = config.unit_service_rate * gamma
    if lambda_hat <= 0.0 or per_unit <= 0.0:
        return config.min_units
    margin = math.log(1.0 / (1.0 - sla.satisfaction_threshold)) / sla.latency_threshold_ms
    r = max(config.min_units, math.ceil((lambda_hat + margin) / per_unit))
    while _eta_scalar(lambda_hat, r * per_unit, sla.latency_threshold_ms) \
            < sla.satisfaction_threshold:
        r += 1
    while r > config.min_units and _eta_scalar(lambda_hat, (r - 1) * per_unit,
                                               sla.latency_threshold_ms) \
            >= sla.satisfaction_threshold:
        r -= 1
    return r


def verify_decisions(table: TraceTable, decisions: list[dict], config: ScenarioConfig,
                     seed: int, label: str) -> list[str]:
    problems: list[str] = []
    ids = table.slice_ids()
    index_of = {sid: i for i, sid in enumerate(ids)}
    views = {sid: _SliceView(table, sid) for sid in ids}
    mirrors = _mirror_slots(config, config.horizon_slots)
    # Total start-of-slot allocation, for the free-capacity bound.
    totals: dict[int, int] = {}
    for sid in ids:
        view = views[sid]
        for t, a in zip(view.cols["slot"], view.cols["alloc_before"]):
            totals[int(t)] = totals.get(int(t), 0) + int(a)

    for row in decisions:
        sid = row["slice_id"]
        slot = row["slot"]
        view = views[sid]
        sla = _slice_sla(config, sid)
        is_scan = row["trigger"] == "SAFETY_THRESHOLD" or (
            row["controller"] == "dtaas" and row["trigger"] == "PERIODIC")
        if is_scan and not row["clamped"]:
            point = view.forecast(slot)
            sigma = float(view.cols["residual_std"][slot])
            gamma = float(view.cols["gamma"][mirrors[slot]])
            r = int(view.cols["alloc_before"][slot])
            if row["trigger"] == "SAFETY_THRESHOLD":
                hi = config.edge_capacity_units - totals[slot]
            else:
                hi = 0  # release path scans non-positive deltas only
            needed = _replay_needed(float(point.max()), sla, config, gamma)
            noise = streams.decision_rng(seed, streams.RISK, index_of[sid], slot) \
                .standard_normal((config.risk_samples, config.prediction_horizon))
            deltas = np.arange(config.min_units - r, hi + 1)
            objective = _replay_objective(deltas, r, needed, point, sigma, gamma,
                                          sla, config, noise)
            best = int(np.argmin(objective))
            if int(deltas[best]) != row["delta_units"]:
                problems.append(f"{label} {sid} slot {slot}: provisioning argmin "
                                f"{row['delta_units']} != {int(deltas[best])}")
            elif not _close(round9(float(objective[best])), row["objective_value"]):
                problems.append(f"{label} {sid} slot {slot}: objective "
                                f"{row['objective_value']} != {float(objective[best])}")
        elif row["trigger"] == "RECONFIG" and not math.isnan(row["objective_value"]):
            point = view.forecast(slot)
            sigma = float(view.cols["residual_std"][slot])
            gamma = float(view.cols["gamma"][mirrors[slot]])
            units_after = int(view.cols["alloc_after"][slot])
            mu = units_after * config.unit_service_rate * gamma
            noise = streams.decision_rng(seed, streams.RECONFIG, index_of[sid], slot) \
                .standard_normal((config.risk_samples, config.prediction_horizon))
            lam = np.maximum(point[None, :] + sigma * noise, 0.0)
            theta = sla.satisfaction_threshold
            thr = sla.latency_threshold_ms
            effective = thr - config.steering_penalty_ms
            sums = []
            for phi in STEERING_CANDIDATES:
                if phi == 0.0:
                    local = 1.0 - np.exp(-np.maximum(mu - lam, 0.0) * thr)
                    eta = np.where(lam >= mu, 0.0, local)
                    eta = np.where(lam <= 0.0, 1.0, eta)
                else:
                    reduced = (1.0 - phi) * lam
                    local = 1.0 - np.exp(-np.maximum(mu - reduced, 0.0) * thr)
                    local = np.where(reduced >= mu, 0.0, local)
                    local = np.where(reduced <= 0.0, 1.0, local)
                    steered = phi * lam
                    if effective <= 0.0:
                        over = np.zeros_like(local)
                    else:
                        over = 1.0 - np.exp(-config.overflow_margin_rate * effective
                                            * np.ones_like(steered))
                        over = np.where(steered <= 0.0, 1.0, over)
                    eta = (1.0 - phi) * local + phi * over
                sums.append(float(np.mean(eta < theta, axis=0).sum()))
            best = min(range(len(STEERING_CANDIDATES)), key=lambda i: (sums[i], i))
            if abs(STEERING_CANDIDATES[best] - row["steering_fraction"]) > TOL:
                problems.append(f"{label} {sid} slot {slot}: steering argmin "
                                f"{row['steering_fraction']} != {STEERING_CANDIDATES[best]}")
            elif not _close(round9(sums[best]), row["objective_value"]):
                problems.append(f"{label} {sid} slot {slot}: violation sum "
                                f"{row['objective_value']} != {sums[best]}")
        if len(problems) > 200:
            return problems
    return problems


def verify_experiment(out_dir: str) -> list[str]:
    """Replay one experiment directory; returns all mismatches found."""
    config = load_config(os.path.join(out_dir, "scenario.cfg"))
    report = read_report_csv(os.path.join(out_dir, "report.csv"))
    reps = read_reps_csv(os.path.join(out_dir, "report_reps.csv"))
    problems: list[str] = []

    reps_by_key = {(r["controller"], r["seed"]): {} for r in reps}
    for r in reps:
        reps_by_key[(r["controller"], r["seed"])][(r["slice_id"], r["metric"])] = r["value"]

    pattern = re.compile(r"trace_(\w+)_(\d+)\.csv$")
    trace_files = sorted(glob.glob(os.path.join(out_dir, "trace_*.csv")))
    if not trace_files:
        return [f"{out_dir}: no trace files"]
    for path in trace_files:
        match = pattern.search(os.path.basename(path))
        if not match:
            problems.append(f"unrecognized trace file name {path}")
            continue
        controller, seed = match.group(1), int(match.group(2))
        label = f"{controller}/{seed}"
        table = TraceTable.from_csv(path)
        problems += verify_trace(table, config, label)
        metrics = compute_metrics(table, config)
        logged = reps_by_key.get((controller, seed), {})
        for key, value in metrics.items():
            if key not in logged:
                problems.append(f"{label}: report_reps missing {key}")
            elif not _close(value, logged[key]):
                problems.append(f"{label}: KPI {key} {logged[key]} != {value}")
        decisions = read_decisions_csv(
            os.path.join(out_dir, f"decisions_{controller}_{seed}.csv"))
        problems += verify_decisions(table, decisions, config, seed, label)

    by_cell: dict[tuple[str, str, str], list[float]] = {}
    for r in reps:
        by_cell.setdefault((r["controller"], r["slice_id"], r["metric"]), []).append(r["value"])
    for row in report:
        values = by_cell.get((row["controller"], row["slice_id"], row["metric"]), [])
        clean = [v for v in values if not math.isnan(v)]
        mean = round9(sum(clean) / len(clean)) if clean else math.nan
        if len(clean) >= 2:
            mu = sum(clean) / len(clean)
            std = round9(math.sqrt(sum((v - mu) ** 2 for v in clean) / (len(clean) - 1)))
        else:
            std = 0.0
        if not _close(mean, row["mean"]) or not _close(std, row["std"]):
            problems.append(f"report row {row['controller']}/{row['slice_id']}/"
                            f"{row['metric']}: mean/std mismatch")
    return problems
