"""Experiment harness: trial runner, sweep presets, statistics, persistence.

A sweep is a list of cells (topology, external and internal coherence
times) crossed with the protocol set.  Every cell runs the same block of
independent trials seeded base_seed + trial_index, so cells and protocols
are seed-paired and re-running any sweep with the same base seed
reproduces every numeric output byte for byte, regardless of the worker
count used.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, mlp
from .engine import DEFAULT_BACKEND, run_trial_raw
from .physics import DEFAULT_CONSTANTS, skr_utility
from .trainer import bank_filename

WORKERS_ENV = "REPEATERCHAIN_WORKERS"

EXPERIMENTS = ("matched", "offdiag", "bottleneck", "relaxed")

SYM_5 = (5.0, 5.0, 5.0, 5.0)
SYM_10 = (10.0, 10.0, 10.0, 10.0)
BOTTLENECKS = (
    (10.0, 5.0, 5.0, 5.0),
    (5.0, 10.0, 5.0, 5.0),
    (5.0, 5.0, 10.0, 5.0),
    (5.0, 5.0, 5.0, 10.0),
)
STRESSED_RATIOS = (5, 10, 25, 50, 100)
RELAXED_TC = (0.5, 2.0)

RESULT_COLUMNS = [
    "experiment", "protocol", "lengths", "tc_int_s", "tc_ext_s",
    "mean_uskr_bps", "ci95_bps", "pooled_F", "pooled_interval_s",
    "mean_dwell_s", "n_trials", "n_deliveries_total",
]


@dataclass(frozen=True)
class TrialSpec:
    """Everything one trial needs; picklable for worker processes."""

    lengths: tuple
    tc_ext: float
    tc_int: float
    protocol: str
    link_mode: str = "synthetic"
    f_mean: float = 0.9575
    interval_ticks: float = 7.36
    jitter: float = 0.0
    f_gen: float = 0.92
    f0: float = 0.94
    step_cap: int = 200
    t_sim: float = 5.0
    f_min: float = 0.81
    capacity: int = 20
    policy_sizes: tuple | None = None
    policy_params: tuple | None = None
    policy_stochastic: bool = True

    def policy_weights(self):
        if self.policy_sizes is None:
            return None
        return mlp.MLPWeights(self.policy_sizes, np.array(self.policy_params))

    def with_policy(self, weights):
        return replace(
            self,
            policy_sizes=tuple(weights.sizes),
            policy_params=tuple(weights.params.tolist()),
        )


@dataclass(frozen=True)
class TrialResult:
    """Per-trial aggregates; mean fields are None when nothing delivered."""

    n_deliveries: int
    mean_F: float | None
    T_last: float | None
    u_skr: float
    mean_dwell: float | None
    sum_F: float = 0.0
    sum_dwell: float = 0.0


def run_trial(spec, seed, collect_events=False, backend=None):
    """Run one trial; returns TrialResult (optionally with event arrays)."""
    n, sum_F, t_last, sum_dwell, events = run_trial_raw(
        lengths=spec.lengths,
        tc_ext=spec.tc_ext,
        protocol=spec.protocol,
        mode=spec.link_mode,
        T_sim=spec.t_sim,
        seed=seed,
        f_min=spec.f_min,
        capacity=spec.capacity,
        f_mean=spec.f_mean,
        interval_ticks=spec.interval_ticks,
        jitter=spec.jitter,
        tc_int=spec.tc_int,
        f_gen=spec.f_gen,
        f0=spec.f0,
        step_cap=spec.step_cap,
        policy=spec.policy_weights(),
        policy_stochastic=spec.policy_stochastic,
        collect_events=collect_events,
        backend=backend,
    )
    if n == 0:
        result = TrialResult(0, None, None, 0.0, None)
    else:
        mean_F = sum_F / n
        result = TrialResult(
            n, mean_F, t_last, skr_utility(mean_F, t_last / n, n),
            sum_dwell / n, sum_F, sum_dwell,
        )
    return (result, events) if collect_events else result


def confidence_interval(samples):
    """(mean, half-width of the normal-approximation 95% CI).

    The half-width is None for fewer than two samples.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    mean = float(np.mean(samples))
    if len(samples) < 2:
        return mean, None
    sd = float(np.std(samples, ddof=1))
    return mean, 1.96 * sd / len(samples) ** 0.5


@dataclass(frozen=True)
class SweepConfig:
    """One experiment family: cells x protocols x trials."""

    experiment: str
    cells: tuple  # of TrialSpec templates (protocol field ignored)
    protocols: tuple = ("sequential", "simultaneous")
    n_trials: int = 200
    base_seed: int = 0


def _trial_task(args):
    cell_idx, proto_idx, trial_idx, spec, seed = args
    r = run_trial(spec, seed)
    return cell_idx, proto_idx, trial_idx, r


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_sweep(config, progress=None):
    """Run all cells; returns result rows (one per cell x protocol).

    Trials are independent and may run on worker processes (worker count
    from the REPEATERCHAIN_WORKERS environment variable); assembly is
    ordered by (cell, protocol, trial index), so results do not depend on
    the degree of parallelism.  A failed trial aborts the sweep with its
    seed in the exception message.
    """
    tasks = []
    for ci, cell in enumerate(config.cells):
        for pi, proto in enumerate(config.protocols):
            spec = replace(cell, protocol=proto)
            for k in range(config.n_trials):
                tasks.append((ci, pi, k, spec, config.base_seed + k))

    results = {}
    workers = worker_count()
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for out in pool.map(_trial_task, tasks, chunksize=16):
                    results[out[:3]] = out[3]
                    if progress:
                        progress(len(results), len(tasks))
        else:
            for task in tasks:
                out = _trial_task(task)
                results[out[:3]] = out[3]
                if progress:
                    progress(len(results), len(tasks))
    except Exception as exc:  # fail fast, identify the offending seed
        done = {t[:3] for t in results}
        pending = [t for t in tasks if t[:3] not in done]
        seed_hint = pending[0][4] if pending else "unknown"
        raise RuntimeError(f"sweep aborted; first unfinished seed {seed_hint}") from exc

    rows = []
    for ci, cell in enumerate(config.cells):
        for pi, proto in enumerate(config.protocols):
            trials = [results[(ci, pi, k)] for k in range(config.n_trials)]
            rows.append(_aggregate_row(config, cell, proto, trials))
    return rows


def _aggregate_row(config, cell, proto, trials):
    us = [t.u_skr for t in trials]
    mean_u, ci = confidence_interval(us)
    n_total = sum(t.n_deliveries for t in trials)
    sum_F = sum(t.sum_F for t in trials)
    sum_dwell = sum(t.sum_dwell for t in trials)
    sum_T = sum(t.T_last for t in trials if t.T_last is not None)
    return {
        "experiment": config.experiment,
        "protocol": proto,
        "lengths": "-".join(f"{L:g}" for L in cell.lengths),
        "tc_int_s": cell.tc_int,
        "tc_ext_s": cell.tc_ext,
        "mean_uskr_bps": mean_u,
        "ci95_bps": ci,
        "pooled_F": sum_F / n_total if n_total else None,
        "pooled_interval_s": sum_T / n_total if n_total else None,
        "mean_dwell_s": sum_dwell / n_total if n_total else None,
        "n_trials": config.n_trials,
        "n_deliveries_total": n_total,
    }


# ------------------------------------------------------------ presets


def _stressed_grid(tau_ref):
    return tuple(r * tau_ref for r in STRESSED_RATIOS)


def _cells_for(topologies, tc_values, base, matched=True):
    cells = []
    for lengths in topologies:
        tau_ref = max(lengths) / DEFAULT_CONSTANTS.c_fiber
        values = tc_values if tc_values is not None else _stressed_grid(tau_ref)
        for tc in values:
            cells.append(
                replace(base, lengths=tuple(lengths), tc_ext=tc,
                        tc_int=tc if matched else base.tc_int)
            )
    return cells


def experiment_config(experiment, overrides=None):
    """Build the SweepConfig for one of the canned experiment families.

    matched: symmetric topologies, stressed grid, Tc_int = Tc_ext, synthetic
    links at the calibrated operating point.
    bottleneck: same grid over the four bottleneck positions.
    offdiag: full Tc_int x Tc_ext cross product at L = 10 km, scripted links
    (their delivery statistics do not depend on Tc_int, so rows are flat by
    construction).
    relaxed: every topology at Tc_ext in {0.5, 2} s, scripted links.
    """
    overrides = dict(overrides or {})
    synthetic = TrialSpec(SYM_10, 1.0, 1.0, "sequential", link_mode="synthetic")
    scripted = TrialSpec(
        SYM_10, 1.0, 1.0, "sequential", link_mode="scripted", f_gen=0.9575
    )
    base_map = {"synthetic": synthetic, "scripted": scripted}
    if "link_mode" in overrides:
        base = base_map.get(overrides["link_mode"], synthetic)
    else:
        base = None

    if experiment == "matched":
        base = base if base is not None else synthetic
        cells = _cells_for([SYM_5, SYM_10], None, base)
    elif experiment == "bottleneck":
        base = base if base is not None else synthetic
        cells = _cells_for(BOTTLENECKS, None, base)
    elif experiment == "relaxed":
        base = base if base is not None else scripted
        cells = _cells_for([SYM_5, SYM_10, *BOTTLENECKS], RELAXED_TC, base)
    elif experiment == "offdiag":
        base = base if base is not None else scripted
        grid = _stressed_grid(50e-6)  # L = 10 km tick
        cells = []
        for tc_int in grid:
            for tc_ext in grid:
                cells.append(replace(base, lengths=SYM_10, tc_ext=tc_ext, tc_int=tc_int))
        cells = tuple(cells)
    else:
        raise ValueError(f"unknown experiment {experiment!r}")

    cfg = SweepConfig(experiment=experiment, cells=tuple(cells))
    cfg = _apply_overrides(cfg, overrides)
    return cfg


def _apply_overrides(cfg, overrides):
    cell_fields = {
        "link_mode", "f_mean", "interval_ticks", "jitter", "f_gen", "f0",
        "t_sim", "capacity", "f_min", "policy_stochastic",
    }
    cells = list(cfg.cells)
    for key, value in overrides.items():
        if key in cell_fields:
            cells = [replace(c, **{key: value}) for c in cells]
        elif key == "trials":
            cfg = replace(cfg, n_trials=int(value))
        elif key == "seed":
            cfg = replace(cfg, base_seed=int(value))
        elif key == "protocols":
            cfg = replace(cfg, protocols=tuple(value))
        elif key == "policy_dir":
            cells = [_attach_bank_policy(c, value) for c in cells]
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(cfg, cells=tuple(cells))


def _attach_bank_policy(cell, policy_dir):
    """Attach the bank policy matching the cell's (L, Tc_int) to the cell."""
    L = max(cell.lengths)
    tau = L / DEFAULT_CONSTANTS.c_fiber
    ratio = round(cell.tc_int / tau)
    path = Path(policy_dir) / bank_filename(L, ratio)
    weights = mlp.load_weights(path)
    return replace(cell, link_mode="policy").with_policy(weights)


# ------------------------------------------------------- persistence


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # plain float repr, also for numpy scalars
    return str(value)


def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


FIGURE_LABELS = {
    ("matched", "5-5-5-5"): "symmetric_L5",
    ("matched", "10-10-10-10"): "symmetric_L10",
    ("bottleneck", "10-5-5-5"): "bottleneck_p1",
    ("bottleneck", "5-10-5-5"): "bottleneck_p2",
    ("bottleneck", "5-5-10-5"): "bottleneck_p3",
    ("bottleneck", "5-5-5-10"): "bottleneck_p4",
}


def write_figure_csv(path, rows):
    """Plot-ready companion table: one row per bar/cell of the figures."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["figure", *RESULT_COLUMNS])
        for row in rows:
            label = FIGURE_LABELS.get((row["experiment"], row["lengths"]))
            if label is None:
                label = f"{row['experiment']}_{row['lengths']}"
            w.writerow([label] + [_fmt(row[c]) for c in RESULT_COLUMNS])


def write_manifest(path, config, extra=None):
    payload = {
        "version": __version__,
        "backend": DEFAULT_BACKEND,
        "experiment": config.experiment,
        "protocols": list(config.protocols),
        "n_trials": config.n_trials,
        "base_seed": config.base_seed,
        "trial_seeds": [config.base_seed, config.base_seed + config.n_trials - 1],
        "cells": [
            {k: (list(v) if isinstance(v, tuple) else v)
             for k, v in asdict(c).items() if k not in ("policy_params",)}
            for c in config.cells
        ],
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_events_csv(path, per_trial_events):
    """Event log: per_trial_events is a list of (trial, protocol, arrays)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "protocol", "t_emit_s", "F_e2e", "age_s", "dwell_s"])
        for trial, protocol, ev in per_trial_events:
            F, t, age, dwell = ev
            for i in range(len(F)):
                w.writerow([trial, protocol, repr(float(t[i])), repr(float(F[i])),
                            repr(float(age[i])), repr(float(dwell[i]))])


# ----------------------------------------------------- config files


def parse_config_file(path):
    """Flat key = value file (see README for the key list)."""
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        overrides[key] = _parse_value(key, value)
    return overrides


def _parse_value(key, value):
    if key in ("trials", "seed", "capacity", "step_cap"):
        return int(value)
    if key in ("f_mean", "interval_ticks", "jitter", "f_gen", "f0", "t_sim", "f_min"):
        return float(value)
    if key == "protocols":
        return tuple(p.strip() for p in value.split(","))
    if key == "policy_stochastic":
        return value.lower() in ("1", "true", "yes")
    return value
