"""Timing, graph-size, and accuracy-grid measurements.

The memory metric is the peak tape node count times the documented
per-node footprint (tape.NODE_BYTES) rather than process RSS: it is
deterministic, allocator independent, and measures the thing that
actually differs between the two modes, namely graph length.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import netdata, neurons, tape, training

__all__ = [
    "BenchRow",
    "bench_cell",
    "bench_sweep",
    "rows_to_csv",
    "grid_run",
    "summarize_grid",
    "grid_to_csv",
    "HpoSpec",
    "random_search",
]


@dataclass
class BenchRow:
    size: int
    t_steps: int
    mode: str
    fwd_s: float
    bwd_s: float
    peak_nodes: int
    peak_bytes: int
    status: str = "ok"
    spike_total: float = 0.0


_CSV_FIELDS = ["size", "t_steps", "mode", "fwd_s", "bwd_s",
               "peak_nodes", "peak_bytes", "status", "spike_total"]


def _bench_frames(size: int, t_steps: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(20,))))
    return rng.poisson(0.5, size=(t_steps, 12)).astype(np.float64)


def bench_cell(size: int, t_steps: int, mode: str, substeps: int = 1000,
               seed: int = 0, repeats: int = 3) -> BenchRow:
    """One (hidden size, sequence length, mode) measurement.

    One warm-up run is discarded, then the median of `repeats` timed
    runs is reported for forward and backward separately.  A run that
    trips the instability guard is reported as a status row so sweeps
    over hostile configurations still produce a table.
    """
    # mirror the felif training cell, including the backward damping:
    # without it the full fine-grid backward at realistic substeps
    # overflows and there is no finite time to compare against
    spec = netdata.NetworkSpec(kind="felif", n_in=12, n_hidden=size, n_out=size,
                               current_scale=2e-8, w_gain=4.0,
                               hidden=neurons.LifParams(alpha=0.299, beta=0.147),
                               out_felif=neurons.FeLifParams(v_thr=2.5,
                                                             jac_guard=1.0))
    net = netdata.build_network(spec, seed=seed)
    frames = _bench_frames(size, t_steps, seed)
    labels = np.zeros((), dtype=np.int64)
    cfg = training.TrainConfig(mode=mode, substeps=substeps, t_steps=t_steps)

    fwd_times, bwd_times = [], []
    peak_nodes = 0
    spike_total = 0.0
    try:
        for rep in range(repeats + 1):
            t0 = time.perf_counter()
            res = training.forward_sequence(net, frames, cfg)
            t1 = time.perf_counter()
            loss = training.class_loss(res.counts, labels)
            peak_nodes = res.tp.node_count()
            spike_total = float(np.sum(tape.raw(res.counts)))
            t2 = time.perf_counter()
            training.gradient_dict(res, loss)
            t3 = time.perf_counter()
            if rep == 0:
                continue  # warm-up discarded
            fwd_times.append(t1 - t0)
            bwd_times.append(t3 - t2)
    except tape.NumericInstabilityError as err:
        status = ("exploded" if isinstance(err, tape.GradientExplosionError)
                  else "unstable")
        return BenchRow(size, t_steps, mode,
                        float("nan"), float("nan"),
                        peak_nodes, peak_nodes * tape.NODE_BYTES,
                        status=status, spike_total=spike_total)
    return BenchRow(size, t_steps, mode,
                    statistics.median(fwd_times), statistics.median(bwd_times),
                    peak_nodes, peak_nodes * tape.NODE_BYTES,
                    spike_total=spike_total)


def bench_sweep(sizes, t_list, modes, substeps: int = 1000,
                seed: int = 0, repeats: int = 3) -> list[BenchRow]:
    rows = []
    for size in sizes:
        for t_steps in t_list:
            for mode in modes:
                rows.append(bench_cell(size, t_steps, mode,
                                       substeps=substeps, seed=seed,
                                       repeats=repeats))
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(asdict(r))
    return out.getvalue()


# --- accuracy grid ----------------------------------------------------


def grid_run(archs, bits_list, seeds, dataset, base_config: dict | None = None,
             progress=None) -> list[training.TrainRun]:
    """Train every (architecture, bit width, seed) cell independently.

    bits 0 means full precision.  Cells that explode still return
    their TrainRun (status records the failure); the summary step
    counts them as missing rather than aborting the sweep.
    """
    runs = []
    for arch in archs:
        for bits in bits_list:
            for seed in seeds:
                cell = dict(base_config or {})
                cell["seed"] = seed
                cfg, spec = training.default_cell(arch, bits, overrides=cell)
                net = netdata.build_network(spec, seed=seed)
                run = training.train(net, dataset, cfg)
                runs.append(run)
                if progress is not None:
                    progress(run)
    return runs


def summarize_grid(runs: list[training.TrainRun]) -> list[dict]:
    """Mean and sample sigma of test accuracy per (arch, bits) cell."""
    cells: dict = {}
    for r in runs:
        cells.setdefault((r.arch, r.bits), []).append(r)
    out = []
    for (arch, bits), rs in sorted(cells.items()):
        accs = [r.test_acc for r in rs if r.status == "completed"
                and not math.isnan(r.test_acc)]
        missing = len(rs) - len(accs)
        mean = statistics.mean(accs) if accs else float("nan")
        sigma = statistics.stdev(accs) if len(accs) > 1 else 0.0
        out.append({"arch": arch, "bits": bits, "n": len(accs),
                    "missing": missing, "mean_acc": mean, "sigma": sigma})
    return out


def grid_to_csv(summary: list[dict]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=["arch", "bits", "n", "missing",
                                        "mean_acc", "sigma"],
                       lineterminator="\n")
    w.writeheader()
    for row in summary:
        w.writerow(row)
    return out.getvalue()


# --- random-search HPO ------------------------------------------------


@dataclass
class HpoSpec:
    """Search space for the uniform random search.

    Decay factors are uniform on (lo, hi); the learning rate is
    log-uniform; v_thr only applies to the felif architecture.
    """

    arch: str = "felif"
    bits: int = 0
    trials: int = 20
    epochs: int = 8
    alpha_range: tuple = (0.1, 0.95)
    beta_range: tuple = (0.1, 0.95)
    lr_range: tuple = (1e-4, 5e-2)
    v_thr_range: tuple = (2.0, 4.5)
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _sample_trial(spec: HpoSpec, rng: np.random.Generator) -> dict:
    lo, hi = spec.lr_range
    cfg = {
        "alpha_hid": float(rng.uniform(*spec.alpha_range)),
        "beta_hid": float(rng.uniform(*spec.beta_range)),
        "lr": float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
    }
    if spec.arch == "felif":
        cfg["v_thr_out"] = float(rng.uniform(*spec.v_thr_range))
    else:
        cfg["alpha_out"] = float(rng.uniform(*spec.alpha_range))
        cfg["beta_out"] = float(rng.uniform(*spec.beta_range))
    return cfg


def random_search(spec: HpoSpec, dataset, progress=None):
    """Uniform random search maximizing validation accuracy.

    Returns (best_config, trial_log); every trial is logged with its
    sampled configuration, validation accuracy, and run status, so a
    crashy corner of the space is visible instead of vanishing.
    """
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(spec.seed, spawn_key=(30,))))
    log = []
    best = None
    for k in range(spec.trials):
        overrides = _sample_trial(spec, rng)
        cfg, net_spec = training.default_cell(
            spec.arch, spec.bits,
            overrides={**overrides, "epochs": spec.epochs,
                       "seed": spec.seed + k})
        net = netdata.build_network(net_spec, seed=spec.seed + k)
        run = training.train(net, dataset, cfg)
        val = max((e["val_acc"] for e in run.epochs), default=float("nan"))
        entry = {"trial": k, "config": overrides, "val_acc": val,
                 "status": run.status}
        log.append(entry)
        if progress is not None:
            progress(entry)
        if run.status == "completed" and not math.isnan(val):
            if best is None or val > best["val_acc"]:
                best = entry
    if best is None:
        return None, log
    return dict(best["config"]), log
