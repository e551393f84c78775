"""Monte Carlo NMSE experiments: scenario -> frame -> channel -> NPBL -> NMSE."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import itertools
import math
import os
import time

import numpy as np

from .channel_gen import ScenarioConfig, apply_channel, sample_channel
from .dd_core import ObservationWindow, WindowMode, path_arrays
from . import _kernels
from .frame_pilot import build_pilot_frame, extract_window
from .npbl import Hyperparams, run_npbl

RECORD_FIELDS = ("seed", "snr_db", "n_clusters", "nmse", "iterations", "surviving_paths", "runtime_ms")
SUMMARY_FIELDS = (
    "snr_db", "n_clusters", "trials", "nmse_median", "nmse_mean",
    "nmse_q1", "nmse_q3", "nmse_median_db", "surviving_paths_median", "iterations_median",
)


@dataclass(frozen=True)
class FrameConfig:
    pilot_k: int = 16
    pilot_l: int = 16
    pilot_value: complex = 1.0
    mode: WindowMode = WindowMode.FULL_FRAME

    def window(self, scenario):
        return ObservationWindow(self.pilot_k, self.pilot_l, scenario.k_max, scenario.l_max, WindowMode(self.mode))


@dataclass(frozen=True)
class SweepConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    snr_grid_db: tuple = (-5.0, 0.0, 5.0, 10.0, 15.0)
    cluster_grid: tuple = (3,)
    trials_per_point: int = 100
    master_seed: int = 0
    estimator_params: Hyperparams = field(default_factory=Hyperparams)
    frame: FrameConfig = field(default_factory=FrameConfig)
    record_timing: bool = True

    def __post_init__(self):
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be >= 1")
        if not self.snr_grid_db or not self.cluster_grid:
            raise ValueError("snr_grid_db and cluster_grid must be non-empty")


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    snr_db: float
    n_clusters: int
    nmse: float
    iterations: int
    surviving_paths: int
    runtime_ms: float


def snr_to_precision(snr_db):
    """Noise precision for a unit-energy channel and unit-power pilot."""
    return 10.0 ** (snr_db / 10.0)


def trial_seed(master_seed, snr_db, n_clusters, trial_index):
    """64-bit trial seed keyed by (master_seed, point, trial_index)."""
    snr_key = int(round(float(snr_db) * 1000)) + 2**31
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(snr_key, int(n_clusters), int(trial_index)))
    return int(ss.generate_state(1, np.uint64)[0])


def reconstruct_effective_channel(paths, window, grid):
    """Effective response h_w at every window cell (delay-major order)."""
    kk, ll = window.cells(grid)
    h, k, l = path_arrays(paths)
    if h.size == 0:
        return np.zeros(kk.size, dtype=np.complex128)
    dk = (kk - window.k_p)[:, None] - k[None, :]
    dl = (ll - window.l_p)[:, None] - l[None, :]
    wn = _kernels.active.dirichlet(dk, grid.N, -1.0)
    wt = _kernels.active.dirichlet(dl, grid.M, 1.0)
    return (wn * wt) @ h


def nmse(h_true, h_est):
    h_true = np.asarray(h_true)
    h_est = np.asarray(h_est)
    if h_true.shape != h_est.shape:
        raise ValueError(f"shape mismatch {h_true.shape} vs {h_est.shape}")
    den = float(np.vdot(h_true, h_true).real)
    if den == 0.0:
        raise ValueError("reference channel has zero norm")
    diff = h_true - h_est
    return float(np.vdot(diff, diff).real) / den


def simulate_observation(scenario, frame_cfg, snr_db, rng):
    """Draw a channel and return (channel, window, y_T)."""
    channel = sample_channel(scenario, rng)
    window = frame_cfg.window(scenario)
    frame = build_pilot_frame(
        scenario.grid, (frame_cfg.pilot_k, frame_cfg.pilot_l), frame_cfg.pilot_value,
        scenario.k_max, scenario.l_max, window.mode,
    )
    precision = np.inf if snr_db is None else snr_to_precision(snr_db)
    received = apply_channel(frame, channel, precision, rng)
    return channel, window, extract_window(received, window)


def run_trial(point, trial_index, cfg):
    snr_db, n_clusters = point
    seed = trial_seed(cfg.master_seed, snr_db, n_clusters, trial_index)
    rng = np.random.default_rng(seed)
    scenario = replace(cfg.scenario, n_clusters=int(n_clusters))
    channel, window, y_T = simulate_observation(scenario, cfg.frame, snr_db, rng)
    grid = scenario.grid

    t0 = time.perf_counter()
    result = run_npbl(y_T, window, grid, cfg.estimator_params, pilot_value=cfg.frame.pilot_value)
    runtime_ms = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else 0.0

    h_true = reconstruct_effective_channel(channel.paths, window, grid)
    h_est = reconstruct_effective_channel(result.paths_est, window, grid)
    return TrialRecord(
        seed=seed,
        snr_db=float(snr_db),
        n_clusters=int(n_clusters),
        nmse=nmse(h_true, h_est),
        iterations=result.iterations,
        surviving_paths=len(result.paths_est),
        runtime_ms=float(runtime_ms),
    )


def _run_task(task):
    point, trial_index, cfg = task
    return run_trial(point, trial_index, cfg)


def resolve_workers(workers=None):
    """Worker count: explicit value, else ``OTFS_NPBL_THREADS``, else 1."""
    if workers is None:
        workers = int(os.environ.get("OTFS_NPBL_THREADS", "1") or 1)
    return max(1, int(workers))


def run_sweep(cfg, workers=None):
    """All (snr, clusters, trial) combinations, returned in canonical order."""
    tasks = [
        ((snr, ncl), t, cfg)
        for snr, ncl in itertools.product(cfg.snr_grid_db, cfg.cluster_grid)
        for t in range(cfg.trials_per_point)
    ]
    workers = resolve_workers(workers)
    if workers == 1:
        records = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return records


def summarize(records):
    """Per-point statistics, one dict per (snr_db, n_clusters) in first-seen order."""
    groups = {}
    for rec in records:
        groups.setdefault((rec.snr_db, rec.n_clusters), []).append(rec)
    out = []
    for (snr, ncl), recs in groups.items():
        vals = np.array([r.nmse for r in recs])
        med = float(np.median(vals))
        out.append({
            "snr_db": snr,
            "n_clusters": ncl,
            "trials": len(recs),
            "nmse_median": med,
            "nmse_mean": float(vals.mean()),
            "nmse_q1": float(np.percentile(vals, 25)),
            "nmse_q3": float(np.percentile(vals, 75)),
            "nmse_median_db": 10.0 * math.log10(med) if med > 0 else -math.inf,
            "surviving_paths_median": float(np.median([r.surviving_paths for r in recs])),
            "iterations_median": float(np.median([r.iterations for r in recs])),
        })
    return out


def fmt_float(x):
    """17 significant digits, exact round-trip."""
    return format(float(x), ".17g")


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.seed, fmt_float(r.snr_db), r.n_clusters, fmt_float(r.nmse),
                        r.iterations, r.surviving_paths, fmt_float(r.runtime_ms)])


def read_records_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TrialRecord(int(d["seed"]), float(d["snr_db"]), int(d["n_clusters"]), float(d["nmse"]),
                    int(d["iterations"]), int(d["surviving_paths"]), float(d["runtime_ms"]))
        for d in rows
    ]


def write_summary_csv(summary, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in summary:
            w.writerow([fmt_float(row[k]) if isinstance(row[k], float) else row[k] for k in SUMMARY_FIELDS])
