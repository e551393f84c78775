"""Command-line entry point: ``otfs-npbl simulate|estimate|sweep|score``.

Exit codes: 0 success, 2 configuration or file-schema error, 3 empty
estimate.
"""

import argparse
import csv
from dataclasses import dataclass, field, fields, replace
from importlib import resources
import json
import math
import os
import sys

import jsonschema
import numpy as np

from .channel_gen import ChannelRealization, Path, ScenarioConfig, apply_channel, sample_channel
from .dd_core import DDGridConfig, WindowMode
from .eval_harness import (
    FrameConfig,
    SweepConfig,
    fmt_float,
    nmse,
    reconstruct_effective_channel,
    run_sweep,
    snr_to_precision,
    summarize,
    write_records_csv,
    write_summary_csv,
)
from .exceptions import ConfigurationError
from .frame_pilot import ReceivedFrame, build_pilot_frame, extract_window
from .npbl import Hyperparams, run_npbl

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EMPTY = 3

PATH_FIELDS = ("h_re", "h_im", "k_nu", "l_tau", "cluster_id")
TRACE_FIELDS = ("iteration", "delta", "n_paths", "b_w")

_SCENARIO_KEYS = (
    "carrier_hz", "max_delay_s", "max_velocity_kmh", "n_clusters", "cluster_power_rule",
    "delay_spread_s", "doppler_spread_hz", "paths_per_cluster",
)
_SWEEP_KEYS = ("snr_grid_db", "cluster_grid", "trials_per_point", "record_timing")


class UsageError(Exception):
    """Bad config or input file; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs, with defaults merged in."""

    seed: int = 0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    frame: FrameConfig = field(default_factory=FrameConfig)
    estimator: Hyperparams = field(default_factory=Hyperparams)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    snr_db: object = 15.0
    output_dir: str = "out"
    trace: bool = False
    paths: tuple = None

    def sweep_config(self):
        return replace(
            self.sweep, scenario=self.scenario, frame=self.frame,
            estimator_params=self.estimator, master_seed=self.seed,
        )

    def to_dict(self):
        """JSON-ready effective configuration; loading it gives back an equal RunConfig."""
        sc = self.scenario
        scenario = {"M": sc.grid.M, "N": sc.grid.N, "delta_f": sc.grid.delta_f}
        scenario.update({k: _jsonable(getattr(sc, k)) for k in _SCENARIO_KEYS})
        frame = {
            "pilot_k": self.frame.pilot_k,
            "pilot_l": self.frame.pilot_l,
            "pilot_value": float(np.real(self.frame.pilot_value)),
            "mode": WindowMode(self.frame.mode).value,
        }
        estimator = {f.name: _jsonable(getattr(self.estimator, f.name)) for f in fields(Hyperparams)}
        sweep = {k: _jsonable(getattr(self.sweep, k)) for k in _SWEEP_KEYS}
        out = {
            "seed": self.seed,
            "snr_db": self.snr_db,
            "output_dir": self.output_dir,
            "trace": self.trace,
            "scenario": scenario,
            "frame": frame,
            "estimator": estimator,
            "sweep": sweep,
        }
        if self.paths is not None:
            out["paths"] = [dict(zip(PATH_FIELDS, p)) for p in self.paths]
        return out


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def load_schema():
    return json.loads(resources.files("otfs_npbl").joinpath("config.schema.json").read_text())


def _schema_message(err):
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"config error at {where}: {err.message}"


def parse_config(data):
    """Validate a decoded JSON object and build a RunConfig.

    Raises UsageError naming the offending key or value.
    """
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise UsageError("\n".join(_schema_message(e) for e in errors))
    try:
        s = dict(data["scenario"])
        grid_kw = {k: s.pop(k) for k in ("M", "N", "delta_f") if k in s}
        grid = DDGridConfig(**{"M": 32, "N": 32, "delta_f": 15e3, **grid_kw})
        for key in ("n_clusters", "cluster_power_rule", "paths_per_cluster"):
            if isinstance(s.get(key), list):
                s[key] = tuple(s[key])
        scenario = ScenarioConfig(grid=grid, seed=int(data["seed"]), **s)
        frame = FrameConfig(**data.get("frame", {}))
        est = dict(data.get("estimator", {}))
        for key, val in est.items():
            if isinstance(val, list):
                est[key] = tuple(val)
        estimator = Hyperparams(**est)
        sw = dict(data.get("sweep", {}))
        for key in ("snr_grid_db", "cluster_grid"):
            if key in sw:
                sw[key] = tuple(sw[key])
        sweep = SweepConfig(**sw)
        paths = None
        if "paths" in data:
            paths = tuple(
                (float(p["h_re"]), float(p["h_im"]), float(p["k_nu"]), float(p["l_tau"]), int(p.get("cluster_id", 0)))
                for p in data["paths"]
            )
        cfg = RunConfig(
            seed=int(data["seed"]),
            scenario=scenario,
            frame=frame,
            estimator=estimator,
            sweep=sweep,
            snr_db=data.get("snr_db", RunConfig.snr_db),
            output_dir=data.get("output_dir", RunConfig.output_dir),
            trace=bool(data.get("trace", False)),
            paths=paths,
        )
        # the pilot guard must fit even when the estimator observes the full frame
        replace(cfg.frame, mode=WindowMode.WINDOWED).window(cfg.scenario).validate(cfg.scenario.grid)
    except (ConfigurationError, ValueError, TypeError) as exc:
        raise UsageError(f"config error: {exc}") from exc
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    return parse_config(data)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def fmt_complex(z):
    """``re+imj`` with 17 significant digits per part; readable by ``complex()``."""
    z = complex(z)
    im = fmt_float(z.imag)
    if not im.startswith("-"):
        im = "+" + im
    return f"{fmt_float(z.real)}{im}j"


def write_matrix_csv(mat, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(mat):
            w.writerow([fmt_complex(z) for z in row])


def read_matrix_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        mat = np.array([[complex(v) for v in row] for row in rows], dtype=np.complex128)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot parse frame file {path}: {exc}") from exc
    if mat.ndim != 2:
        raise UsageError(f"{path}: rows have unequal lengths")
    return mat


def write_paths_csv(paths, path):
    """Path list as ``h_re,h_im,k_nu,l_tau,cluster_id`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_FIELDS)
        for h, k, l, c in paths:
            h = complex(h)
            w.writerow([fmt_float(h.real), fmt_float(h.imag), fmt_float(k), fmt_float(l), int(c)])


def read_paths_csv(path):
    """Inverse of write_paths_csv: list of ``(h, k_nu, l_tau, cluster_id)``."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != PATH_FIELDS:
                raise UsageError(f"{path}: expected header {','.join(PATH_FIELDS)}, got {header}")
            out = []
            for n, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(PATH_FIELDS):
                    raise UsageError(f"{path}:{n}: expected {len(PATH_FIELDS)} fields, got {len(row)}")
                out.append((complex(float(row[0]), float(row[1])), float(row[2]), float(row[3]), int(row[4])))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return out


def write_trace_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for it, delta, n_paths, b_w in rows:
            w.writerow([it, fmt_float(delta), n_paths, fmt_float(b_w)])


def write_effective_config(cfg, out_dir):
    with open(os.path.join(out_dir, "effective_config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# charts
# --------------------------------------------------------------------------


def _db(x):
    return 10.0 * np.log10(np.maximum(np.asarray(x, dtype=float), 1e-30))


def plot_sweep(summary, out_dir):
    """One SVG per swept axis (SNR when nothing varies); returns the file paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    snrs = sorted({row["snr_db"] for row in summary})
    ncls = sorted({row["n_clusters"] for row in summary})
    axes = [a for a, vals in (("snr", snrs), ("clusters", ncls)) if len(vals) > 1] or ["snr"]
    index = {(row["snr_db"], row["n_clusters"]): row for row in summary}
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "otfs-npbl", "svg.fonttype": "none"}):
        for axis in axes:
            xs, series, xlabel, fname, label = (
                (snrs, ncls, "SNR (dB)", "nmse_vs_snr.svg", "{} clusters")
                if axis == "snr"
                else (ncls, snrs, "number of clusters", "nmse_vs_clusters.svg", "SNR {:g} dB")
            )
            fig, ax = plt.subplots(figsize=(6.0, 4.0))
            for n, s in enumerate(series):
                rows = [index[(x, s) if axis == "snr" else (s, x)] for x in xs]
                med = _db([r["nmse_median"] for r in rows])
                ax.fill_between(xs, _db([r["nmse_q1"] for r in rows]), _db([r["nmse_q3"] for r in rows]), alpha=0.25)
                ax.plot(xs, med, marker="o", label=label.format(s), gid=f"series_{n}")
            ax.set_xticks(xs)
            ax.set_xlabel(xlabel)
            ax.set_ylabel("median NMSE (dB)")
            ax.grid(True, alpha=0.3)
            ax.legend()
            fig.tight_layout()
            path = os.path.join(out_dir, fname)
            fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
            plt.close(fig)
            written.append(path)
    return written


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _channel_from_config(cfg, rng):
    if cfg.paths is None:
        return sample_channel(cfg.scenario, rng)
    paths = tuple(Path(complex(hr, hi), 0.0, 0.0, l, k, c) for hr, hi, k, l, c in cfg.paths)
    return ChannelRealization(paths, cfg.scenario.grid, float(sum(abs(p.gain) ** 2 for p in paths)))


def cmd_simulate(cfg, out_dir):
    rng = np.random.default_rng(cfg.seed)
    channel = _channel_from_config(cfg, rng)
    sc = cfg.scenario
    frame = build_pilot_frame(
        sc.grid, (cfg.frame.pilot_k, cfg.frame.pilot_l), cfg.frame.pilot_value,
        sc.k_max, sc.l_max, WindowMode(cfg.frame.mode),
    )
    precision = np.inf if cfg.snr_db is None else snr_to_precision(cfg.snr_db)
    received = apply_channel(frame, channel, precision, rng)
    write_paths_csv([(p.gain, p.k_nu, p.l_tau, p.cluster_id) for p in channel.paths],
                    os.path.join(out_dir, "channel.csv"))
    write_matrix_csv(frame.symbols, os.path.join(out_dir, "tx_frame.csv"))
    write_matrix_csv(received.symbols, os.path.join(out_dir, "rx_frame.csv"))
    return EXIT_OK


def cmd_estimate(cfg, out_dir, received_path):
    symbols = read_matrix_csv(received_path)
    grid = cfg.scenario.grid
    if symbols.shape != (grid.N, grid.M):
        raise UsageError(f"{received_path}: frame is {symbols.shape}, config grid is {(grid.N, grid.M)}")
    window = cfg.frame.window(cfg.scenario)
    y_T = extract_window(ReceivedFrame(symbols), window)
    result = run_npbl(y_T, window, grid, cfg.estimator, pilot_value=cfg.frame.pilot_value, trace=cfg.trace)
    write_paths_csv(result.paths_est, os.path.join(out_dir, "estimate.csv"))
    if cfg.trace:
        write_trace_csv(result.trace, os.path.join(out_dir, "trace.csv"))
    return EXIT_EMPTY if result.empty else EXIT_OK


def cmd_sweep(cfg, out_dir, threads=None):
    records = run_sweep(cfg.sweep_config(), workers=threads)
    summary = summarize(records)
    write_records_csv(records, os.path.join(out_dir, "records.csv"))
    write_summary_csv(summary, os.path.join(out_dir, "summary.csv"))
    plot_sweep(summary, out_dir)
    return EXIT_OK


def score(cfg, truth, estimate):
    """NMSE of two path lists on the configured observation window."""
    window = cfg.frame.window(cfg.scenario)
    grid = cfg.scenario.grid
    h_true = reconstruct_effective_channel(truth, window, grid)
    h_est = reconstruct_effective_channel(estimate, window, grid)
    try:
        return nmse(h_true, h_est)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_score(cfg, truth_path, estimate_path, stream=None):
    value = score(cfg, read_paths_csv(truth_path), read_paths_csv(estimate_path))
    stream = sys.stdout if stream is None else stream
    db = 10.0 * math.log10(value) if value > 0 else -math.inf
    print(f"nmse {fmt_float(value)}", file=stream)
    print(f"nmse_db {fmt_float(db)}", file=stream)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="otfs-npbl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--trace", action="store_true", help="write per-iteration trace.csv")
        return p

    common(sub.add_parser("simulate", help="draw a channel and write truth and frames"))
    est = common(sub.add_parser("estimate", help="run the estimator on a received frame"))
    est.add_argument("--received", required=True, help="received frame CSV from simulate")
    sw = common(sub.add_parser("sweep", help="Monte Carlo NMSE sweep"))
    sw.add_argument("--threads", type=int, help="worker processes (default OTFS_NPBL_THREADS or 1)")
    sc = common(sub.add_parser("score", help="NMSE of an estimate against the truth"))
    sc.add_argument("--truth", required=True)
    sc.add_argument("--estimate", required=True)
    return parser


def _apply_overrides(cfg, args):
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, seed=args.seed, scenario=replace(cfg.scenario, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    if args.trace:
        cfg = replace(cfg, trace=True)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out_dir = cfg.output_dir
        if args.command != "score":
            os.makedirs(out_dir, exist_ok=True)
            write_effective_config(cfg, out_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "estimate":
            return cmd_estimate(cfg, out_dir, args.received)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, threads=args.threads)
        return cmd_score(cfg, args.truth, args.estimate)
    except (UsageError, ConfigurationError) as exc:
        print(f"otfs-npbl: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
