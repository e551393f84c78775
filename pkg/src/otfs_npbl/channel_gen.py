"""Clustered delay-Doppler channel synthesis and the brute-force DD channel."""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import _kernels
from .dd_core import DDGridConfig, path_arrays
from .exceptions import ConfigurationError
from .frame_pilot import ReceivedFrame

SPEED_OF_LIGHT = 299_792_458.0
_MAX_RESAMPLE = 100


@dataclass(frozen=True)
class ClusterSpec:
    mean_delay: float
    mean_doppler: float
    delay_spread: float
    doppler_spread: float
    n_paths: int
    power: float

    def __post_init__(self):
        if not self.power > 0:
            raise ConfigurationError(f"cluster power must be positive, got {self.power}")
        if self.delay_spread < 0 or self.doppler_spread < 0:
            raise ConfigurationError("cluster spreads must be non-negative")
        if self.n_paths < 1:
            raise ConfigurationError("a cluster needs at least one path")


@dataclass(frozen=True)
class Path:
    gain: complex
    delay_s: float
    doppler_hz: float
    l_tau: float
    k_nu: float
    cluster_id: int = 0


@dataclass(frozen=True)
class ChannelRealization:
    paths: tuple
    grid: DDGridConfig
    total_power: float

    @property
    def n_paths(self):
        return len(self.paths)


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario limits. Defaults reproduce the reference high-speed-train setup.

    ``n_clusters`` is an int or an inclusive ``(lo, hi)`` range drawn
    uniformly per realization. ``cluster_power_rule`` is ``"equal"`` or
    ``("dirichlet", alpha)``.
    """

    grid: DDGridConfig = field(default_factory=lambda: DDGridConfig(M=32, N=32, delta_f=15e3))
    carrier_hz: float = 5.9e9
    max_delay_s: float = 8.3e-6
    max_velocity_kmh: float = 500.0
    n_clusters: object = 3
    cluster_power_rule: object = "equal"
    delay_spread_s: float = 0.5e-6
    doppler_spread_hz: float = 100.0
    paths_per_cluster: tuple = (3, 5)
    seed: int = 0

    def __post_init__(self):
        if self.max_delay_s < 0 or self.max_velocity_kmh < 0 or self.carrier_hz <= 0:
            raise ConfigurationError("delay, velocity and carrier must be non-negative (carrier > 0)")
        lo, hi = self.cluster_range
        if lo < 1 or hi < lo:
            raise ConfigurationError(f"invalid n_clusters {self.n_clusters!r}")
        p_lo, p_hi = self.paths_per_cluster
        if p_lo < 1 or p_hi < p_lo:
            raise ConfigurationError(f"invalid paths_per_cluster {self.paths_per_cluster!r}")
        _power_rule(self.cluster_power_rule)
        if self.l_max >= self.grid.M or 2 * self.k_max >= self.grid.N:
            raise ConfigurationError(
                f"derived l_max={self.l_max}, k_max={self.k_max} do not fit a "
                f"{self.grid.N}x{self.grid.M} grid"
            )

    @property
    def cluster_range(self):
        if isinstance(self.n_clusters, (tuple, list)):
            return int(self.n_clusters[0]), int(self.n_clusters[1])
        return int(self.n_clusters), int(self.n_clusters)

    @property
    def nu_max(self):
        return self.carrier_hz * (self.max_velocity_kmh / 3.6) / SPEED_OF_LIGHT

    @property
    def k_max(self):
        return int(math.ceil(self.nu_max * self.grid.N * self.grid.slot_T - 1e-9))

    @property
    def l_max(self):
        return int(math.ceil(self.max_delay_s * self.grid.M * self.grid.delta_f - 1e-9))


def _power_rule(rule):
    if rule == "equal":
        return "equal", None
    if isinstance(rule, (tuple, list)) and len(rule) == 2 and rule[0] == "dirichlet":
        alpha = float(rule[1])
        if alpha > 0:
            return "dirichlet", alpha
    raise ConfigurationError(f"unknown cluster_power_rule {rule!r}")


def physical_to_grid(tau_s, nu_hz, grid):
    """Map physical delay/Doppler to fractional grid indices (l_tau, k_nu)."""
    return tau_s * grid.M * grid.delta_f, nu_hz * grid.N * grid.slot_T


def sample_clusters(cfg, rng):
    lo, hi = cfg.cluster_range
    n_clusters = int(rng.integers(lo, hi + 1))
    if cfg.max_delay_s < 0 or cfg.nu_max < 0:
        raise ConfigurationError("empty admissible delay-Doppler region")
    delays = rng.uniform(0.0, cfg.max_delay_s, size=n_clusters)
    dopplers = rng.uniform(-cfg.nu_max, cfg.nu_max, size=n_clusters)
    kind, alpha = _power_rule(cfg.cluster_power_rule)
    if kind == "equal":
        powers = np.full(n_clusters, 1.0 / n_clusters)
    else:
        powers = rng.dirichlet(np.full(n_clusters, alpha))
        powers = np.maximum(powers, 1e-12)
        powers /= powers.sum()
    p_lo, p_hi = cfg.paths_per_cluster
    n_paths = rng.integers(p_lo, p_hi + 1, size=n_clusters)
    return [
        ClusterSpec(
            mean_delay=float(delays[c]),
            mean_doppler=float(dopplers[c]),
            delay_spread=cfg.delay_spread_s,
            doppler_spread=cfg.doppler_spread_hz,
            n_paths=int(n_paths[c]),
            power=float(powers[c]),
        )
        for c in range(n_clusters)
    ]


def _truncated_normal(rng, mean, std, lo, hi, size):
    """Gaussian draws redrawn until inside [lo, hi]; clipped after 100 attempts."""
    out = rng.normal(mean, std, size=size) if std > 0 else np.full(size, float(mean))
    for _ in range(_MAX_RESAMPLE):
        bad = (out < lo) | (out > hi)
        if not bad.any():
            break
        out[bad] = rng.normal(mean, std, size=int(bad.sum())) if std > 0 else mean
    return np.clip(out, lo, hi)


def sample_paths(clusters, cfg, rng):
    if not clusters:
        raise ConfigurationError("need at least one cluster")
    grid = cfg.grid
    paths = []
    for cid, c in enumerate(clusters):
        taus = _truncated_normal(rng, c.mean_delay, c.delay_spread, 0.0, cfg.max_delay_s, c.n_paths)
        nus = _truncated_normal(rng, c.mean_doppler, c.doppler_spread, -cfg.nu_max, cfg.nu_max, c.n_paths)
        scale = math.sqrt(c.power / c.n_paths / 2.0)
        gains = scale * (rng.standard_normal(c.n_paths) + 1j * rng.standard_normal(c.n_paths))
        for tau, nu, g in zip(taus, nus, gains):
            l_tau, k_nu = physical_to_grid(tau, nu, grid)
            paths.append(Path(complex(g), float(tau), float(nu), float(l_tau), float(k_nu), cid))
    energy = sum(abs(p.gain) ** 2 for p in paths)
    norm = 1.0 / math.sqrt(energy)
    paths = tuple(replace(p, gain=p.gain * norm) for p in paths)
    return ChannelRealization(paths=paths, grid=grid, total_power=float(sum(abs(p.gain) ** 2 for p in paths)))


def sample_channel(cfg, rng):
    """Draw clusters and their paths in one go."""
    return sample_paths(sample_clusters(cfg, rng), cfg, rng)


def complex_noise(rng, shape, noise_precision):
    """Circular complex Gaussian samples with variance 1/noise_precision."""
    std = math.sqrt(0.5 / noise_precision)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def apply_channel(frame, channel, noise_precision, rng=None):
    """Received DD frame: direct double sum plus AWGN.

    ``noise_precision=np.inf`` gives a noiseless frame and draws nothing
    from ``rng``.
    """
    if frame.symbols.shape != (channel.grid.N, channel.grid.M):
        raise ConfigurationError(
            f"frame shape {frame.symbols.shape} does not match grid {(channel.grid.N, channel.grid.M)}"
        )
    if not noise_precision > 0:
        raise ConfigurationError(f"noise precision must be positive, got {noise_precision}")
    h, k, l = path_arrays(channel.paths)
    y = _kernels.active.dd_convolve(frame.symbols, h, k, l)
    if np.isfinite(noise_precision):
        if rng is None:
            raise ValueError("a noisy channel needs an rng")
        y = y + complex_noise(rng, y.shape, noise_precision)
    return ReceivedFrame(symbols=y, provenance=None)
