"""Delay-Doppler sampling kernels, effective channel response and sensing matrices.

Everything here works in grid-index units: a path sits at fractional Doppler
index ``k_nu`` and fractional delay index ``l_tau``.

Sensing-matrix convention (frozen, all downstream algebra relies on it):
rows are window cells in delay-major order (delay ``l`` outer, Doppler ``k``
inner), columns are paths.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .exceptions import ConfigurationError, EmptyModelError


@dataclass(frozen=True)
class DDGridConfig:
    """OTFS grid geometry. ``slot_T`` defaults to ``1 / delta_f``."""

    M: int
    N: int
    delta_f: float
    slot_T: float = None

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 2 or self.N < 2:
            raise ConfigurationError(f"grid needs integer M, N >= 2, got M={self.M}, N={self.N}")
        if not self.delta_f > 0:
            raise ConfigurationError(f"delta_f must be positive, got {self.delta_f}")
        if self.slot_T is None:
            object.__setattr__(self, "slot_T", 1.0 / self.delta_f)
        if not np.isclose(self.slot_T * self.delta_f, 1.0, rtol=1e-12, atol=0.0):
            raise ConfigurationError("slot_T must equal 1/delta_f")

    @property
    def delay_resolution(self):
        """Seconds per delay bin, 1/(M delta_f)."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def doppler_resolution(self):
        """Hz per Doppler bin, 1/(N slot_T)."""
        return 1.0 / (self.N * self.slot_T)


class WindowMode(str, Enum):
    WINDOWED = "windowed"
    FULL_FRAME = "full_frame"


@dataclass(frozen=True)
class ObservationWindow:
    k_p: int
    l_p: int
    k_max: int
    l_max: int
    mode: WindowMode = WindowMode.WINDOWED

    def __post_init__(self):
        object.__setattr__(self, "mode", WindowMode(self.mode))
        if self.k_max < 0 or self.l_max < 0:
            raise ConfigurationError("k_max and l_max must be non-negative")

    def doppler_indices(self, grid):
        if self.mode is WindowMode.FULL_FRAME:
            return np.arange(grid.N)
        return np.arange(self.k_p - self.k_max, self.k_p + self.k_max + 1)

    def delay_indices(self, grid):
        if self.mode is WindowMode.FULL_FRAME:
            return np.arange(grid.M)
        return np.arange(self.l_p, self.l_p + self.l_max + 1)

    def size(self, grid):
        if self.mode is WindowMode.FULL_FRAME:
            return grid.M * grid.N
        return (self.l_max + 1) * (2 * self.k_max + 1)

    def cells(self, grid):
        """(k, l) index arrays of every window cell in delay-major order."""
        ll, kk = np.meshgrid(self.delay_indices(grid), self.doppler_indices(grid), indexing="ij")
        return kk.ravel(), ll.ravel()

    def validate(self, grid):
        """Reject windows whose guard region would wrap around the grid."""
        if not (0 <= self.k_p < grid.N and 0 <= self.l_p < grid.M):
            raise ConfigurationError(f"pilot ({self.k_p}, {self.l_p}) outside {grid.N}x{grid.M} grid")
        if self.mode is WindowMode.FULL_FRAME:
            return
        if self.l_p - self.l_max < 0 or self.l_p + self.l_max > grid.M - 1:
            raise ConfigurationError(
                f"delay guard [{self.l_p - self.l_max}, {self.l_p + self.l_max}] exceeds 0..{grid.M - 1}"
            )
        if self.k_p - 2 * self.k_max < 0 or self.k_p + 2 * self.k_max > grid.N - 1:
            raise ConfigurationError(
                f"Doppler guard [{self.k_p - 2 * self.k_max}, {self.k_p + 2 * self.k_max}]"
                f" exceeds 0..{grid.N - 1}"
            )


@dataclass(frozen=True)
class SensingSet:
    phi: np.ndarray
    phi_nu: np.ndarray
    phi_tau: np.ndarray
    anchor_k: np.ndarray
    anchor_l: np.ndarray
    pilot_value: complex

    @property
    def n_paths(self):
        return self.phi.shape[1]


def sampling_fn_doppler(k_tilde, N):
    """Doppler sampling kernel w_nu; scalar or array input."""
    return _scalarize(_kernels.active.dirichlet(k_tilde, N, -1.0), k_tilde)


def sampling_fn_delay(l_tilde, M):
    """Delay sampling kernel w_tau (conjugate phase of w_nu)."""
    return _scalarize(_kernels.active.dirichlet(l_tilde, M, 1.0), l_tilde)


def sampling_fn_doppler_deriv(k_tilde, N):
    return _scalarize(_kernels.active.dirichlet_deriv(k_tilde, N, -1.0), k_tilde)


def sampling_fn_delay_deriv(l_tilde, M):
    return _scalarize(_kernels.active.dirichlet_deriv(l_tilde, M, 1.0), l_tilde)


def _scalarize(out, arg):
    return complex(out) if np.ndim(arg) == 0 else out


def path_arrays(paths):
    """Split a path list into (gains, k_nu, l_tau) arrays.

    Accepts objects with ``gain``/``k_nu``/``l_tau`` attributes or plain
    ``(h, k_nu, l_tau, ...)`` tuples.
    """
    if len(paths) == 0:
        return np.zeros(0, complex), np.zeros(0), np.zeros(0)
    if hasattr(paths[0], "gain"):
        rows = [(p.gain, p.k_nu, p.l_tau) for p in paths]
    else:
        rows = [tuple(p[:3]) for p in paths]
    h, k, l = zip(*rows)
    return np.asarray(h, complex), np.asarray(k, float), np.asarray(l, float)


def effective_response(paths, grid, dk, dl):
    """Effective impulse response h_w at grid offset (dk, dl)."""
    h, k, l = path_arrays(paths)
    wn = _kernels.active.dirichlet(np.asarray(dk, float) - k, grid.N, -1.0)
    wt = _kernels.active.dirichlet(np.asarray(dl, float) - l, grid.M, 1.0)
    return complex(np.sum(h * wn * wt))


def build_sensing_set(window, grid, anchor_k, anchor_l, pilot_value=1.0):
    """Sensing matrix and its analytic Jacobians at the given anchors."""
    anchor_k = np.atleast_1d(np.asarray(anchor_k, dtype=np.float64)).copy()
    anchor_l = np.atleast_1d(np.asarray(anchor_l, dtype=np.float64)).copy()
    if anchor_k.shape != anchor_l.shape:
        raise ValueError("anchor_k and anchor_l must have the same length")
    if anchor_k.size == 0:
        raise EmptyModelError("sensing set needs at least one path")
    window.validate(grid)

    kern = _kernels.active
    dk = window.doppler_indices(grid)[:, None] - window.k_p - anchor_k[None, :]
    dl = window.delay_indices(grid)[:, None] - window.l_p - anchor_l[None, :]
    wn, wn_d = kern.dirichlet(dk, grid.N, -1.0), kern.dirichlet_deriv(dk, grid.N, -1.0)
    wt, wt_d = kern.dirichlet(dl, grid.M, 1.0), kern.dirichlet_deriv(dl, grid.M, 1.0)

    n_rows = dl.shape[0] * dk.shape[0]
    x_p = complex(pilot_value)

    def outer(a, b):
        return (x_p * a[:, None, :] * b[None, :, :]).reshape(n_rows, -1)

    # d/d(anchor) = -d/d(offset)
    return SensingSet(
        phi=outer(wt, wn),
        phi_nu=-outer(wt, wn_d),
        phi_tau=-outer(wt_d, wn),
        anchor_k=anchor_k,
        anchor_l=anchor_l,
        pilot_value=x_p,
    )


def linearized_sensing(sensing, k, l):
    """First-order expansion of the sensing matrix around its anchors."""
    k = np.asarray(k, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    if k.shape != sensing.anchor_k.shape or l.shape != sensing.anchor_l.shape:
        raise ValueError(
            f"offset vectors must have length {sensing.n_paths}, got {k.shape} and {l.shape}"
        )
    return (
        sensing.phi
        + sensing.phi_nu * (k - sensing.anchor_k)[None, :]
        + sensing.phi_tau * (l - sensing.anchor_l)[None, :]
    )
