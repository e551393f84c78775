"""Embedded-pilot transmit frames and observation-window extraction."""

from dataclasses import dataclass

import numpy as np

from .dd_core import DDGridConfig, ObservationWindow, WindowMode


@dataclass(frozen=True)
class Frame:
    """N x M (Doppler x delay) transmit frame with a single guarded pilot."""

    symbols: np.ndarray
    pilot_pos: tuple
    pilot_value: complex
    guard: ObservationWindow


@dataclass(frozen=True)
class ReceivedFrame:
    symbols: np.ndarray
    provenance: object = None


def build_pilot_frame(grid, pilot_pos, pilot_value=1.0, k_max=0, l_max=0, mode=WindowMode.WINDOWED):
    k_p, l_p = (int(v) for v in pilot_pos)
    guard = ObservationWindow(k_p=k_p, l_p=l_p, k_max=int(k_max), l_max=int(l_max), mode=mode)
    # the guard region must fit without wraparound whatever the estimation mode
    ObservationWindow(k_p, l_p, guard.k_max, guard.l_max, WindowMode.WINDOWED).validate(grid)
    symbols = np.zeros((grid.N, grid.M), dtype=np.complex128)
    symbols[k_p, l_p] = pilot_value
    return Frame(symbols=symbols, pilot_pos=(k_p, l_p), pilot_value=complex(pilot_value), guard=guard)


def grid_of(symbols, delta_f=1.0):
    """Grid geometry implied by a frame's shape (spacing irrelevant for indexing)."""
    n_dop, n_del = symbols.shape
    return DDGridConfig(M=n_del, N=n_dop, delta_f=delta_f)


def extract_window(received, window):
    """Observation vector y_T in the delay-major order shared with the sensing rows."""
    symbols = received.symbols if hasattr(received, "symbols") else np.asarray(received)
    grid = grid_of(symbols)
    window.validate(grid)
    kk, ll = window.cells(grid)
    return symbols[kk, ll].copy()
