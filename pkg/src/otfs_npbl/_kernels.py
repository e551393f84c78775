"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba implementations are used unless ``OTFS_NPBL_DISABLE_NUMBA`` is set
to a truthy value (or numba cannot be imported). Both implementations are
importable directly as ``numpy_impl`` / ``numba_impl`` for benchmarking and
cross-checking.
"""

import os
import types

import numpy as np

# Below this |sin(pi x / n)| the closed-form kernel is replaced by its series.
SINGULAR_TOL = 1e-8
# The closed-form derivative cancels two O(1) terms over sin(pi x / n), so it
# switches to the series much earlier to keep full precision.
DERIV_TOL = 1e-3


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _np_series(x, n, sign):
    x = np.asarray(x, dtype=np.float64)
    idx = np.arange(n, dtype=np.float64)
    ph = np.exp(sign * 2j * np.pi * np.multiply.outer(x, idx) / n)
    return ph.sum(axis=-1) / n


def _np_series_deriv(x, n, sign):
    x = np.asarray(x, dtype=np.float64)
    idx = np.arange(n, dtype=np.float64)
    slope = sign * 2j * np.pi * idx / n
    ph = np.exp(np.multiply.outer(x, slope))
    return (ph * slope).sum(axis=-1) / n


def _np_dirichlet(x, n, sign):
    """(1/n) e^{sign j (n-1) pi x / n} sin(pi x) / sin(pi x / n)."""
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    x = x.reshape(-1)
    den = np.sin(np.pi * x / n)
    singular = np.abs(den) < SINGULAR_TOL
    safe = np.where(singular, 1.0, den)
    out = np.exp(sign * 1j * (n - 1) * np.pi * x / n) * np.sin(np.pi * x) / (n * safe)
    if np.any(singular):
        out[singular] = _np_series(x[singular], n, sign)
    return out.reshape(shape)


def _np_dirichlet_deriv(x, n, sign):
    """d/dx of the Dirichlet kernel in closed form, series near its singular points."""
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    x = x.reshape(-1)
    den = np.sin(np.pi * x / n)
    singular = np.abs(den) < DERIV_TOL
    safe = np.where(singular, 1.0, den)
    a = np.pi * x / n
    bracket = (sign * 1j * np.pi * (n - 1) / n - (np.pi / n) * np.cos(a) / safe) * np.sin(np.pi * x)
    out = np.exp(sign * 1j * (n - 1) * a) * (bracket + np.pi * np.cos(np.pi * x)) / (n * safe)
    if np.any(singular):
        out[singular] = _np_series_deriv(x[singular], n, sign)
    return out.reshape(shape)


def _np_dd_convolve(x, gains, k_nu, l_tau):
    """Literal DD input-output sum y(k,l) = sum_{k',l'} h_w(k-k', l-l') x(k',l').

    ``x`` is N x M (Doppler x delay). Zero transmit cells contribute nothing
    and are skipped.
    """
    n_dop, n_del = x.shape
    kk = np.arange(n_dop, dtype=np.float64)[:, None, None]
    ll = np.arange(n_del, dtype=np.float64)[None, :, None]
    y = np.zeros((n_dop, n_del), dtype=np.complex128)
    for kp, lp in zip(*np.nonzero(x)):
        wn = _np_dirichlet(kk - kp - k_nu, n_dop, -1.0)
        wt = _np_dirichlet(ll - lp - l_tau, n_del, 1.0)
        y += x[kp, lp] * (wn * wt * gains).sum(axis=-1)
    return y


numpy_impl = types.SimpleNamespace(
    dirichlet=_np_dirichlet,
    dirichlet_deriv=_np_dirichlet_deriv,
    series=_np_series,
    series_deriv=_np_series_deriv,
    dd_convolve=_np_dd_convolve,
)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

numba_impl = None

if numba is not None:

    @numba.njit(cache=True)
    def _nb_series_scalar(x, n, sign):
        acc = 0.0j
        for m in range(n):
            acc += np.exp(sign * 2j * np.pi * x * m / n)
        return acc / n

    @numba.njit(cache=True)
    def _nb_series_deriv_scalar(x, n, sign):
        acc = 0.0j
        for m in range(n):
            slope = sign * 2j * np.pi * m / n
            acc += slope * np.exp(slope * x)
        return acc / n

    @numba.njit(cache=True)
    def _nb_dirichlet_scalar(x, n, sign):
        den = np.sin(np.pi * x / n)
        if abs(den) < SINGULAR_TOL:
            return _nb_series_scalar(x, n, sign)
        return np.exp(sign * 1j * (n - 1) * np.pi * x / n) * np.sin(np.pi * x) / (n * den)

    @numba.njit(cache=True)
    def _nb_dirichlet_deriv_scalar(x, n, sign):
        a = np.pi * x / n
        den = np.sin(a)
        if abs(den) < DERIV_TOL:
            return _nb_series_deriv_scalar(x, n, sign)
        bracket = (sign * 1j * np.pi * (n - 1) / n - (np.pi / n) * np.cos(a) / den) * np.sin(np.pi * x)
        return np.exp(sign * 1j * (n - 1) * a) * (bracket + np.pi * np.cos(np.pi * x)) / (n * den)

    @numba.njit(cache=True)
    def _nb_map(fn_id, flat, n, sign):
        out = np.empty(flat.size, dtype=np.complex128)
        for i in range(flat.size):
            if fn_id == 0:
                out[i] = _nb_dirichlet_scalar(flat[i], n, sign)
            elif fn_id == 1:
                out[i] = _nb_series_scalar(flat[i], n, sign)
            elif fn_id == 3:
                out[i] = _nb_dirichlet_deriv_scalar(flat[i], n, sign)
            else:
                out[i] = _nb_series_deriv_scalar(flat[i], n, sign)
        return out

    def _wrap(fn_id):
        def apply(x, n, sign):
            arr = np.asarray(x, dtype=np.float64)
            flat = np.ascontiguousarray(arr).reshape(-1)
            return _nb_map(fn_id, flat, int(n), float(sign)).reshape(arr.shape)

        return apply

    @numba.njit(cache=True)
    def _nb_dd_convolve_core(x, gains, k_nu, l_tau):
        n_dop, n_del = x.shape
        n_paths = gains.size
        y = np.zeros((n_dop, n_del), dtype=np.complex128)
        wn = np.empty((n_dop, n_paths), dtype=np.complex128)
        wt = np.empty((n_del, n_paths), dtype=np.complex128)
        for kp in range(n_dop):
            for lp in range(n_del):
                xv = x[kp, lp]
                if xv == 0:
                    continue
                # the kernel separates, so tabulate each axis once per transmit cell
                for k in range(n_dop):
                    for i in range(n_paths):
                        wn[k, i] = _nb_dirichlet_scalar(k - kp - k_nu[i], n_dop, -1.0) * gains[i]
                for l in range(n_del):
                    for i in range(n_paths):
                        wt[l, i] = _nb_dirichlet_scalar(l - lp - l_tau[i], n_del, 1.0)
                for k in range(n_dop):
                    for l in range(n_del):
                        hw = 0.0j
                        for i in range(n_paths):
                            hw += wn[k, i] * wt[l, i]
                        y[k, l] += hw * xv
        return y

    def _nb_dd_convolve(x, gains, k_nu, l_tau):
        return _nb_dd_convolve_core(
            np.ascontiguousarray(x, dtype=np.complex128),
            np.ascontiguousarray(gains, dtype=np.complex128),
            np.ascontiguousarray(k_nu, dtype=np.float64),
            np.ascontiguousarray(l_tau, dtype=np.float64),
        )

    numba_impl = types.SimpleNamespace(
        dirichlet=_wrap(0),
        dirichlet_deriv=_wrap(3),
        series=_wrap(1),
        series_deriv=_wrap(2),
        dd_convolve=_nb_dd_convolve,
    )


USE_NUMBA = numba_impl is not None and not _env_flag("OTFS_NPBL_DISABLE_NUMBA")
active = numba_impl if USE_NUMBA else numpy_impl
