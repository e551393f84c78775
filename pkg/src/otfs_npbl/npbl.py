"""Nonparametric Bayesian learning (NPBL) channel estimator.

Paths carry a complex gain and fractional Doppler/delay offsets. Each path
belongs (softly) to one of ``T_trunc`` mixture components drawn from a
truncated stick-breaking prior; a component shares a gain precision and a
Gaussian location model over Doppler and delay. Inference is mean-field
variational Bayes with closed-form coordinate updates, a first-order
linearization of the sensing matrix that is re-anchored every outer
iteration, and pruning of paths whose gain precision exceeds ``eta``.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy import linalg
from scipy.special import digamma

from .dd_core import WindowMode, build_sensing_set, linearized_sensing
from .exceptions import ConfigurationError

_EMPTY_MASS = 1e-10


@dataclass(frozen=True)
class Hyperparams:
    """Estimator hyperparameters.

    The Gamma priors accept a scalar (broadcast over components) or a
    length-``T_trunc`` sequence.
    """

    lambda1: float = 1.0
    lambda2: float = 0.05
    a_h: object = 0.25
    b_h: object = 1e-6
    a_nu: object = 1e-3
    b_nu: object = 1.0
    a_tau: object = 1e-3
    b_tau: object = 1.0
    a_w: float = 1e-2
    b_w: float = 1e-2
    T_trunc: int = 4
    eta: float = 1e3
    epsilon: float = 1e-6
    max_iter: int = 500
    P_init: int = 20
    # stick tail sums over l = t..T instead of t+1..T
    stick_tail_includes_t: bool = False
    # "elbo": sigma^2_t = 1 / (<alpha_t> sum_i r_it); "unweighted": 1 / sum_i r_it
    cluster_var_rule: str = "elbo"
    refine_offsets: bool = True
    max_step: float = 0.5
    # extra offset precision: moment-matched uniform prior over the +-max_step trust region
    offset_trust_precision: float = 12.0
    threshold_sigmas: float = 2.0
    # grid step (bins) of the successive matched-filter detector
    detect_step: float = 0.5
    threshold_rel_floor: float = 1e-3
    init_mode: str = "successive"
    # bins of (k, l) distance equivalent to one decade of LS path energy in the initial partition
    init_energy_weight: float = 10.0

    def __post_init__(self):
        if int(self.T_trunc) < 1:
            raise ConfigurationError("T_trunc must be >= 1")
        if int(self.P_init) < 1 or int(self.max_iter) < 1:
            raise ConfigurationError("P_init and max_iter must be >= 1")
        for name in ("lambda1", "lambda2", "a_w", "b_w", "eta", "epsilon", "max_step"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("a_h", "b_h", "a_nu", "b_nu", "a_tau", "b_tau"):
            vec = self.prior(name)
            if not np.all(vec > 0):
                raise ConfigurationError(f"{name} must be positive")
        if not 0 < self.detect_step <= 1:
            raise ConfigurationError("detect_step must lie in (0, 1]")
        if self.offset_trust_precision < 0:
            raise ConfigurationError("offset_trust_precision must be non-negative")
        if self.cluster_var_rule not in ("elbo", "unweighted"):
            raise ConfigurationError(f"unknown cluster_var_rule {self.cluster_var_rule!r}")
        if self.init_mode not in ("successive", "cells", "peaks"):
            raise ConfigurationError(f"unknown init_mode {self.init_mode!r}")

    def prior(self, name):
        try:
            vec = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (int(self.T_trunc),))
        except ValueError as exc:
            raise ConfigurationError(f"{name} must be scalar or length T_trunc") from exc
        return vec.copy()


@dataclass
class VariationalState:
    mu_h: np.ndarray
    Sigma_h: np.ndarray
    mu_k: np.ndarray
    Sigma_k: np.ndarray
    mu_l: np.ndarray
    Sigma_l: np.ndarray
    r: np.ndarray
    lam1_t: np.ndarray
    lam2_t: np.ndarray
    a_h_t: np.ndarray
    b_h_t: np.ndarray
    a_nu_t: np.ndarray
    b_nu_t: np.ndarray
    a_tau_t: np.ndarray
    b_tau_t: np.ndarray
    a_w_post: float
    b_w_post: float
    mu_nu_t: np.ndarray
    sig2_nu_t: np.ndarray
    mu_tau_t: np.ndarray
    sig2_tau_t: np.ndarray
    gamma_h: np.ndarray
    gamma_nu: np.ndarray
    gamma_tau: np.ndarray
    anchor_k: np.ndarray
    anchor_l: np.ndarray
    active: np.ndarray
    hp: Hyperparams
    sensing: object = None
    H_h: np.ndarray = None

    @property
    def n_paths(self):
        return self.mu_h.size

    @property
    def alpha_w(self):
        return self.a_w_post / self.b_w_post


@dataclass
class EstimationResult:
    paths_est: list
    C_hard: np.ndarray
    iterations: int
    delta_trace: list
    pruned_count: int
    status: str = "ok"
    trace: list = field(default_factory=list)
    state: VariationalState = None

    @property
    def empty(self):
        return self.status == "empty"


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------


def noise_sigma_mad(y):
    """Robust noise std of circular complex Gaussian samples from the median magnitude."""
    return float(np.median(np.abs(y)) / math.sqrt(math.log(2.0)))


def _local_maxima(mag2d):
    padded = np.pad(mag2d, 1, constant_values=-np.inf)
    core = padded[1:-1, 1:-1]
    is_max = np.ones_like(mag2d, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = padded[1 + di : 1 + di + mag2d.shape[0], 1 + dj : 1 + dj + mag2d.shape[1]]
            is_max &= core >= nb
    return is_max.ravel()


def _threshold(y, hp, ref_max):
    return max(hp.threshold_sigmas * noise_sigma_mad(y), hp.threshold_rel_floor * ref_max)


def _cell_offsets(window, grid):
    """Integer (k, l) offsets of every observed cell relative to the pilot.

    Full-frame offsets are wrapped into the centred periodic range.
    """
    kk, ll = window.cells(grid)
    k_off = kk - window.k_p
    l_off = ll - window.l_p
    if window.mode is WindowMode.FULL_FRAME:
        k_off = (k_off + grid.N // 2) % grid.N - grid.N // 2
        l_off = (l_off + grid.M // 2) % grid.M - grid.M // 2
    return k_off, l_off


def _detection_grid(window, step):
    """Candidate (k, l) offsets covering the admissible support at the given step."""
    ks = np.arange(-window.k_max, window.k_max + 0.5 * step, step)
    ls = np.arange(0.0, window.l_max + 0.5 * step, step)
    ll, kk = np.meshgrid(ls, ks, indexing="ij")
    return kk.ravel(), ll.ravel()


def _successive_detection(y_T, window, grid, hp):
    """Greedy matched-filter detection on LS residuals.

    Each step correlates the residual with unit-norm atoms on the detection
    grid and keeps the best atom while its correlation clears a threshold
    computed from that residual. On integer grid points the atoms are unit
    vectors, so ``detect_step=1`` reduces to picking residual cells.
    """
    # without offset refinement the anchors stay frozen, so keep them on integer bins
    kg, lg = _detection_grid(window, hp.detect_step if hp.refine_offsets else 1.0)
    atoms = build_sensing_set(window, grid, kg, lg).phi
    atoms = atoms / np.linalg.norm(atoms, axis=0)
    score = np.abs(atoms.conj().T @ y_T)
    ref_max = score.max()
    chosen = [int(np.argmax(score))]
    while len(chosen) < int(hp.P_init):
        phi = atoms[:, chosen]
        resid = y_T - phi @ np.linalg.lstsq(phi, y_T, rcond=None)[0]
        score = np.abs(atoms.conj().T @ resid)
        score[chosen] = -1.0
        best = int(np.argmax(score))
        if not score[best] > _threshold(resid, hp, ref_max):
            break
        chosen.append(best)
    return kg[chosen], lg[chosen]


def detect_candidates(y_T, window, grid, hp):
    """Threshold detector returning (k, l) candidate offsets, strongest first.

    Candidates are restricted to the admissible support ``0 <= l <= l_max``,
    ``|k| <= k_max``; the noise level is estimated from every observed cell.
    The threshold is ``threshold_sigmas`` times the MAD noise estimate,
    floored at ``threshold_rel_floor`` times the strongest response.

    ``"successive"`` mode adds one matched-filter atom at a time on a grid of
    step ``detect_step`` (so offsets may be fractional). ``"peaks"`` keeps
    the above-threshold local maxima of ``|y_T|`` on integer cells and
    ``"cells"`` appends the remaining above-threshold cells. At most
    ``P_init`` candidates are returned and at least one.
    """
    if hp.init_mode == "successive":
        return _successive_detection(y_T, window, grid, hp)
    k_off, l_off = _cell_offsets(window, grid)
    searchable = (np.abs(k_off) <= window.k_max) & (l_off >= 0) & (l_off <= window.l_max)
    mag = np.abs(y_T)
    order = [i for i in np.argsort(-mag, kind="stable") if searchable[i]]
    thr = _threshold(y_T, hp, mag[order[0]])
    ks = window.doppler_indices(grid)
    ls = window.delay_indices(grid)
    peaks = _local_maxima(mag.reshape(ls.size, ks.size))
    above = mag > thr
    chosen = [i for i in order if above[i] and peaks[i]]
    if hp.init_mode == "cells":
        chosen += [i for i in order if above[i] and not peaks[i]]
    chosen = np.asarray(chosen[: int(hp.P_init)] or [order[0]])
    return k_off[chosen].astype(float), l_off[chosen].astype(float)


def _seed_centers(points, weights, T):
    """Farthest-point seeding of T centers, starting at the heaviest point."""
    centers = [int(np.argmax(weights))]
    dist = np.sum((points - points[centers[0]]) ** 2, axis=1)
    for _ in range(1, T):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[centers].astype(float)


def kmeans_partition(points, weights, T, n_iter=10):
    """Seeded Lloyd iterations; returns (centers, labels). Empty clusters keep their seed."""
    centers = _seed_centers(points, weights, T)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(n_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        labels = np.argmin(d2, axis=1)
        for t in range(T):
            if np.any(labels == t):
                centers[t] = points[labels == t].mean(axis=0)
    return centers, labels


def init_state(y_T, window, grid, hp, anchors=None, pilot_value=1.0):
    """Initial variational state from the threshold detector and LS gains.

    ``anchors`` optionally overrides the detector with explicit
    ``(anchor_k, anchor_l)`` offsets.
    """
    y_T = np.asarray(y_T, dtype=np.complex128)
    if y_T.size < 1:
        raise ConfigurationError("empty observation vector")
    if anchors is None:
        anchor_k, anchor_l = detect_candidates(y_T, window, grid, hp)
    else:
        anchor_k = np.asarray(anchors[0], dtype=float).copy()
        anchor_l = np.asarray(anchors[1], dtype=float).copy()
    sensing = build_sensing_set(window, grid, anchor_k, anchor_l, pilot_value)
    P, T, W = anchor_k.size, int(hp.T_trunc), y_T.size

    mu_h = np.linalg.lstsq(sensing.phi, y_T, rcond=None)[0]
    sigma2 = max(noise_sigma_mad(y_T) ** 2, hp.b_w / (hp.a_w + W))
    G = sensing.phi.conj().T @ sensing.phi
    Sigma_h = sigma2 * np.linalg.inv(G + 1e-9 * np.trace(G).real / P * np.eye(P))
    Sigma_h = 0.5 * (Sigma_h + Sigma_h.conj().T)

    log_energy = np.log10(np.abs(mu_h) ** 2 + np.finfo(float).tiny)
    feats = np.column_stack([anchor_k, anchor_l, hp.init_energy_weight * log_energy])
    centers, labels = kmeans_partition(feats, np.abs(mu_h), T)
    r = np.zeros((P, T))
    r[np.arange(P), labels] = 1.0
    zeros = np.zeros((P, P))
    state = VariationalState(
        mu_h=mu_h,
        Sigma_h=Sigma_h,
        mu_k=anchor_k.copy(),
        Sigma_k=zeros,
        mu_l=anchor_l.copy(),
        Sigma_l=zeros.copy(),
        r=r,
        lam1_t=np.zeros(max(T - 1, 0)),
        lam2_t=np.zeros(max(T - 1, 0)),
        a_h_t=hp.prior("a_h"),
        b_h_t=hp.prior("b_h"),
        a_nu_t=hp.prior("a_nu"),
        b_nu_t=hp.prior("b_nu"),
        a_tau_t=hp.prior("a_tau"),
        b_tau_t=hp.prior("b_tau"),
        a_w_post=hp.a_w + W,
        b_w_post=hp.b_w + W * sigma2,
        mu_nu_t=centers[:, 0].copy(),
        sig2_nu_t=np.ones(T),
        mu_tau_t=centers[:, 1].copy(),
        sig2_tau_t=np.ones(T),
        gamma_h=np.zeros(P),
        gamma_nu=np.zeros(P),
        gamma_tau=np.zeros(P),
        anchor_k=anchor_k.copy(),
        anchor_l=anchor_l.copy(),
        active=np.arange(P),
        hp=hp,
        sensing=sensing,
    )
    # component statistics from the partition so components start distinct
    state.lam1_t, state.lam2_t = update_stick_breaking(state)
    state.a_h_t, state.b_h_t, state.gamma_h = update_gain_precisions(state)
    (state.a_nu_t, state.b_nu_t, state.mu_nu_t, state.sig2_nu_t, state.gamma_nu) = (
        update_doppler_precisions_and_means(state)
    )
    (state.a_tau_t, state.b_tau_t, state.mu_tau_t, state.sig2_tau_t, state.gamma_tau) = (
        update_delay_precisions_and_means(state)
    )
    if hp.refine_offsets:
        # offset covariances given the LS gains; means stay on the integer anchors
        state.Sigma_k = update_doppler_posterior(state, sensing, y_T)[0]
        state.Sigma_l = update_delay_posterior(state, sensing, y_T)[0]
    state.H_h = second_moment(state, sensing)
    return state


# --------------------------------------------------------------------------
# coordinate updates
# --------------------------------------------------------------------------


def update_stick_breaking(state):
    """Beta posteriors (lam1_t, lam2_t) of the stick-breaking fractions, t < T."""
    hp = state.hp
    mass = state.r.sum(axis=0)
    T = mass.size
    # tail[t] = sum_{l >= t} mass[l]
    tail = np.cumsum(mass[::-1])[::-1]
    start = 0 if hp.stick_tail_includes_t else 1
    lam1 = hp.lambda1 + mass[: T - 1]
    lam2 = hp.lambda2 + np.array([tail[t + start] if t + start < T else 0.0 for t in range(T - 1)])
    return lam1, lam2


def expected_log_stick(lam1, lam2):
    """E[ln theta_t] under the Beta posteriors, length T = len(lam1) + 1."""
    total = digamma(lam1 + lam2)
    e_log_v = digamma(lam1) - total
    e_log_1mv = digamma(lam2) - total
    out = np.zeros(lam1.size + 1)
    out[:-1] = e_log_v
    out[1:] += np.cumsum(e_log_1mv)
    return out


def stick_weights(lam1, lam2):
    """theta_t from the posterior-mean stick fractions; sums to 1."""
    v = lam1 / (lam1 + lam2)
    theta = np.empty(v.size + 1)
    remaining = 1.0
    for t, vt in enumerate(v):
        theta[t] = vt * remaining
        remaining *= 1.0 - vt
    theta[-1] = 1.0 - theta[:-1].sum()
    return theta


def assignment_log_weights(state):
    """Unnormalized log responsibilities, shape (P, T)."""
    s = state
    gain_e = np.abs(s.mu_h) ** 2 + np.real(np.diag(s.Sigma_h))
    logit = (digamma(s.a_h_t) - np.log(s.b_h_t))[None, :] - np.outer(gain_e, s.a_h_t / s.b_h_t)
    for mu, Sig, mu_t, sig2_t, a_t, b_t in (
        (s.mu_k, s.Sigma_k, s.mu_nu_t, s.sig2_nu_t, s.a_nu_t, s.b_nu_t),
        (s.mu_l, s.Sigma_l, s.mu_tau_t, s.sig2_tau_t, s.a_tau_t, s.b_tau_t),
    ):
        sq = (mu[:, None] - mu_t[None, :]) ** 2 + np.diag(Sig)[:, None] + sig2_t[None, :]
        logit += 0.5 * (digamma(a_t) - np.log(b_t))[None, :] - 0.5 * (a_t / b_t)[None, :] * sq
    if s.r.shape[1] > 1:
        logit += expected_log_stick(s.lam1_t, s.lam2_t)[None, :]
    return logit


def update_assignments(state):
    logit = assignment_log_weights(state)
    logit -= logit.max(axis=1, keepdims=True)
    r = np.exp(logit)
    r /= r.sum(axis=1, keepdims=True)
    return r


def second_moment(state, sensing):
    """H_h = E[Phi_bar^H Phi_bar] under the offset posteriors."""
    phi_bar = linearized_sensing(sensing, state.mu_k, state.mu_l)
    H = phi_bar.conj().T @ phi_bar
    H = H + (sensing.phi_nu.conj().T @ sensing.phi_nu) * state.Sigma_k
    H = H + (sensing.phi_tau.conj().T @ sensing.phi_tau) * state.Sigma_l
    return 0.5 * (H + H.conj().T)


def _hermitian_inverse(A):
    A = 0.5 * (A + A.conj().T)
    c = linalg.cho_factor(A, lower=True)
    inv = linalg.cho_solve(c, np.eye(A.shape[0], dtype=A.dtype))
    return 0.5 * (inv + inv.conj().T)


def update_channel_gains(state, sensing, y_T):
    """Gaussian posterior (mu_h, Sigma_h) of the path gains; also returns H_h."""
    H = second_moment(state, sensing)
    phi_bar = linearized_sensing(sensing, state.mu_k, state.mu_l)
    alpha = state.alpha_w
    Sigma_h = _hermitian_inverse(alpha * H + np.diag(state.gamma_h))
    mu_h = alpha * Sigma_h @ (phi_bar.conj().T @ y_T)
    return mu_h, Sigma_h, H


def gain_second_moments(state):
    return np.abs(state.mu_h) ** 2 + np.real(np.diag(state.Sigma_h))


def update_gain_precisions(state):
    """Gamma posteriors of the per-component gain precisions and gamma_h."""
    hp = state.hp
    r = state.r
    a = hp.prior("a_h") + r.sum(axis=0)
    b = hp.prior("b_h") + r.T @ gain_second_moments(state)
    return a, b, r @ (a / b)


def update_noise_precision(state, sensing, y_T):
    """Gamma posterior (a_w_post, b_w_post) of the noise precision."""
    hp = state.hp
    phi_bar = linearized_sensing(sensing, state.mu_k, state.mu_l)
    H = second_moment(state, sensing)
    mu = state.mu_h
    resid = (
        np.vdot(y_T, y_T).real
        - 2.0 * np.real(np.vdot(y_T, phi_bar @ mu))
        + np.real(np.vdot(mu, H @ mu))
        + np.real(np.trace(H @ state.Sigma_h))
    )
    return hp.a_w + y_T.size, hp.b_w + max(resid, 0.0)


def _offset_posterior(state, base, jac, anchor, gamma, prior_term, y_T):
    """Shared Doppler/delay Gaussian update around ``anchor``.

    ``base`` is the sensing matrix with the other axis at its posterior
    mean; ``jac`` the Jacobian for this axis. ``prior_term`` is the
    precision-weighted prior mean ``sum_t r_it <alpha_t> mu_t`` per path.
    """
    mu, Sh = state.mu_h, state.Sigma_h
    S = np.outer(mu, mu.conj()) + Sh
    A = np.real(S.conj() * (jac.conj().T @ jac))
    lin = np.real(mu.conj() * (jac.conj().T @ (y_T - base @ mu))) - np.real(
        np.einsum("ij,ji->i", jac.conj().T @ base, Sh)
    )
    alpha = state.alpha_w
    trust = state.hp.offset_trust_precision
    prec = alpha * A + np.diag(gamma + trust)
    prec = 0.5 * (prec + prec.T)
    Sigma = _hermitian_inverse(prec)
    mean = Sigma @ (alpha * (lin + A @ anchor) + prior_term + trust * anchor)
    step = np.clip(mean - anchor, -state.hp.max_step, state.hp.max_step)
    return Sigma, anchor + step


def update_doppler_posterior(state, sensing, y_T):
    base = sensing.phi + sensing.phi_tau * (state.mu_l - sensing.anchor_l)[None, :]
    prior_term = state.r @ (state.a_nu_t / state.b_nu_t * state.mu_nu_t)
    return _offset_posterior(state, base, sensing.phi_nu, sensing.anchor_k, state.gamma_nu, prior_term, y_T)


def update_delay_posterior(state, sensing, y_T):
    base = sensing.phi + sensing.phi_nu * (state.mu_k - sensing.anchor_k)[None, :]
    prior_term = state.r @ (state.a_tau_t / state.b_tau_t * state.mu_tau_t)
    return _offset_posterior(state, base, sensing.phi_tau, sensing.anchor_l, state.gamma_tau, prior_term, y_T)


def _axis(state, axis):
    if axis == "nu":
        return state.mu_k, state.Sigma_k, state.mu_nu_t, state.sig2_nu_t, state.a_nu_t, state.b_nu_t, "nu"
    return state.mu_l, state.Sigma_l, state.mu_tau_t, state.sig2_tau_t, state.a_tau_t, state.b_tau_t, "tau"


def update_cluster_means(state, axis):
    """Component location means and their variances for one axis."""
    mu, _, mean_t, sig2_t, a_t, b_t, _ = _axis(state, axis)
    mass = state.r.sum(axis=0)
    used = mass > _EMPTY_MASS
    new_mean, new_sig2 = mean_t.copy(), sig2_t.copy()
    new_mean[used] = (state.r[:, used].T @ mu) / mass[used]
    if state.hp.cluster_var_rule == "unweighted":
        new_sig2[used] = 1.0 / mass[used]
    else:
        new_sig2[used] = 1.0 / ((a_t[used] / b_t[used]) * mass[used])
    return new_mean, new_sig2


def update_offset_precisions(state, axis):
    """Gamma posteriors of one axis' location precisions and the per-path gamma."""
    mu, Sig, mean_t, sig2_t, _, _, name = _axis(state, axis)
    hp, r = state.hp, state.r
    sq = (mu[:, None] - mean_t[None, :]) ** 2 + np.diag(Sig)[:, None] + sig2_t[None, :]
    a = hp.prior(f"a_{name}") + 0.5 * r.sum(axis=0)
    b = hp.prior(f"b_{name}") + 0.5 * np.sum(r * sq, axis=0)
    return a, b, r @ (a / b)


def update_doppler_precisions_and_means(state):
    """Returns (a_nu_t, b_nu_t, mu_nu_t, sig2_nu_t, gamma_nu)."""
    mean, sig2 = update_cluster_means(state, "nu")
    a, b, g = update_offset_precisions(replace(state, mu_nu_t=mean, sig2_nu_t=sig2), "nu")
    return a, b, mean, sig2, g


def update_delay_precisions_and_means(state):
    """Returns (a_tau_t, b_tau_t, mu_tau_t, sig2_tau_t, gamma_tau)."""
    mean, sig2 = update_cluster_means(state, "tau")
    a, b, g = update_offset_precisions(replace(state, mu_tau_t=mean, sig2_tau_t=sig2), "tau")
    return a, b, mean, sig2, g


_PER_PATH_VECTORS = ("mu_h", "mu_k", "mu_l", "gamma_h", "gamma_nu", "gamma_tau", "anchor_k", "anchor_l", "active")
_PER_PATH_MATRICES = ("Sigma_h", "Sigma_k", "Sigma_l", "H_h")


def prune(state, eta):
    """Drop every path with gamma_h > eta; returns (state, n_removed)."""
    keep = ~(state.gamma_h > eta)
    n_removed = int(keep.size - keep.sum())
    if n_removed == 0:
        return state, 0
    updates = {name: getattr(state, name)[keep] for name in _PER_PATH_VECTORS}
    for name in _PER_PATH_MATRICES:
        mat = getattr(state, name)
        if mat is not None:
            updates[name] = mat[np.ix_(keep, keep)]
    updates["r"] = state.r[keep]
    s = state.sensing
    if s is not None:
        updates["sensing"] = replace(
            s,
            phi=s.phi[:, keep],
            phi_nu=s.phi_nu[:, keep],
            phi_tau=s.phi_tau[:, keep],
            anchor_k=s.anchor_k[keep],
            anchor_l=s.anchor_l[keep],
        )
    return replace(state, **updates), n_removed


def convergence_delta(prev_recon, curr_recon):
    den = float(np.vdot(prev_recon, prev_recon).real)
    if den == 0.0:
        return math.inf
    diff = curr_recon - prev_recon
    return float(np.vdot(diff, diff).real) / den


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def iterate(state, y_T, window, grid):
    """One outer iteration; returns (state, n_pruned)."""
    hp = state.hp
    sensing = state.sensing

    state.r = update_assignments(state)
    if state.r.shape[1] > 1:
        state.lam1_t, state.lam2_t = update_stick_breaking(state)

    state.mu_h, state.Sigma_h, state.H_h = update_channel_gains(state, sensing, y_T)
    if hp.refine_offsets:
        state.Sigma_k, state.mu_k = update_doppler_posterior(state, sensing, y_T)
        state.Sigma_l, state.mu_l = update_delay_posterior(state, sensing, y_T)
        sensing = build_sensing_set(window, grid, state.mu_k, state.mu_l, sensing.pilot_value)
        state.sensing = sensing
        state.anchor_k, state.anchor_l = sensing.anchor_k, sensing.anchor_l

    state.a_w_post, state.b_w_post = update_noise_precision(state, sensing, y_T)
    state.a_h_t, state.b_h_t, state.gamma_h = update_gain_precisions(state)
    (state.a_nu_t, state.b_nu_t, state.mu_nu_t, state.sig2_nu_t, state.gamma_nu) = (
        update_doppler_precisions_and_means(state)
    )
    (state.a_tau_t, state.b_tau_t, state.mu_tau_t, state.sig2_tau_t, state.gamma_tau) = (
        update_delay_precisions_and_means(state)
    )
    state.H_h = second_moment(state, sensing)
    return prune(state, hp.eta)


def run_npbl(y_T, window, grid, hp, anchors=None, pilot_value=1.0, trace=False):
    """Full estimator loop from detection to the final path list."""
    y_T = np.asarray(y_T, dtype=np.complex128)
    if window.mode is not WindowMode.FULL_FRAME and y_T.size != window.size(grid):
        raise ConfigurationError(f"y_T has length {y_T.size}, window needs {window.size(grid)}")
    state = init_state(y_T, window, grid, hp, anchors=anchors, pilot_value=pilot_value)
    prev = state.sensing.phi @ state.mu_h
    deltas, rows = [], []
    pruned_total = 0
    it = 0
    status = "ok"
    while it < hp.max_iter:
        state, n_pruned = iterate(state, y_T, window, grid)
        pruned_total += n_pruned
        it += 1
        if state.n_paths == 0:
            deltas.append(convergence_delta(prev, np.zeros_like(prev)))
            if trace:
                rows.append((it, deltas[-1], 0, state.b_w_post))
            status = "empty"
            break
        curr = state.sensing.phi @ state.mu_h
        deltas.append(convergence_delta(prev, curr))
        if trace:
            rows.append((it, deltas[-1], state.n_paths, state.b_w_post))
        prev = curr
        if deltas[-1] <= hp.epsilon:
            break

    if state.n_paths:
        c_hard = np.argmax(state.r, axis=1)
    else:
        c_hard = np.zeros(0, dtype=int)
    paths = [
        (complex(h), float(k), float(l), int(c))
        for h, k, l, c in zip(state.mu_h, state.mu_k, state.mu_l, c_hard)
    ]
    return EstimationResult(
        paths_est=paths,
        C_hard=c_hard,
        iterations=it,
        delta_trace=deltas,
        pruned_count=pruned_total,
        status=status,
        trace=rows,
        state=state,
    )
