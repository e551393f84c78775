"""Sampling kernels, windows and sensing matrices."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from otfs_npbl.dd_core import (
    DDGridConfig,
    ObservationWindow,
    WindowMode,
    build_sensing_set,
    effective_response,
    linearized_sensing,
    path_arrays,
    sampling_fn_delay,
    sampling_fn_delay_deriv,
    sampling_fn_doppler,
    sampling_fn_doppler_deriv,
)
from otfs_npbl.exceptions import ConfigurationError, EmptyModelError

from conftest import geometric_series


class TestSamplingKernels:
    def test_unity_at_origin(self):
        # [TRIVIAL] every term of the series is 1 at x = 0
        assert sampling_fn_doppler(0.0, 32) == pytest.approx(1.0, abs=1e-15)
        assert sampling_fn_delay(0.0, 32) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_vanishes_at_nonzero_integers(self, n):
        # [DERIVED] roots of unity sum to zero for integers not divisible by n
        x = np.array([i for i in range(-2 * n, 2 * n + 1) if i % n])
        np.testing.assert_allclose(np.abs(sampling_fn_doppler(x, n)), 0.0, atol=1e-14)

    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_periodic_alias_at_multiples_of_n(self, n):
        # [DERIVED] at x = q n every exponent is a multiple of 2 pi, so the kernel is 1
        x = np.array([-2 * n, -n, n, 2 * n], dtype=float)
        np.testing.assert_allclose(sampling_fn_delay(x, n), 1.0, atol=1e-13)

    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_matches_geometric_series(self, n, rng):
        # [DERIVED] closed form equals the term-by-term sum
        x = rng.uniform(-2 * n, 2 * n, 2000)
        np.testing.assert_allclose(sampling_fn_doppler(x, n), geometric_series(x, n, -1.0), atol=1e-12, rtol=0)
        np.testing.assert_allclose(sampling_fn_delay(x, n), geometric_series(x, n, 1.0), atol=1e-12, rtol=0)

    def test_near_singular_arguments(self):
        # [DERIVED] the series fallback keeps accuracy next to multiples of n
        n = 16
        x = np.array([1e-12, -1e-10, 16 + 1e-9, -32 - 1e-11, 1e-7, 16 - 1e-6])
        np.testing.assert_allclose(sampling_fn_doppler(x, n), geometric_series(x, n, -1.0), atol=1e-12, rtol=0)

    def test_delay_kernel_is_conjugate_of_doppler(self, rng):
        # [DERIVED] the two kernels differ only in the sign of the phase
        x = rng.uniform(-20, 20, 100)
        np.testing.assert_allclose(sampling_fn_delay(x, 32), np.conj(sampling_fn_doppler(x, 32)), atol=1e-14)

    @pytest.mark.parametrize("n", [8, 32])
    def test_derivative_matches_finite_difference(self, n, rng):
        # [DERIVED] central differences of the closed form
        x = rng.uniform(-n, n, 200)
        h = 1e-6
        for fn, dfn in ((sampling_fn_doppler, sampling_fn_doppler_deriv), (sampling_fn_delay, sampling_fn_delay_deriv)):
            fd = (fn(x + h, n) - fn(x - h, n)) / (2 * h)
            np.testing.assert_allclose(dfn(x, n), fd, atol=1e-8)

    def test_scalar_input_gives_python_complex(self):
        # [TRIVIAL]
        assert isinstance(sampling_fn_doppler(0.3, 8), complex)
        assert isinstance(sampling_fn_delay_deriv(0.3, 8), complex)

    @given(st.floats(-64, 64), st.sampled_from([4, 8, 16, 32]))
    def test_magnitude_bounded_by_one(self, x, n):
        # [DERIVED] average of unit-modulus terms
        assert abs(sampling_fn_doppler(x, n)) <= 1.0 + 1e-12


class TestGridAndWindow:
    def test_reference_resolutions(self, grid32):
        # [PAPER] 15 kHz spacing on a 32 x 32 grid
        assert grid32.slot_T == pytest.approx(1 / 15e3)
        assert grid32.delay_resolution == pytest.approx(1 / (32 * 15e3))
        assert grid32.doppler_resolution == pytest.approx(15e3 / 32)

    @pytest.mark.parametrize("kw", [dict(M=1, N=32), dict(M=32, N=2.5), dict(M=32, N=32, delta_f=0.0)])
    def test_invalid_grid_rejected(self, kw):
        # [TRIVIAL]
        with pytest.raises(ConfigurationError):
            DDGridConfig(**{"delta_f": 15e3, **kw})

    def test_slot_must_match_spacing(self):
        # [TRIVIAL]
        with pytest.raises(ConfigurationError):
            DDGridConfig(M=8, N=8, delta_f=1e3, slot_T=2e-3)

    def test_window_sizes(self, grid32, window65, full_window):
        # [PAPER] (l_max + 1)(2 k_max + 1) cells for the reference window
        assert window65.size(grid32) == 65
        assert full_window.size(grid32) == 1024

    def test_cells_are_delay_major(self, grid32, window65):
        # [TRIVIAL] Doppler index runs fastest
        kk, ll = window65.cells(grid32)
        assert kk.size == 65
        np.testing.assert_array_equal(kk[:13], np.arange(10, 23))
        np.testing.assert_array_equal(ll[:13], 16)
        np.testing.assert_array_equal(ll[13:26], 17)

    def test_guard_overflow_rejected(self, grid32):
        # [TRIVIAL] the Doppler guard spans 2 k_max on each side
        with pytest.raises(ConfigurationError):
            ObservationWindow(k_p=5, l_p=16, k_max=3, l_max=4).validate(grid32)
        with pytest.raises(ConfigurationError):
            ObservationWindow(k_p=16, l_p=30, k_max=3, l_max=4).validate(grid32)

    def test_full_frame_skips_guard_check(self, grid32):
        # [TRIVIAL]
        ObservationWindow(k_p=1, l_p=1, k_max=6, l_max=4, mode=WindowMode.FULL_FRAME).validate(grid32)

    def test_negative_limits_rejected(self):
        # [TRIVIAL]
        with pytest.raises(ConfigurationError):
            ObservationWindow(16, 16, -1, 4)


class TestSensing:
    def test_shapes(self, grid32, window65):
        # [TRIVIAL]
        s = build_sensing_set(window65, grid32, [0.0, 1.5, -2.2], [0.0, 1.0, 3.3])
        assert s.phi.shape == s.phi_nu.shape == s.phi_tau.shape == (65, 3)
        assert s.n_paths == 3

    def test_integer_anchor_column_is_unit_vector(self, grid32, window65):
        # [DERIVED] on-grid paths excite a single window cell
        s = build_sensing_set(window65, grid32, [2.0], [3.0])
        col = s.phi[:, 0]
        kk, ll = window65.cells(grid32)
        hit = np.flatnonzero((kk == 18) & (ll == 19))
        expected = np.zeros(65, complex)
        expected[hit] = 1.0
        np.testing.assert_allclose(col, expected, atol=1e-13)

    def test_columns_match_effective_response(self, grid32, window65, rng):
        # [DERIVED] brute-force per-cell recomputation
        k = rng.uniform(-6, 6, 4)
        l = rng.uniform(0, 4, 4)
        s = build_sensing_set(window65, grid32, k, l, pilot_value=0.5 - 0.25j)
        kk, ll = window65.cells(grid32)
        for p in range(4):
            ref = [
                (0.5 - 0.25j) * effective_response([(1.0, k[p], l[p])], grid32, a - 16, b - 16)
                for a, b in zip(kk, ll)
            ]
            np.testing.assert_allclose(s.phi[:, p], ref, atol=1e-13)

    def test_jacobians_match_finite_differences(self, grid32, window65, rng):
        # [DERIVED] central differences with respect to the anchors
        k = rng.uniform(-5, 5, 3)
        l = rng.uniform(0, 4, 3)
        h = 1e-6
        s = build_sensing_set(window65, grid32, k, l)
        fd_k = (build_sensing_set(window65, grid32, k + h, l).phi - build_sensing_set(window65, grid32, k - h, l).phi) / (2 * h)
        fd_l = (build_sensing_set(window65, grid32, k, l + h).phi - build_sensing_set(window65, grid32, k, l - h).phi) / (2 * h)
        np.testing.assert_allclose(s.phi_nu, fd_k, atol=1e-8)
        np.testing.assert_allclose(s.phi_tau, fd_l, atol=1e-8)

    def test_linearization_exact_at_anchor(self, grid32, window65):
        # [TRIVIAL]
        s = build_sensing_set(window65, grid32, [0.3, -1.2], [1.1, 2.0])
        np.testing.assert_array_equal(linearized_sensing(s, s.anchor_k, s.anchor_l), s.phi)

    def test_linearization_error_is_second_order(self, grid32, window65):
        # [DERIVED] halving the step quarters the remainder
        s = build_sensing_set(window65, grid32, [0.3], [1.1])

        def err(d):
            exact = build_sensing_set(window65, grid32, [0.3 + d], [1.1 - d]).phi
            return np.linalg.norm(linearized_sensing(s, np.array([0.3 + d]), np.array([1.1 - d])) - exact)

        assert err(1e-2) / err(5e-3) == pytest.approx(4.0, rel=0.05)

    def test_linearized_rejects_wrong_length(self, grid32, window65):
        # [TRIVIAL]
        s = build_sensing_set(window65, grid32, [0.0, 1.0], [0.0, 1.0])
        with pytest.raises(ValueError):
            linearized_sensing(s, np.zeros(3), np.zeros(2))

    def test_empty_anchor_set(self, grid32, window65):
        # [TRIVIAL]
        with pytest.raises(EmptyModelError):
            build_sensing_set(window65, grid32, [], [])

    def test_path_arrays_accepts_tuples(self):
        # [TRIVIAL]
        h, k, l = path_arrays([(1 + 1j, 0.5, 2.0, 7), (2.0, -1.0, 0.0)])
        np.testing.assert_array_equal(h, [1 + 1j, 2.0])
        np.testing.assert_array_equal(k, [0.5, -1.0])
        np.testing.assert_array_equal(l, [2.0, 0.0])
