"""numba kernels against the pure-numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from otfs_npbl import _kernels

from conftest import geometric_series

pytestmark = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not importable")


class TestBackendAgreement:
    @pytest.mark.parametrize("name", ["dirichlet", "dirichlet_deriv", "series", "series_deriv"])
    @pytest.mark.parametrize("sign", [-1.0, 1.0])
    def test_elementwise_kernels(self, name, sign, rng):
        # [DERIVED] two independent implementations of the same formula
        x = np.r_[rng.uniform(-40, 40, 500), np.arange(-33, 34), np.arange(-33, 34) + 1e-9]
        a = getattr(_kernels.numpy_impl, name)(x, 16, sign)
        b = getattr(_kernels.numba_impl, name)(x, 16, sign)
        np.testing.assert_allclose(a, b, atol=1e-13, rtol=0)

    def test_shape_preserved(self, rng):
        # [TRIVIAL]
        x = rng.uniform(-4, 4, (3, 5, 2))
        assert _kernels.numba_impl.dirichlet(x, 8, 1.0).shape == (3, 5, 2)
        assert _kernels.numpy_impl.dirichlet(x, 8, 1.0).shape == (3, 5, 2)

    def test_dd_convolve(self, rng):
        # [DERIVED] same received frame from both backends
        x = np.zeros((16, 16), complex)
        x[8, 8] = 1.0
        x[2, 3] = 0.5j
        gains = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        k = rng.uniform(-3, 3, 4)
        l = rng.uniform(0, 3, 4)
        np.testing.assert_allclose(
            _kernels.numpy_impl.dd_convolve(x, gains, k, l),
            _kernels.numba_impl.dd_convolve(x, gains, k, l),
            atol=1e-13,
        )

    @pytest.mark.parametrize("impl", ["numpy_impl", "numba_impl"])
    def test_series_is_geometric_sum(self, impl):
        # [DERIVED]
        x = np.linspace(-9.7, 9.7, 41)
        np.testing.assert_allclose(getattr(_kernels, impl).series(x, 8, 1.0), geometric_series(x, 8, 1.0), atol=1e-13)


class TestBackendSelection:
    def _active(self, env_value):
        env = dict(os.environ)
        env.pop("OTFS_NPBL_DISABLE_NUMBA", None)
        if env_value is not None:
            env["OTFS_NPBL_DISABLE_NUMBA"] = env_value
        code = "from otfs_npbl import _kernels; print(_kernels.active is _kernels.numpy_impl)"
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        return out.stdout.strip() == "True"

    def test_default_uses_numba(self):
        # [TRIVIAL]
        assert not self._active(None)

    @pytest.mark.parametrize("value", ["1", "true", "YES"])
    def test_flag_selects_numpy(self, value):
        # [TRIVIAL]
        assert self._active(value)

    def test_falsy_flag_keeps_numba(self):
        # [TRIVIAL]
        assert not self._active("0")
