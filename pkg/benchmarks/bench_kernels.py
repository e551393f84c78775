"""Compare the numba kernels with the pure-numpy fallback.

Run ``python benchmarks/bench_kernels.py``. Each row reports the best of
``--repeat`` timings per backend and the speed-up of numba over numpy. The
end-to-end row times one estimator run on a reference frame with the backend
swapped in process.
"""

import argparse
import time

import numpy as np

from otfs_npbl import _kernels
from otfs_npbl.channel_gen import ScenarioConfig, apply_channel, sample_channel
from otfs_npbl.eval_harness import FrameConfig, snr_to_precision
from otfs_npbl.frame_pilot import build_pilot_frame, extract_window
from otfs_npbl.npbl import Hyperparams, run_npbl


def best_time(fn, repeat):
    fn()  # warm-up (triggers compilation on the numba side)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def estimator_case(seed=0):
    sc = ScenarioConfig()
    fc = FrameConfig()
    rng = np.random.default_rng(seed)
    channel = sample_channel(sc, rng)
    frame = build_pilot_frame(sc.grid, (fc.pilot_k, fc.pilot_l), 1.0, sc.k_max, sc.l_max, fc.mode)
    window = fc.window(sc)
    y = extract_window(apply_channel(frame, channel, snr_to_precision(15.0), rng), window)
    return y, window, sc.grid, channel


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    x = rng.uniform(-16, 16, size=(1024, 20))
    y, window, grid, channel = estimator_case()
    gains = np.array([p.gain for p in channel.paths])
    k_nu = np.array([p.k_nu for p in channel.paths])
    l_tau = np.array([p.l_tau for p in channel.paths])
    pilot = np.zeros((grid.N, grid.M), dtype=np.complex128)
    pilot[16, 16] = 1.0

    def estimate():
        run_npbl(y, window, grid, Hyperparams())

    cases = {
        "dirichlet 1024x20": lambda impl: impl.dirichlet(x, 32, -1.0),
        "dirichlet_deriv 1024x20": lambda impl: impl.dirichlet_deriv(x, 32, -1.0),
        "series_deriv 1024x20": lambda impl: impl.series_deriv(x, 32, -1.0),
        "dd_convolve pilot frame": lambda impl: impl.dd_convolve(pilot, gains, k_nu, l_tau),
    }
    print(f"{'case':<26}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    saved = _kernels.active
    try:
        for name, fn in cases.items():
            t_np = best_time(lambda: fn(_kernels.numpy_impl), args.repeat)
            t_nb = best_time(lambda: fn(_kernels.numba_impl), args.repeat)
            print(f"{name:<26}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}")
        timings = []
        for impl in (_kernels.numpy_impl, _kernels.numba_impl):
            _kernels.active = impl
            timings.append(best_time(estimate, max(1, args.repeat // 2)))
        print(f"{'run_npbl reference':<26}{1e3 * timings[0]:>12.3f}{1e3 * timings[1]:>12.3f}"
              f"{timings[0] / timings[1]:>10.1f}")
    finally:
        _kernels.active = saved


if __name__ == "__main__":
    main()
