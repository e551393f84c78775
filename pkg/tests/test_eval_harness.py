"""Monte Carlo harness: seeding, NMSE, sweeps and CSV output."""

import math

import numpy as np
import pytest

from otfs_npbl.channel_gen import ScenarioConfig
from otfs_npbl.dd_core import WindowMode, build_sensing_set
from otfs_npbl.eval_harness import (
    RECORD_FIELDS,
    FrameConfig,
    SweepConfig,
    TrialRecord,
    fmt_float,
    nmse,
    read_records_csv,
    reconstruct_effective_channel,
    resolve_workers,
    run_sweep,
    run_trial,
    simulate_observation,
    snr_to_precision,
    summarize,
    trial_seed,
    write_records_csv,
    write_summary_csv,
)


def small_sweep(**kw):
    base = dict(snr_grid_db=(0.0, 20.0), cluster_grid=(1, 2), trials_per_point=2, master_seed=11, record_timing=False)
    base.update(kw)
    return SweepConfig(**base)


class TestSeeds:
    def test_stable_and_distinct(self):
        # [TRIVIAL]
        seeds = {trial_seed(0, snr, c, t) for snr in (-5.0, 0.0, 5.0) for c in (1, 3) for t in range(10)}
        assert len(seeds) == 60
        assert trial_seed(0, 5.0, 3, 7) == trial_seed(0, 5.0, 3, 7)

    def test_master_seed_matters(self):
        # [TRIVIAL]
        assert trial_seed(0, 5.0, 3, 0) != trial_seed(1, 5.0, 3, 0)

    def test_fits_in_uint64(self):
        # [TRIVIAL]
        assert 0 <= trial_seed(2**63, -5.0, 5, 99) < 2**64


class TestNMSE:
    def test_identity_and_zero(self, rng):
        # [TRIVIAL]
        h = rng.standard_normal(9) + 1j * rng.standard_normal(9)
        assert nmse(h, h) == 0.0
        assert nmse(h, np.zeros_like(h)) == pytest.approx(1.0)

    def test_hand_computation(self):
        # [DERIVED]
        assert nmse(np.array([1.0, 1j]), np.array([0.5, 0.0])) == pytest.approx((0.25 + 1.0) / 2.0)

    def test_errors(self):
        # [TRIVIAL]
        with pytest.raises(ValueError):
            nmse(np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            nmse(np.ones(3), np.ones(4))

    def test_snr_mapping(self):
        # [PAPER] unit pilot and unit-energy channel
        assert snr_to_precision(10.0) == pytest.approx(10.0)
        assert snr_to_precision(-5.0) == pytest.approx(10 ** -0.5)


class TestObservation:
    def test_effective_channel_matches_sensing(self, reference, full_window):
        # [DERIVED] same response from the sensing matrix and the reconstruction
        paths = [(0.5, 1.3, 2.2), (-0.2j, -3.7, 0.4)]
        s = build_sensing_set(full_window, reference.grid, [1.3, -3.7], [2.2, 0.4])
        np.testing.assert_allclose(reconstruct_effective_channel(paths, full_window, reference.grid), s.phi @ [0.5, -0.2j], atol=1e-13)

    def test_empty_path_list(self, reference, window65):
        # [TRIVIAL]
        assert not reconstruct_effective_channel([], window65, reference.grid).any()

    def test_noiseless_observation(self, reference):
        # [DERIVED] with no noise the observation is the effective response
        ch, w, y = simulate_observation(reference, FrameConfig(), None, np.random.default_rng(0))
        np.testing.assert_allclose(y, reconstruct_effective_channel(ch.paths, w, reference.grid), atol=1e-12)

    def test_windowed_observation_length(self, reference):
        # [TRIVIAL]
        _, w, y = simulate_observation(reference, FrameConfig(mode=WindowMode.WINDOWED), 10.0, np.random.default_rng(0))
        assert y.size == 65


class TestTrials:
    def test_very_low_snr_scores_near_one(self):
        # [DERIVED] nothing survives in overwhelming noise
        cfg = small_sweep(snr_grid_db=(-50.0,), cluster_grid=(3,), trials_per_point=3)
        vals = [r.nmse for r in run_sweep(cfg)]
        assert np.median(vals) == pytest.approx(1.0, abs=0.05)

    def test_noiseless_on_grid_trial(self):
        # [DERIVED] zero spread, integer cluster centres: exact recovery
        sc = ScenarioConfig(n_clusters=1, delay_spread_s=0.0, doppler_spread_hz=0.0, max_delay_s=0.0, max_velocity_kmh=0.0)
        cfg = SweepConfig(scenario=sc, snr_grid_db=(300.0,), cluster_grid=(1,), trials_per_point=1)
        rec = run_trial((300.0, 1), 0, cfg)
        assert rec.nmse <= 1e-3

    def test_record_contents(self):
        # [TRIVIAL]
        rec = run_trial((10.0, 2), 3, small_sweep())
        assert rec.seed == trial_seed(11, 10.0, 2, 3)
        assert rec.n_clusters == 2 and rec.snr_db == 10.0
        assert rec.runtime_ms == 0.0

    def test_sweep_order_and_workers(self):
        # [TRIVIAL] canonical order, identical across worker counts
        cfg = small_sweep()
        serial = run_sweep(cfg, workers=1)
        parallel = run_sweep(cfg, workers=2)
        assert serial == parallel
        assert [(r.snr_db, r.n_clusters) for r in serial] == [
            (0.0, 1), (0.0, 1), (0.0, 2), (0.0, 2), (20.0, 1), (20.0, 1), (20.0, 2), (20.0, 2)
        ]

    def test_resolve_workers(self, monkeypatch):
        # [TRIVIAL]
        monkeypatch.setenv("OTFS_NPBL_THREADS", "3")
        assert resolve_workers() == 3
        assert resolve_workers(5) == 5
        monkeypatch.delenv("OTFS_NPBL_THREADS")
        assert resolve_workers() == 1

    def test_invalid_sweep(self):
        # [TRIVIAL]
        with pytest.raises(ValueError):
            SweepConfig(trials_per_point=0)
        with pytest.raises(ValueError):
            SweepConfig(snr_grid_db=())


class TestSummaries:
    def records(self):
        vals = [0.5, 0.1, 0.3, 0.9, 0.2, 0.4]
        return [TrialRecord(i, 5.0 if i < 3 else 10.0, 3, v, 10 + i, i % 3, 0.0) for i, v in enumerate(vals)]

    def test_summary_recomputation(self):
        # [DERIVED] independent aggregation of the same records
        rows = summarize(self.records())
        assert [r["snr_db"] for r in rows] == [5.0, 10.0]
        assert rows[0]["nmse_median"] == pytest.approx(0.3)
        assert rows[1]["nmse_median"] == pytest.approx(0.4)
        assert rows[0]["nmse_q1"] == pytest.approx(np.percentile([0.5, 0.1, 0.3], 25))
        assert rows[0]["nmse_median_db"] == pytest.approx(10 * math.log10(0.3))
        assert rows[1]["iterations_median"] == 14.0

    def test_records_round_trip(self, tmp_path):
        # [TRIVIAL] 17 significant digits reproduce every float
        recs = self.records() + [TrialRecord(2**64 - 1, -5.0, 1, 1 / 3, 7, 2, 12.345678901234567)]
        path = tmp_path / "records.csv"
        write_records_csv(recs, path)
        assert read_records_csv(path) == recs
        assert path.read_text().splitlines()[0] == ",".join(RECORD_FIELDS)

    def test_summary_csv(self, tmp_path):
        # [TRIVIAL]
        path = tmp_path / "summary.csv"
        write_summary_csv(summarize(self.records()), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert lines[1].startswith("5,3,3,0.29999999999999999")

    def test_fmt_float_round_trip(self, rng):
        # [TRIVIAL]
        for x in rng.standard_normal(100) * 1e3:
            assert float(fmt_float(x)) == x
