import math

import numpy as np
import pytest

from qjump.analytic import laser_alpha, laser_photon_number_integral
from qjump.core import CavityParams, ParameterIssues, RandomStream
from qjump.ensemble import (
    AlphaSnapshot,
    beta_sweep,
    chi_map,
    chi_probe,
    compare_series,
    drift_check,
    ergodicity_report,
    ks_compare,
    late_time_slope,
    phase_sweep,
    run_ensemble,
    simulate_ensemble,
)
from qjump.trajectory import Sampler, TrajectoryClass, simulate


class TestRunEnsemble:
    """Ensemble photon statistics"""

    def test_laser_is_deterministic(self, laser_params):
        # Arrange
        grid = np.linspace(0.0, 10.0, 101)

        # Act
        series = run_ensemble(0.0, laser_params, 50, 10.0, grid=grid)

        # Assert
        expected = np.abs(laser_alpha(grid, 0.0, laser_params)) ** 2
        np.testing.assert_allclose(series.mean_n.values, expected, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(series.stderr.values, 0.0, atol=1e-9)
        np.testing.assert_allclose(
            series.emission_rate.values, laser_params.kappa * series.mean_n.values
        )
        assert series.emission_rate.values[80] == pytest.approx(
            64.0 * (1.0 - math.exp(-4.0)) ** 2, rel=1e-12
        )

    def test_laser_counted_rate(self, laser_params):
        # Arrange
        grid = np.linspace(0.0, 3.0, 4)
        widths = np.diff(grid)
        expected = (
            laser_params.kappa
            * laser_photon_number_integral(grid[:-1], grid[1:], 0.0, laser_params)
            / widths
        )

        # Act
        series = run_ensemble(0.0, laser_params, 2000, 3.0, grid=grid, base_seed=3)

        # Assert
        counted = series.counted_rate.values[1:]
        stderr = series.counted_stderr.values[1:]
        assert np.all(stderr > 0)
        assert np.all(np.abs(counted - expected) <= 4 * stderr), (counted, expected, stderr)

    def test_laser_undriven_decay(self):
        params = CavityParams.laser(omega=0.0)
        series = run_ensemble(2.0, params, 20, 10.0)
        t = series.time.values
        np.testing.assert_allclose(series.emission_rate.values, 4.0 * np.exp(-t), rtol=1e-12)

    def test_empty_cavity(self):
        params = CavityParams.laser(omega=0.0)
        series = run_ensemble(0.0, params, 20, 10.0)
        np.testing.assert_array_equal(series.emission_rate.values, 0.0)
        np.testing.assert_array_equal(series.counted_rate.values[1:], 0.0)
        assert math.isnan(series.counted_rate.values[0])

    def test_stderr_halves(self, subthreshold_params):
        # Arrange
        grid = np.linspace(0.0, 2.0, 11)

        # Act
        small = run_ensemble(1.0, subthreshold_params, 1000, 2.0, grid=grid, base_seed=8)
        large = run_ensemble(1.0, subthreshold_params, 4000, 2.0, grid=grid, base_seed=8)

        # Assert
        ratio = small.stderr.values[-1] / large.stderr.values[-1]
        assert 2.0 / 1.2 <= ratio <= 2.0 * 1.2

    def test_schema(self, feedback_params):
        series = run_ensemble(2.0, feedback_params, 30, 2.0, base_seed=4)
        assert len(series.qjump.check()) == 0
        assert series.attrs["source"] == "trajectory"
        assert series.attrs["n_trajectories"] == 30
        assert series.attrs["alpha0"] == 2.0
        assert series.attrs["sampler"] == "fixed_step"

    def test_to_frame(self, feedback_params):
        series = run_ensemble(2.0, feedback_params, 10, 1.0)
        frame = series.qjump.to_frame(["t", "emission_rate", "stderr"])
        assert list(frame.columns) == ["t", "emission_rate", "stderr"]
        assert len(frame) == 101

    @pytest.mark.parametrize("n_trajectories", [0, -3])
    def test_needs_trajectories(self, feedback_params, n_trajectories):
        with pytest.raises(ValueError, match="n_trajectories"):
            run_ensemble(1.0, feedback_params, n_trajectories, 1.0)

    def test_invalid_params(self):
        with pytest.raises(ParameterIssues):
            run_ensemble(1.0, CavityParams(eta=2.0), 5, 1.0)


class TestDeterminism:
    """Results depend on the seed only, never on threads or buffers"""

    @pytest.mark.parametrize("sampler", list(Sampler))
    def test_threads(self, feedback_params, sampler):
        kwargs = dict(base_seed=3, sampler=sampler, block_size=7)
        one = simulate_ensemble(2.0, feedback_params, 40, 3.0, threads=1, **kwargs)
        many = simulate_ensemble(2.0, feedback_params, 40, 3.0, threads=3, **kwargs)
        a, b = one.series(), many.series()
        for name in ("mean_n", "stderr", "counted_rate", "n_halted"):
            np.testing.assert_array_equal(a[name].values, b[name].values)
        np.testing.assert_array_equal(one.time_average, many.time_average)
        np.testing.assert_array_equal(one.classes, many.classes)

    def test_block_size(self, feedback_params):
        small = simulate_ensemble(2.0, feedback_params, 25, 3.0, block_size=4)
        large = simulate_ensemble(2.0, feedback_params, 25, 3.0, block_size=100)
        np.testing.assert_array_equal(small.time_average, large.time_average)
        np.testing.assert_array_equal(small.first_emission, large.first_emission)
        np.testing.assert_allclose(
            small.photons.mean, large.photons.mean, rtol=1e-12, atol=1e-12
        )

    def test_streams_match_single_trajectories(self, subthreshold_params):
        grid = np.linspace(0.0, 3.0, 31)
        run = simulate_ensemble(
            1.0, subthreshold_params, 6, 3.0, grid=grid, base_seed=9, keep_paths=True
        )
        for ix in range(6):
            traj = simulate(1.0, 3.0, subthreshold_params, RandomStream(9, ix), grid=grid)
            np.testing.assert_array_equal(run.paths[ix], traj.alphas)

    def test_seed_matters(self, feedback_params):
        a = run_ensemble(2.0, feedback_params, 20, 3.0, base_seed=0)
        b = run_ensemble(2.0, feedback_params, 20, 3.0, base_seed=1)
        assert not np.array_equal(a.mean_n.values, b.mean_n.values)


class TestEnsembleRun:
    @pytest.mark.parametrize("sampler", list(Sampler))
    def test_emission_count(self, decay_params, sampler):
        # pure decay from alpha0 = 2 emits Poisson(4 (1 - e^-10)) photons
        run = simulate_ensemble(2.0, decay_params, 2000, 10.0, sampler=sampler)
        expected = 4.0 * (1.0 - math.exp(-10.0))
        stderr = math.sqrt(expected / run.n_trajectories)
        assert abs(run.n_emissions.mean() - expected) < 4 * stderr + 0.01 * expected

    def test_zero_emission_fraction(self):
        params = CavityParams.feedback(beta=2.0, eta=0.5)
        run = simulate_ensemble(0.0, params, 10, 1.0)
        assert run.zero_emission_fraction() == (1.0, 0.0)
        assert run.class_fractions()["vacuum"] == 1.0

    def test_class_fractions(self, feedback_params):
        run = simulate_ensemble(2.0, feedback_params, 50, 10.0)
        fractions = run.class_fractions()
        assert set(fractions) == {c.value for c in TrajectoryClass}
        assert sum(fractions.values()) == pytest.approx(1.0)

    def test_halted_counts(self, low_cap_settings):
        params = CavityParams.feedback(beta=2.0, eta=1.0)
        run = simulate_ensemble(5.0, params, 8, 10.0, settings=low_cap_settings)
        series = run.series()
        assert series.n_halted.values[-1] == 8
        assert series.n_halted.values[0] == 0
        assert np.all(np.diff(series.n_halted.values) >= 0)
        assert np.all(run.classes == "diverging")
        assert np.all(run.status == "halted_diverged")

    def test_snapshot(self, feedback_params):
        run = simulate_ensemble(2.0, feedback_params, 12, 10.0, snapshot_times=(5.0,))
        snap = run.snapshot(5.0)
        assert snap.time == pytest.approx(5.0)
        assert snap.t_before == pytest.approx(4.9)
        assert snap.t_after == pytest.approx(5.1)
        assert snap.alphas.shape == (12,)
        with pytest.raises(ValueError, match="no snapshot"):
            run.snapshot(3.0)

    def test_snapshot_off_grid(self, feedback_params):
        with pytest.raises(ValueError, match="not on the output grid"):
            simulate_ensemble(2.0, feedback_params, 2, 10.0, snapshot_times=(5.05,))

    def test_memory_budget(self, feedback_params):
        run = simulate_ensemble(
            2.0, feedback_params, 10, 1.0, keep_paths=True, memory_budget_gib=1e-9
        )
        assert run.paths is None

    def test_time_average_laser(self, laser_params):
        run = simulate_ensemble(0.0, laser_params, 5, 10.0)
        expected = laser_photon_number_integral(0.0, 10.0, 0.0, laser_params) / 10.0
        np.testing.assert_allclose(run.time_average, expected, rtol=1e-4)


class TestSlopes:
    def test_decay_slope(self, decay_params):
        run = simulate_ensemble(
            1.0, decay_params, 20, 5.0, slope_window=(2.0, 5.0), keep_paths=True
        )
        from_slopes = late_time_slope(run, 2.0, 5.0)
        run.slopes = None
        from_paths = late_time_slope(run, 2.0, 5.0)
        assert from_slopes.slope < 0
        assert from_slopes.slope == pytest.approx(from_paths.slope, rel=1e-12)
        assert from_slopes.n_trajectories == 20
        assert from_slopes.sigma < -3

    def test_needs_slopes_or_paths(self, decay_params):
        run = simulate_ensemble(1.0, decay_params, 5, 5.0)
        with pytest.raises(ValueError, match="neither slopes"):
            late_time_slope(run, 2.0, 5.0)

    def test_window_with_points(self, decay_params):
        with pytest.raises(ValueError, match="fewer than 2"):
            simulate_ensemble(1.0, decay_params, 5, 5.0, slope_window=(2.01, 2.02))


class TestChi:
    """Tests for chi_probe and chi_map"""

    def test_origin_and_no_feedback(self):
        # Arrange
        params = CavityParams.feedback(beta=2.0, eta=0.0)
        cells = [0.0, 1.0, 2 + 1j, -3.0]

        # Act
        ds = chi_probe(cells, params, 20, 10.0)

        # Assert
        np.testing.assert_array_equal(ds.chi.values, 1.0)
        np.testing.assert_array_equal(ds.stderr.values, 0.0)
        np.testing.assert_array_equal(ds.count.values, 20)
        assert len(ds.qjump.check()) == 0

    @pytest.mark.parametrize("sampler", list(Sampler))
    def test_origin_is_vacuum(self, feedback_params, sampler):
        ds = chi_probe([0.0, 4.0], feedback_params, 50, 10.0, sampler=sampler)
        assert ds.chi.values[0] == 1.0
        assert ds.chi.values[1] < ds.chi.values[0]

    def test_lattice(self, decay_params):
        ds = chi_map(decay_params, 2, 10.0, re_range=(-0.2, 0.2), im_range=(0.0, 0.3))
        assert ds.sizes["cell"] == 5 * 4
        np.testing.assert_allclose(ds.re_alpha0.values[:4], -0.2)
        np.testing.assert_allclose(ds.im_alpha0.values[:4], [0.0, 0.1, 0.2, 0.3])
        assert ds.attrs["sampler"] == "waiting_time"

    def test_laser_rejected(self, laser_params):
        with pytest.raises(ValueError, match="feedback"):
            chi_probe([0.0], laser_params, 5, 10.0)

    @pytest.mark.parametrize("horizon", [0.0, -1.0])
    def test_needs_positive_horizon(self, feedback_params, horizon):
        with pytest.raises(ValueError, match="horizon"):
            chi_probe([1.0], feedback_params, 5, horizon)


class TestErgodicity:
    def test_deterministic_dispersion(self, decay_params):
        report = ergodicity_report(2.0, decay_params, 20, 10.0)
        assert report.attrs["dispersion_max"] == report.attrs["dispersion_min"]
        assert report.attrs["dispersion_std"] == 0.0
        assert report.attrs["verdict"] == "ergodic"
        assert len(report.qjump.check()) == 0

    def test_laser_ergodic(self, laser_params):
        report = ergodicity_report(0.0, laser_params, 10, 50.0)
        assert report.attrs["verdict"] == "ergodic"
        assert report.attrs["ensemble_average"] == pytest.approx(64.0, rel=1e-6)

    def test_feedback_non_ergodic(self, feedback_params):
        report = ergodicity_report(2.0, feedback_params, 200, 10.0)
        assert report.attrs["verdict"] == "non-ergodic"
        assert report.attrs["dispersion_max"] > 100 * report.attrs["dispersion_min"]


class TestSweeps:
    def test_equal_phases_equal_series(self, feedback_params):
        a, b = phase_sweep(2.0, [0.0, 0.0], feedback_params, 20, 3.0)
        np.testing.assert_array_equal(a.mean_n.values, b.mean_n.values)
        assert a.attrs["phase"] == 0.0

    def test_beta_sweep(self, decay_params):
        series = beta_sweep(1.0, [0.0, 1j], decay_params, 10, 3.0)
        assert [ds.attrs["beta"] for ds in series] == [0.0, [0.0, 1.0]]
        t = series[0].time.values
        # eta = 0: beta never acts
        for ds in series:
            np.testing.assert_allclose(ds.mean_n.values, np.exp(-t), rtol=1e-9)

    def test_conjugate_phases(self, subthreshold_params):
        # real beta: alpha0 and its conjugate share every emission decision
        grid = np.linspace(0.0, 3.0, 31)
        plus, minus = phase_sweep(
            2.0, [0.7, -0.7], subthreshold_params, 200, 3.0, grid=grid, base_seed=5
        )
        np.testing.assert_allclose(plus.mean_n.values, minus.mean_n.values, rtol=1e-9)
        np.testing.assert_allclose(plus.stderr.values, minus.stderr.values, rtol=1e-9)
        assert plus.attrs["phase"] == -minus.attrs["phase"]

    def test_laser_rejected(self, laser_params):
        with pytest.raises(ValueError, match="feedback"):
            phase_sweep(1.0, [0.0], laser_params, 5, 1.0)
        with pytest.raises(ValueError, match="feedback"):
            beta_sweep(1.0, [1.0], laser_params, 5, 1.0)


class TestDriftCheck:
    def test_pure_decay(self, decay_params):
        run = simulate_ensemble(2.0, decay_params, 20, 10.0, snapshot_times=(5.0,))
        report = drift_check(run.series(), run.snapshot(5.0), decay_params)
        assert report.predicted == pytest.approx(-4.0 * math.exp(-5.0), rel=1e-9)
        assert report.passed

    def test_subthreshold(self, subthreshold_params):
        run = simulate_ensemble(
            1.0, subthreshold_params, 4000, 5.0, snapshot_times=(1.0,), base_seed=2
        )
        report = drift_check(run.series(), run.snapshot(1.0), subthreshold_params, n_sigma=4)
        assert report.predicted < 0
        assert report.passed, report

    def test_small_amplitude_above_threshold(self, feedback_params):
        # Arrange
        alpha0 = 0.05

        # Act
        run = simulate_ensemble(
            alpha0, feedback_params, 4000, 1.0, snapshot_times=(0.5,), base_seed=6
        )
        report = drift_check(run.series(), run.snapshot(0.5), feedback_params, n_sigma=4)

        # Assert
        assert report.predicted > 0
        assert report.passed, report

    def test_weighted_snapshot(self, decay_params):
        run = simulate_ensemble(2.0, decay_params, 5, 10.0)
        snap = AlphaSnapshot(
            time=5.0,
            alphas=np.array([2.0 * math.exp(-2.5)]),
            weights=np.array([1.0]),
            t_before=4.9,
            t_after=5.1,
        )
        report = drift_check(run.series(), snap, decay_params)
        assert report.passed
        assert report.stderr == pytest.approx(0.0, abs=1e-9)


class TestComparisons:
    def test_identical_series(self, feedback_params):
        series = run_ensemble(2.0, feedback_params, 20, 2.0)
        result = compare_series(series, series)
        assert result.passed
        assert result.max_abs_deviation == 0.0
        assert result.summary()["n_points"] == 101

    def test_offset_without_noise(self):
        series = run_ensemble(0.0, CavityParams.laser(omega=0.0), 5, 1.0)
        shifted = series.copy(deep=True)
        shifted["mean_n"] = shifted.mean_n + 1.0
        result = compare_series(series, shifted)
        assert not result.passed
        assert math.isinf(result.max_deviation_sigma)

    def test_grid_mismatch(self, feedback_params):
        a = run_ensemble(2.0, feedback_params, 5, 2.0)
        b = run_ensemble(2.0, feedback_params, 5, 3.0)
        with pytest.raises(ValueError, match="time grids"):
            compare_series(a, b)

    def test_ks(self):
        rng = np.random.default_rng(0)
        a = rng.exponential(size=2000)
        assert ks_compare(a, a).passed
        assert not ks_compare(a, a + 1.0).passed
        with_nan = np.append(a, np.nan)
        assert ks_compare(with_nan, a).pvalue == pytest.approx(1.0)
        with pytest.raises(ValueError):
            ks_compare([np.nan], a)

    def test_first_emission_samplers(self, feedback_params):
        fixed = simulate_ensemble(2.0, feedback_params, 4000, 10.0, base_seed=1)
        exact = simulate_ensemble(
            2.0, feedback_params, 4000, 10.0, base_seed=2, sampler=Sampler.WAITING_TIME
        )
        assert ks_compare(fixed.first_emission, exact.first_emission, 1e-3).passed


if __name__ == "__main__":
    pytest.main(["-v", "-s", __file__])
