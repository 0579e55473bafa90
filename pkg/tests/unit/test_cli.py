import json

import numpy as np
import pandas as pd
import pytest

import qjump.cli as cli
from qjump.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_parser, run

SMALL_RUN = ["n_trajectories=20", "horizon=2", "n_grid=11"]


def qjump(subcommand, out_dir, overrides=(), *flags):
    argv = [subcommand, "--out", str(out_dir), "--log-level", "WARNING"]
    for text in overrides:
        argv += ["--override", text]
    return run(argv + list(flags))


class TestParser:
    def test_subcommands(self):
        parser = build_parser()
        for name in ("laser-run", "feedback-run", "chi-map", "oracle-check", "ergodicity"):
            args = parser.parse_args([name])
            assert args.subcommand == name
            assert args.override == []
            assert args.full_scale is None

    def test_flags(self):
        args = build_parser().parse_args(
            ["chi-map", "--seed", "7", "--threads", "2", "--full-scale"]
        )
        assert args.base_seed == 7
        assert args.threads == 2
        assert args.full_scale is True

    @pytest.mark.parametrize("flag", ["--full-scale", "--paper-scale"])
    def test_scale_aliases(self, flag):
        args = build_parser().parse_args(["feedback-run", flag])
        assert args.full_scale is True

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestLaserRun:
    """Tests for qjump laser-run"""

    def test_outputs(self, tmp_path):
        # Act
        code = qjump("laser-run", tmp_path, SMALL_RUN)

        # Assert
        assert code == EXIT_OK
        spiral = pd.read_csv(tmp_path / "spiral.csv")
        assert list(spiral.columns) == ["t", "re_alpha_S", "im_alpha_S"]
        assert len(spiral) == 101
        rate = pd.read_csv(tmp_path / "emission_rate.csv")
        assert list(rate.columns) == [
            "t",
            "I_analytic",
            "I_montecarlo",
            "stderr",
            "I_counted",
            "I_counted_stderr",
            "I_analytic_bin",
        ]
        np.testing.assert_allclose(rate.I_montecarlo, rate.I_analytic, rtol=1e-10, atol=1e-12)
        assert np.isnan(rate.I_counted[0])
        assert np.isnan(rate.I_analytic_bin[0])

    def test_run_config(self, tmp_path):
        qjump("laser-run", tmp_path, SMALL_RUN, "--seed", "5")
        config = json.loads((tmp_path / "run_config.json").read_text())
        assert config["n_trajectories"] == 20
        assert config["base_seed"] == 5
        assert config["mode"] == "laser_driven"
        assert config["sampler"] == "fixed_step"
        assert config["out_dir"] == str(tmp_path)


class TestFeedbackRun:
    def test_outputs(self, tmp_path):
        # Arrange
        overrides = SMALL_RUN + [
            "n_displayed=2",
            "beta_list=[1.0, [0, 1]]",
            "phase_list=[0, 3.14159]",
        ]

        # Act
        code = qjump("feedback-run", tmp_path, overrides)

        # Assert
        assert code == EXIT_OK
        paths = pd.read_csv(tmp_path / "trajectories.csv")
        assert list(paths.columns) == [
            "trajectory_index",
            "t",
            "re_alpha",
            "im_alpha",
            "re_alpha_S",
            "im_alpha_S",
        ]
        assert set(paths.trajectory_index) == {0, 1}
        events = pd.read_csv(tmp_path / "events.csv")
        assert list(events.columns) == ["trajectory_index", "t_emit", "detected"]
        assert set(events.detected) <= {0, 1}
        magnitudes = pd.read_csv(tmp_path / "magnitudes.csv")
        assert list(magnitudes.columns) == ["t", "abs_alpha_0", "abs_alpha_1"]
        ensemble = pd.read_csv(tmp_path / "ensemble.csv")
        assert list(ensemble.columns) == ["t", "I", "stderr", "n_halted"]
        assert len(ensemble) == 11
        sweep = pd.read_csv(tmp_path / "beta_sweep.csv")
        assert list(sweep.columns) == ["re_beta", "im_beta", "t", "I", "stderr"]
        assert len(sweep) == 22
        phases = pd.read_csv(tmp_path / "phase_sweep.csv")
        assert sorted(set(phases.phase)) == [0.0, 3.14159]

    def test_no_displayed_trajectories(self, tmp_path):
        code = qjump("feedback-run", tmp_path, SMALL_RUN + ["n_displayed=0"])
        assert code == EXIT_OK
        assert (tmp_path / "trajectories.csv").read_text().startswith("trajectory_index,t,")
        assert not (tmp_path / "beta_sweep.csv").exists()

    def test_threads_do_not_change_output(self, tmp_path):
        # Arrange
        overrides = [
            "n_trajectories=30",
            "horizon=3",
            "n_grid=31",
            "n_displayed=0",
            "block_size=4",
        ]

        # Act
        one = qjump("feedback-run", tmp_path / "one", overrides, "--threads", "1")
        three = qjump("feedback-run", tmp_path / "three", overrides, "--threads", "3")

        # Assert
        assert one == three == EXIT_OK
        assert (tmp_path / "one" / "ensemble.csv").read_bytes() == (
            tmp_path / "three" / "ensemble.csv"
        ).read_bytes()


class TestChiMap:
    def test_cells(self, tmp_path):
        code = qjump("chi-map", tmp_path, ["chi_cells=[0, 4]", "n_per_cell=10"])
        assert code == EXIT_OK
        chi = pd.read_csv(tmp_path / "chi.csv")
        assert list(chi.columns) == [
            "re_alpha0",
            "im_alpha0",
            "chi",
            "count",
            "undecided_fraction",
            "stderr",
        ]
        assert chi.chi[0] == 1.0
        assert (chi["count"] == 10).all()


class TestOracleCheck:
    """Tests for qjump oracle-check"""

    def test_laser_passes(self, tmp_path):
        code = qjump("oracle-check", tmp_path, SMALL_RUN)
        assert code == EXIT_OK
        summary = json.loads((tmp_path / "oracle_summary.json").read_text())
        assert summary["passed"] is True
        assert summary["truncation"] == 22
        assert summary["max_trace_drift"] < 1e-10
        paired = pd.read_csv(tmp_path / "paired.csv")
        assert list(paired.columns) == [
            "t",
            "mean_n_trajectory",
            "stderr_n",
            "mean_n_oracle",
            "deviation_sigma",
        ]

    def test_truncation_breach(self, tmp_path):
        code = qjump("oracle-check", tmp_path, ["omega=8", "oracle_truncation=20", "n_grid=11"])
        assert code == EXIT_RUNTIME
        assert not (tmp_path / "paired.csv").exists()

    def test_failed_acceptance(self, tmp_path):
        # a noiseless laser ensemble against a slightly truncated oracle
        overrides = SMALL_RUN + ["oracle_truncation=12", "truncation_allowance=0"]
        code = qjump("oracle-check", tmp_path, overrides)
        assert code == EXIT_ACCEPTANCE
        summary = json.loads((tmp_path / "oracle_summary.json").read_text())
        assert summary["passed"] is False


class TestErgodicity:
    def test_outputs(self, tmp_path):
        code = qjump("ergodicity", tmp_path, ["n_trajectories=10", "horizon=5", "n_grid=51"])
        assert code == EXIT_OK
        averages = pd.read_csv(tmp_path / "time_averages.csv")
        assert list(averages.columns) == ["trajectory", "time_average", "classification"]
        assert len(averages) == 10
        summary = json.loads((tmp_path / "ergodicity.json").read_text())
        assert summary["verdict"] == "ergodic"
        assert summary["n_trajectories"] == 10


class TestExitCodes:
    @pytest.mark.parametrize(
        "subcommand, overrides",
        [
            ("feedback-run", ["eta=2"]),
            ("feedback-run", ["bogus=1"]),
            ("laser-run", ["mode=feedback"]),
            ("laser-run", ["sampler=waiting_time"]),
            ("chi-map", ["n_per_cell=0"]),
        ],
    )
    def test_invalid_config(self, tmp_path, subcommand, overrides):
        assert qjump(subcommand, tmp_path, overrides) == EXIT_CONFIG
        assert not (tmp_path / "run_config.json").exists()

    def test_invalid_dataset(self, tmp_path, monkeypatch):
        # Arrange
        report = cli.ergodicity_report

        def broken(*args, **kwargs):
            return report(*args, **kwargs).drop_vars("classification")

        monkeypatch.setattr(cli, "ergodicity_report", broken)

        # Act
        code = qjump("ergodicity", tmp_path, ["n_trajectories=4", "horizon=1", "n_grid=11"])

        # Assert
        assert code == EXIT_RUNTIME
        assert not (tmp_path / "time_averages.csv").exists()

    def test_missing_config_file(self, tmp_path):
        code = qjump("laser-run", tmp_path, (), "--config", str(tmp_path / "nope.json"))
        assert code == EXIT_CONFIG

    def test_config_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"n_trajectories": 5, "horizon": 1.0, "n_grid": 6}))
        code = qjump("laser-run", tmp_path / "out", (), "--config", str(path))
        assert code == EXIT_OK
        assert len(pd.read_csv(tmp_path / "out" / "emission_rate.csv")) == 6


if __name__ == "__main__":
    pytest.main(["-v", "-s", __file__])
