from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from errortail.experiment import (
    ExperimentConfig,
    FIGURE_HEADER,
    desk_scale_config,
    default_figure_grid,
    emit_figure_csv,
    figure_rows,
    format_config,
    format_probability,
    load_config,
    load_report_tables,
    paper_scale_config,
    pooled_empirical_sf,
    read_figure_csv,
    run_experiment,
    write_report,
)
from errortail.mlp import TrainConfig
from errortail.tail import ErrorSample, exceedance_probability, mean_excess, tail_fit


def tiny_config(tmp_path, **overrides) -> ExperimentConfig:
    defaults = dict(
        train_samples=1500,
        test_sets=3,
        test_set_size=1200,
        k=4,
        tree_steps=40,
        widths=(5, 8, 8, 8, 1),
        train_config=TrainConfig(epochs=2, batch_size=50),
        master_seed=7,
        output_dir=str(tmp_path / "out"),
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tiny")
    config = tiny_config(tmp)
    report = run_experiment(config)
    return config, report


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError, match="2k"):
            ExperimentConfig(test_set_size=100, k=51)
        with pytest.raises(ValueError, match="test_sets"):
            ExperimentConfig(test_sets=0)

    def test_scale_presets(self):
        desk = desk_scale_config()
        assert (desk.train_samples, desk.test_sets, desk.test_set_size) == (
            20_000,
            20,
            20_000,
        )
        assert desk.k == 54 and desk.tree_steps == 500
        paper = paper_scale_config()
        assert (paper.train_samples, paper.test_sets, paper.test_set_size) == (
            100_000,
            100,
            100_000,
        )
        assert paper.k == 270 and paper.tree_steps == 1000
        assert paper.widths == (5, 300, 300, 300, 1)

    def test_config_file_round_trip(self, tmp_path):
        config = tiny_config(tmp_path, master_seed=42)
        path = tmp_path / "config.txt"
        path.write_text(format_config(config))
        back = load_config(path)
        assert back == config

    def test_config_file_partial_overrides_base(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("config_version = 1\nk = 100\nmaster_seed = 9\n")
        config = load_config(path)
        assert config.k == 100
        assert config.master_seed == 9
        assert config.train_samples == ExperimentConfig().train_samples

    def test_config_file_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("config_version = 1\nmystery = 3\n")
        with pytest.raises(ValueError, match="mystery"):
            load_config(path)

    def test_config_file_rejects_bad_value(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("config_version = 1\nk = soon\n")
        with pytest.raises(ValueError, match="'k'"):
            load_config(path)

    def test_config_file_requires_version(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("k = 3\n")
        with pytest.raises(ValueError, match="config_version"):
            load_config(path)


class TestPooledEmpiricalSf:
    def test_full_mass_at_zero(self):
        sample = ErrorSample([0.5, 1.0, 2.0])
        assert pooled_empirical_sf(sample, 0.0) == 1.0

    def test_zero_above_maximum(self):
        sample = ErrorSample([0.5, 1.0, 2.0])
        assert pooled_empirical_sf(sample, 3.0) == 0.0

    def test_counting(self):
        sample = ErrorSample([1.0, 2.0, 3.0, 4.0])
        assert pooled_empirical_sf(sample, 2.5) == 0.5

    def test_strict_exceedance(self):
        sample = ErrorSample([1.0, 2.0, 3.0, 4.0])
        assert pooled_empirical_sf(sample, 2.0) == 0.5

    def test_vectorized(self):
        sample = ErrorSample([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(
            pooled_empirical_sf(sample, np.array([0.0, 2.5, 9.0])),
            [1.0, 0.5, 0.0],
        )


class TestRunExperiment:
    def test_per_set_boundary_identity(self, tiny_run):
        config, report = tiny_run
        rate = config.k / config.test_set_size
        for fit in report.fits:
            assert fit is not None
            assert exceedance_probability(fit, fit.u) == rate

    def test_aggregates_recomputable_from_lists(self, tiny_run):
        _, report = tiny_run
        assert report.exceed_mean == pytest.approx(
            float(np.mean(report.exceed_at_u_ref)), abs=1e-15
        )
        assert report.exceed_std == pytest.approx(
            float(np.std(report.exceed_at_u_ref, ddof=1)), abs=1e-15
        )
        assert report.mean_excess_mean == pytest.approx(
            float(np.mean(report.mean_excesses)), abs=1e-15
        )

    def test_u_ref_is_median_threshold(self, tiny_run):
        _, report = tiny_run
        assert report.u_ref == float(np.median([f.u for f in report.fits]))

    def test_mean_excess_matches_fits(self, tiny_run):
        _, report = tiny_run
        for fit, me in zip(report.fits, report.mean_excesses):
            assert me == mean_excess(fit)

    def test_pooled_concatenates_test_sets(self, tiny_run):
        config, report = tiny_run
        assert report.pooled.n == config.test_sets * config.test_set_size
        stacked = np.sort(
            np.concatenate([e.values for e in report.per_set_errors])
        )
        assert np.array_equal(report.pooled.values, stacked)

    def test_output_files_exist(self, tiny_run):
        config, _ = tiny_run
        for name in ("report.txt", "figure1.csv", "pooled_errors.csv"):
            assert Path(config.output_dir, name).exists()

    def test_report_file_recomputable(self, tiny_run):
        config, report = tiny_run
        keyvals, sets = load_report_tables(Path(config.output_dir, "report.txt"))
        assert keyvals["report_version"] == "1"
        assert int(keyvals["k"]) == config.k
        assert int(keyvals["tree_steps"]) == config.tree_steps
        exceeds = [row["exceed_at_u_ref"] for row in sets if row["n"] is not None]
        excesses = [row["mean_excess"] for row in sets if row["n"] is not None]
        assert abs(float(keyvals["exceed_at_u_ref_mean"]) - np.mean(exceeds)) <= 1e-12
        assert abs(float(keyvals["exceed_at_u_ref_std1"]) - np.std(exceeds, ddof=1)) <= 1e-12
        assert abs(float(keyvals["mean_excess_mean"]) - np.mean(excesses)) <= 1e-12
        assert abs(
            float(keyvals["exceed_at_u_ref_std2"]) - 2 * np.std(exceeds, ddof=1)
        ) <= 1e-12
        # per-set shape and scale re-derivable from the persisted fit fields
        for row in sets:
            if row["n"] is None:
                continue
            assert row["sigma_u"] == pytest.approx(
                -row["gamma_hat"] * (row["xstar_hat"] - row["u"]), abs=1e-15
            )

    def test_rerun_is_byte_identical(self, tiny_run, tmp_path):
        config, _ = tiny_run
        second = replace(config, output_dir=str(tmp_path / "again"))
        run_experiment(second)
        for name in ("report.txt", "figure1.csv", "pooled_errors.csv"):
            first_bytes = Path(config.output_dir, name).read_bytes()
            second_bytes = Path(second.output_dir, name).read_bytes()
            assert first_bytes == second_bytes, name

    def test_changing_test_sets_preserves_training_and_sets(self, tmp_path):
        # fewer test sets leave the shared stages untouched
        a = run_experiment(tiny_config(tmp_path, output_dir=str(tmp_path / "a")))
        b = run_experiment(
            tiny_config(tmp_path, test_sets=2, output_dir=str(tmp_path / "b"))
        )
        for i in range(2):
            assert np.array_equal(
                a.per_set_errors[i].values, b.per_set_errors[i].values
            )

    def test_workers_do_not_change_outputs(self, tiny_run, tmp_path):
        config, _ = tiny_run
        parallel = replace(config, output_dir=str(tmp_path / "parallel"))
        run_experiment(parallel, workers=2)
        assert (
            Path(config.output_dir, "figure1.csv").read_bytes()
            == Path(parallel.output_dir, "figure1.csv").read_bytes()
        )

    def test_degenerate_sets_recorded_and_excluded(self, tmp_path):
        from errortail.experiment import _aggregate, figure_rows

        config = tiny_config(tmp_path, k=5, test_set_size=100, train_samples=1500)
        rng = np.random.default_rng(3)
        per_set, fits, failures = [], [], []
        for i in range(config.test_sets):
            if i == 1:
                sample = ErrorSample([0.3] * 100)  # ties: unfittable
                per_set.append(sample)
                fits.append(None)
                failures.append((i, "tied order statistics"))
            else:
                sample = ErrorSample(rng.random(100))
                per_set.append(sample)
                fits.append(tail_fit(sample, config.k))
        pooled = ErrorSample(np.concatenate([s.values for s in per_set]))
        report = _aggregate(config, 0, fits, failures, pooled, per_set, None)

        assert len(report.exceed_at_u_ref) == config.test_sets - 1
        assert report.failures == failures
        rows = figure_rows(report, np.array([report.u_ref]))
        assert 0.0 <= rows[0].evt_mean <= 1.0

        path = tmp_path / "report.txt"
        write_report(report, path)
        keyvals, sets = load_report_tables(path)
        assert keyvals["count"] == "1"
        assert sets[1]["n"] is None
        assert int(keyvals["fitted_sets"]) == config.test_sets - 1


class TestFigure:
    def synthetic_report(self, tmp_path, shared_u=True):
        """Report built from hand-made fits over hand-made error sets."""
        from errortail.experiment import _aggregate

        config = tiny_config(tmp_path, k=5, test_set_size=100, train_samples=1500)
        rng = np.random.default_rng(0)
        fits, per_set = [], []
        for i in range(config.test_sets):
            base = np.sort(rng.random(100)) * 0.5
            # pin the k-th largest so every set shares the same threshold
            if shared_u:
                base[-config.k - 1] = 0.6
            base[-config.k :] = np.linspace(0.61, 0.7, config.k)
            sample = ErrorSample(base)
            per_set.append(sample)
            fits.append(tail_fit(sample, config.k))
        pooled = ErrorSample(np.concatenate([s.values for s in per_set]))
        return _aggregate(config, 0, fits, [], pooled, per_set, None)

    def test_header_and_round_trip(self, tiny_run):
        config, report = tiny_run
        path = Path(config.output_dir, "figure1.csv")
        lines = [
            line
            for line in path.read_text().splitlines()
            if line and not line.startswith("#")
        ]
        assert lines[0] == FIGURE_HEADER
        rows = read_figure_csv(path)
        assert len(rows) == 40

    def test_figure_embeds_configuration(self, tiny_run):
        config, _ = tiny_run
        text = Path(config.output_dir, "figure1.csv").read_text()
        assert f"# tree_steps={config.tree_steps}" in text
        assert "# widths=5,8,8,8,1" in text
        assert f"# master_seed={config.master_seed}" in text

    def test_columns_monotone_and_banded(self, tiny_run):
        config, report = tiny_run
        rows = read_figure_csv(Path(config.output_dir, "figure1.csv"))
        evt = [r.evt_mean for r in rows]
        emp = [r.empirical_pooled for r in rows]
        assert all(a >= b - 1e-15 for a, b in zip(evt, evt[1:]))
        assert all(a >= b for a, b in zip(emp, emp[1:]))
        for r in rows:
            assert 0.0 <= r.evt_lo <= r.evt_mean <= r.evt_hi <= 1.0
            assert 0.0 <= r.empirical_pooled <= 1.0

    def test_markov_columns_cross_at_moment_ratio(self, tiny_run):
        config, report = tiny_run
        rows = read_figure_csv(Path(config.output_dir, "figure1.csv"))
        m2 = float(np.mean(report.pooled.values**2))
        m4 = float(np.mean(report.pooled.values**4))
        crossover = (m4 / m2) ** 0.5
        for r in rows:
            if r.x > crossover:
                assert r.markov_m4 <= r.markov_m2 + 1e-15

    def test_shared_threshold_row_equals_rate(self, tmp_path):
        report = self.synthetic_report(tmp_path)
        rate = report.fits[0].k / report.fits[0].n
        u = report.fits[0].u
        assert all(f.u == u for f in report.fits)
        rows = figure_rows(report, np.array([u, u + 0.01]))
        # every set contributes exactly k/N at the shared threshold; the
        # cross-set mean and band collapse onto it up to averaging ulps
        assert rows[0].evt_mean == pytest.approx(rate, abs=1e-15)
        assert rows[0].evt_lo == pytest.approx(rate, abs=1e-15)
        assert rows[0].evt_hi == pytest.approx(rate, abs=1e-15)

    def test_grid_validation(self, tmp_path):
        report = self.synthetic_report(tmp_path)
        with pytest.raises(ValueError, match="sorted"):
            figure_rows(report, np.array([0.7, 0.65]))
        with pytest.raises(ValueError, match="reference threshold"):
            figure_rows(report, np.array([report.u_ref / 2.0]))

    def test_default_grid_spans_threshold_to_max(self, tiny_run):
        _, report = tiny_run
        grid = default_figure_grid(report)
        assert grid[0] == pytest.approx(report.u_ref, rel=1e-12)
        assert grid[-1] == pytest.approx(float(report.pooled.values[-1]), rel=1e-12)
        assert grid.size == 40


class TestFormatProbability:
    def test_plain_decimal_above_cutoff(self):
        assert format_probability(0.0025) == "0.0025"
        assert format_probability(5e-5) == "0.00005"
        assert format_probability(1.0) == "1.0"

    def test_scientific_below_cutoff(self):
        assert "e" in format_probability(5e-7)

    def test_zero(self):
        assert format_probability(0.0) == "0"

    def test_round_trips_through_float(self):
        for p in (0.0027, 1e-6, 0.123456789, 0.5):
            assert float(format_probability(p)) == pytest.approx(p, rel=1e-12)
