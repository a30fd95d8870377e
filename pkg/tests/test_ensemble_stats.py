"""Ensemble harness checks: reproducible seeding, worker invariance, the
drift/diffusion/first-passage estimators, and the CSV/JSON emitters."""
import json

import numpy as np
import pytest

from gravlab import ensemble_stats as es
from gravlab.errors import ContainmentError, DomainError, StatisticsError
from gravlab.gaussian_dynamics import Variant
from gravlab.grid_dynamics import CatState

GAUSS_SOLITON = dict(solver="gaussian", initial=es.InitialSpec.soliton())


def small_config(variant, **over):
    base = dict(
        variant=variant,
        solver="gaussian",
        n_trajectories=20,
        t_final=0.5,
        dt=1e-3,
        base_seed=5,
    )
    base.update(over)
    return es.EnsembleConfig(**base)


def records_equal(a, b):
    return (
        np.array_equal(a.times, b.times)
        and np.array_equal(a.xbar, b.xbar)
        and np.array_equal(a.pbar, b.pbar)
        and np.array_equal(a.delta_x, b.delta_x)
        and np.array_equal(a.kinetic, b.kinetic)
        and np.array_equal(a.a, b.a)
    )


class TestConfigValidation:
    def test_rejects_bad_solver(self):
        with pytest.raises(DomainError):
            small_config(Variant.GSSE, solver="magic")

    def test_rejects_tiny_ensemble(self):
        with pytest.raises(DomainError):
            small_config(Variant.GSSE, n_trajectories=1)

    def test_rejects_bad_times(self):
        with pytest.raises(DomainError):
            small_config(Variant.GSSE, t_final=-1.0)
        with pytest.raises(DomainError):
            small_config(Variant.GSSE, t_final=0.0015, dt=1e-3)

    def test_rejects_unknown_observable(self):
        with pytest.raises(DomainError):
            small_config(Variant.GSSE, observables=("xbar", "entropy"))

    def test_initial_spec_validation(self):
        with pytest.raises(DomainError):
            es.InitialSpec("plane_wave")
        with pytest.raises(DomainError):
            es.InitialSpec.gaussian(0.0, 0.0, -1.0 + 0.5j)

    def test_auto_stride_targets_two_hundred_samples(self):
        cfg = small_config(Variant.GSSE, t_final=10.0, dt=1e-3)
        assert cfg.stride == 50
        assert small_config(Variant.GSSE, t_final=0.1).stride == 1


class TestRunEnsemble:
    def test_identical_configs_give_identical_records(self):
        cfg = small_config(Variant.GSSE)
        first = es.run_ensemble(cfg)
        second = es.run_ensemble(cfg)
        assert len(first) == cfg.n_trajectories
        assert all(records_equal(x, y) for x, y in zip(first, second))

    def test_worker_count_does_not_change_records(self):
        cfg = small_config(Variant.SSNE)
        serial = es.run_ensemble(cfg, workers=1)
        threaded = es.run_ensemble(cfg, workers=3)
        assert all(records_equal(x, y) for x, y in zip(serial, threaded))

    def test_grid_worker_count_does_not_change_records(self):
        cfg = small_config(
            Variant.GSSE, solver="grid", n_trajectories=6, t_final=0.05,
            grid_n=512, grid_x_min=-20.0, grid_x_max=20.0,
        )
        serial = es.run_ensemble(cfg, workers=1)
        threaded = es.run_ensemble(cfg, workers=2)
        assert all(records_equal(x, y) for x, y in zip(serial, threaded))

    def test_records_are_finite_and_on_schedule(self):
        cfg = small_config(Variant.GSSE, record_stride=100)
        records = es.run_ensemble(cfg)
        for rec in records:
            np.testing.assert_allclose(rec.times, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
            for name in ("xbar", "pbar", "delta_x", "kinetic"):
                assert np.all(np.isfinite(getattr(rec, name)))

    def test_solvers_agree_trajectory_by_trajectory(self):
        shared = dict(variant=Variant.GSSE, n_trajectories=4, t_final=0.2,
                      dt=1e-3, base_seed=9, record_stride=200)
        gauss = es.run_ensemble(es.EnsembleConfig(solver="gaussian", **shared))
        grid = es.run_ensemble(es.EnsembleConfig(solver="grid", **shared))
        for g, q in zip(gauss, grid):
            assert abs(g.xbar[-1] - q.xbar[-1]) < 5e-3
            assert abs(g.pbar[-1] - q.pbar[-1]) < 5e-3
            assert abs(g.delta_x[-1] - q.delta_x[-1]) < 5e-3

    def test_solver_failure_names_the_trajectory(self):
        cfg = small_config(
            Variant.GSSE, solver="grid", n_trajectories=3, t_final=0.01,
            grid_n=512, grid_x_min=-20.0, grid_x_max=20.0,
            initial=es.InitialSpec.soliton(xbar=17.0),
        )
        with pytest.raises(ContainmentError, match="trajectory 0"):
            es.run_ensemble(cfg)

    def test_rejects_bad_worker_count(self):
        with pytest.raises(DomainError):
            es.run_ensemble(small_config(Variant.GSSE), workers=0)


class TestKineticEnergyRate:
    def test_gsse_rate_near_half(self):
        cfg = es.EnsembleConfig(Variant.GSSE, n_trajectories=300, t_final=3.0,
                                dt=1e-3, base_seed=2, **GAUSS_SOLITON)
        result = es.estimate_ke_rate(es.run_ensemble(cfg))
        assert abs(result.estimate - 0.5) < 0.1
        assert result.stderr > 0
        assert result.window == (0.0, 3.0)
        assert result.diagnostics.r_squared > 0.95
        assert not result.diagnostics.residual_trend

    @pytest.mark.parametrize("variant", [Variant.SNE, Variant.SSNE])
    def test_noise_free_kinetic_energy_rate_is_exactly_zero(self, variant):
        cfg = es.EnsembleConfig(variant, n_trajectories=100, t_final=1.0,
                                dt=1e-3, base_seed=3, **GAUSS_SOLITON)
        result = es.estimate_ke_rate(es.run_ensemble(cfg))
        assert result.estimate == 0.0
        assert result.stderr > 0
        assert result.diagnostics.r_squared == 1.0

    def test_requires_hundred_trajectories(self):
        cfg = small_config(Variant.GSSE, n_trajectories=99)
        with pytest.raises(StatisticsError):
            es.estimate_ke_rate(es.run_ensemble(cfg))

    def test_perturbed_start_excludes_width_transient(self):
        cfg = es.EnsembleConfig(
            Variant.GSSE, solver="gaussian", n_trajectories=100, t_final=8.0,
            dt=1e-3, base_seed=4, initial=es.InitialSpec.gaussian(0.0, 0.0, 2.0 + 0.0j),
        )
        records = es.run_ensemble(cfg)
        result = es.estimate_ke_rate(records)
        assert result.window[0] == 5.0
        with pytest.raises(StatisticsError):
            es.estimate_ke_rate(records, transient=9.0)


class TestDiffusion:
    def test_gsse_momentum_variance_slope_near_one(self):
        cfg = es.EnsembleConfig(Variant.GSSE, n_trajectories=300, t_final=3.0,
                                dt=1e-3, base_seed=6, **GAUSS_SOLITON)
        result = es.estimate_diffusion(es.run_ensemble(cfg), "pbar", Variant.GSSE)
        assert abs(result.estimate - 1.0) < max(0.15, 3.0 * result.stderr)
        assert "quadratic_stderr" in result.diagnostics.details

    def test_ssne_momentum_variance_exactly_zero(self):
        cfg = es.EnsembleConfig(Variant.SSNE, n_trajectories=150, t_final=2.0,
                                dt=1e-3, base_seed=7, **GAUSS_SOLITON)
        result = es.estimate_diffusion(es.run_ensemble(cfg), "pbar", Variant.SSNE)
        assert result.estimate == 0.0
        assert result.stderr > 0

    def test_ssne_position_variance_slope_near_one_with_no_superlinear_part(self):
        cfg = es.EnsembleConfig(Variant.SSNE, n_trajectories=300, t_final=3.0,
                                dt=1e-3, base_seed=8, **GAUSS_SOLITON)
        result = es.estimate_diffusion(es.run_ensemble(cfg), "xbar", Variant.SSNE)
        assert abs(result.estimate - 1.0) < max(0.15, 3.0 * result.stderr)
        assert result.window[0] == 0.0
        details = result.diagnostics.details
        assert abs(details["quadratic"]) < 4.0 * details["quadratic_stderr"]
        assert abs(details["cubic"]) < 4.0 * details["cubic_stderr"]

    def test_rejects_unknown_observable(self):
        cfg = small_config(Variant.GSSE, n_trajectories=2)
        with pytest.raises(DomainError):
            es.estimate_diffusion(es.run_ensemble(cfg), "delta_x")


class TestCrossCovariance:
    def test_gsse_cov_rate_near_one_and_positive(self):
        cfg = es.EnsembleConfig(Variant.GSSE, n_trajectories=400, t_final=0.5,
                                dt=1e-3, base_seed=10, **GAUSS_SOLITON)
        result = es.estimate_xp_covariance(es.run_ensemble(cfg))
        assert abs(result.estimate - 1.0) < max(0.3, 3.0 * result.stderr)
        assert result.diagnostics.details["all_positive"]


def synthetic_branch_records():
    times = 0.1 * np.arange(1, 11)
    flat = np.full(10, 0.5)

    def crossing(k, left):
        w = flat.copy()
        w[k:] = 0.999 if left else 0.001
        return w

    return [
        es.BranchWeightRecord(0, times, crossing(2, True)),
        es.BranchWeightRecord(1, times, crossing(4, False)),
        es.BranchWeightRecord(2, times, crossing(6, True)),
        es.BranchWeightRecord(3, times, flat.copy()),
    ]


class TestCollapseStats:
    def test_synthetic_first_passage(self):
        records = synthetic_branch_records()[:3]
        result = es.collapse_time_stats(records, threshold=0.99)
        assert result.estimate == pytest.approx(0.5)
        details = result.diagnostics.details
        assert details["n_censored"] == 0
        assert details["winner_fraction_right"] == pytest.approx(1.0 / 3.0)
        assert details["ci_low"] <= result.estimate <= details["ci_high"]

    def test_censoring_budget(self):
        records = synthetic_branch_records()  # one of four undecided: 25%
        with pytest.raises(StatisticsError):
            es.collapse_time_stats(records, threshold=0.99)

    def test_threshold_validation(self):
        with pytest.raises(DomainError):
            es.collapse_time_stats(synthetic_branch_records(), threshold=0.3)

    def test_grid_cat_ensemble_first_passage(self):
        cat = CatState(1.5 + 0.0j, 8.0)
        records = es.run_collapse_ensemble(
            cat, Variant.GSSE, n_trajectories=60, t_final=0.4, dt=2e-4,
            base_seed=12, workers=2,
        )
        assert [rec.trajectory for rec in records] == list(range(60))
        result = es.collapse_time_stats(records, threshold=0.99)
        # first-passage scale 2 / ell^2 = 0.03125 for ell = 8
        assert 0.5 * 0.03125 < result.estimate < 2.0 * 0.03125
        details = result.diagnostics.details
        assert details["n_censored"] <= 2
        assert 0.25 < details["winner_fraction_right"] < 0.75


class TestEmission:
    def test_csv_long_format_and_determinism(self, tmp_path):
        cfg = small_config(Variant.GSSE, n_trajectories=3, record_stride=100)
        records = es.run_ensemble(cfg)
        path = tmp_path / "records.csv"
        es.write_records_csv(records, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "trajectory,time,observable,value"
        assert len(lines) == 1 + 3 * len(es.OBSERVABLES) * 6
        first = lines[1].split(",")
        assert first[0] == "0" and first[2] == "xbar"
        float(first[1]), float(first[3])
        twin = tmp_path / "again.csv"
        es.write_records_csv(records, twin)
        assert path.read_bytes() == twin.read_bytes()

    def test_json_summary_round_trip(self, tmp_path):
        result = es.collapse_time_stats(synthetic_branch_records()[:3])
        path = tmp_path / "summary.json"
        es.write_summary_json([result], path, metadata={"dt": 1e-3})
        payload = json.loads(path.read_text())
        assert payload["schema_version"] == es.SCHEMA_VERSION
        assert payload["metadata"]["dt"] == 1e-3
        entry = payload["estimates"]["collapse_time_median"]
        assert entry["estimate"] == pytest.approx(0.5)
        assert entry["r_squared"] is None

    def test_result_validation(self):
        with pytest.raises(StatisticsError):
            es.EstimatorResult("x", 1.0, 0.0, (0.0, 1.0), es.FitDiagnostics(1.0, False))
        with pytest.raises(StatisticsError):
            es.EstimatorResult("x", 1.0, 0.1, (2.0, 1.0), es.FitDiagnostics(1.0, False))
