import numpy as np
import pytest

from swarmteleop.config import FeatureConfig
from swarmteleop.kinematics import CalibrationDataset, normalize_dataset
from swarmteleop.learning import (
    DOF_NAMES,
    MappingModel,
    moving_average,
    pearson,
    quality_matrix,
    ridge_fit,
    ridge_grid,
    ridge_path,
    select_features,
    snr,
    strategy_report,
    train_interface,
)


class TestPearson:
    def test_perfect_linear(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_perfect_antilinear(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_hand_computed_example(self):
        # cov([1,2,3,4],[1,3,2,4]) = 1.0; sigmas sqrt(1.25) each -> 0.8
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_constant_reports_zero(self):
        assert pearson([1.0, 1.0, 1.0], [1, 2, 3]) == 0.0

    def test_matches_numpy(self, rng):
        x, y = rng.normal(size=100), rng.normal(size=100)
        assert pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


class TestSnr:
    def test_pure_smooth_sine_hits_cap(self):
        t = np.arange(0, 20, 0.02)
        assert snr(np.sin(2 * np.pi * 0.25 * t)) == 100.0

    def test_white_noise_matches_loop_oracle(self):
        x = np.random.default_rng(7).normal(size=600)

        # independent oracle: explicit per-sample window averaging
        def oracle(x, w=11):
            half = w // 2
            ma = np.array([
                x[max(i - half, 0):min(i + half + 1, len(x))].mean()
                for i in range(len(x))
            ])
            resid = x - ma
            return min(ma.var() / resid.var(), 100.0)

        assert snr(x) == pytest.approx(oracle(x), rel=1e-12)

    def test_sine_plus_noise_near_analytic_power_ratio(self):
        rng = np.random.default_rng(42)
        t = np.arange(0, 40, 0.02)
        amplitude, sigma = 1.0, 0.1
        x = amplitude * np.sin(2 * np.pi * 0.5 * t) + rng.normal(0, sigma, len(t))
        analytic = (amplitude ** 2 / 2) / sigma ** 2
        assert snr(x) == pytest.approx(analytic, rel=0.2)

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            snr(np.ones(5))

    def test_moving_average_edges_shrink(self):
        x = np.arange(10.0)
        ma = moving_average(x, 5)
        assert ma[0] == pytest.approx(np.mean(x[:3]))
        assert ma[5] == pytest.approx(np.mean(x[3:8]))
        assert ma[-1] == pytest.approx(np.mean(x[-3:]))


def smooth_orthonormal_columns(n, k, seed=0):
    """Low-frequency, exactly orthonormal signal columns.

    Integer-cycle sinusoids over the window are exactly orthogonal under
    the discrete inner product and slow enough that the moving-average
    SNR hits its cap, which makes quality factors reduce to |alpha|.
    """
    t = np.arange(n)
    cols = [np.sqrt(2.0) * np.sin(2 * np.pi * (c + 1) * t / n) for c in range(k)]
    return np.column_stack(cols)


def dataset_with_alphas(alphas, n=1500, seed=3):
    """Columns with exact correlations to a smooth reference, all SNR-capped."""
    basis = smooth_orthonormal_columns(n, len(alphas) + 1, seed)
    y = basis[:, 0]
    cols = []
    for i, a in enumerate(alphas):
        cols.append(a * y + np.sqrt(max(1 - a * a, 0.0)) * basis[:, i + 1])
    X = np.column_stack(cols)
    Y = np.column_stack([y, y, y, y])
    ds = CalibrationDataset(
        t=np.arange(n) * 0.02,
        X=X,
        Y=Y,
        column_names=[f"v{i}" for i in range(len(alphas))],
        column_tags=["raw"] * (len(alphas) - 1) + ["integral"],
        boundary_indices=np.array([0]),
    )
    return normalize_dataset(ds)


class TestQualityMatrix:
    def test_single_active_variable_normalizes_to_one(self):
        ds = dataset_with_alphas([0.6])
        q = quality_matrix(ds)
        assert np.allclose(q.lam[:, 0], [1.0])

    def test_equal_snr_reduces_to_alpha_shares(self):
        ds = dataset_with_alphas([0.5, 0.3, 0.2])
        q = quality_matrix(ds)
        # smooth columns all hit the SNR cap, so lambda is |alpha| normalized
        assert np.allclose(q.snr, 100.0)
        assert np.allclose(q.lam[:, 0], [0.5, 0.3, 0.2], atol=1e-9)

    def test_columns_sum_to_one(self, rh_session, config):
        from swarmteleop.kinematics import build_dataset

        ds = build_dataset(rh_session.as_tuples(), rh_session.layout,
                           rh_session.boundaries)
        q = quality_matrix(ds)
        assert np.allclose(q.lam.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(q.lam >= 0)

    def test_planted_variable_dominates(self, rng):
        # one informative column among nine smooth distractors
        n = 2000
        basis = smooth_orthonormal_columns(n, 11, seed=9)
        y = basis[:, 0]
        planted = 0.4 + y + 0.01 * y.std() * rng.normal(size=n)
        distractors = [0.2 + basis[:, i] for i in range(1, 10)]
        X = np.column_stack([planted] + distractors)
        ds = CalibrationDataset(
            t=np.arange(n) * 0.02, X=X,
            Y=np.column_stack([y] * 4),
            column_names=[f"v{i}" for i in range(10)],
            column_tags=["raw"] * 9 + ["integral"],
            boundary_indices=np.array([0]),
        )
        q = quality_matrix(normalize_dataset(ds))
        assert np.argmax(q.lam[:, 0]) == 0
        assert q.lam[0, 0] > 0.5

    def test_requires_integral_columns(self):
        ds = dataset_with_alphas([0.5, 0.5])
        ds.column_tags = ["raw", "raw"]
        with pytest.raises(ValueError, match="integral"):
            quality_matrix(ds)

    def test_dead_dof_rejected(self):
        ds = dataset_with_alphas([0.5, 0.5])
        ds.Y = np.zeros_like(ds.Y)
        with pytest.raises(ValueError, match="DoF"):
            quality_matrix(ds)


class TestSelectFeatures:
    def test_prefix_reaches_threshold(self):
        assert select_features(np.array([0.5, 0.3, 0.2]), 0.7) == [0, 1]

    def test_single_dominant(self):
        assert select_features(np.array([0.71, 0.29]), 0.7) == [0]

    def test_tie_breaks_toward_lower_index(self):
        assert select_features(np.array([0.35, 0.35, 0.30]), 0.7) == [0, 1]
        assert select_features(np.array([0.30, 0.35, 0.35]), 0.7) == [1, 2]

    def test_sorted_descending_by_quality(self):
        assert select_features(np.array([0.1, 0.6, 0.3]), 0.7) == [1, 2]


class TestRidge:
    def test_orthonormal_small_penalty_limit(self, rng):
        n, p = 200, 4
        q, _ = np.linalg.qr(rng.normal(size=(n, p)))
        X = q
        w_true = np.array([1.0, -2.0, 0.5, 3.0])
        y = X @ w_true
        fit = ridge_fit(X, y, np.array([1e-10]))
        assert np.allclose(fit.weights, X.T @ y, atol=1e-6)

    def test_planted_coefficients_recovered(self, rng):
        n, p, sigma = 500, 3, 0.01
        X = rng.normal(size=(n, p))
        w_true = np.array([1.5, -2.0, 0.7])
        y = X @ w_true + rng.normal(0, sigma, n) + 0.3
        fit = ridge_fit(X, y)
        assert np.linalg.norm(fit.weights - w_true) / np.linalg.norm(w_true) < 0.05
        assert fit.intercept == pytest.approx(0.3, abs=0.01)

    def test_bic_argmin_matches_bruteforce_grid(self, rng):
        # independent oracle: dense grid solved via normal equations
        n, p, sigma = 500, 3, 0.01
        X = rng.normal(size=(n, p))
        w_true = np.array([1.5, -2.0, 0.7])
        y = X @ w_true + rng.normal(0, sigma, n)
        fit = ridge_fit(X, y)

        Xc = X - X.mean(axis=0)
        yc = y - y.mean()
        best = np.inf
        for lam in np.logspace(-4, 3, 1000):
            w = np.linalg.solve(Xc.T @ Xc + lam * np.eye(p), Xc.T @ yc)
            rss = np.sum((yc - Xc @ w) ** 2)
            d2 = np.linalg.svd(Xc, compute_uv=False) ** 2
            df = np.sum(d2 / (d2 + lam))
            bic = n * np.log(rss / n) + df * np.log(n)
            best = min(best, bic)
        assert fit.bic == pytest.approx(best, abs=0.1)

    def test_shrinkage_monotone(self, rng):
        X = rng.normal(size=(120, 5))
        y = rng.normal(size=120)
        grid = ridge_grid()
        norms = [np.linalg.norm(w) for w, _, _, _ in ridge_path(X, y, grid)]
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))

    def test_df_bounds_and_monotonicity(self, rng):
        X = rng.normal(size=(80, 4))
        y = rng.normal(size=80)
        grid = ridge_grid()
        dfs = [df for _, _, _, df in ridge_path(X, y, grid)]
        rank = np.linalg.matrix_rank(X - X.mean(axis=0))
        assert all(0 < df <= rank + 1e-9 for df in dfs)
        assert all(b <= a for a, b in zip(dfs, dfs[1:]))

    def test_underdetermined_warns(self, rng):
        X = rng.normal(size=(5, 8))
        y = rng.normal(size=5)
        with pytest.warns(UserWarning, match="rows"):
            ridge_fit(X, y)


class TestTrainInterface:
    def test_position_pilot_selects_raw_palm(self, rh_model):
        for dof, var in (("x", "palm_px"), ("y", "palm_py"), ("z", "palm_pz")):
            names = rh_model.selected_names(dof)
            tags = rh_model.selected_tags(dof)
            assert all(t == "raw" for t in tags)
            assert var in names[0]

    def test_velocity_pilot_selects_integrals(self, tilt_model):
        for dof in ("x", "y", "z"):
            assert "integral" in tilt_model.selected_tags(dof)

    def test_grasp_pilot_selects_grasp_for_expansion(self, config):
        from swarmteleop.engine import calibrate_with_pilot, train_on_session
        from swarmteleop.pilots import PilotStrategy

        strategy = PilotStrategy.from_kind("grasp-expansion", noise_level=0.01, seed=5)
        model, _ = train_on_session(calibrate_with_pilot(strategy, config), config)
        assert any("grasp" in n for n in model.selected_names("expansion"))

    def test_deterministic_model(self, config, rh_session):
        from swarmteleop.engine import train_on_session

        a, _ = train_on_session(rh_session, config)
        b, _ = train_on_session(rh_session, config)
        for ma, mb in zip(a.dofs, b.dofs):
            assert ma.indices == mb.indices
            assert np.array_equal(ma.weights, mb.weights)
            assert ma.intercept == mb.intercept and ma.ridge == mb.ridge

    def test_selection_scale_invariance(self, rng):
        # scaling one raw column by c changes neither |alpha| nor the
        # moving-average SNR (both variances scale by c^2), so the selected
        # index set per DoF is unchanged
        from swarmteleop.kinematics import integrate_dataset

        n = 1600
        basis = smooth_orthonormal_columns(n, 7)
        y = basis[:, 0]
        raw = np.column_stack([
            0.3 + 0.9 * y + 0.1 * basis[:, 1],
            -0.2 + 0.5 * y + 0.4 * basis[:, 2],
            0.1 + 0.2 * y + 0.8 * basis[:, 3],
            0.7 + basis[:, 4],
            -0.4 + basis[:, 5],
        ]) + 0.002 * rng.normal(size=(n, 5))

        def selections(X):
            ds = CalibrationDataset(
                t=np.arange(n) * 0.02, X=X.copy(),
                Y=np.column_stack([y] * 4),
                column_names=[f"v{i}" for i in range(X.shape[1])],
                column_tags=["raw"] * X.shape[1],
                boundary_indices=np.array([0, 400, 800, 1200]),
            )
            ds = normalize_dataset(integrate_dataset(ds))
            q = quality_matrix(ds)
            return [select_features(q.lam[:, j]) for j in range(4)]

        scaled = raw.copy()
        scaled[:, 1] *= -37.5
        assert selections(raw) == selections(scaled)

    def test_layout_hash_stable(self, rh_model):
        assert rh_model.layout_hash() == rh_model.layout_hash()


class TestStrategyReport:
    def test_planted_perfect_variable(self):
        ds = dataset_with_alphas([1.0, 0.3, 0.1])
        report = strategy_report(ds)
        assert [e["name"] for e in report["x"]] == ["v0"]

    def test_duplicates_both_listed(self):
        ds = dataset_with_alphas([0.8, 0.8, 0.1])
        report = strategy_report(ds)
        assert {e["name"] for e in report["x"]} == {"v0", "v1"}

    def test_matches_oracle_recomputation(self, rh_session, config):
        from swarmteleop.kinematics import build_dataset

        ds = build_dataset(rh_session.as_tuples(), rh_session.layout,
                           rh_session.boundaries)
        report = strategy_report(ds)
        for j, dof in enumerate(DOF_NAMES):
            alphas = np.array([
                abs(pearson(ds.X[:, i], ds.Y[:, j]))
                if not ds.constant_mask[i] else 0.0
                for i in range(ds.X.shape[1])
            ])
            expected = {
                ds.column_names[i]
                for i in np.nonzero(alphas >= 0.9 * alphas.max())[0]
            }
            assert {e["name"] for e in report[dof]} == expected
