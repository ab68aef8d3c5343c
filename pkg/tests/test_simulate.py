import math
import warnings

import numpy as np
import pytest
from scipy.stats import pearsonr

from srf.rank import CvConfig
from srf.simmat import DenseSimilarity
from srf.simulate import (
    SimulationError,
    add_noise_to_snr,
    dirichlet_embedding,
    factor_alignment,
    hoyer_sparsity,
    knn_impute,
    make_ground_truth,
    median_impute,
    missing_data_experiment,
    normalized_entropy,
    observed_fraction,
    parallel_analysis,
    perturbed_embedding,
    random_missing_mask,
    rank_detection_experiment,
    relative_factor_error,
    sampling_density,
    scree_rank,
)
from srf.solver import SolverConfig


class TestDirichlet:
    def test_rows_sum_to_one(self):
        w = dirichlet_embedding(50, 4, alpha=0.2, seed=0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert (w >= 0).all()

    def test_high_alpha_rows_are_flat(self):
        w = dirichlet_embedding(10_000, 4, alpha=1000.0, seed=1)
        np.testing.assert_allclose(w.mean(axis=0), 0.25, atol=0.01)

    def test_low_alpha_sparser_than_high(self):
        sparse = dirichlet_embedding(500, 4, alpha=0.05, seed=2)
        diffuse = dirichlet_embedding(500, 4, alpha=10.0, seed=2)
        assert hoyer_sparsity(sparse) > hoyer_sparsity(diffuse)

    def test_validation(self):
        with pytest.raises(SimulationError):
            dirichlet_embedding(1, 3)
        with pytest.raises(SimulationError):
            dirichlet_embedding(10, 0)
        with pytest.raises(SimulationError):
            dirichlet_embedding(10, 3, alpha=0.0)

    def test_deterministic(self):
        np.testing.assert_array_equal(
            dirichlet_embedding(20, 3, seed=5), dirichlet_embedding(20, 3, seed=5)
        )


def _offset_gram(n, seed, offset=3.0):
    """Positive symmetric matrix far from zero, so noise never clips."""
    rng = np.random.default_rng(seed)
    base = rng.random((n, 3))
    return base @ base.T + offset


class TestNoise:
    def test_snr_one_returns_copy(self):
        s = _offset_gram(10, 0)
        out = add_noise_to_snr(s, 1.0, seed=0)
        np.testing.assert_array_equal(out, s)
        assert out is not s

    def test_realized_snr_hits_target(self):
        for case in range(100):
            rng = np.random.default_rng(case)
            snr = float(rng.uniform(0.2, 0.95))
            s = _offset_gram(int(rng.integers(15, 40)), case, offset=5.0)
            noisy = add_noise_to_snr(s, snr, seed=case)
            assert (noisy > 0).all()  # clip never engaged on offset data
            iu, ju = np.triu_indices(s.shape[0])
            realized = s[iu, ju].var() / noisy[iu, ju].var()
            assert abs(realized - snr) <= 1e-3

    def test_half_snr_noise_variance_matches_signal(self):
        # needs enough entries that the clean-noise sample covariance
        # (a cross-term the bisection absorbs) stays well under 5%
        s = _offset_gram(150, 3, offset=6.0)
        noisy = add_noise_to_snr(s, 0.5, seed=3)
        iu, ju = np.triu_indices(s.shape[0])
        diff_var = (noisy - s)[iu, ju].var()
        assert abs(diff_var - s[iu, ju].var()) / s[iu, ju].var() < 0.05

    def test_output_symmetric_nonnegative_under_clipping(self):
        w = dirichlet_embedding(30, 3, alpha=0.1, seed=4)
        noisy = add_noise_to_snr(w @ w.T, 0.2, seed=4)
        np.testing.assert_array_equal(noisy, noisy.T)
        assert (noisy >= 0).all()

    def test_validation(self):
        s = _offset_gram(6, 5)
        with pytest.raises(SimulationError, match="snr"):
            add_noise_to_snr(s, 0.0)
        with pytest.raises(SimulationError, match="snr"):
            add_noise_to_snr(s, 1.5)
        with pytest.raises(SimulationError, match="variance"):
            add_noise_to_snr(np.ones((5, 5)), 0.5)

    def test_perturbed_embedding(self):
        w = dirichlet_embedding(40, 3, seed=6)
        assert np.array_equal(perturbed_embedding(w, 1.0), w)
        noisy = perturbed_embedding(w, 0.5, seed=6)
        assert (noisy >= 0).all()
        np.testing.assert_array_equal(noisy, perturbed_embedding(w, 0.5, seed=6))
        with pytest.raises(SimulationError, match="snr"):
            perturbed_embedding(w, 0.0)


class TestGroundTruth:
    def test_fields_consistent(self):
        gt = make_ground_truth(30, 4, alpha=0.3, snr=0.8, seed=7)
        np.testing.assert_allclose(gt.w_true.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(gt.s_clean, gt.w_true @ gt.w_true.T, atol=1e-12)
        assert gt.n == 30 and gt.rank == 4
        assert gt.snr == 0.8 and gt.alpha == 0.3

    def test_deterministic(self):
        a = make_ground_truth(15, 3, seed=8)
        b = make_ground_truth(15, 3, seed=8)
        np.testing.assert_array_equal(a.s_noisy, b.s_noisy)


class TestMissingMask:
    def test_full_retention(self):
        np.testing.assert_array_equal(random_missing_mask(8, 1.0, seed=0), np.ones((8, 8)))

    def test_binomial_rate(self):
        mask = random_missing_mask(200, 0.3, seed=1)
        iu, ju = np.triu_indices(200, k=1)
        frac = mask[iu, ju].mean()
        se = math.sqrt(0.3 * 0.7 / iu.size)
        assert abs(frac - 0.3) < 3 * se

    def test_symmetric_with_diagonal(self):
        for seed in range(5):
            mask = random_missing_mask(20, 0.4, seed=seed)
            np.testing.assert_array_equal(mask, mask.T)
            assert (np.diag(mask) == 1.0).all()

    def test_validation(self):
        with pytest.raises(SimulationError, match="retention"):
            random_missing_mask(10, 0.0)


class TestDensity:
    def test_per_parameter_ratio(self):
        assert sampling_density(500, 100, 5) == 1.0
        assert sampling_density(250, 100, 5) == 0.5
        assert sampling_density(100 * 99 // 2, 100, 5) == pytest.approx(9.9)

    def test_validation(self):
        with pytest.raises(SimulationError, match="positive"):
            sampling_density(0, 100, 5)

    def test_observed_fraction(self):
        mask = np.eye(4)
        mask[0, 1] = mask[1, 0] = 1.0
        assert observed_fraction(mask) == pytest.approx(1.0 / 6.0)


class TestSparsenessMeasures:
    def test_hoyer_extremes(self):
        assert hoyer_sparsity(np.eye(4)) == pytest.approx(1.0)
        assert hoyer_sparsity(np.full((5, 4), 0.25)) == pytest.approx(0.0, abs=1e-12)

    def test_hoyer_hand_value(self):
        row = np.array([[0.5, 0.5, 0.0, 0.0]])
        assert hoyer_sparsity(row) == pytest.approx((2.0 - math.sqrt(2.0)) / 1.0, abs=1e-12)
        assert hoyer_sparsity(row) == pytest.approx(0.5858, abs=1e-4)

    def test_entropy_extremes(self):
        assert normalized_entropy(np.full((5, 4), 0.25)) == pytest.approx(1.0)
        assert normalized_entropy(np.eye(4)) == pytest.approx(0.0)

    def test_entropy_hand_value(self):
        row = np.array([[0.5, 0.5, 0.0, 0.0]])
        assert normalized_entropy(row) == pytest.approx(0.5, abs=1e-12)

    def test_zero_rows_skipped_with_warning(self):
        w = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.warns(UserWarning, match="zero rows"):
            assert hoyer_sparsity(w) == pytest.approx(1.0)
        with pytest.warns(UserWarning, match="zero rows"):
            assert normalized_entropy(w) == pytest.approx(0.0)

    def test_validation(self):
        with pytest.raises(SimulationError):
            hoyer_sparsity(np.ones((3, 1)))
        with pytest.raises(SimulationError):
            hoyer_sparsity(-np.ones((3, 2)))
        with pytest.raises(SimulationError):
            hoyer_sparsity(np.zeros((3, 2)))
        with pytest.raises(SimulationError):
            normalized_entropy(np.zeros((3, 2)))

    def test_measures_anticorrelated_over_alpha_sweep(self):
        alphas = (0.05, 0.2, 1.0, 5.0, 20.0)
        hoyers, entropies = [], []
        for alpha in alphas:
            w = dirichlet_embedding(400, 4, alpha=alpha, seed=9)
            hoyers.append(hoyer_sparsity(w))
            entropies.append(normalized_entropy(w))
        assert (np.diff(hoyers) < 0).all()
        assert (np.diff(entropies) > 0).all()


class TestFactorMetrics:
    def test_alignment_permutation_invariant(self):
        w = dirichlet_embedding(40, 4, seed=10)
        assert factor_alignment(w, w[:, [2, 0, 3, 1]]) == pytest.approx(1.0, abs=1e-12)

    def test_alignment_independent_near_zero(self):
        rng = np.random.default_rng(11)
        scores = [
            factor_alignment(rng.standard_normal((300, 3)), rng.standard_normal((300, 3)))
            for _ in range(10)
        ]
        assert np.mean(scores) < 0.2

    def test_alignment_monotone_in_snr(self):
        w = dirichlet_embedding(50, 3, alpha=0.2, seed=12)
        high = factor_alignment(w, perturbed_embedding(w, 0.9, seed=12))
        low = factor_alignment(w, perturbed_embedding(w, 0.3, seed=12))
        assert high >= low

    def test_alignment_pads_width_mismatch(self):
        w = dirichlet_embedding(40, 3, alpha=0.2, seed=13)
        assert factor_alignment(w, w[:, :2]) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_relative_error_zero_on_permutation(self):
        w = dirichlet_embedding(30, 4, seed=14)
        assert relative_factor_error(w, w[:, [3, 1, 0, 2]]) == pytest.approx(0.0, abs=1e-12)

    def test_relative_error_one_against_zeros(self):
        w = dirichlet_embedding(30, 4, seed=15)
        assert relative_factor_error(w, np.zeros_like(w)) == pytest.approx(1.0, abs=1e-12)

    def test_relative_error_orders_noise(self):
        w = dirichlet_embedding(40, 3, seed=16)
        small = relative_factor_error(w, perturbed_embedding(w, 0.9, seed=16))
        large = relative_factor_error(w, perturbed_embedding(w, 0.4, seed=16))
        assert small < large

    def test_item_count_mismatch(self):
        with pytest.raises(SimulationError, match="same items"):
            factor_alignment(np.ones((5, 2)), np.ones((6, 2)))
        with pytest.raises(SimulationError, match="same items"):
            relative_factor_error(np.ones((5, 2)), np.ones((6, 2)))


class TestMedianImpute:
    def test_even_count_mean_of_two(self):
        values = np.eye(3)
        values[0, 1] = values[1, 0] = 0.1
        values[1, 2] = values[2, 1] = 0.3
        mask = np.ones((3, 3))
        mask[0, 2] = mask[2, 0] = 0.0
        filled = median_impute(DenseSimilarity(values=values * mask, mask=mask))
        assert filled[0, 2] == pytest.approx(0.2)

    def test_odd_count(self):
        values = np.eye(4)
        pairs = {(0, 1): 0.1, (1, 2): 0.2, (2, 3): 0.9}
        mask = np.eye(4)
        for (i, j), v in pairs.items():
            values[i, j] = values[j, i] = v
            mask[i, j] = mask[j, i] = 1.0
        filled = median_impute(DenseSimilarity(values=values * mask, mask=mask))
        assert filled[0, 3] == pytest.approx(0.2)

    def test_no_missing_is_identity(self):
        s = DenseSimilarity(values=_offset_gram(5, 17))
        np.testing.assert_array_equal(median_impute(s), s.values)


def _knn_oracle(s, k):
    """Loop-based reimplementation of neighbor imputation."""
    values, mask, n = s.values, s.mask, s.n
    iu, ju = s.observed_pairs()
    median_fill = float(np.median(values[iu, ju]))

    def row_similarity(i, l):
        cols = [
            j
            for j in range(n)
            if j != i and j != l and mask[i, j] and mask[l, j]
        ]
        if len(cols) < 2:
            return None
        x = values[i, cols]
        y = values[l, cols]
        if np.std(x) == 0 or np.std(y) == 0:
            return None
        r = pearsonr(x, y).statistic
        return None if not np.isfinite(r) else r

    sim = {}
    for i in range(n):
        for l in range(n):
            if i != l:
                sim[(i, l)] = row_similarity(i, l)

    def estimate(row, col):
        cands = [
            l
            for l in range(n)
            if l not in (row, col) and mask[l, col] and sim[(row, l)] is not None
        ]
        if not cands:
            return None
        cands.sort(key=lambda l: (-sim[(row, l)], l))
        return float(np.mean([values[l, col] for l in cands[:k]]))

    filled = values.copy()
    for i in range(n):
        for j in range(i + 1, n):
            if not mask[i, j]:
                sides = [e for e in (estimate(i, j), estimate(j, i)) if e is not None]
                guess = float(np.mean(sides)) if sides else median_fill
                filled[i, j] = filled[j, i] = guess
    return filled


class TestKnnImpute:
    def test_no_missing_is_identity(self):
        s = DenseSimilarity(values=_offset_gram(6, 18))
        np.testing.assert_array_equal(knn_impute(s), s.values)

    def test_identical_rows_fill_common_value(self):
        values = np.full((5, 5), 0.6)
        np.fill_diagonal(values, 1.0)
        mask = np.ones((5, 5))
        mask[0, 1] = mask[1, 0] = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # constant rows have no usable corr
            filled = knn_impute(DenseSimilarity(values=values * mask, mask=mask))
        assert filled[0, 1] == pytest.approx(0.6)

    def test_matches_loop_oracle(self):
        for seed in range(4):
            gt = make_ground_truth(14, 3, alpha=0.4, snr=0.8, seed=seed)
            mask = random_missing_mask(14, 0.7, seed=seed)
            s = DenseSimilarity(values=gt.s_noisy * mask, mask=mask)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fast = knn_impute(s, k=3)
            np.testing.assert_allclose(fast, _knn_oracle(s, 3), atol=1e-12)

    def test_validation(self):
        s = DenseSimilarity(values=_offset_gram(5, 19))
        with pytest.raises(SimulationError, match="k must"):
            knn_impute(s, k=0)
        diag_only = DenseSimilarity(values=np.eye(4), mask=np.eye(4))
        with pytest.raises(SimulationError, match="no observed"):
            knn_impute(diag_only)


class TestRankBaselines:
    def test_parallel_analysis_planted_structure(self):
        rng = np.random.default_rng(20)
        w = rng.dirichlet([0.2] * 3, size=80) * np.array([6.0, 5.0, 4.0])
        s = w @ w.T + 0.01 * np.abs(rng.standard_normal((80, 80)))
        s = (s + s.T) / 2.0
        assert parallel_analysis(s, seed=0) == 3

    def test_parallel_analysis_pure_noise(self):
        rng = np.random.default_rng(21)
        noise = rng.standard_normal((60, 60))
        noise = (noise + noise.T) / 2.0
        assert parallel_analysis(noise, seed=1) <= 1

    def test_parallel_analysis_identity(self):
        assert parallel_analysis(np.eye(30), seed=2) == 0

    def test_parallel_analysis_deterministic(self):
        s = _offset_gram(20, 22)
        assert parallel_analysis(s, seed=3) == parallel_analysis(s, seed=3)

    def test_parallel_analysis_validation(self):
        with pytest.raises(SimulationError, match="surrogate"):
            parallel_analysis(np.eye(5), n_surrogates=0)

    def test_scree_hand_spectrum(self):
        evals = [10.0, 9.0, 8.0, 0.1, 0.09, 0.08, 0.07]
        assert scree_rank(np.diag(evals)) == 3

    def test_scree_geometric_decay_picks_first(self):
        evals = [2.0 ** (-i) for i in range(8)]
        assert scree_rank(np.diag(evals)) == 1

    def test_scree_exact_rank_with_zero_tail(self):
        evals = [5.0, 4.0, 3.0, 0.0, 0.0, 0.0]
        assert scree_rank(np.diag(evals)) == 3

    def test_scree_validation(self):
        with pytest.raises(SimulationError, match="3 eigenvalues"):
            scree_rank(np.eye(2))


class TestExperiments:
    def test_rank_detection_noiseless_cv_exact(self):
        rows, mae = rank_detection_experiment(
            true_ranks=(3,),
            snrs=(1.0,),
            n_seeds=1,
            n=40,
            rank_grid=(2, 3, 4),
            seed=0,
            cv_kwargs=dict(
                folds=3, repeats=1, solver=SolverConfig(outer_iters=150, tol=1e-4)
            ),
        )
        assert mae["cv"] == 0.0
        assert len(rows) == 1
        row = rows[0]
        assert row["cv"] == 3 and row["true_rank"] == 3
        assert {"parallel_analysis", "scree", "snr", "retention"} <= set(row)

    def test_missing_data_experiment_structure(self):
        rows = missing_data_experiment(
            retentions=(0.8, 1.0),
            n=30,
            rank=3,
            n_seeds=1,
            seed=0,
            solver=SolverConfig(outer_iters=100, tol=1e-3),
        )
        assert len(rows) == 6  # 2 retentions x 3 methods
        methods = {row["method"] for row in rows}
        assert methods == {"srf", "knn", "median"}
        for row in rows:
            assert -5.0 < row["heldout_r2"] <= 1.0
            assert 0.0 <= row["alignment"] <= 1.0
