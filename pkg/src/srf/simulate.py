"""Synthetic similarity data with known structure, plus baseline methods.

Generators produce sparse non-negative ground-truth embeddings, similarity
matrices at controlled signal-to-noise ratios, and missing-data masks.
Baselines (impute-then-factorize, parallel analysis, scree elbows) live here
too so experiments can compare against them under identical conditions.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from ._util import derive_rng, derive_seed, run_parallel
from .consensus import _column_corr, hungarian
from .rank import CvConfig, calibrate, cross_validate
from .simmat import DenseSimilarity
from .solver import SolverConfig, fit


class SimulationError(ValueError):
    """Raised for invalid simulation parameters."""


@dataclass
class GroundTruth:
    """A synthetic dataset with everything the generator knew."""

    w_true: np.ndarray
    s_clean: np.ndarray
    s_noisy: np.ndarray
    snr: float
    alpha: float
    seed: int

    @property
    def n(self):
        return self.w_true.shape[0]

    @property
    def rank(self):
        return self.w_true.shape[1]


def dirichlet_embedding(n, rank, alpha=0.2, seed=0):
    """Rows drawn from a symmetric Dirichlet; small alpha gives sparse rows."""
    if rank < 1 or n < 2:
        raise SimulationError(f"need n >= 2 and rank >= 1, got n={n}, rank={rank}")
    if alpha <= 0:
        raise SimulationError(f"alpha must be positive, got {alpha}")
    rng = derive_rng(seed)
    if rank == 1:
        return rng.random((n, 1))
    return rng.dirichlet(np.full(rank, alpha), size=n)


def _noise_scale_for_snr(clean, noise, snr):
    """Scale c with Var(clean) / Var(clean + c * noise) = snr, by bisection."""
    var_clean = clean.var()
    if var_clean == 0:
        raise SimulationError("clean signal has zero variance")
    if noise.var() == 0:
        raise SimulationError("noise draw has zero variance")

    def realized(c):
        return var_clean / (clean + c * noise).var()

    lo, hi = 0.0, 1.0
    tries = 0
    while realized(hi) > snr:
        hi *= 2.0
        tries += 1
        if tries > 200:
            raise SimulationError("cannot bracket the requested signal-to-noise ratio")
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if realized(mid) > snr:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def add_noise_to_snr(s_clean, snr, seed=0):
    """Add Gaussian noise to a similarity matrix at an exact realized SNR.

    SNR is Var(clean) / Var(noisy) over the upper triangle including the
    diagonal, hit within 1e-3 by bisecting the noise scale before the final
    clip-and-symmetrize.  snr=1 returns the input unchanged.
    """
    s_clean = np.asarray(s_clean, dtype=float)
    if not 0.0 < snr <= 1.0:
        raise SimulationError(f"snr must be in (0, 1], got {snr}")
    if snr == 1.0:
        return s_clean.copy()
    n = s_clean.shape[0]
    iu, ju = np.triu_indices(n)
    draw = derive_rng(seed, 8).standard_normal(iu.size)
    scale = _noise_scale_for_snr(s_clean[iu, ju], draw, snr)
    noisy = np.zeros_like(s_clean)
    noisy[iu, ju] = s_clean[iu, ju] + scale * draw
    noisy[ju, iu] = noisy[iu, ju]
    return np.maximum(noisy, 0.0)


def perturbed_embedding(w_true, snr, seed=0):
    """Gaussian noise on the embedding entries at an exact realized SNR,
    clipped back to non-negative.  The alternative noise model: perturb the
    factors instead of the similarities."""
    w_true = np.asarray(w_true, dtype=float)
    if not 0.0 < snr <= 1.0:
        raise SimulationError(f"snr must be in (0, 1], got {snr}")
    if snr == 1.0:
        return w_true.copy()
    draw = derive_rng(seed, 9).standard_normal(w_true.shape)
    scale = _noise_scale_for_snr(w_true.ravel(), draw.ravel(), snr)
    return np.maximum(w_true + scale * draw, 0.0)


def make_ground_truth(n, rank, alpha=0.2, snr=0.9, seed=0):
    """Dirichlet embedding, its Gram similarity, and a noisy copy."""
    w_true = dirichlet_embedding(n, rank, alpha, seed=derive_seed(seed, 10))
    s_clean = w_true @ w_true.T
    s_clean = (s_clean + s_clean.T) / 2.0
    s_noisy = add_noise_to_snr(s_clean, snr, seed=derive_seed(seed, 11))
    return GroundTruth(
        w_true=w_true, s_clean=s_clean, s_noisy=s_noisy, snr=snr, alpha=alpha, seed=seed
    )


def random_missing_mask(n, retention, seed=0):
    """Observe each off-diagonal pair independently with the given rate.

    The diagonal is always observed; (i, j) and (j, i) share one coin.
    """
    if not 0.0 < retention <= 1.0:
        raise SimulationError(f"retention must be in (0, 1], got {retention}")
    iu, ju = np.triu_indices(n, k=1)
    keep = derive_rng(seed, 12).random(iu.size) < retention
    mask = np.eye(n)
    mask[iu[keep], ju[keep]] = 1.0
    mask[ju[keep], iu[keep]] = 1.0
    return mask


def sampling_density(m_obs, n, rank):
    """Observed similarities per model parameter: m_obs / (n * rank).

    Below 1 there are fewer observed pairs than embedding entries, the
    under-determined regime.
    """
    if m_obs <= 0 or n <= 0 or rank <= 0:
        raise SimulationError("m_obs, n, and rank must all be positive")
    return float(m_obs) / (float(n) * float(rank))


def observed_fraction(mask):
    """Fraction of unordered off-diagonal pairs observed."""
    mask = np.asarray(mask)
    n = mask.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    return float((mask[iu, ju] > 0).mean())


def hoyer_sparsity(w):
    """Mean row sparseness: (sqrt(r) - l1/l2) / (sqrt(r) - 1), in [0, 1].

    1 means one-hot rows, 0 means perfectly flat rows.  Zero rows carry no
    sparseness information and are skipped with a warning.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[1] < 2:
        raise SimulationError("row sparseness needs at least 2 columns")
    if (w < 0).any():
        raise SimulationError("entries must be non-negative")
    l2 = np.linalg.norm(w, axis=1)
    alive = l2 > 0
    if not alive.any():
        raise SimulationError("all rows are zero")
    if not alive.all():
        warnings.warn("zero rows skipped in sparseness", stacklevel=2)
    l1 = np.abs(w[alive]).sum(axis=1)
    root_r = np.sqrt(w.shape[1])
    return float(((root_r - l1 / l2[alive]) / (root_r - 1.0)).mean())


def normalized_entropy(w):
    """Mean row entropy of normalized loadings, scaled to [0, 1] by log r.

    0 means one-hot rows, 1 means flat rows.  Zero rows are skipped with a
    warning.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[1] < 2:
        raise SimulationError("row entropy needs at least 2 columns")
    if (w < 0).any():
        raise SimulationError("entries must be non-negative")
    totals = w.sum(axis=1)
    alive = totals > 0
    if not alive.any():
        raise SimulationError("all rows are zero")
    if not alive.all():
        warnings.warn("zero rows skipped in entropy", stacklevel=2)
    p = w[alive] / totals[alive, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return float((terms.sum(axis=1) / np.log(w.shape[1])).mean())


def _pad_columns(a, b):
    width = max(a.shape[1], b.shape[1])
    pad_a = np.zeros((a.shape[0], width))
    pad_b = np.zeros((b.shape[0], width))
    pad_a[:, : a.shape[1]] = a
    pad_b[:, : b.shape[1]] = b
    return pad_a, pad_b


def factor_alignment(w_true, w_hat):
    """Mean |correlation| of optimally matched dimensions.

    Different widths are allowed; the narrower matrix is padded with zero
    columns, which match as correlation 0.
    """
    w_true = np.asarray(w_true, dtype=float)
    w_hat = np.asarray(w_hat, dtype=float)
    if w_true.shape[0] != w_hat.shape[0]:
        raise SimulationError("embeddings must cover the same items")
    a, b = _pad_columns(w_true, w_hat)
    corr = _column_corr(a, b, warn=False)
    assignment = hungarian(1.0 - np.abs(corr))
    return float(np.abs(corr[np.arange(len(assignment)), assignment]).mean())


def relative_factor_error(w_true, w_hat):
    """||W_true - W_hat P||_F^2 / ||W_true||_F^2 with P the best column match.

    Matching minimizes total squared column distance; width mismatches are
    zero-padded, so extra or missing dimensions count as pure error.
    """
    w_true = np.asarray(w_true, dtype=float)
    w_hat = np.asarray(w_hat, dtype=float)
    if w_true.shape[0] != w_hat.shape[0]:
        raise SimulationError("embeddings must cover the same items")
    denom = float((w_true * w_true).sum())
    if denom == 0:
        raise SimulationError("w_true is all zeros")
    a, b = _pad_columns(w_true, w_hat)
    sq_a = (a * a).sum(axis=0)
    sq_b = (b * b).sum(axis=0)
    cost = sq_a[:, None] + sq_b[None, :] - 2.0 * (a.T @ b)
    assignment = hungarian(cost)
    return float(cost[np.arange(len(assignment)), assignment].sum() / denom)


def median_impute(s):
    """Fill missing entries with the median observed off-diagonal value."""
    values = s.values.copy()
    iu, ju = s.observed_pairs()
    if iu.size == 0:
        raise SimulationError("no observed off-diagonal entries")
    fill = float(np.median(s.values[iu, ju]))
    values[s.mask == 0] = fill
    return values


def knn_impute(s, k=5):
    """Fill missing entries from the k most similar co-observed rows.

    Row similarity is the Pearson correlation over columns co-observed by
    both rows, excluding the two rows' own columns.  A missing (i, j) is
    estimated twice, from i's neighbors' values in column j and from j's
    neighbors in column i, and the estimates are averaged.  Entries with no
    usable neighbors anywhere fall back to the median with a warning.
    """
    if k < 1:
        raise SimulationError(f"k must be at least 1, got {k}")
    values = s.values
    mask = s.mask
    n = s.n
    iu, ju = s.observed_pairs()
    if iu.size == 0:
        raise SimulationError("no observed off-diagonal entries")
    median_fill = float(np.median(values[iu, ju]))

    sim = np.full((n, n), -np.inf)
    for i in range(n):
        co = mask[i] * mask  # (row l, column j) support grid for pairs (i, l)
        co[:, i] = 0.0
        np.fill_diagonal(co, 0.0)  # drops column j == l for each pair
        counts = co.sum(axis=1)
        sx = co @ values[i]
        sy = (co * values).sum(axis=1)
        sxx = co @ (values[i] * values[i])
        syy = (co * values * values).sum(axis=1)
        sxy = (co * values) @ values[i]
        with np.errstate(invalid="ignore", divide="ignore"):
            cov = sxy - sx * sy / counts
            var_x = sxx - sx * sx / counts
            var_y = syy - sy * sy / counts
            corr = cov / np.sqrt(var_x * var_y)
        ok = (counts >= 2) & np.isfinite(corr)
        sim[i, ok] = corr[ok]
    np.fill_diagonal(sim, -np.inf)

    def estimate(row, col):
        candidates = np.flatnonzero((mask[:, col] > 0) & np.isfinite(sim[row]))
        candidates = candidates[(candidates != row) & (candidates != col)]
        if candidates.size == 0:
            return None
        order = np.lexsort((candidates, -sim[row, candidates]))
        chosen = candidates[order[:k]]
        return float(values[chosen, col].mean())

    filled = values.copy()
    fell_back = False
    miss_i, miss_j = np.where(np.triu(mask == 0, k=1))
    for i, j in zip(miss_i, miss_j):
        sides = [e for e in (estimate(i, j), estimate(j, i)) if e is not None]
        if sides:
            guess = float(np.mean(sides))
        else:
            guess = median_fill
            fell_back = True
        filled[i, j] = filled[j, i] = guess
    if fell_back:
        warnings.warn("some entries had no usable neighbors; median fallback", stacklevel=2)
    return filled


def parallel_analysis(s, n_surrogates=100, percentile=95, seed=0):
    """Leading eigenvalues exceeding shuffled-surrogate thresholds.

    Surrogates shuffle the off-diagonal values (keeping symmetry and the
    diagonal), and each observed eigenvalue is compared with the matching
    percentile of the surrogate eigenvalues at the same index.  Retention
    stops at the first eigenvalue that fails; deep near-zero eigenvalues of
    an almost-positive-semidefinite matrix trivially beat the (negative)
    deep surrogate thresholds and must not inflate the count.
    """
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    if n_surrogates < 1:
        raise SimulationError("need at least one surrogate")
    obs = np.sort(np.linalg.eigvalsh(s))[::-1]
    iu, ju = np.triu_indices(n, k=1)
    vals = s[iu, ju]
    rng = derive_rng(seed, 13)
    sur = np.empty((n_surrogates, n))
    for b in range(n_surrogates):
        shuffled = rng.permutation(vals)
        m = np.diag(np.diag(s)).astype(float)
        m[iu, ju] = shuffled
        m[ju, iu] = shuffled
        sur[b] = np.sort(np.linalg.eigvalsh(m))[::-1]
    thresholds = np.percentile(sur, percentile, axis=0)
    below = obs <= thresholds
    return int(np.argmax(below)) if below.any() else n


def scree_rank(s):
    """Elbow of the eigenvalue scree by largest second difference.

    The spectrum is sorted descending and the elbow is the interior index i
    maximizing evals[i-1] - 2 evals[i] + evals[i+1]; the returned rank is
    that index (the number of eigenvalues before the bend).
    """
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    if n < 3:
        raise SimulationError("scree elbow needs at least 3 eigenvalues")
    evals = np.sort(np.linalg.eigvalsh(s))[::-1]
    second = evals[:-2] - 2.0 * evals[1:-1] + evals[2:]
    return int(np.argmax(second)) + 1


def _complete_for_spectrum(s_noisy, mask, knn_k=5):
    if (mask == 0).any():
        return knn_impute(DenseSimilarity(values=s_noisy * mask, mask=mask), k=knn_k)
    return s_noisy


def _rank_detection_cell(args):
    (true_rank, alpha, snr, retention, seed, n, rank_grid, cv_kwargs, knn_k) = args
    truth = make_ground_truth(n, true_rank, alpha=alpha, snr=snr, seed=seed)
    mask = random_missing_mask(n, retention, seed=derive_seed(seed, 14))
    observed = DenseSimilarity(values=truth.s_noisy * mask, mask=mask)
    calibration = calibrate(observed, seed=derive_seed(seed, 15))
    cv_cfg = CvConfig(rank_grid=rank_grid, seed=derive_seed(seed, 16), **cv_kwargs)
    curve = cross_validate(observed, calibration, cv_cfg)
    completed = _complete_for_spectrum(truth.s_noisy, mask, knn_k)
    return {
        "true_rank": true_rank,
        "alpha": alpha,
        "snr": snr,
        "retention": retention,
        "seed": seed,
        "cv": curve.selected_rank,
        "parallel_analysis": parallel_analysis(completed, seed=derive_seed(seed, 17)),
        "scree": scree_rank(completed),
    }


def rank_detection_experiment(
    true_ranks,
    snrs,
    retentions=(1.0,),
    alphas=(0.2,),
    n_seeds=3,
    n=100,
    rank_grid=(2, 3, 4, 5, 6, 7, 8, 9, 10),
    seed=0,
    cv_kwargs=None,
    knn_k=5,
    n_jobs=1,
):
    """Compare rank detectors over a grid of generating conditions.

    Returns (rows, mae) where rows hold the selected rank per method and
    condition, and mae maps method name to mean absolute error against the
    generating rank.
    """
    cells = []
    for true_rank in true_ranks:
        for alpha in alphas:
            for snr in snrs:
                for retention in retentions:
                    for rep in range(n_seeds):
                        cell_seed = derive_seed(
                            seed, 18, true_rank, int(alpha * 1000),
                            int(snr * 1000), int(retention * 1000), rep,
                        )
                        cells.append(
                            (true_rank, alpha, snr, retention, cell_seed, n,
                             tuple(rank_grid), cv_kwargs or {}, knn_k)
                        )
    rows = run_parallel(_rank_detection_cell, cells, n_jobs)
    mae = {}
    for method in ("cv", "parallel_analysis", "scree"):
        errs = [abs(row[method] - row["true_rank"]) for row in rows]
        mae[method] = float(np.mean(errs))
    return rows, mae


def _missing_data_cell(args):
    retention, seed, n, rank, alpha, snr, solver_cfg, knn_k = args
    truth = make_ground_truth(n, rank, alpha=alpha, snr=snr, seed=seed)
    mask = random_missing_mask(n, retention, seed=derive_seed(seed, 19))
    observed = DenseSimilarity(values=truth.s_noisy * mask, mask=mask)
    held = np.triu(mask == 0, k=1)
    if not held.any():
        held = np.triu(np.ones_like(mask, dtype=bool), k=1)  # full data: score reconstruction

    def score(w):
        r_mat = w @ w.T
        truth_vals = truth.s_noisy[held]
        resid = truth_vals - r_mat[held]
        denom = ((truth_vals - truth_vals.mean()) ** 2).sum()
        r2 = 1.0 - float((resid * resid).sum()) / float(denom)
        return r2, factor_alignment(truth.w_true, w)

    # Paired comparison: all three fits share one init seed so the scores
    # differ only through the matrix each method hands to the solver.
    out = {}
    cfg = replace(solver_cfg, seed=derive_seed(seed, 20))
    out["srf"] = score(fit(observed, rank, cfg).embedding)
    knn_full = DenseSimilarity(values=knn_impute(observed, k=knn_k))
    out["knn"] = score(fit(knn_full, rank, cfg).embedding)
    med_full = DenseSimilarity(values=median_impute(observed))
    out["median"] = score(fit(med_full, rank, cfg).embedding)
    return retention, out


def missing_data_experiment(
    retentions,
    n=100,
    rank=5,
    alpha=0.2,
    snr=0.9,
    n_seeds=3,
    seed=0,
    solver=None,
    knn_k=5,
    n_jobs=1,
):
    """Held-out recovery of direct masked fitting vs impute-then-factorize.

    For each retention level, fits the true rank on (a) the masked matrix
    directly, (b) neighbor-imputed, and (c) median-imputed completions, and
    scores held-out R^2 plus ground-truth factor alignment, averaged over
    generator seeds.  At full retention the R^2 is over all observed pairs.
    """
    solver = solver or SolverConfig()
    cells = [
        (retention, derive_seed(seed, 23, int(retention * 1000), rep), n, rank, alpha, snr, solver, knn_k)
        for retention in retentions
        for rep in range(n_seeds)
    ]
    results = run_parallel(_missing_data_cell, cells, n_jobs)
    rows = []
    for retention in retentions:
        matching = [out for ret, out in results if ret == retention]
        for method in ("srf", "knn", "median"):
            r2 = float(np.mean([out[method][0] for out in matching]))
            alignment = float(np.mean([out[method][1] for out in matching]))
            rows.append(
                {"retention": retention, "method": method, "heldout_r2": r2, "alignment": alignment}
            )
    return rows
