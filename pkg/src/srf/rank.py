"""Rank selection by cross-validation with calibrated fold density.

Naive entry-wise cross-validation of a symmetric factorization leaks: with
enough observed entries, a held-out entry is pinned down by the rest of the
matrix through low-rank structure alone (see :func:`nystrom_complete`), so
validation error stops penalizing overfit ranks.  The fix is to hold out so
much that no fold's training set determines the held-out entries.  The
calibration step estimates, per dataset, the retention probability p* below
which the top of the spectrum stays stable but completions degrade, and the
cross-validation masks are built at that density.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._util import derive_rng, derive_seed, run_parallel
from .simmat import DenseSimilarity
from .solver import SolverConfig, fit

AFFINITY_THRESHOLD = 0.9
STABILITY_PROBES = (0.5, 0.7, 0.9)
DENSITY_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


class RankSelectionError(ValueError):
    """Raised for invalid calibration or cross-validation inputs."""


@dataclass
class Calibration:
    """Dataset-specific retention calibration.

    k_cut is the deepest eigenvector prefix that stays stable under
    subsampling; p_star the smallest retention that preserves the top-k_cut
    spectral mass within tolerance delta.
    """

    k_cut: int
    p_star: float
    delta: float = 0.10

    def __post_init__(self):
        if self.k_cut < 1:
            raise RankSelectionError(f"k_cut must be at least 1, got {self.k_cut}")
        if not 0.0 < self.p_star <= 0.95:
            raise RankSelectionError(f"p_star must be in (0, 0.95], got {self.p_star}")
        if not 0.0 < self.delta < 1.0:
            raise RankSelectionError(f"delta must be in (0, 1), got {self.delta}")


@dataclass
class CvConfig:
    rank_grid: tuple = (2, 3, 4, 5, 6, 7, 8)
    folds: int = 5
    repeats: int = 5
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        grid = tuple(int(r) for r in self.rank_grid)
        if len(grid) == 0 or len(set(grid)) != len(grid) or min(grid) < 1:
            raise RankSelectionError("rank_grid must be distinct positive integers")
        self.rank_grid = tuple(sorted(grid))
        if self.folds < 2:
            raise RankSelectionError(f"need at least 2 folds, got {self.folds}")
        if self.repeats < 1:
            raise RankSelectionError(f"need at least 1 repeat, got {self.repeats}")


@dataclass
class CvCurve:
    """Validation error per candidate rank, one cell per (rank, repeat, fold)."""

    ranks: tuple
    mean_mse: np.ndarray
    std_mse: np.ndarray
    selected_rank: int
    cells: list  # (rank, repeat, fold, validation mse)


def _eigh_descending(matrix, vectors=True):
    if vectors:
        evals, evecs = np.linalg.eigh(matrix)
        return evals[::-1], evecs[:, ::-1]
    return np.linalg.eigvalsh(matrix)[::-1]


def _surrogate(s, p, rng):
    """Subsample observed off-diagonal pairs at rate p and reweight by 1/p.

    The diagonal is kept as-is; dividing retained off-diagonal entries by p
    makes the surrogate unbiased for the reference matrix entry-wise.
    """
    iu, ju = s.observed_pairs()
    keep = rng.random(iu.size) < p
    out = np.zeros_like(s.values)
    d = np.diag_indices(s.n)
    out[d] = s.values[d] * np.diag(s.mask)
    ki, kj = iu[keep], ju[keep]
    out[ki, kj] = s.values[ki, kj] / p
    out[kj, ki] = out[ki, kj]
    return out


def calibrate(s, delta=0.10, seed=0, n_draws=10, probes=STABILITY_PROBES):
    """Estimate (k_cut, p_star) for a dataset.

    Stage 1 draws reweighted subsampled surrogates at a few retention probes
    and measures, for each prefix depth k, the mean squared subspace overlap
    between the reference and surrogate top-k eigenvectors.  k_cut is the
    deepest k whose whole prefix stays above 0.9.  Stage 2 scans a retention
    grid for the smallest p whose surrogate top-k_cut eigenspaces recover at
    least (1 - delta) of the reference top-k_cut spectral mass; if none
    qualifies, p_star falls back to 0.95 with a warning.
    """
    if not 0.0 < delta < 1.0:
        raise RankSelectionError(f"delta must be in (0, 1), got {delta}")
    n = s.n
    if n < 3:
        raise RankSelectionError("calibration needs at least 3 items")
    reference = s.values * s.mask
    ref_evals, ref_evecs = _eigh_descending(reference)

    max_k = n - 1
    affinity = np.zeros(max_k)
    draws = 0
    for probe_idx, probe in enumerate(probes):
        for draw in range(n_draws):
            rng = derive_rng(seed, 1, probe_idx, draw)
            sur = _surrogate(s, probe, rng)
            _, sur_evecs = _eigh_descending(sur)
            overlap_sq = (ref_evecs.T @ sur_evecs) ** 2
            prefix = overlap_sq[:max_k, :max_k].cumsum(axis=0).cumsum(axis=1)
            affinity += np.diag(prefix) / np.arange(1, max_k + 1)
            draws += 1
    affinity /= draws
    unstable = affinity < AFFINITY_THRESHOLD
    k_cut = int(np.argmax(unstable)) if unstable.any() else max_k
    k_cut = max(k_cut, 1)

    ref_mass = float(ref_evals[:k_cut].sum())
    p_star = None
    for p_idx, p in enumerate(DENSITY_GRID):
        recovered = []
        for draw in range(n_draws):
            rng = derive_rng(seed, 2, p_idx, draw)
            _, sur_evecs = _eigh_descending(_surrogate(s, p, rng))
            basis = sur_evecs[:, :k_cut]
            # reference mass captured by the surrogate's top-k_cut eigenspace;
            # the surrogate's own eigenvalues are inflated by sampling noise
            # and would satisfy any mass threshold at arbitrarily small p
            recovered.append(float(((reference @ basis) * basis).sum()))
        if np.mean(recovered) >= (1.0 - delta) * ref_mass:
            p_star = float(p)
            break
    if p_star is None:
        warnings.warn(
            "no retention on the grid preserves the spectral mass; using 0.95",
            stacklevel=2,
        )
        p_star = 0.95
    return Calibration(k_cut=k_cut, p_star=p_star, delta=delta)


def fold_invariant_p(p_star, folds):
    """Outer retention making each fold's training density come out at p_star.

    Training on (folds - 1) of folds shares of an outer mask drawn at this
    rate has expected density p_star, capped at 0.95 so some entries always
    remain unobserved.
    """
    if folds < 2:
        raise RankSelectionError(f"need at least 2 folds, got {folds}")
    if not 0.0 < p_star <= 0.95:
        raise RankSelectionError(f"p_star must be in (0, 0.95], got {p_star}")
    return min(0.95, p_star * folds / (folds - 1))


def outer_mask(s, p_cv, seed):
    """Bernoulli-thin the observed off-diagonal pairs to retention p_cv."""
    if not 0.0 < p_cv <= 1.0:
        raise RankSelectionError(f"p_cv must be in (0, 1], got {p_cv}")
    iu, ju = s.observed_pairs()
    keep = derive_rng(seed).random(iu.size) < p_cv
    mask = np.zeros_like(s.mask)
    np.fill_diagonal(mask, np.diag(s.mask))
    ki, kj = iu[keep], ju[keep]
    mask[ki, kj] = 1.0
    mask[kj, ki] = 1.0
    return mask


def assign_folds(mask, folds, seed):
    """Shuffle observed off-diagonal pairs into near-equal disjoint folds.

    Returns (i_idx, j_idx, fold_id) over upper-triangle observed pairs.
    """
    n = mask.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = mask[iu, ju] > 0
    iu, ju = iu[keep], ju[keep]
    if iu.size < folds:
        raise RankSelectionError(
            f"only {iu.size} observed pairs for {folds} folds; mask too sparse"
        )
    order = derive_rng(seed).permutation(iu.size)
    fold_id = np.empty(iu.size, dtype=int)
    for f, chunk in enumerate(np.array_split(order, folds)):
        fold_id[chunk] = f
    return iu, ju, fold_id


def _cv_cell(args):
    values, train_mask, val_i, val_j, rank, solver_cfg = args
    s_train = DenseSimilarity(values=values, mask=train_mask)
    result = fit(s_train, rank, solver_cfg)
    r_mat = result.embedding @ result.embedding.T
    err = values[val_i, val_j] - r_mat[val_i, val_j]
    return float((err * err).mean())


def cross_validate(s, calibration, config=None, n_jobs=1):
    """Leakage-aware rank selection.

    For each repeat, the observed pairs are first thinned to the
    fold-invariant outer retention, then split into disjoint folds; each
    cell fits one candidate rank with one fold removed and scores squared
    error on that fold.  The selected rank minimizes the mean curve, with
    ties going to the smaller rank.
    """
    config = config or CvConfig()
    p_cv = fold_invariant_p(calibration.p_star, config.folds)
    tasks = []
    layout = []
    for rep in range(config.repeats):
        mask = outer_mask(s, p_cv, derive_seed(config.seed, 3, rep))
        iu, ju, fold_id = assign_folds(mask, config.folds, derive_seed(config.seed, 4, rep))
        for fold in range(config.folds):
            in_fold = fold_id == fold
            train_mask = mask.copy()
            train_mask[iu[in_fold], ju[in_fold]] = 0.0
            train_mask[ju[in_fold], iu[in_fold]] = 0.0
            val_i, val_j = iu[in_fold], ju[in_fold]
            for rank in config.rank_grid:
                cfg = replace(config.solver, seed=derive_seed(config.seed, 5, rep, fold, rank))
                tasks.append((s.values, train_mask, val_i, val_j, rank, cfg))
                layout.append((rank, rep, fold))
    mses = run_parallel(_cv_cell, tasks, n_jobs)
    cells = [(rank, rep, fold, mse) for (rank, rep, fold), mse in zip(layout, mses)]

    ranks = config.rank_grid
    mean_mse = np.empty(len(ranks))
    std_mse = np.empty(len(ranks))
    for idx, rank in enumerate(ranks):
        vals = np.array([mse for r, _, _, mse in cells if r == rank])
        mean_mse[idx] = vals.mean()
        std_mse[idx] = vals.std(ddof=1) if vals.size > 1 else 0.0
    selected = int(ranks[int(np.argmin(mean_mse))])
    return CvCurve(
        ranks=ranks,
        mean_mse=mean_mse,
        std_mse=std_mse,
        selected_rank=selected,
        cells=cells,
    )


def leakage_mask(n, index_set):
    """Observation pattern that pins down the whole matrix via an anchor set.

    Observes the diagonal, every pair within ``index_set``, and every pair
    crossing between the set and the rest.  Only pairs with both items
    outside the set stay missing.
    """
    index_set = np.asarray(sorted(set(int(i) for i in index_set)), dtype=int)
    if index_set.size == 0:
        raise RankSelectionError("index set is empty")
    if index_set.min() < 0 or index_set.max() >= n:
        raise RankSelectionError(f"index set outside 0..{n - 1}")
    mask = np.zeros((n, n))
    mask[index_set, :] = 1.0
    mask[:, index_set] = 1.0
    np.fill_diagonal(mask, 1.0)
    return mask


def nystrom_complete(s, index_set):
    """Complete a matrix from an anchor set by the block identity
    S[p, q] = S[p, I] S[I, I]^{-1} S[I, q].

    Exact whenever the underlying matrix has rank at most |I| and the anchor
    block is invertible; requires every entry incident to the anchor set to
    be observed.
    """
    index_set = np.asarray(sorted(set(int(i) for i in index_set)), dtype=int)
    n = s.n
    if index_set.size == 0:
        raise RankSelectionError("index set is empty")
    if index_set.min() < 0 or index_set.max() >= n:
        raise RankSelectionError(f"index set outside 0..{n - 1}")
    if not (s.mask[index_set, :] == 1.0).all():
        raise RankSelectionError("all entries incident to the anchor set must be observed")
    block = s.values[np.ix_(index_set, index_set)]
    svals = np.linalg.svd(block, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise RankSelectionError("anchor block is singular to working precision")
    cross = s.values[:, index_set]
    completed = cross @ np.linalg.solve(block, cross.T)
    return (completed + completed.T) / 2.0


def leakage_validation_mse(full_values, index_set, ranks):
    """Validation error of zero-training-error completions at several ranks.

    Builds the anchor observation pattern on a fully known matrix, completes
    it from the observed part alone, truncates the completion to each
    candidate rank, and scores squared error on the held-out entries.  On
    low-rank data the curve is flat and near zero from the true rank up:
    held-out error cannot identify the rank once the observed entries
    determine the matrix.
    """
    full_values = np.asarray(full_values, dtype=float)
    n = full_values.shape[0]
    mask = leakage_mask(n, index_set)
    observed = DenseSimilarity(values=full_values, mask=mask)
    completed = nystrom_complete(observed, index_set)
    held_i, held_j = np.where(mask == 0)
    evals, evecs = _eigh_descending(completed)
    out = {}
    for rank in ranks:
        rank = int(rank)
        approx = (evecs[:, :rank] * evals[:rank]) @ evecs[:, :rank].T
        err = full_values[held_i, held_j] - approx[held_i, held_j]
        out[rank] = float((err * err).mean())
    return out
