"""Run-to-run stability: dimension matching, central runs, reliability.

The factorization objective is invariant to column permutations (and close
solutions can differ by sign-free rotations of near-degenerate dimensions),
so embeddings from different seeds are compared only after matching columns
by absolute correlation.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._util import derive_rng, derive_seed, run_parallel
from .solver import SolverConfig, fit


class ConsensusError(ValueError):
    """Raised for invalid consensus inputs."""


@dataclass
class ConsensusResult:
    embedding: np.ndarray  # the central run, columns in its native order
    central_index: int
    seeds: list
    runs: list
    mean_alignment: np.ndarray  # pairwise matched-correlation means
    reliability: float = None


def hungarian(cost):
    """Minimum-cost perfect matching on a square cost matrix.

    Returns the column index matched to each row.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ConsensusError(f"cost must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ConsensusError("cost contains non-finite entries")
    row_ind, col_ind = linear_sum_assignment(cost)
    assignment = np.empty(cost.shape[0], dtype=int)
    assignment[row_ind] = col_ind
    return assignment


def _column_corr(a, b, warn=True):
    """Column-by-column Pearson correlations between two matrices.

    Zero-variance columns correlate as 0 with everything.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    a_norm = np.linalg.norm(ac, axis=0)
    b_norm = np.linalg.norm(bc, axis=0)
    # constant columns center to rounding dust, not exact zeros
    dead_a = a_norm <= 1e-12 * np.maximum(np.linalg.norm(a, axis=0), 1.0)
    dead_b = b_norm <= 1e-12 * np.maximum(np.linalg.norm(b, axis=0), 1.0)
    if warn and (dead_a.any() or dead_b.any()):
        warnings.warn("zero-variance dimension treated as uncorrelated", stacklevel=3)
    a_norm = np.where(dead_a, 1.0, a_norm)
    b_norm = np.where(dead_b, 1.0, b_norm)
    corr = (ac / a_norm).T @ (bc / b_norm)
    corr[dead_a, :] = 0.0
    corr[:, dead_b] = 0.0
    return corr


def align(w_ref, w_other, warn=True):
    """Match columns of w_other to w_ref by absolute correlation.

    Returns (w_other reordered, mean matched |correlation|).
    """
    w_ref = np.asarray(w_ref, dtype=float)
    w_other = np.asarray(w_other, dtype=float)
    if w_ref.shape != w_other.shape:
        raise ConsensusError(f"shapes differ: {w_ref.shape} vs {w_other.shape}")
    corr = _column_corr(w_ref, w_other, warn=warn)
    assignment = hungarian(1.0 - np.abs(corr))
    matched = np.abs(corr[np.arange(corr.shape[0]), assignment])
    return w_other[:, assignment], float(matched.mean())


def pairwise_alignment(runs, warn=True):
    """Mean matched |correlation| for every pair of runs (symmetric matrix)."""
    n_runs = len(runs)
    out = np.ones((n_runs, n_runs))
    for i in range(n_runs):
        for j in range(i + 1, n_runs):
            _, score = align(runs[i], runs[j], warn=warn)
            out[i, j] = out[j, i] = score
    return out


def central_run(runs, warn=True):
    """Index of the run most aligned with the others on average.

    Ties go to the earliest run.
    """
    if len(runs) == 0:
        raise ConsensusError("no runs given")
    if len(runs) == 1:
        return 0, np.ones((1, 1))
    scores = pairwise_alignment(runs, warn=warn)
    off_diag_mean = (scores.sum(axis=1) - 1.0) / (len(runs) - 1)
    return int(np.argmax(off_diag_mean)), scores


def spearman_brown(raw):
    """Step up a half-length reliability to full length: 2r/(1+r)."""
    if not -1.0 < raw <= 1.0:
        raise ConsensusError(f"reliability must be in (-1, 1], got {raw}")
    return 2.0 * raw / (1.0 + raw)


def split_half_reliability(runs, n_splits=100, seed=0):
    """Item-split reliability of matched dimensions.

    For each random split of items, dimensions are matched across run pairs
    on one half and their correlations scored on the other half.  The mean
    over splits, run pairs, and dimensions is then Spearman-Brown corrected
    (2r/(1+r)) to estimate full-length reliability from half-length scores.
    High values mean the matching reflects structure that generalizes across
    items, not half-specific noise.
    """
    if len(runs) < 2:
        raise ConsensusError("reliability needs at least 2 runs")
    n = runs[0].shape[0]
    if n < 4:
        raise ConsensusError("reliability needs at least 4 items to split")
    pairs = [(i, j) for i in range(len(runs)) for j in range(i + 1, len(runs))]
    scores = []
    for split in range(n_splits):
        order = derive_rng(seed, 6, split).permutation(n)
        half = (n + 1) // 2
        first, second = order[:half], order[half:]
        for i, j in pairs:
            corr = _column_corr(runs[i][first], runs[j][first], warn=False)
            assignment = hungarian(1.0 - np.abs(corr))
            held_out = _column_corr(runs[i][second], runs[j][second], warn=False)
            matched = held_out[np.arange(len(assignment)), assignment]
            scores.append(float(np.abs(matched).mean()))
    return spearman_brown(float(np.mean(scores)))


def _one_fit(args):
    values, mask, rank, cfg = args
    from .simmat import DenseSimilarity

    return fit(DenseSimilarity(values=values, mask=mask), rank, cfg).embedding


def consensus_fit(s, rank, config=None, n_runs=30, n_splits=100, n_jobs=1):
    """Fit from many seeds, match dimensions, and pick the central run.

    Run seeds are derived from ``config.seed``, so the whole ensemble is
    reproducible from one integer.  With a single run the reliability field
    is None.
    """
    config = config or SolverConfig()
    if n_runs < 1:
        raise ConsensusError(f"n_runs must be at least 1, got {n_runs}")
    seeds = [derive_seed(config.seed, 7, run) for run in range(n_runs)]
    tasks = [(s.values, s.mask, rank, replace(config, seed=sd)) for sd in seeds]
    runs = run_parallel(_one_fit, tasks, n_jobs)
    center, scores = central_run(runs)
    reliability = None
    if n_runs > 1:
        reliability = split_half_reliability(runs, n_splits=n_splits, seed=config.seed)
    return ConsensusResult(
        embedding=runs[center],
        central_index=center,
        seeds=seeds,
        runs=runs,
        mean_alignment=scores,
        reliability=reliability,
    )
