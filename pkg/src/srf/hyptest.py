"""Dimension-level hypothesis tests and the power comparison harness.

Two routes from a similarity matrix to per-hypothesis p-values:

* matrix-level: Mantel permutation test of each hypothesis similarity
  template against the observed matrix;
* embedding-level: fit an embedding once, then test each hypothesis column
  against its leave-one-out matched dimension, permuting object labels.

Both tests draw their permutations from the same seed-derived stream, so a
power comparison at equal seeds uses literally the same label shuffles.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from ._util import derive_rng, derive_seed, run_parallel
from .consensus import hungarian
from .simmat import DenseSimilarity
from .simulate import add_noise_to_snr
from .solver import SolverConfig, fit


class HypothesisError(ValueError):
    """Raised for invalid design or test inputs."""


@dataclass
class DesignMatrix:
    """Items-by-hypotheses matrix of non-negative predictor columns."""

    x: np.ndarray
    kind: str
    column_labels: list

    def __post_init__(self):
        arr = np.asarray(self.x, dtype=float)
        if arr.ndim != 2:
            raise HypothesisError(f"design must be 2-d, got shape {arr.shape}")
        if (arr < 0).any():
            raise HypothesisError("design entries must be non-negative")
        if len(self.column_labels) != arr.shape[1]:
            raise HypothesisError(
                f"{len(self.column_labels)} labels for {arr.shape[1]} columns"
            )
        self.x = arr

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def n_hypotheses(self):
        return self.x.shape[1]

    def column_variances(self):
        return self.x.var(axis=0)


@dataclass
class PowerCell:
    snr: float  # None for null-model cells
    method: str
    hypothesis: int
    repeat: int
    p_value: float
    rejected: bool
    column_variance: float


@dataclass
class PowerResult:
    rows: list
    alpha: float
    n_perm: int
    design_kind: str

    def power_table(self):
        """Mean rejection rate per (snr, method)."""
        table = {}
        for row in self.rows:
            table.setdefault((row.snr, row.method), []).append(row.rejected)
        return {key: float(np.mean(flags)) for key, flags in sorted(table.items(), key=str)}

    def uncorrected_rate(self, alpha=None):
        """Per-hypothesis rate of raw p <= alpha, per method."""
        alpha = self.alpha if alpha is None else alpha
        table = {}
        for row in self.rows:
            table.setdefault(row.method, []).append(row.p_value <= alpha)
        return {method: float(np.mean(flags)) for method, flags in sorted(table.items())}


def factorial_design(levels, n):
    """Balanced crossed factors encoded as one-hot level indicator columns.

    Each factor assigns its levels round-robin (exactly balanced whenever
    the level count divides n) and then shuffles the assignment with a
    fixed, factor-specific permutation, so the function stays deterministic
    while the factors sit in general position with respect to each other.
    Lattice-like assignments are deliberately avoided: they admit exact
    alternative factorizations of X Xᵀ whose columns are not the level
    indicators, which would make dimension recovery ill-posed.  Columns are
    the level indicators, one hypothesis per level.
    """
    levels = [int(level) for level in levels]
    if any(level < 3 for level in levels):
        raise HypothesisError(f"every factor needs at least 3 levels, got {levels}")
    if n < 1:
        raise HypothesisError(f"n must be positive, got {n}")
    items = np.arange(n)
    columns = []
    labels = []
    for f, level_count in enumerate(levels):
        level_of = derive_rng(929, 28, f).permutation(items % level_count)
        for level in range(level_count):
            columns.append((level_of == level).astype(float))
            labels.append(f"f{f}_l{level}")
    return DesignMatrix(x=np.column_stack(columns), kind="factorial", column_labels=labels)


def sparse_correlated_design(n=50, k=5, source=None, seed=0):
    """Sparse non-negative predictors with correlated pairs and varied scale.

    With ``source`` given (an items-by-dimensions non-negative embedding),
    subsamples n of its rows and k of its columns.  Otherwise synthesizes
    columns by thresholding correlated Gaussians (consecutive pairs at
    latent correlation 0.6) and tapering column scales geometrically, which
    reproduces the sparse, heavy-tailed, cross-correlated texture of
    behavioral embeddings.
    """
    if n < 4 or k < 1:
        raise HypothesisError(f"need n >= 4 and k >= 1, got n={n}, k={k}")
    rng = derive_rng(seed, 28)
    if source is not None:
        src = np.asarray(source, dtype=float)
        if src.ndim != 2 or src.shape[0] < n or src.shape[1] < k:
            raise HypothesisError(
                f"source shape {src.shape} cannot cover n={n}, k={k}"
            )
        if (src < 0).any():
            raise HypothesisError("source embedding must be non-negative")
        rows = np.sort(rng.choice(src.shape[0], size=n, replace=False))
        cols = np.sort(rng.choice(src.shape[1], size=k, replace=False))
        x = src[np.ix_(rows, cols)]
        if (x.var(axis=0) == 0).any():
            raise HypothesisError("subsampled design has a constant column; try another seed")
        kind = "subsampled"
    else:
        cov = np.eye(k)
        for a in range(0, k - 1, 2):
            cov[a, a + 1] = cov[a + 1, a] = 0.6
        chol = np.linalg.cholesky(cov)
        scales = np.geomspace(1.0, 0.25, k)
        x = None
        for _ in range(50):
            latent = rng.standard_normal((n, k)) @ chol.T
            candidate = np.maximum(latent - 0.8, 0.0) * scales
            if (candidate.var(axis=0) > 0).all():
                x = candidate
                break
        if x is None:
            raise HypothesisError("could not draw a design without constant columns")
        kind = "surrogate"
    labels = [f"x{j}" for j in range(k)]
    return DesignMatrix(x=x, kind=kind, column_labels=labels)


def _permutation_stream(n, n_perm, seed):
    rng = derive_rng(seed, 26)
    return [rng.permutation(n) for _ in range(n_perm)]


def _zscore_rows(rows):
    centered = rows - rows.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    dead = norms[:, 0] == 0
    norms[dead] = 1.0
    out = centered / norms
    out[dead] = 0.0
    return out, dead


def mantel_pvalues(templates, s, n_perm=1000, seed=0):
    """Mantel tests of several hypothesis templates against one matrix.

    Each template and the matrix are compared by the Pearson correlation of
    their strict upper triangles; the null distribution jointly permutes the
    rows and columns of the matrix.  All templates share one permutation
    stream.  p-values are (1 + #{permuted >= observed}) / (1 + n_perm).
    """
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    if s.shape != (n, n) or np.abs(s - s.T).max() > 1e-8:
        raise HypothesisError("matrix must be square and symmetric")
    templates = [np.asarray(h, dtype=float) for h in templates]
    for h in templates:
        if h.shape != (n, n) or np.abs(h - h.T).max() > 1e-8:
            raise HypothesisError("every template must be square, symmetric, matching the matrix")
    iu, ju = np.triu_indices(n, k=1)
    h_rows, h_dead = _zscore_rows(np.array([h[iu, ju] for h in templates]))
    s_row, s_dead = _zscore_rows(s[iu, ju][None, :])
    if s_dead[0] or h_dead.any():
        warnings.warn("constant upper triangle; undefined correlations give p = 1", stacklevel=2)
    observed = h_rows @ s_row[0]
    counts = np.zeros(len(templates))
    for perm in _permutation_stream(n, n_perm, seed):
        sp = s[np.ix_(perm, perm)]
        sp_row, _ = _zscore_rows(sp[iu, ju][None, :])
        counts += (h_rows @ sp_row[0]) >= observed
    pvals = (1.0 + counts) / (1.0 + n_perm)
    pvals[h_dead] = 1.0
    if s_dead[0]:
        pvals[:] = 1.0
    return pvals


def mantel_test(template, s, n_perm=1000, seed=0):
    """Permutation p-value for one similarity template. See mantel_pvalues."""
    return float(mantel_pvalues([template], s, n_perm=n_perm, seed=seed)[0])


def _loo_matched_stats(w, x):
    """Per-hypothesis correlations with leave-one-out matched dimensions.

    For each object o, embedding dimensions are matched one-to-one to
    hypothesis columns by Hungarian assignment on absolute correlations
    computed without object o; object o's agreement with hypothesis j is
    then the (signed, still leave-o-out) correlation between the matched
    dimension and column j.  The statistic per hypothesis is the mean
    agreement over objects.  Zero-variance cases correlate as 0.
    """
    n, k = w.shape
    m = float(n - 1)
    sum_w = w.sum(axis=0)
    sum_x = x.sum(axis=0)
    sq_w = (w * w).sum(axis=0)
    sq_x = (x * x).sum(axis=0)
    cross = w.T @ x
    loo_sum_w = sum_w[None, :] - w
    loo_sum_x = sum_x[None, :] - x
    loo_sq_w = sq_w[None, :] - w * w
    loo_sq_x = sq_x[None, :] - x * x
    cov = (
        cross[None, :, :]
        - w[:, :, None] * x[:, None, :]
        - loo_sum_w[:, :, None] * loo_sum_x[:, None, :] / m
    )
    var_w = loo_sq_w - loo_sum_w * loo_sum_w / m
    var_x = loo_sq_x - loo_sum_x * loo_sum_x / m
    denom = np.sqrt(
        np.maximum(var_w[:, :, None], 0.0) * np.maximum(var_x[:, None, :], 0.0)
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cov / denom, 0.0)

    stats = np.zeros(k)
    hypotheses = np.arange(k)
    for o in range(n):
        assignment = hungarian(1.0 - np.abs(corr[o].T))  # rows: hypotheses
        stats += corr[o][assignment, hypotheses]
    return stats / n


def srf_dimension_test(s, design, rank=None, n_perm=1000, seed=0, solver=None):
    """Permutation test of each hypothesis column against a fitted embedding.

    The embedding is fitted once at rank equal to the number of hypothesis
    columns; the null permutes object labels of the design, re-running the
    leave-one-out matching for every permutation so the matching step cannot
    manufacture significance.  Shares its permutation stream with
    mantel_pvalues at equal seeds.
    """
    x = design.x if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    if not isinstance(s, DenseSimilarity):
        s = DenseSimilarity(values=np.asarray(s, dtype=float))
    n, k = x.shape
    if n != s.n:
        raise HypothesisError(f"design has {n} rows for {s.n} items")
    if rank is None:
        rank = k
    if rank != k:
        raise HypothesisError(
            f"rank must equal the number of hypothesis columns ({k}), got {rank}"
        )
    solver = solver or SolverConfig()
    cfg = replace(solver, seed=derive_seed(seed, 27))
    w = fit(s, rank, cfg).embedding
    observed = _loo_matched_stats(w, x)
    counts = np.zeros(k)
    for perm in _permutation_stream(n, n_perm, seed):
        counts += _loo_matched_stats(w, x[perm]) >= observed
    return (1.0 + counts) / (1.0 + n_perm)


def bh_correct(pvals, alpha=0.05):
    """Benjamini-Hochberg step-up: boolean rejections at FDR alpha."""
    pvals = np.asarray(pvals, dtype=float)
    if ((pvals < 0) | (pvals > 1)).any():
        raise HypothesisError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise HypothesisError(f"alpha must be in (0, 1), got {alpha}")
    m = pvals.size
    order = np.argsort(pvals, kind="stable")
    sorted_p = pvals[order]
    below = sorted_p <= alpha * (np.arange(1, m + 1) / m)
    if not below.any():
        return np.zeros(m, dtype=bool)
    cutoff = sorted_p[np.flatnonzero(below)[-1]]
    return pvals <= cutoff


def _power_cell(args):
    (design_kind, levels, n_items, k, source, snr, rep, n_perm, alpha, seed, solver) = args
    if design_kind == "factorial":
        design = factorial_design(levels, n_items)
    else:
        design = sparse_correlated_design(
            n_items, k, source=source, seed=derive_seed(seed, 29, rep)
        )
    x = design.x
    s_clean = x @ x.T
    s_clean = (s_clean + s_clean.T) / 2.0
    if snr is None:
        rng = derive_rng(seed, 32, rep)
        raw = rng.standard_normal((x.shape[0], x.shape[0]))
        s_used = np.maximum((raw + raw.T) / 2.0, 0.0)
    else:
        s_used = add_noise_to_snr(s_clean, snr, seed=derive_seed(seed, 30, rep))
    test_seed = derive_seed(seed, 31, rep)
    templates = [np.outer(x[:, j], x[:, j]) for j in range(x.shape[1])]
    mantel_p = mantel_pvalues(templates, s_used, n_perm=n_perm, seed=test_seed)
    srf_p = srf_dimension_test(
        s_used, design, n_perm=n_perm, seed=test_seed, solver=solver
    )
    variances = design.column_variances()
    rows = []
    for method, pvals in (("rsa", mantel_p), ("srf", srf_p)):
        rejected = bh_correct(pvals, alpha=alpha)
        for j in range(x.shape[1]):
            rows.append(
                PowerCell(
                    snr=snr,
                    method=method,
                    hypothesis=j,
                    repeat=rep,
                    p_value=float(pvals[j]),
                    rejected=bool(rejected[j]),
                    column_variance=float(variances[j]),
                )
            )
    return rows


def power_experiment(
    design="factorial",
    snr_grid=(0.2, 0.4, 0.6, 0.8),
    repeats=100,
    n_perm=1000,
    levels=(3, 3, 3, 3),
    n_items=36,
    k=5,
    source=None,
    alpha=0.05,
    null=False,
    seed=0,
    solver=None,
    n_jobs=1,
):
    """Power comparison of matrix-level vs embedding-level tests.

    Generates similarity data from a known design at each signal-to-noise
    level, runs both tests with shared permutations, applies the same
    false-discovery correction, and records per-hypothesis rejections.  With
    ``null=True`` the matrix is replaced by structureless noise (one cell
    per repeat, snr recorded as None) to measure false positive rates.
    """
    if design not in ("factorial", "spose"):
        raise HypothesisError(f"unknown design kind {design!r}")
    solver = solver or SolverConfig()
    snrs = [None] if null else [float(v) for v in snr_grid]
    for snr in snrs:
        if snr is not None and not 0.0 < snr <= 1.0:
            raise HypothesisError(f"snr must be in (0, 1], got {snr}")
    tasks = []
    for rep in range(repeats):
        for cond_idx, snr in enumerate(snrs):
            tasks.append(
                (
                    design,
                    tuple(levels),
                    n_items,
                    k,
                    source,
                    snr,
                    rep,
                    n_perm,
                    alpha,
                    derive_seed(seed, 33, rep, cond_idx),
                    solver,
                )
            )
    all_rows = [row for rows in run_parallel(_power_cell, tasks, n_jobs) for row in rows]
    return PowerResult(rows=all_rows, alpha=alpha, n_perm=n_perm, design_kind=design)


def variance_quartile_power(result):
    """Rejection rates per column-variance quartile, per method.

    Quartile edges are pooled over all cells; weak (low-variance) hypothesis
    columns land in the lower quartiles, so this table shows where the two
    tests separate.
    """
    if not result.rows:
        raise HypothesisError("empty power result")
    variances = np.array([row.column_variance for row in result.rows])
    edges = np.quantile(variances, [0.25, 0.5, 0.75])
    out = {}
    for row in result.rows:
        quartile = int(np.searchsorted(edges, row.column_variance, side="right"))
        out.setdefault((row.method, quartile), []).append(row.rejected)
    return {key: float(np.mean(flags)) for key, flags in sorted(out.items())}
