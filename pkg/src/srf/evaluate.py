"""Downstream checks of a fitted embedding: fit quality, behavior, prediction.

These are read-only consumers of an embedding; none of them refit anything.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from ._util import derive_rng


class EvaluationError(ValueError):
    """Raised for invalid evaluation inputs."""


@dataclass
class TripletScore:
    accuracy: float
    n_correct: int
    n_total: int
    n_ties: int


@dataclass
class RidgeResult:
    predictions: np.ndarray
    spearman: float
    fold_id: np.ndarray
    alphas: np.ndarray  # chosen per outer fold


@dataclass
class RidgeConfig:
    folds: int = 5
    alpha_grid: tuple = (0.01, 0.1, 1.0, 10.0, 100.0)
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise EvaluationError(f"need at least 2 folds, got {self.folds}")
        grid = tuple(float(a) for a in self.alpha_grid)
        if len(grid) == 0 or any(a <= 0 for a in grid):
            raise EvaluationError("alpha_grid must be positive")
        self.alpha_grid = tuple(sorted(grid))


def explained_variance(s, w):
    """R^2 of W W' against the observed off-diagonal similarities."""
    iu, ju = s.observed_pairs()
    if iu.size < 2:
        raise EvaluationError("need at least 2 observed pairs")
    actual = s.values[iu, ju]
    r_mat = w @ w.T
    predicted = r_mat[iu, ju]
    denom = float(((actual - actual.mean()) ** 2).sum())
    if denom == 0:
        raise EvaluationError("observed similarities are constant")
    resid = actual - predicted
    return 1.0 - float((resid * resid).sum()) / denom


def triplet_accuracy(w, judgments):
    """Odd-one-out agreement between W W' and held-out judgments.

    For each judgment the model picks the pair with the highest predicted
    similarity and calls the remaining item odd.  Ties are broken toward the
    lowest-index item among the tied candidates and counted separately.
    """
    w = np.asarray(w, dtype=float)
    r_mat = w @ w.T
    n = w.shape[0]
    n_correct = 0
    n_ties = 0
    judgments = list(judgments)
    if not judgments:
        raise EvaluationError("no judgments given")
    for row_num, (a, b, odd) in enumerate(judgments):
        trio = (a, b, odd)
        if len(set(trio)) != 3:
            raise EvaluationError(f"judgment {row_num} repeats an item: {trio}")
        for x in trio:
            if not 0 <= x < n:
                raise EvaluationError(f"judgment {row_num} has item {x} outside 0..{n - 1}")
        sims = {}
        for x, y in ((a, b), (a, odd), (b, odd)):
            sims[(x, y)] = r_mat[x, y]
        best = max(sims.values())
        best_pairs = [pair for pair, val in sims.items() if val == best]
        if len(best_pairs) > 1:
            n_ties += 1
            odd_candidates = sorted(
                next(x for x in trio if x not in pair) for pair in best_pairs
            )
            predicted_odd = odd_candidates[0]
        else:
            pair = best_pairs[0]
            predicted_odd = next(x for x in trio if x not in pair)
        if predicted_odd == odd:
            n_correct += 1
    return TripletScore(
        accuracy=n_correct / len(judgments),
        n_correct=n_correct,
        n_total=len(judgments),
        n_ties=n_ties,
    )


def link_auc(w, positive_pairs, negative_pairs):
    """Probability a positive pair outscores a negative one (ties count half).

    Scores are the reconstructed similarities at each pair.
    """
    w = np.asarray(w, dtype=float)
    r_mat = w @ w.T
    n = w.shape[0]

    def scores(pairs, name):
        pairs = list(pairs)
        if not pairs:
            raise EvaluationError(f"no {name} pairs given")
        for i, j in pairs:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise EvaluationError(f"bad {name} pair ({i}, {j})")
        return np.array([r_mat[i, j] for i, j in pairs])

    pos = scores(positive_pairs, "positive")
    neg = scores(negative_pairs, "negative")
    greater = (pos[:, None] > neg[None, :]).sum()
    equal = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * equal) / (pos.size * neg.size))


def _ridge_solve(x, y, alpha):
    # closed form on standardized features; constant columns contribute 0
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    xs = (x - mu) / sd
    y_mean = y.mean()
    gram = xs.T @ xs + alpha * np.eye(x.shape[1])
    coef = np.linalg.solve(gram, xs.T @ (y - y_mean))

    def predict(x_new):
        return ((x_new - mu) / sd) @ coef + y_mean

    return predict


def ridge_predict(features, target, config=None):
    """Cross-validated ridge regression from embedding dimensions to a target.

    Outer folds produce out-of-sample predictions for every item; the
    penalty is picked per outer fold by an inner cross-validation on the
    training items (ties to the smallest penalty).  Returns predictions,
    their out-of-fold Spearman correlation with the target, fold ids, and
    the chosen penalties.
    """
    config = config or RidgeConfig()
    x = np.asarray(features, dtype=float)
    y = np.asarray(target, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
        raise EvaluationError("features must be n x d and target length n")
    n = x.shape[0]
    if y.std() == 0:
        raise EvaluationError("target is constant")
    if n < 2 * config.folds:
        raise EvaluationError(f"need at least {2 * config.folds} items for {config.folds} folds")

    order = derive_rng(config.seed, 24).permutation(n)
    fold_id = np.empty(n, dtype=int)
    for f, chunk in enumerate(np.array_split(order, config.folds)):
        fold_id[chunk] = f

    predictions = np.empty(n)
    chosen = np.empty(config.folds)
    for f in range(config.folds):
        train = fold_id != f
        x_tr, y_tr = x[train], y[train]
        inner_order = derive_rng(config.seed, 25, f).permutation(x_tr.shape[0])
        inner_id = np.empty(x_tr.shape[0], dtype=int)
        for g, chunk in enumerate(np.array_split(inner_order, config.folds)):
            inner_id[chunk] = g
        errors = np.zeros(len(config.alpha_grid))
        for g in range(config.folds):
            inner_train = inner_id != g
            if inner_train.all() or not inner_train.any():
                raise EvaluationError("inner fold is empty; use fewer folds")
            for a_idx, alpha in enumerate(config.alpha_grid):
                predict = _ridge_solve(x_tr[inner_train], y_tr[inner_train], alpha)
                resid = y_tr[~inner_train] - predict(x_tr[~inner_train])
                errors[a_idx] += float((resid * resid).sum())
        alpha = config.alpha_grid[int(np.argmin(errors))]
        chosen[f] = alpha
        predict = _ridge_solve(x_tr, y_tr, alpha)
        predictions[fold_id == f] = predict(x[fold_id == f])

    rho = spearmanr(predictions, y).statistic
    return RidgeResult(
        predictions=predictions,
        spearman=float(rho),
        fold_id=fold_id,
        alphas=chosen,
    )
