"""Similarity matrix containers and constructors.

Every constructor in this module produces a :class:`DenseSimilarity`: a
symmetric non-negative matrix of pairwise similarities together with a 0/1
observation mask.  Entries where the mask is zero are treated as missing by
everything downstream; their stored values are meaningless and set to zero.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

SYMMETRY_TOL = 1e-12


class SimilarityError(ValueError):
    """Raised when similarity inputs violate their contracts."""


def _as_square_float(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise SimilarityError(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise SimilarityError(f"{name} contains non-finite entries")
    return arr


@dataclass
class DenseSimilarity:
    """Symmetric non-negative similarity matrix with an observation mask.

    values : (n, n) float array, symmetric, non-negative where observed
    mask   : (n, n) float array of 0/1, symmetric, all-ones diagonal
    item_labels : optional list of n strings
    """

    values: np.ndarray
    mask: np.ndarray = None
    item_labels: list = None

    def __post_init__(self):
        v = _as_square_float(self.values, "values")
        n = v.shape[0]
        if self.mask is None:
            m = np.ones((n, n))
        else:
            m = _as_square_float(self.mask, "mask")
        if m.shape != v.shape:
            raise SimilarityError(f"mask shape {m.shape} != values shape {v.shape}")
        if not np.isin(m, (0.0, 1.0)).all():
            raise SimilarityError("mask entries must be 0 or 1")
        if not np.array_equal(m, m.T):
            raise SimilarityError("mask must be symmetric")
        if not np.all(np.diag(m) == 1.0):
            raise SimilarityError("diagonal must be observed (mask diagonal all ones)")
        if np.abs(v - v.T).max() > SYMMETRY_TOL:
            raise SimilarityError("values must be symmetric")
        v = (v + v.T) / 2.0
        if (v[m > 0] < 0).any():
            raise SimilarityError("observed similarities must be non-negative")
        v = v * m  # zero out unobserved entries so they cannot leak downstream
        if self.item_labels is not None and len(self.item_labels) != n:
            raise SimilarityError(
                f"{len(self.item_labels)} labels for {n} items"
            )
        self.values = v
        self.mask = m

    @property
    def n(self):
        return self.values.shape[0]

    def observed_values(self):
        """Values at observed positions (both triangles plus diagonal)."""
        return self.values[self.mask > 0]

    def bounds(self):
        """(min, max) over observed entries."""
        obs = self.observed_values()
        return float(obs.min()), float(obs.max())

    def observed_pairs(self):
        """Index arrays (i, j) of observed strictly-upper-triangle pairs."""
        iu, ju = np.triu_indices(self.n, k=1)
        keep = self.mask[iu, ju] > 0
        return iu[keep], ju[keep]


@dataclass
class TripletCounts:
    """Pair co-selection counts from odd-one-out judgments.

    m[i, j] counts trials where items i and j appeared together, c[i, j]
    counts those where they were the kept pair (neither was the odd one out).
    """

    m: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        m = _as_square_float(self.m, "m")
        c = _as_square_float(self.c, "c")
        if m.shape != c.shape:
            raise SimilarityError("m and c must have the same shape")
        for name, arr in (("m", m), ("c", c)):
            if not np.array_equal(arr, arr.T):
                raise SimilarityError(f"{name} must be symmetric")
            if (arr < 0).any() or not np.array_equal(arr, np.round(arr)):
                raise SimilarityError(f"{name} must contain non-negative integers")
        if (c > m).any():
            raise SimilarityError("kept-pair counts cannot exceed appearance counts")
        self.m = m
        self.c = c

    @property
    def n(self):
        return self.m.shape[0]


@dataclass
class AssociationCounts:
    """Directed cue-response counts over a fixed vocabulary."""

    vocabulary: list
    edges: list  # (cue, response, count) with positive integer counts

    def __post_init__(self):
        vocab = list(self.vocabulary)
        if len(set(vocab)) != len(vocab):
            raise SimilarityError("vocabulary contains duplicate words")
        index = {w: i for i, w in enumerate(vocab)}
        seen = set()
        out_degree = np.zeros(len(vocab), dtype=int)
        for cue, resp, count in self.edges:
            if cue not in index or resp not in index:
                raise SimilarityError(f"edge ({cue!r}, {resp!r}) outside vocabulary")
            if cue == resp:
                raise SimilarityError(f"self-association for {cue!r}")
            if int(count) != count or count <= 0:
                raise SimilarityError(f"count for ({cue!r}, {resp!r}) must be a positive integer")
            if (cue, resp) in seen:
                raise SimilarityError(f"duplicate edge ({cue!r}, {resp!r})")
            seen.add((cue, resp))
            out_degree[index[cue]] += 1
        if len(vocab) and (out_degree == 0).any():
            missing = vocab[int(np.argmin(out_degree > 0))]
            raise SimilarityError(f"{missing!r} has no outgoing associations")
        self.vocabulary = vocab

    @property
    def n(self):
        return len(self.vocabulary)

    def count_matrix(self):
        """Directed count matrix aligned with the vocabulary order."""
        counts = np.zeros((self.n, self.n))
        index = {w: i for i, w in enumerate(self.vocabulary)}
        for cue, resp, count in self.edges:
            counts[index[cue], index[resp]] = count
        return counts


@dataclass
class FeatureMatrix:
    """Items-by-features matrix used by the kernel constructors."""

    values: np.ndarray
    item_labels: list = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2:
            raise SimilarityError(f"features must be 2-d, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise SimilarityError("features contain non-finite entries")
        if self.item_labels is not None and len(self.item_labels) != arr.shape[0]:
            raise SimilarityError(
                f"{len(self.item_labels)} labels for {arr.shape[0]} items"
            )
        self.values = arr

    @property
    def n(self):
        return self.values.shape[0]


def triplet_judgments_to_counts(judgments, n):
    """Accumulate odd-one-out judgments into TripletCounts.

    Each judgment is (a, b, odd): the three items shown, with ``odd`` chosen
    as the odd one out, so (a, b) is the kept pair.
    """
    m = np.zeros((n, n))
    c = np.zeros((n, n))
    for row_num, (a, b, odd) in enumerate(judgments):
        trio = (a, b, odd)
        if len(set(trio)) != 3:
            raise SimilarityError(f"judgment {row_num} repeats an item: {trio}")
        for x in trio:
            if not 0 <= x < n:
                raise SimilarityError(f"judgment {row_num} has item {x} outside 0..{n - 1}")
        for x, y in itertools.combinations(trio, 2):
            m[x, y] += 1
            m[y, x] += 1
        c[a, b] += 1
        c[b, a] += 1
    return TripletCounts(m=m, c=c)


def triplet_similarity(counts, alpha=1.0):
    """Smoothed kept-pair rates (c + alpha) / (m + 2 alpha) as similarities.

    Pairs never shown together are marked unobserved.  The diagonal is set to
    similarity 1, the natural self-similarity for choice rates.
    """
    if alpha <= 0:
        raise SimilarityError("alpha must be positive")
    n = counts.n
    mask = (counts.m > 0).astype(float)
    np.fill_diagonal(mask, 1.0)
    values = (counts.c + alpha) / (counts.m + 2.0 * alpha)
    np.fill_diagonal(values, 1.0)
    return DenseSimilarity(values=values, mask=mask)


def preprocess_associations(raw_edges):
    """Clean raw (cue, response, count) rows into AssociationCounts.

    Duplicate directed pairs are aggregated by summing counts, self-loops are
    dropped, and the graph is restricted to its largest strongly connected
    component (ties broken by component label order).  The retained
    vocabulary is sorted alphabetically.
    """
    totals = {}
    for cue, resp, count in raw_edges:
        if int(count) != count or count <= 0:
            raise SimilarityError(f"count for ({cue!r}, {resp!r}) must be a positive integer")
        if cue == resp:
            continue
        totals[(cue, resp)] = totals.get((cue, resp), 0) + int(count)
    if not totals:
        raise SimilarityError("no usable associations after dropping self-loops")
    words = sorted({w for pair in totals for w in pair})
    index = {w: i for i, w in enumerate(words)}
    rows = [index[cue] for cue, _ in totals]
    cols = [index[resp] for _, resp in totals]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(words), len(words)))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    keep_label = int(np.bincount(labels).argmax())
    kept = {w for w, i in index.items() if labels[i] == keep_label}
    edges = [
        (cue, resp, count)
        for (cue, resp), count in sorted(totals.items())
        if cue in kept and resp in kept
    ]
    if not edges:
        raise SimilarityError("largest strongly connected component has no edges")
    return AssociationCounts(vocabulary=sorted(kept), edges=edges)


def ppmi_similarity(assoc, zeros_as_missing=False):
    """Positive pointwise mutual information similarities from associations.

    Direction is collapsed by summing counts both ways.  Off-diagonal entries
    are max(log2(p_ij / (p_i p_j)), 0); the diagonal is -log2(p_i), the
    self-information of each word.  With ``zeros_as_missing`` the zero
    off-diagonal cells (never co-associated, or PMI <= 0) are masked out
    instead of kept as observed zeros.
    """
    counts = assoc.count_matrix()
    joint = counts + counts.T
    total = joint.sum()
    p = joint / total
    p_word = p.sum(axis=1)
    if (p_word <= 0).any():
        raise SimilarityError("every word needs at least one association")
    with np.errstate(divide="ignore"):
        pmi = np.log2(p / np.outer(p_word, p_word), out=np.full_like(p, -np.inf), where=p > 0)
    values = np.maximum(pmi, 0.0)
    np.fill_diagonal(values, -np.log2(p_word))
    if zeros_as_missing:
        mask = (values > 0).astype(float)
        np.fill_diagonal(mask, 1.0)
    else:
        mask = np.ones_like(values)
    return DenseSimilarity(values=values, mask=mask, item_labels=list(assoc.vocabulary))


def linear_kernel(features):
    """Gram matrix of non-negative features as a fully observed similarity."""
    x = features.values
    if (x < 0).any():
        raise SimilarityError(
            "linear kernel needs non-negative features; use rbf_kernel instead"
        )
    s = x @ x.T
    s = (s + s.T) / 2.0
    return DenseSimilarity(values=s, item_labels=features.item_labels)


def rbf_kernel(features, multiplier=0.4):
    """Gaussian kernel with bandwidth set from the median pairwise distance.

    The length scale is ``multiplier`` times the (lower) median Euclidean
    distance between distinct items, so the similarity scale adapts to the
    spread of the data.
    """
    if multiplier <= 0:
        raise SimilarityError("multiplier must be positive")
    x = features.values
    if x.shape[0] < 2:
        raise SimilarityError("need at least two items for a median distance")
    dists = pdist(x)
    med = float(np.sort(dists)[(dists.size - 1) // 2])
    if med == 0.0:
        raise SimilarityError("median pairwise distance is zero (duplicate items)")
    sigma = multiplier * med
    sq = squareform(dists) ** 2
    s = np.exp(-sq / (2.0 * sigma ** 2))
    np.fill_diagonal(s, 1.0)
    return DenseSimilarity(values=s, item_labels=features.item_labels)


def symmetrize_clip(values, mask=None):
    """Average a raw matrix with its transpose and clip negatives to zero.

    This is the catch-all adapter for externally produced matrices.  An
    asymmetric mask is conservatively intersected with its transpose, and the
    diagonal is forced observed.
    """
    v = _as_square_float(values, "values")
    v = np.maximum((v + v.T) / 2.0, 0.0)
    if mask is not None:
        m = _as_square_float(mask, "mask")
        if not np.isin(m, (0.0, 1.0)).all():
            raise SimilarityError("mask entries must be 0 or 1")
        m = m * m.T
        np.fill_diagonal(m, 1.0)
    else:
        m = None
    return DenseSimilarity(values=v, mask=m)
