"""Masked symmetric factorization solver.

Fits a non-negative embedding W so that W W' matches a similarity matrix S
on its observed entries, by operator splitting: an auxiliary completed
matrix Z carries the data-fit and box constraints, W chases Z through
closed-form coordinate sweeps, and scaled dual variables tie the two
together.  The data term is 0.5 * sum over observed entries of (S - W W')^2,
and Z is kept inside [min(S), max(S)] taken over the observed entries.

Each scalar coordinate update minimizes a quartic in one entry of W exactly,
via the cubic formula on its derivative.  With the penalty weight rho at
least sqrt(2), each sweep is a descent step for the augmented objective,
which is what makes the outer iteration monotone.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .simmat import DenseSimilarity

RHO_MIN = math.sqrt(2.0)


class SolverError(ValueError):
    """Raised for invalid solver configuration or inputs."""


@dataclass
class SolverConfig:
    """Knobs for one fit.

    rho is the penalty weight coupling Z to W W'; values below sqrt(2) void
    the per-sweep descent guarantee and are rejected outright.
    """

    rho: float = 3.0
    outer_iters: int = 200
    inner_sweeps: int = 50
    tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.rho < RHO_MIN:
            raise SolverError(f"rho must be at least sqrt(2), got {self.rho}")
        if self.outer_iters < 1 or self.inner_sweeps < 1:
            raise SolverError("iteration counts must be at least 1")
        if self.tol <= 0:
            raise SolverError(f"tol must be positive, got {self.tol}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise SolverError(f"seed must be a non-negative integer, got {self.seed}")


@dataclass
class QuarticCoefficients:
    """Cubic-formula ingredients for one scalar subproblem.

    The scalar objective is a quartic with derivative a w^3 + b w^2 + c w + d
    (a is always 4); p, q are the depressed-cubic coefficients and delta the
    discriminant used to pick the root.
    """

    a: float
    b: float
    c: float
    d: float
    p: float
    q: float
    delta: float


@dataclass
class SolverState:
    """Mutable state threaded through the outer iterations."""

    w: np.ndarray
    z: np.ndarray
    dual: np.ndarray
    bounds: tuple
    iteration: int = 0
    loss_trace: list = field(default_factory=list)
    lagrangian_trace: list = field(default_factory=list)
    projection_activity: list = field(default_factory=list)


@dataclass
class FitResult:
    embedding: np.ndarray
    converged: bool
    n_iterations: int
    final_loss: float
    loss_trace: list
    lagrangian_trace: list
    projection_activity: list
    bounds: tuple


def _cbrt(x):
    # real cube root: sign(x) * |x|**(1/3)
    if x >= 0.0:
        return x ** (1.0 / 3.0)
    return -((-x) ** (1.0 / 3.0))


def scalar_coefficients(w, target, i, k):
    """Quartic derivative coefficients for entry (i, k) of W.

    ``target`` is the matrix W W' is being pulled toward during the sweep
    (the dual-shifted completion Z + dual / rho).
    """
    w = np.asarray(w, dtype=float)
    target = np.asarray(target, dtype=float)
    wik = w[i, k]
    a = 4.0
    b = 12.0 * wik
    row_sq = float(w[i] @ w[i])
    col_sq = float(w[:, k] @ w[:, k])
    c = 4.0 * (row_sq - target[i, i] + col_sq + wik * wik)
    resid_row = w @ w[i] - target[i]
    d = 4.0 * float(resid_row @ w[:, k])
    p = (3.0 * a * c - b * b) / (3.0 * a * a)
    q = (9.0 * a * b * c - 27.0 * a * a * d - 2.0 * b ** 3) / (27.0 * a ** 3)
    delta = q * q / 4.0 + p ** 3 / 27.0
    return QuarticCoefficients(a=a, b=b, c=c, d=d, p=p, q=q, delta=delta)


def scalar_update(co, current):
    """Non-negative global minimizer of the scalar quartic at ``current``.

    Picks the closed-form root by convexity: when the quartic is convex the
    depressed cubic has a single real root; otherwise the relevant root is
    the largest one, which collapses to a single cube root here.
    """
    if co.c > co.b * co.b / (3.0 * co.a):
        delta = max(co.delta, 0.0)  # rounding can push a true zero negative
        sq = math.sqrt(delta)
        root = _cbrt(co.q / 2.0 - sq) + _cbrt(co.q / 2.0 + sq)
    else:
        root = _cbrt(co.b ** 3 / (27.0 * co.a ** 3) - co.d / co.a)
    return max(root, 0.0)


def w_subproblem_sweep(w, target):
    """One full row-major coordinate sweep; returns the updated copy of w."""
    w = np.array(w, dtype=float)
    target = np.ascontiguousarray(target, dtype=float)
    if w.ndim != 2 or target.shape != (w.shape[0], w.shape[0]):
        raise SolverError("w must be n x r and target n x n")
    return _kernels.run_sweeps(w, target, 1)


def z_update(s, r_mat, dual, rho, bounds):
    """Closed-form update of the completed matrix.

    Observed entries average the data and the current reconstruction;
    missing entries track the reconstruction shifted by the dual.  The
    result is clipped into ``bounds`` and symmetrized.
    """
    raw = _z_raw(s, r_mat, dual, rho)
    z = np.clip(raw, bounds[0], bounds[1])
    return (z + z.T) / 2.0


def _z_raw(s, r_mat, dual, rho):
    return (s.mask * s.values + rho * r_mat - dual) / (rho + s.mask)


def dual_update(dual, z, r_mat, rho):
    """Gradient-ascent step on the scaled duals."""
    return dual + rho * (z - r_mat)


def masked_loss(s, w):
    """0.5 * squared error between S and W W' over observed entries."""
    r_mat = w @ w.T
    diff = s.mask * (s.values - r_mat)
    return 0.5 * float((diff * diff).sum())


def augmented_lagrangian(s, w, z, dual, rho):
    """Objective the outer iteration descends (box indicator omitted;
    it is zero everywhere the iterates live after the first projection)."""
    r_mat = w @ w.T
    diff = s.mask * (s.values - z)
    gap = z - r_mat
    return 0.5 * float((diff * diff).sum()) + float((dual * gap).sum()) + (
        rho / 2.0
    ) * float((gap * gap).sum())


def fit(s, rank, config=None, on_iteration=None):
    """Fit a rank-``rank`` non-negative embedding to a masked similarity.

    Runs alternating updates of W (coordinate sweeps), the completion Z, and
    the duals until the completion gap ||Z - W W'||_F falls below
    ``config.tol`` times the Frobenius norm of the observed data, or the
    iteration budget runs out.  ``on_iteration(state)`` is called after each
    outer iteration with the live SolverState; traces cover iterations after
    the first, when the iterates have entered the box.

    Duals on unobserved entries are rebalanced to exactly zero whenever the
    box constraint is inactive, matching the stationarity conditions, which
    keeps missing entries from accumulating stale pressure.
    """
    if not isinstance(s, DenseSimilarity):
        s = DenseSimilarity(values=np.asarray(s, dtype=float))
    config = config or SolverConfig()
    n = s.n
    if not 0 < rank < n:
        raise SolverError(f"rank must be in 1..{n - 1}, got {rank}")
    iu, ju = s.observed_pairs()
    if iu.size == 0:
        raise SolverError("no observed off-diagonal entries to fit")
    lo, hi = s.bounds()
    if hi - lo == 0.0:
        lo, hi = lo - 1e-9, hi + 1e-9
        warnings.warn("all observed similarities are equal; widening the box", stacklevel=2)

    rng = np.random.default_rng(config.seed)
    w = rng.random((n, rank))
    z = w @ w.T
    dual = np.zeros((n, n))
    state = SolverState(w=w, z=z, dual=dual, bounds=(lo, hi))
    obs_norm = float(np.linalg.norm(s.mask * s.values))
    rho = config.rho
    unobs = s.mask == 0

    converged = False
    for it in range(1, config.outer_iters + 1):
        target = state.z + state.dual / rho
        state.w = _kernels.run_sweeps(np.ascontiguousarray(state.w), target, config.inner_sweeps)
        r_mat = state.w @ state.w.T
        raw = _z_raw(s, r_mat, state.dual, rho)
        at_lo = raw < lo
        at_hi = raw > hi
        clipped = at_lo | at_hi
        state.z = np.clip(raw, lo, hi)
        state.z = (state.z + state.z.T) / 2.0
        state.dual = dual_update(state.dual, state.z, r_mat, rho)
        # stationarity fixes missing-entry duals at zero wherever the box is
        # inactive; enforce that exactly to stop rounding drift
        state.dual[unobs & ~clipped] = 0.0
        n_obs_active = int(clipped[~unobs].sum())
        n_unobs_active = int(clipped[unobs].sum())
        state.iteration = it
        state.loss_trace.append(masked_loss(s, state.w))
        state.lagrangian_trace.append(
            augmented_lagrangian(s, state.w, state.z, state.dual, rho)
        )
        state.projection_activity.append((n_obs_active, n_unobs_active))
        if on_iteration is not None:
            on_iteration(state)
        gap = float(np.linalg.norm(state.z - r_mat))
        if gap < config.tol * obs_norm:
            converged = True
            break

    return FitResult(
        embedding=state.w,
        converged=converged,
        n_iterations=state.iteration,
        final_loss=state.loss_trace[-1],
        loss_trace=state.loss_trace,
        lagrangian_trace=state.lagrangian_trace,
        projection_activity=state.projection_activity,
        bounds=(lo, hi),
    )
