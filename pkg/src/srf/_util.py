"""Shared helpers: deterministic seed derivation and a small process-pool map."""

import multiprocessing

import numpy as np


def derive_rng(seed, *key):
    """Child generator for (seed, key), independent of any shared RNG state.

    Key tags must be nonzero: SeedSequence folds a trailing zero entropy word
    away, so (seed, 0) would collide with the bare (seed,) stream.
    """
    entropy = [int(seed)] + [int(k) for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed, *key):
    """Deterministic integer seed derived from (seed, key)."""
    entropy = [int(seed)] + [int(k) for k in key]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def run_parallel(fn, items, n_jobs=1):
    """Map fn over items, optionally across processes.

    Results are returned in input order regardless of completion order, so
    aggregation downstream is deterministic for any worker count.
    """
    items = list(items)
    if n_jobs is None:
        n_jobs = multiprocessing.cpu_count()
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(min(n_jobs, len(items))) as pool:
        return pool.map(fn, items)
