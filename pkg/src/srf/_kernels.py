"""Inner-loop sweep kernel for the factor subproblem.

The coordinate sweep updates every W[i, k] in row-major order against a fixed
target matrix, each update solving its scalar quartic in closed form.  The
hot loop is compiled with numba when available; a pure-Python twin built from
the same source is used as a fallback (and for debugging via the
SRF_PURE_PYTHON environment variable).  Both paths execute the same operation
sequence; results agree to unit roundoff but not bit-for-bit, because the
compiled and interpreted power functions can differ in the last bit.  Within
one environment the selected path is fixed, so repeated runs are identical.

Per-entry work is kept O(n + r) by caching the Gram matrix G = W'W, the
target product T = target @ W, and squared row norms, and patching all three
after each accepted coordinate move.  Caches are rebuilt from scratch at the
start of every sweep so patch rounding cannot accumulate across sweeps.  All
reductions are explicit loops, not BLAS calls, so results do not depend on
the thread count of the linear algebra backend.
"""

import os

import numpy as np


def _make_sweeps(wrap):
    @wrap
    def _cbrt(x):
        # real cube root: sign(x) * |x|**(1/3)
        if x >= 0.0:
            return x ** (1.0 / 3.0)
        return -((-x) ** (1.0 / 3.0))

    @wrap
    def _sweeps(w, target, n_sweeps):
        n, r = w.shape
        g = np.empty((r, r))
        t = np.empty((n, r))
        rown = np.empty(n)
        for _ in range(n_sweeps):
            for k in range(r):
                for l in range(k, r):
                    acc = 0.0
                    for j in range(n):
                        acc += w[j, k] * w[j, l]
                    g[k, l] = acc
                    g[l, k] = acc
            for j in range(n):
                for k in range(r):
                    acc = 0.0
                    for i in range(n):
                        acc += target[j, i] * w[i, k]
                    t[j, k] = acc
            for i in range(n):
                acc = 0.0
                for k in range(r):
                    acc += w[i, k] * w[i, k]
                rown[i] = acc
            for i in range(n):
                for k in range(r):
                    wik = w[i, k]
                    b = 12.0 * wik
                    c = 4.0 * (rown[i] - target[i, i] + g[k, k] + wik * wik)
                    acc = 0.0
                    for l in range(r):
                        acc += w[i, l] * g[l, k]
                    d = 4.0 * (acc - t[i, k])
                    if c > b * b / 12.0:
                        p = (12.0 * c - b * b) / 48.0
                        q = (36.0 * b * c - 432.0 * d - 2.0 * b ** 3) / 1728.0
                        disc = q * q / 4.0 + p ** 3 / 27.0
                        if disc < 0.0:
                            disc = 0.0
                        sq = disc ** 0.5
                        wnew = _cbrt(q / 2.0 - sq) + _cbrt(q / 2.0 + sq)
                    else:
                        wnew = _cbrt(b ** 3 / 1728.0 - d / 4.0)
                    if wnew < 0.0:
                        wnew = 0.0
                    delta = wnew - wik
                    if delta != 0.0:
                        w[i, k] = wnew
                        rown[i] += delta * (2.0 * wik + delta)
                        for l in range(r):
                            if l != k:
                                gkl = g[k, l] + delta * w[i, l]
                                g[k, l] = gkl
                                g[l, k] = gkl
                        g[k, k] += delta * (2.0 * wik + delta)
                        for j in range(n):
                            t[j, k] += delta * target[j, i]
        return w

    return _sweeps


_sweeps_py = _make_sweeps(lambda f: f)

if os.environ.get("SRF_PURE_PYTHON"):
    _sweeps_fast = _sweeps_py
else:
    try:
        from numba import njit

        _sweeps_fast = _make_sweeps(njit(cache=True))
    except ImportError:  # pragma: no cover
        _sweeps_fast = _sweeps_py


def run_sweeps(w, target, n_sweeps):
    """Run coordinate sweeps on w in place and return it."""
    return _sweeps_fast(w, target, n_sweeps)
