import numpy as np
import pytest

from srf._util import derive_rng, derive_seed, run_parallel


def test_derive_rng_is_deterministic():
    a = derive_rng(7, 1, 2).random(5)
    b = derive_rng(7, 1, 2).random(5)
    np.testing.assert_array_equal(a, b)


def test_derive_rng_key_separation():
    # note numpy folds a trailing zero entropy word away, so (7,) and (7, 0)
    # would collide; every call site in the package uses tags starting at 1
    base = derive_rng(7).random(5)
    keyed = derive_rng(7, 1).random(5)
    other = derive_rng(7, 2).random(5)
    nested = derive_rng(7, 1, 1).random(5)
    assert not np.array_equal(base, keyed)
    assert not np.array_equal(keyed, other)
    assert not np.array_equal(keyed, nested)


def test_derive_seed_range_and_determinism():
    s = derive_seed(3, 4, 5)
    assert s == derive_seed(3, 4, 5)
    assert 0 <= s < 2**32
    assert s != derive_seed(3, 4, 6)


def _square(x):
    return x * x


@pytest.mark.parametrize("n_jobs", [1, 2])
def test_run_parallel_preserves_order(n_jobs):
    items = list(range(20))
    assert run_parallel(_square, items, n_jobs=n_jobs) == [x * x for x in items]


def test_run_parallel_empty():
    assert run_parallel(_square, [], n_jobs=2) == []
