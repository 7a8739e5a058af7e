
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from causpref.dag import DagParams
from causpref.errors import DataError
from causpref.sampler import (ApsConfig, NegativePool, aps_batch, aps_sample, draw, probabilities,
                              random_batch, random_sample, sampling_weights)


def test_euclidean_weights_example():
    w = sampling_weights([0.0], [[1.0], [-3.0]])
    np.testing.assert_allclose(probabilities(w), [0.25, 0.75])


def test_inner_product_limit():
    # scores 2 and 1: the preferred candidate gets only the delta share
    w = sampling_weights([1.0], [[2.0], [1.0]], "inner_product", delta=1e-12)
    np.testing.assert_allclose(probabilities(w), [0.0, 1.0], atol=1e-10)


@pytest.mark.parametrize("distance", ["euclidean", "inner_product"])
def test_identical_candidates_uniform(distance):
    w = sampling_weights([0.5, 0.5], np.tile([0.5, 0.5], (4, 1)), distance)
    np.testing.assert_allclose(probabilities(w), 0.25)


def test_single_candidate():
    assert draw(sampling_weights([0.0], [[2.0]]), np.random.default_rng(0)) == 0


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.sampled_from(["euclidean", "inner_product"]))
@settings(max_examples=100, deadline=None)
def test_probabilities_valid(vals, distance):
    c = np.array(vals)[:, None]
    p = probabilities(sampling_weights([0.3], c, distance))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


def test_draw_frequencies_chi_square():
    rng = np.random.default_rng(0)
    counts = np.bincount([draw([1.0, 2.0, 3.0], rng) for _ in range(10_000)], minlength=3)
    assert stats.chisquare(counts, 10_000 * np.array([1, 2, 3]) / 6).pvalue > 0.01


def test_batched_aps_frequencies():
    # one user, candidates at distances 1, 2, 3 from the preference; K covers the pool
    items = np.array([[1.0], [2.0], [3.0], [0.0]])
    pool = NegativePool([0, 1, 2, 3], {0: np.array([3])})
    cfg = ApsConfig(k=3)
    rng = np.random.default_rng(1)
    neg = aps_batch(np.zeros((10_000, 1)), np.zeros(10_000, int), np.full(10_000, 3), pool,
                    items, cfg, rng)
    counts = np.bincount(neg, minlength=4)
    assert counts[3] == 0
    assert stats.chisquare(counts[:3], 10_000 * np.array([1, 2, 3]) / 6).pvalue > 0.01


def test_exclusion_of_positives():
    rng = np.random.default_rng(0)
    items = rng.normal(size=(10, 2))
    pool = NegativePool.from_interactions(np.arange(10), [[0, 1], [0, 2], [1, 5]])
    neg = aps_batch(np.zeros((2000, 2)), np.zeros(2000, int), np.full(2000, 7), pool, items,
                    ApsConfig(k=5), rng)
    assert not np.isin(neg, [1, 2, 7]).any()
    r = random_batch(np.zeros(2000, int), np.full(2000, 7), pool, rng)
    assert not np.isin(r, [1, 2, 7]).any()


def test_no_candidates_left():
    pool = NegativePool([0, 1], {0: np.array([0, 1])})
    with pytest.raises(DataError):
        random_sample(0, 0, pool, np.random.default_rng(0))


def test_k_clamped_with_warning():
    pool = NegativePool([0, 1, 2])
    with pytest.warns(UserWarning, match="clamping"):
        aps_batch(np.zeros((1, 1)), [0], [0], pool, np.ones((3, 1)), ApsConfig(k=10),
                  np.random.default_rng(0))


def test_random_negatives_uniform():
    rng = np.random.default_rng(3)
    pool = NegativePool(np.arange(5), {0: np.array([4])})
    n = 10_000
    counts = np.bincount(random_batch(np.zeros(n, int), np.full(n, 4), pool, rng), minlength=5)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert counts[4] == 0
    assert np.all(np.abs(counts[:4] - n / 4) < 3 * sigma)
    assert random_sample(0, 1, NegativePool([1, 2]), rng) == 2


def test_hardest_picks_farthest():
    items = np.array([[1.0], [5.0], [2.0]])
    neg = aps_batch(np.zeros((1, 1)), [0], [-1], NegativePool([0, 1, 2]), items,
                    ApsConfig(k=3, hardest=True), np.random.default_rng(0))
    assert neg[0] == 1


def test_determinism_and_single_sample():
    p = DagParams.init(2, 2, hidden=3, seed=0)
    items = np.random.default_rng(0).normal(size=(30, 2))
    pool = NegativePool(np.arange(30))
    a = [aps_sample(p, [0.1, 0.2], 0, 3, pool, items, ApsConfig(), np.random.default_rng(9))
         for _ in range(2)]
    assert a[0] == a[1] and a[0] != 3


def test_config_validation():
    for bad in ({"k": 0}, {"distance": "cosine"}, {"delta": 0.0}):
        with pytest.raises(ValueError):
            ApsConfig(**bad)
