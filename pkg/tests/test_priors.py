import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crac.priors import INNER, OUTER, classify_regions, compute_prior, fraction_outer


def prior_oracle(labels, k, size=3):
    """Loop over every pixel and its clamped-coordinate neighbourhood."""
    h, w = labels.shape
    p = size // 2
    out = np.zeros((k, h, w))
    for y in range(h):
        for x in range(w):
            for dy in range(-p, p + 1):
                for dx in range(-p, p + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    out[labels[yy, xx], y, x] += 1
    return out


def test_uniform_map_is_all_inner_with_full_counts():
    labels = np.full((6, 5), 2)
    tau = compute_prior(labels, 4)
    np.testing.assert_array_equal(tau[2], 9)
    np.testing.assert_array_equal(tau[[0, 1, 3]], 0)
    assert (classify_regions(labels) == INNER).all()


def test_vertical_edge():
    labels = np.zeros((4, 6), dtype=int)
    labels[:, 3:] = 1
    tau = compute_prior(labels, 2)
    # columns 2 and 3 straddle the edge
    np.testing.assert_array_equal(tau[1, :, 2], 3)
    np.testing.assert_array_equal(tau[0, :, 3], 3)
    regions = classify_regions(labels)
    np.testing.assert_array_equal(regions[:, [2, 3]], OUTER)
    np.testing.assert_array_equal(regions[:, [0, 1, 4, 5]], INNER)
    assert fraction_outer(regions) == pytest.approx(1 / 3)


def test_normalised_prior_is_a_distribution():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, (2, 7, 7))
    tau = compute_prior(labels, 3, normalize=True)
    assert tau.shape == (2, 3, 7, 7)
    np.testing.assert_allclose(tau.sum(axis=1), 1.0, rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.integers(0, 3)), st.sampled_from([1, 3, 5]))
def test_prior_matches_loop_oracle(labels, size):
    tau = compute_prior(labels, 4, size)
    np.testing.assert_array_equal(tau, prior_oracle(labels, 4, size))
    np.testing.assert_array_equal(tau.sum(axis=0), size * size)
    # inner exactly where one class fills the patch
    np.testing.assert_array_equal(classify_regions(labels, size) == INNER, tau.max(axis=0) == size * size)


def test_errors():
    with pytest.raises(ValueError):
        compute_prior(np.zeros((3, 3), int), 2, patch_size=2)
    with pytest.raises(ValueError):
        compute_prior(np.array([[0, 5]]), 2)
    with pytest.raises(ValueError):
        classify_regions(np.zeros(4, int))
