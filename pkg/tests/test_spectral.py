import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eoslab.hessian import balanced_minimum
from eoslab.model import ValidationError, Weights, make_target
from eoslab.spectral import (balancing_alpha_threshold, balancing_gap, balancing_gaps,
                             canonical_svd, gfs_sharpness_bound, layer_singular_values,
                             layer_svds, subspace_distance)


def test_canonical_svd_reconstructs():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 4))
    u, s, v = canonical_svd(a)
    np.testing.assert_allclose((u * s) @ v.T, a, atol=1e-12)
    assert np.all(u[np.argmax(np.abs(u), axis=0), range(4)] >= 0)


def test_layer_svds_reconstruct():
    rng = np.random.default_rng(1)
    w = Weights(tuple(rng.standard_normal((3, 3)) for _ in range(2)))
    svd = layer_svds(w)
    for l in (1, 2):
        np.testing.assert_allclose(svd.reconstruct(l), w.layers[l - 1], atol=1e-12)


def test_balancing_gaps():
    w = Weights((np.diag([2.0, 1.0]), np.diag([1.0, 1.0]), np.diag([3.0, 0.5])))
    np.testing.assert_allclose(balancing_gaps(w), [8.0, 0.75])
    assert balancing_gap(w, 1) == 8.0
    with pytest.raises(ValidationError):
        balancing_gap(w, 3)
    assert layer_singular_values(w).shape == (3, 2)


@settings(max_examples=25, deadline=None)
@given(depth=st.integers(2, 4), seed=st.integers(0, 2**31))
def test_distance_zero_on_balanced_minimum(depth, seed):
    target = make_target(4, 2, [3.0, 1.5], "random_orthogonal", seed)
    w = balanced_minimum(target, depth, 0.05)
    assert subspace_distance(w, 2, target).max() < 1e-10


def test_distance_detects_rotation():
    target = make_target(2, 2, [3.0, 1.0])
    c, s = math.cos(0.3), math.sin(0.3)
    rot = np.array([[c, -s], [s, c]])
    w = Weights((np.diag([3.0, 1.0]) ** 0.5 @ rot, rot.T @ np.diag([3.0, 1.0]) ** 0.5))
    d = subspace_distance(w, 2, target)
    assert d.bottom > 0.1
    with pytest.raises(ValidationError):
        subspace_distance(w, 3, target)


def test_alpha_threshold_domain():
    # lr beyond 2 sqrt(2)/S leaves the bound vacuous
    assert balancing_alpha_threshold(3, 10.0, 0.05) is None
    lr = 2 * math.sqrt(2) / (3 * 10 ** (4 / 3))
    assert balancing_alpha_threshold(3, 10.0, lr) == pytest.approx(0.0, abs=1e-3)


def test_alpha_threshold_golden():
    # 40-digit mpmath evaluation
    assert balancing_alpha_threshold(3, 10.0, 0.032) == pytest.approx(
        0.7823593672386108634824090869, rel=1e-14)


def test_gfs_bound_golden():
    assert gfs_sharpness_bound(0.0, 3, 10.0) == pytest.approx(3 * 10 ** (4 / 3), rel=1e-15)
    assert gfs_sharpness_bound(0.1, 3, 10.0) == pytest.approx(64.63644257731476383084, rel=1e-14)
    with pytest.raises(ValidationError):
        gfs_sharpness_bound(-1.0, 3, 10.0)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_gfs_bound_monotone_in_alpha(a, b):
    lo, hi = sorted((a, b))
    assert gfs_sharpness_bound(lo, 2, 5.0) <= gfs_sharpness_bound(hi, 2, 5.0)


@pytest.mark.parametrize("seed", range(10))
def test_gaussian_init_is_far_from_svs(seed):
    from eoslab.model import NetworkConfig, init_weights
    target = make_target(6, 2, [3.0, 1.0], "random_orthogonal", seed)
    w = init_weights(NetworkConfig(3, 6, 2, init_kind="gaussian_random", seed=seed))
    assert subspace_distance(w, 2, target).max() > 0.5
