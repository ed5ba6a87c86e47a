import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eoslab.dynamics import (DivergenceError, ScalarDomainError, ScalarState, Trajectory,
                             balanced_scalar_step, gd_step, gf_limit_point, gradient_flow,
                             iterate_balanced, observe, others_product, scalar_gd_step, train)
from eoslab.model import NetworkConfig, ValidationError, Weights, make_target
from eoslab.orbit import diag_gd_step


def scalar_weights(*values):
    return Weights(tuple(np.array([[v]]) for v in values))


def test_balanced_step_golden():
    # exact rational arithmetic: 0.9 + 1.1 (1 - 0.81) 0.9
    assert balanced_scalar_step(0.9, 1.0, 2, 1.1) == pytest.approx(1.0881, abs=1e-15)


def test_balanced_step_vectorized():
    lrs = np.array([0.1, 0.2])
    out = balanced_scalar_step(0.5, 1.0, 3, lrs)
    np.testing.assert_allclose(out, [balanced_scalar_step(0.5, 1.0, 3, lr) for lr in lrs])


@settings(max_examples=50, deadline=None)
@given(sigma=st.floats(0.1, 2.0), depth=st.integers(2, 6), lr=st.floats(0.001, 0.2))
def test_balanced_step_equals_matrix_gd(sigma, depth, lr):
    target = make_target(1, 1, [1.5])
    w = gd_step(scalar_weights(*[sigma] * depth), target, lr)
    for layer in w.layers:
        assert layer[0, 0] == pytest.approx(balanced_scalar_step(sigma, 1.5, depth, lr), rel=1e-12)


def test_fixed_point_is_fixed():
    s = 10 ** (1 / 3)
    assert balanced_scalar_step(s, 10.0, 3, 0.03) == pytest.approx(s, rel=1e-15)


def test_iterate_balanced_shape_and_divergence():
    out = iterate_balanced(0.5, 1.0, 2, np.array([0.1, 50.0]), 100)
    assert out.shape == (101, 2)
    assert np.all(np.isfinite(out[:, 0]))
    assert np.isinf(out[-1, 1])


def test_others_product():
    v = np.array([2.0, 3.0, 5.0])
    np.testing.assert_array_equal(others_product(v), [15.0, 10.0, 6.0])
    np.testing.assert_array_equal(others_product(np.array([0.0, 3.0])), [3.0, 0.0])


def test_scalar_step_matches_diagonal_bitwise():
    st_ = ScalarState((0.3, 0.7, 1.1), 2.0)
    nxt = scalar_gd_step(st_, 0.05)
    diag = diag_gd_step(np.array([[0.3], [0.7], [1.1]]), np.array([2.0]), 0.05)[:, 0]
    assert nxt.values == tuple(diag)
    assert st_.product == pytest.approx(0.3 * 0.7 * 1.1)
    assert st_.gap == pytest.approx(1.21 - 0.09)
    with pytest.raises(ScalarDomainError):
        scalar_gd_step(ScalarState((0.0, 1.0), 1.0), 0.1)


def test_gd_step_errors():
    target = make_target(1, 1, [1.0])
    with pytest.raises(ValidationError):
        gd_step(scalar_weights(1.0, 1.0), target, 0.0)
    with pytest.raises(DivergenceError) as exc:
        gd_step(scalar_weights(1e200, 1e200), target, 1.0, iteration=4)
    assert exc.value.iteration == 5


def test_train_records_and_converges():
    cfg = NetworkConfig(3, 4, 2, init_scale=0.1)
    target = make_target(4, 2, [2.0, 1.0])
    traj = train(cfg, target, 0.05, 2000, record_every=100)
    assert list(traj.iterations) == list(range(0, 2001, 100))
    assert traj.losses[-1] < 1e-12
    np.testing.assert_allclose(traj.end_to_end[-1][:2], [2.0, 1.0], atol=1e-6)
    assert traj.layer_values.shape == (21, 3, 4)
    assert traj.distances.shape[0] == 21
    assert not traj.diverged


def test_train_flags_divergence():
    cfg = NetworkConfig(2, 2, 1, init_scale=1.0, init_kind="balanced")
    traj = train(cfg, make_target(2, 1, [10.0]), 5.0, 100)
    assert traj.diverged and traj.diverged_at <= 100
    assert traj.final_weights is not None


def test_train_zero_lr_and_validation():
    cfg = NetworkConfig(2, 2, 1, init_kind="balanced")
    traj = train(cfg, make_target(2, 1, [1.0]), 0.0, 3)
    assert np.all(traj.losses == traj.losses[0])
    with pytest.raises(ValidationError):
        train(cfg, make_target(2, 1, [1.0]), -0.1, 3)
    with pytest.raises(ValidationError):
        train(cfg, make_target(2, 1, [1.0]), 0.1, 0)
    with pytest.raises(ValidationError):
        train(cfg, make_target(3, 1, [1.0]), 0.1, 3, weights=scalar_weights(1.0, 1.0))


def test_trajectory_append_order():
    traj = Trajectory()
    target = make_target(1, 1, [1.0])
    traj.append(observe(scalar_weights(1.0, 1.0), target, 3))
    with pytest.raises(ValueError):
        traj.append(observe(scalar_weights(1.0, 1.0), target, 3))


def test_observe_without_layers():
    rec = observe(scalar_weights(1.0, 2.0), make_target(1, 1, [1.0]), 0, track_layers=False,
                  track_subspaces=False)
    assert rec.layer_singular_values is None and rec.balancing_gaps is None
    assert rec.target_coordinates[0] == 2.0


def test_gradient_flow_conserves_gap():
    target = make_target(1, 1, [5.0])
    traj = gradient_flow(scalar_weights(1.5, 2.25), target, 1.0, 1e-3, record_every=50)
    np.testing.assert_allclose(traj.gaps[:, 0], 2.8125, atol=1e-9)
    assert traj.times[-1] == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        gradient_flow(scalar_weights(1.0, 1.0), target, 1.0, 2.0)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.2, 3.0), b=st.floats(0.2, 3.0), s=st.floats(0.5, 10.0))
def test_gf_limit_point_keeps_gap_and_hits_target(a, b, s):
    p = gf_limit_point([a, b], s)
    assert np.prod(p) == pytest.approx(s, rel=1e-10)
    assert p[1] ** 2 - p[0] ** 2 == pytest.approx(b * b - a * a, abs=1e-9 * max(1, s))


def test_gf_limit_agrees_with_long_flow():
    target = make_target(1, 1, [5.0])
    traj = gradient_flow(scalar_weights(1.5, 2.25), target, 10.0, 1e-3)
    end = [float(w[0, 0]) for w in traj.final_weights.layers]
    np.testing.assert_allclose(end, gf_limit_point([1.5, 2.25], 5.0), rtol=1e-8)
