import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from motion_prior import checkpoint, data, skeleton as sk
from motion_prior.tensor import Tensor
from motion_prior.trajectory import TrajectoryConfig, TrajectoryTrainConfig, integrate_trajectory, \
    make_trajectory_model, predict_root_velocity, train_trajectory, trajectory_csv, trajectory_loss, \
    trajectory_windows, velocity_mse

SMALL = TrajectoryConfig(widths=(8, 8, 16, 16))


def test_integrate_examples():
    np.testing.assert_array_equal(integrate_trajectory(np.array([[1.0, 0, 0], [1.0, 0, 0]])), [[1, 0, 0], [2, 0, 0]])
    np.testing.assert_array_equal(integrate_trajectory(np.zeros((5, 3))), np.zeros((5, 3)))


@settings(max_examples=50, deadline=None)
@given(V=arrays(np.float64, st.tuples(st.integers(1, 64), st.just(3)),
                elements=st.floats(-10, 10, allow_nan=False, allow_infinity=False)))
def test_integration_recurrence_is_exact(V):
    G = integrate_trajectory(V)
    assert np.array_equal(G[0], V[0])
    # each step is one floating-point addition, with no reassociation
    assert np.array_equal(G[1:], G[:-1] + V[1:])
    assert np.array_equal(integrate_trajectory(Tensor(V)).data, G)


@settings(max_examples=50, deadline=None)
@given(V=arrays(np.int64, st.tuples(st.integers(1, 64), st.just(3)), elements=st.integers(-4096, 4096)))
def test_first_difference_recovers_velocity_exactly(V):
    V = V / 1024.0                    # dyadic values: every partial sum is representable
    G = integrate_trajectory(V)
    assert np.max(np.abs(np.diff(G, axis=0) - V[1:]), initial=0.0) == 0.0
    assert np.array_equal(G[0], V[0])


def test_batched_integration_runs_over_time_axis():
    V = np.arange(24.0).reshape(2, 4, 3)
    G = integrate_trajectory(V)
    np.testing.assert_array_equal(G[1, 2], V[1, 0] + V[1, 1] + V[1, 2])


@pytest.mark.parametrize("t0", [0, 3, 7])
def test_loss_single_frame_error_propagates(t0):
    T = 8
    V = np.random.default_rng(0).standard_normal((T, 3))
    Vp = V.copy()
    Vp[t0, 0] += 1.0
    loss = trajectory_loss(Vp, V, integrate_trajectory(Vp), integrate_trajectory(V)).item()
    assert abs(loss - (1 + (T - t0))) < 1e-12


def test_loss_zero_nonnegative_and_shape_error():
    rng = np.random.default_rng(1)
    V, G = rng.standard_normal((2, 2, 6, 3))
    assert trajectory_loss(V, V, G, G).item() == 0
    assert trajectory_loss(V + 0.1, V, G, G).item() > 0
    with pytest.raises(ValueError):
        trajectory_loss(V[:, :5], V, G, G)


def test_predict_shape_determinism_and_errors():
    m = make_trajectory_model(SMALL, sk.toy7(), seed=0)
    P = np.random.default_rng(2).standard_normal((9, 7, 3)).astype(np.float32)
    a, b = predict_root_velocity(m, P).data, predict_root_velocity(m, P).data
    assert a.shape == (9, 3) and np.array_equal(a, b)
    assert predict_root_velocity(m, np.stack([P, P])).shape == (2, 9, 3)
    with pytest.raises(ValueError):
        predict_root_velocity(m, P[:, :6])


def test_windows_use_root_relative_positions():
    clips = data.synth_dataset(data.SynthConfig(seed=3, length=20), 2)
    P, V = trajectory_windows(clips, 8, 4)
    assert P.shape == (8, 8, 7, 3) and V.shape == (8, 8, 3)
    np.testing.assert_allclose(P[..., 0, :], 0, atol=1e-12)
    root = clips[0].root_translation
    np.testing.assert_allclose(V[1, 1:], np.diff(root[4:12], axis=0), atol=1e-15)


def test_training_reduces_error_and_checkpoints(tmp_path):
    clips = data.synth_dataset(data.SynthConfig(seed=0, length=24), 8)
    P, V = trajectory_windows(clips, 16, 4)
    m = make_trajectory_model(SMALL, sk.toy7(), seed=1)
    before = velocity_mse(m, P, V)
    m, hist = train_trajectory(m, P, V, TrajectoryTrainConfig(iters=150, lr=3e-3))
    assert velocity_mse(m, P, V) < before
    checkpoint.save(m, tmp_path / "t.ckpt")
    m2 = checkpoint.load(tmp_path / "t.ckpt")
    assert m2.descriptor() == m.descriptor()
    np.testing.assert_array_equal(predict_root_velocity(m2, P[:2]).data, predict_root_velocity(m, P[:2]).data)
    with pytest.raises(ValueError):
        train_trajectory(m, P[:0], V[:0], TrajectoryTrainConfig(iters=1))


def test_csv_columns():
    V = np.ones((2, 3))
    lines = trajectory_csv(V, integrate_trajectory(V)).splitlines()
    assert lines[0] == "t,vx,vy,vz,gx,gy,gz"
    assert lines[2] == "1,1,1,1,2,2,2"
