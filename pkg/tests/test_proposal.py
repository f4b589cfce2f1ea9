import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajrefine.errors import ConfigurationError
from trajrefine.proposal import initial_proposal, proposal_batch


def straight_history(channels=4):
    hs = np.zeros((8, channels))
    return hs


def interpolation_oracle(anchor, goal, t_h, horizon):
    """Scalar-loop evaluation of the interpolation formulas."""
    n = horizon - t_h
    pos = np.empty((n, 2))
    vel = np.empty((n, 2))
    for i, t in enumerate(range(t_h + 1, horizon + 1)):
        for c in range(2):
            pos[i, c] = anchor[c] + (t - t_h) / (horizon - t_h) * (goal[c] - anchor[c])
            vel[i, c] = (goal[c] - anchor[c]) / (horizon - t_h)
    return pos, vel


def test_unit_step_example():
    p = initial_proposal(straight_history(), (12.0, 0.0), 20)
    assert p.shape == (20, 4)
    assert p[8, 0] == 1.0 and p[8, 1] == 0.0
    assert p[19, 0] == 12.0
    assert (p[8:, 2] == 1.0).all() and (p[8:, 3] == 0.0).all()


def test_goal_at_last_observed_position_freezes_the_future():
    hs = np.zeros((8, 4))
    hs[:, :2] = np.array([3.0, -1.0])
    p = initial_proposal(hs, (3.0, -1.0), 20)
    assert (p[8:, :2] == np.array([3.0, -1.0])).all()
    assert (p[8:, 2:] == 0.0).all()


def test_midpoint_example():
    hs = np.zeros((8, 4))
    hs[:, :2] = np.array([2.0, 2.0])
    p = initial_proposal(hs, (2.0, 14.0), 20)
    # frame 14 is six of twelve future steps in
    assert p[13, 0] == 2.0 and p[13, 1] == 8.0


def test_observed_frames_copied_verbatim():
    rng = np.random.default_rng(3)
    hs = rng.normal(size=(8, 4))
    p = initial_proposal(hs, rng.normal(size=2), 20)
    assert (p[:8] == hs).all()


def test_matches_hand_evaluation_to_1e12_relative():
    rng = np.random.default_rng(11)
    for _ in range(100):
        hs = rng.normal(size=(8, 4)) * rng.uniform(0.1, 5)
        goal = rng.normal(size=2) * rng.uniform(0.1, 5)
        p = initial_proposal(hs, goal, 20)
        pos, vel = interpolation_oracle(hs[-1, :2], goal, 8, 20)
        scale = np.maximum(np.abs(pos), 1e-12)
        assert (np.abs(p[8:, :2] - pos) / scale).max() < 1e-12
        vscale = np.maximum(np.abs(vel), 1e-12)
        assert (np.abs(p[8:, 2:] - vel) / vscale).max() < 1e-12


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_future_second_differences_are_exactly_zero(seed):
    # anchored at the origin, the frame the pipeline operates in
    rng = np.random.default_rng(seed)
    hs = rng.normal(size=(8, 4))
    hs[-1, :2] = 0.0
    goal = rng.normal(size=2) * rng.uniform(0.01, 100)
    p = initial_proposal(hs, goal, 20)
    assert (np.diff(p[8:, :2], n=2, axis=0) == 0.0).all()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_future_velocity_equals_position_difference(seed):
    rng = np.random.default_rng(seed)
    hs = rng.normal(size=(8, 4))
    hs[-1, :2] = 0.0
    goal = rng.normal(size=2) * rng.uniform(0.01, 100)
    p = initial_proposal(hs, goal, 20)
    positions = np.vstack([hs[-1:, :2], p[8:, :2]])
    assert (np.diff(positions, axis=0) == p[8:, 2:]).all()


def test_horizon_must_exceed_history():
    with pytest.raises(ConfigurationError):
        initial_proposal(straight_history(), (1.0, 1.0), 8)
    with pytest.raises(ConfigurationError):
        initial_proposal(straight_history(), (1.0, 1.0), 5)


def test_rejects_non_finite_inputs():
    hs = straight_history()
    with pytest.raises(ConfigurationError):
        initial_proposal(hs, (np.nan, 0.0), 20)


def test_position_only_variant():
    hs = np.zeros((8, 2))
    p = initial_proposal(hs, (6.0, 0.0), 20)
    assert p.shape == (20, 2)
    assert p[19, 0] == 6.0


def test_batch_matches_single():
    rng = np.random.default_rng(5)
    states = rng.normal(size=(3, 8, 4))
    goals = rng.normal(size=(3, 4, 2))
    batch = proposal_batch(states, goals, 20)
    assert batch.shape == (3, 4, 20, 4)
    for b in range(3):
        for n in range(4):
            single = initial_proposal(states[b], goals[b, n], 20)
            assert (batch[b, n] == single).all()
