import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rig import envs, replay
from rig.envs import EnvKind, EnvSpec
from rig.nn import make_rng
from rig.replay import (Future, FutureOrUniformGoalSpace, Mixture, NoRelabel, Prior, ReplayBuffer,
                        RewardType, Transition, compute_reward, compute_rewards)
from rig.vae import FittedPrior, VaeModel


class IdentitySpace:
    """Float observations used directly as latents; goals from a fixed prior."""
    kind = "test"
    cacheable = False

    def __init__(self, dim=2):
        self.dim = dim
        self.prior = FittedPrior(np.full(dim, 5.0), np.full(dim, 1e-6))

    def encode(self, obs):
        return np.asarray(obs, dtype=np.float64).reshape(-1, self.dim)

    def encode_with_var(self, obs):
        z = self.encode(obs)
        return z, np.ones_like(z)

    def sample_goals(self, n, rng):
        return self.prior.mean + np.sqrt(self.prior.variance) * rng.standard_normal((n, self.dim))


def trajectory(tid, n, dim=2, start=0.0, goal=(9.0, 9.0)):
    # observation at step i is (start + i, 0); next_obs is (start + i + 1, 0)
    return [Transition(np.array([start + i, 0.0]), np.zeros(2), np.array([start + i + 1, 0.0]),
                       np.array(goal), tid, i, n) for i in range(n)]


def float_buffer(capacity=100):
    return ReplayBuffer(capacity, 2, 2, 2, obs_dtype=np.float64)


EUCLID1 = RewardType("latent_euclid", scale=1.0)


def test_reward_examples():
    assert compute_reward(EUCLID1, [0.3, 0.2], [0.3, 0.2]) == 0.0
    assert compute_reward(EUCLID1, [1.0, 0.0], [0.0, 0.0]) == -1.0
    maha = RewardType("mahalanobis", scale=1.0)
    assert compute_reward(maha, [1.0, 0.0], [0.0, 0.0], next_var=[0.25, 1.0]) == pytest.approx(-2.0, abs=1e-12)
    mse = RewardType("pixel_mse", scale=1.0)
    assert compute_reward(mse, next_image=[1, 0, 0, 1], goal_image=[0, 0, 0, 1]) == -0.25
    oracle = RewardType("oracle_state", scale=1.0)
    assert compute_reward(oracle, next_state=[0, 0], goal_state=[0.3, 0.4]) == pytest.approx(-0.5, abs=1e-12)
    sparse = RewardType("sparse", epsilon=0.1)
    assert compute_reward(sparse, next_state=[0, 0], goal_state=[0.05, 0]) == 0.0
    assert compute_reward(sparse, next_state=[0, 0], goal_state=[0.5, 0]) == -1.0


def test_reward_scale_applies():
    assert compute_reward(RewardType(), [3.0, 4.0], [0.0, 0.0]) == pytest.approx(-5e-4, abs=1e-15)


def test_missing_reward_inputs():
    with pytest.raises(ValueError, match="next_var"):
        compute_reward(RewardType("mahalanobis"), [0, 0], [0, 0])
    with pytest.raises(ValueError):
        compute_reward(RewardType("pixel_mse"), [0, 0], [0, 0])
    with pytest.raises(ValueError):
        RewardType("bogus")
    with pytest.raises(ValueError):
        RewardType(scale=0)


vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3)


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.lists(st.floats(0.01, 10), min_size=3, max_size=3))
def test_rewards_nonpositive_and_mahalanobis_reduces_to_euclid(z, g, var):
    for kind in ("latent_euclid", "mahalanobis"):
        assert compute_reward(RewardType(kind, 1.0), z, g, next_var=var) <= 0
    e = compute_reward(RewardType("latent_euclid", 1.0), z, g)
    m = compute_reward(RewardType("mahalanobis", 1.0), z, g, next_var=np.ones(3))
    assert e == pytest.approx(m, rel=1e-12, abs=1e-12)


def test_reward_zero_iff_goal_reached():
    z = np.array([0.1, -0.4])
    assert compute_reward(EUCLID1, z, z) == 0
    assert compute_reward(EUCLID1, z, z + 1e-6) < 0


def test_store_and_sample_without_relabel():
    buf = float_buffer()
    buf.store_trajectory(trajectory(0, 5))
    space = IdentitySpace()
    b = buf.sample_batch(64, NoRelabel(), EUCLID1, space, make_rng(0))
    assert np.all(b.z_goal == 9.0)
    expected = -np.linalg.norm(b.z_next - b.z_goal, axis=1)
    np.testing.assert_allclose(b.reward, expected, atol=1e-12)
    assert np.all(b.source == replay.SOURCE_STORED)
    assert len(buf) == 5


def test_sampling_with_replacement_beyond_size():
    buf = float_buffer()
    buf.store_trajectory(trajectory(0, 3))
    assert buf.sample_batch(50, NoRelabel(), EUCLID1, IdentitySpace(), make_rng(0)).z.shape == (50, 2)


def test_empty_buffer_errors():
    with pytest.raises(ValueError):
        float_buffer().sample_batch(1, NoRelabel(), EUCLID1, IdentitySpace(), make_rng(0))


def test_fifo_eviction_of_whole_trajectories():
    buf = float_buffer(capacity=10)
    for tid in range(3):
        buf.store_trajectory(trajectory(tid, 5, start=10.0 * tid))
    assert buf.trajectory_ids == [1, 2]
    assert len(buf) == 10
    with pytest.raises(KeyError):
        buf.get(0, 0)
    assert buf.get(2, 4).obs[0] == 24.0


def test_wraparound_evicts_overlapping_trajectory():
    buf = float_buffer(capacity=10)
    buf.store_trajectory(trajectory(0, 4))
    buf.store_trajectory(trajectory(1, 4))
    buf.store_trajectory(trajectory(2, 4))  # no room at the end: wraps and evicts 0
    assert buf.trajectory_ids == [1, 2]
    assert len(buf) == 8
    assert buf.get(2, 0).obs[0] == 0.0 and buf.slot_of(2, 0) == 0


def test_size_equals_sum_of_lengths():
    buf = float_buffer(capacity=1000)
    lengths = [3, 7, 1, 12]
    for tid, n in enumerate(lengths):
        buf.store_trajectory(trajectory(tid, n))
    assert len(buf) == sum(lengths)


def test_inconsistent_metadata_rejected():
    buf = float_buffer()
    bad = trajectory(0, 3)
    bad[1].step_index = 2
    with pytest.raises(ValueError):
        buf.store_trajectory(bad)
    mixed = trajectory(0, 3)
    mixed[2].traj_id = 1
    with pytest.raises(ValueError):
        buf.store_trajectory(mixed)
    buf.store_trajectory(trajectory(0, 3))
    with pytest.raises(ValueError):
        buf.store_trajectory(trajectory(0, 3))


def test_relabel_variants():
    buf = float_buffer()
    buf.store_trajectory(trajectory(0, 5))
    space, rng = IdentitySpace(), make_rng(0)
    np.testing.assert_array_equal(buf.relabel(0, 2, NoRelabel(), space, rng), [9.0, 9.0])
    # last transition: only its own next observation is in the future
    np.testing.assert_array_equal(buf.relabel(0, 4, Future(), space, rng), [5.0, 0.0])
    np.testing.assert_allclose(buf.relabel(0, 0, Prior(), space, rng), [5.0, 5.0], atol=0.01)
    with pytest.raises(KeyError):
        buf.relabel(7, 0, Future(), space, rng)


def test_future_goals_come_from_later_states():
    buf = float_buffer()
    buf.store_trajectory(trajectory(0, 10))
    buf.store_trajectory(trajectory(1, 10, start=100.0))
    b = buf.sample_batch(5000, Future(), EUCLID1, IdentitySpace(), make_rng(1))
    # goal state index in (step_index, traj_len]
    assert np.all(b.z_goal[:, 0] >= b.z_next[:, 0])
    same_traj = (b.z_goal[:, 0] >= 100) == (b.z[:, 0] >= 100)
    assert np.all(same_traj)
    # uniform over the future: from step 0, goal indices 1..10 all appear
    first = b.z[:, 0] == 0
    assert set(b.z_goal[first, 0]) == set(range(1, 11))


def test_mixture_frequency():
    rng = make_rng(2)
    src = replay.draw_sources(Mixture(0.5), 100_000, rng)
    assert abs(np.mean(src == replay.SOURCE_PRIOR) - 0.5) < 0.01
    src = replay.draw_sources(FutureOrUniformGoalSpace(4, 0.5), 100_000, rng)
    assert abs(np.mean(src == replay.SOURCE_PRIOR) - 0.5) < 0.01


def test_uniform_transition_sampling():
    buf = float_buffer()
    buf.store_trajectory(trajectory(0, 4))
    buf.store_trajectory(trajectory(1, 6, start=50.0))
    b = buf.sample_batch(100_000, NoRelabel(), EUCLID1, IdentitySpace(), make_rng(3))
    counts = np.bincount(b.slots, minlength=10)
    p = 1 / 10
    sigma = math.sqrt(100_000 * p * (1 - p))
    assert np.all(np.abs(counts - 100_000 * p) < 3 * sigma)


def test_relabel_does_not_mutate_storage():
    buf = float_buffer()
    buf.store_trajectory(trajectory(0, 5))
    before = (buf.goal.copy(), buf.obs.copy(), buf.next_obs.copy())
    buf.sample_batch(200, Mixture(0.5), EUCLID1, IdentitySpace(), make_rng(4))
    for a, b in zip(before, (buf.goal, buf.obs, buf.next_obs)):
        np.testing.assert_array_equal(a, b)


def test_strategy_validation():
    with pytest.raises(ValueError):
        Mixture(1.5)
    with pytest.raises(ValueError):
        Future(0)
    assert replay.make_strategy("vae") == Prior()
    with pytest.raises(ValueError):
        replay.make_strategy("nope")


def test_latent_space_cache_follows_vae_changes():
    spec = EnvSpec(EnvKind.REACHER)
    rng = make_rng(5)
    model = VaeModel(spec.n_pixels, 3, rng=rng)
    space = replay.LatentSpace(model, FittedPrior(np.zeros(3), np.ones(3)))
    buf = ReplayBuffer(200, spec.n_pixels, 3, spec.state_dim)
    s = envs.reset(spec, rng)
    traj = []
    for i in range(10):
        s2 = envs.step(spec, s, rng.uniform(-1, 1, 2))
        traj.append(Transition(envs.render(spec, s).reshape(-1), np.zeros(2), envs.render(spec, s2).reshape(-1),
                               np.zeros(3), 0, i, 10))
        s = s2
    buf.store_trajectory(traj)

    def fresh(batch):
        images = np.stack([buf.get(0, int(buf.step_index[k])).next_obs for k in batch.slots])
        return model.encode(images)[0]

    b = buf.sample_batch(32, NoRelabel(), RewardType("latent_euclid", 1.0), space, make_rng(6))
    np.testing.assert_allclose(b.z_next, fresh(b), atol=1e-12)
    model.encoder.flat += 0.01
    space.invalidate()
    b = buf.sample_batch(32, NoRelabel(), RewardType("latent_euclid", 1.0), space, make_rng(6))
    np.testing.assert_allclose(b.z_next, fresh(b), atol=1e-12)


def test_pixel_and_state_spaces():
    spec = EnvSpec(EnvKind.PUSHER)
    rng = make_rng(7)
    ps, ss = replay.PixelSpace(spec), replay.StateSpace(spec)
    assert ps.sample_goals(3, rng).shape == (3, spec.n_pixels)
    g = ss.sample_goals(4, rng)
    assert g.shape == (4, 4) and np.all(np.abs(g) <= 1)
