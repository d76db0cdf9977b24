"""Goal relabeling on a single stored trajectory.

A reacher trajectory is stored with the goal it was collected for. At sample
time each transition can keep that goal, take a state reached later in the
same trajectory, or take a goal drawn fresh from the goal distribution. The
reward is recomputed for whichever goal was picked.

    python demos/relabeling.py
"""
import numpy as np

from rig import envs, replay
from rig.envs import EnvSpec
from rig.nn import make_rng

spec = EnvSpec(kind="reacher", horizon=8)
space = replay.StateSpace(spec)
rng = make_rng(1)
reward = replay.RewardType("sparse", epsilon=spec.success_threshold)

# walk right along y = 0 while chasing a goal that is never reached
goal = envs.EnvState((0.0, 0.9))
s = envs.EnvState((-0.8, 0.0))
traj = []
for i in range(spec.horizon):
    s2 = envs.step(spec, s, [1.0, 0.0])
    traj.append(replay.Transition(s.vector(), np.array([1.0, 0.0]), s2.vector(), goal.vector(),
                                  0, i, spec.horizon, s.vector(), s2.vector()))
    s = s2

buf = replay.ReplayBuffer(100, spec.state_dim, spec.state_dim, spec.state_dim, obs_dtype=np.float64)
buf.store_trajectory(traj)

strategies = {
    "none": replay.NoRelabel(),
    "future": replay.Future(),
    "prior": replay.Prior(),
    "mixture": replay.Mixture(0.5),
}
for name, strategy in strategies.items():
    b = buf.sample_batch(2000, strategy, reward, space, rng)
    hit = np.mean(b.reward == 0.0)
    print(f"{name:>8}: goal reached in {hit:6.1%} of sampled transitions")

# without relabeling a sparse-reward learner sees nothing but -1 here;
# hindsight goals from later in the trajectory turn the same data into successes
b = buf.sample_batch(5, replay.Future(), reward, space, rng)
for z, zn, g, r in zip(b.z, b.z_next, b.z_goal, b.reward):
    print(f"x {z[0]:+.2f} -> {zn[0]:+.2f}, relabeled goal x {g[0]:+.2f}, reward {r:+.0f}")
