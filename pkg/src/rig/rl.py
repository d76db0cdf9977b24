"""Goal-conditioned TD3 in latent space, plus Ornstein-Uhlenbeck exploration noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import Mlp, Rng, load_mlp_state, mlp_state, polyak_update


@dataclass(frozen=True)
class Td3Config:
    gamma: float = 0.99
    tau: float = 1e-2
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.policy_noise < 0 or self.noise_clip < 0:
            raise ValueError("target noise settings must be nonnegative")


class OuNoise:
    """dx = theta * (mu - x) + sigma * N(0, 1), unit time step."""

    def __init__(self, size: int, rng: Rng, theta: float = 0.15, sigma: float = 0.3, mu: float = 0.0):
        self.size, self.rng = size, rng
        self.theta, self.sigma, self.mu = theta, sigma, mu
        self.state = np.full(size, mu, dtype=np.float64)

    def reset(self) -> None:
        self.state = np.full(self.size, self.mu, dtype=np.float64)

    def sample(self) -> np.ndarray:
        dx = self.theta * (self.mu - self.state)
        if self.sigma:
            dx = dx + self.sigma * self.rng.standard_normal(self.size)
        self.state = self.state + dx
        return self.state.copy()


class Agent:
    """Deterministic tanh policy and twin critics, each with a target copy.

    Policy input is ``[z | z_goal]``; critic input is ``[z | a | z_goal]``.
    """

    def __init__(self, obs_dim: int, goal_dim: int, rng: Rng, action_dim: int = 2,
                 config: Td3Config | None = None):
        self.config = config or Td3Config()
        self.obs_dim, self.goal_dim, self.action_dim = obs_dim, goal_dim, action_dim
        h = list(self.config.hidden)
        self.policy = Mlp([obs_dim + goal_dim, *h, action_dim], "tanh", rng)
        self.q1 = Mlp([obs_dim + action_dim + goal_dim, *h, 1], "identity", rng)
        self.q2 = Mlp([obs_dim + action_dim + goal_dim, *h, 1], "identity", rng)
        self.policy_target = self.policy.copy()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_opt = ad.Adam(self.policy.params, lr=self.config.actor_lr)
        self.critic_opt = ad.Adam(self.q1.params + self.q2.params, lr=self.config.critic_lr)
        self.updates = 0

    @property
    def networks(self) -> dict[str, Mlp]:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2, "policy_target": self.policy_target,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name, net in self.networks.items():
            out.update(mlp_state(name, net))
        out["updates"] = np.array(self.updates)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, net in self.networks.items():
            load_mlp_state(name, net, arrays)
        self.updates = int(arrays.get("updates", 0))


def act(agent: Agent, z, z_goal, noise: OuNoise | None = None) -> np.ndarray:
    """Policy action for one latent state and goal; OU noise added then clipped to [-1, 1]."""
    x = np.concatenate([np.ravel(z), np.ravel(z_goal)])[None, :]
    a = agent.policy.predict(x)[0]
    if noise is not None:
        a = np.clip(a + noise.sample(), -1.0, 1.0)
    return a


def act_batch(agent: Agent, z: np.ndarray, z_goal: np.ndarray) -> np.ndarray:
    return agent.policy.predict(np.concatenate([z, z_goal], axis=1))


def td_target(agent: Agent, reward, z_next, z_goal, rng: Rng) -> np.ndarray:
    """Clipped double-Q target with target-policy smoothing; a constant array."""
    cfg = agent.config
    a_next = agent.policy_target.predict(np.concatenate([z_next, z_goal], axis=1))
    if cfg.policy_noise > 0:
        eps = np.clip(cfg.policy_noise * rng.standard_normal(a_next.shape), -cfg.noise_clip, cfg.noise_clip)
        a_next = np.clip(a_next + eps, -1.0, 1.0)
    x = np.concatenate([z_next, a_next, z_goal], axis=1)
    q = np.minimum(agent.q1_target.predict(x), agent.q2_target.predict(x))[:, 0]
    return np.asarray(reward, dtype=np.float64) + cfg.gamma * q


def critic_update(agent: Agent, batch, rng: Rng) -> float:
    """One Adam step for both critics towards the shared TD target. Returns the summed MSE."""
    y = td_target(agent, batch.reward, batch.z_next, batch.z_goal, rng)[:, None]
    x = np.concatenate([batch.z, batch.action, batch.z_goal], axis=1)
    loss = ad.mean(ad.square(agent.q1(x) - y)) + ad.mean(ad.square(agent.q2(x) - y))
    agent.critic_opt.zero_grad()
    loss.backward()
    agent.critic_opt.step()
    return float(loss.data)


def actor_update(agent: Agent, batch) -> float:
    """Ascend mean Q1(z, pi(z, g), g), then Polyak-average every target network.

    Returns the actor objective (mean Q1) before the step.
    """
    z, g = batch.z, batch.z_goal
    a = agent.policy(np.concatenate([z, g], axis=1))
    q = agent.q1(ad.concat([ad.Tensor(z), a, ad.Tensor(g)]))
    objective = ad.mean(q)
    agent.actor_opt.zero_grad()
    ad.scale(objective, -1.0).backward()
    agent.actor_opt.step()
    update_targets(agent, agent.config.tau)
    return float(objective.data)


def update_targets(agent: Agent, tau: float) -> None:
    polyak_update(agent.policy_target, agent.policy, tau)
    polyak_update(agent.q1_target, agent.q1, tau)
    polyak_update(agent.q2_target, agent.q2, tau)


def train_step(agent: Agent, batch, rng: Rng) -> tuple[float, float | None]:
    """Critic update every call, actor + target update every ``policy_delay`` calls."""
    closs = critic_update(agent, batch, rng)
    agent.updates += 1
    aobj = None
    if agent.updates % agent.config.policy_delay == 0:
        aobj = actor_update(agent, batch)
    return closs, aobj


def param_distance(a: Mlp, b: Mlp) -> float:
    return float(np.sqrt(sum(((pa.data - pb.data) ** 2).sum() for pa, pb in zip(a.params, b.params))))
