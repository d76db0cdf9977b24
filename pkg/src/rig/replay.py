"""Trajectory-aware replay, goal relabeling and goal-conditioned rewards.

Observations are stored raw (images or state vectors) and re-encoded every time
a batch is drawn, so fine-tuning the representation changes old data too.
Relabeling happens at sample time and never touches stored transitions.

A *space* object maps raw observations to the vectors the agent sees and
provides the goal distribution used for "prior" relabeling:

* :class:`LatentSpace` - VAE encoder mean, goals from the fitted prior (RIG);
* :class:`StateSpace` - ground-truth state vectors, goals uniform over the
  environment goal space (oracle and known-goal-space modes);
* :class:`PixelSpace` - raw flattened pixels, goals are rendered goal states
  (HER-style pixel baseline).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import envs
from .nn import Rng
from .vae import VARIANCE_FLOOR, FittedPrior, VaeModel, decode, sample_prior

SOURCE_STORED, SOURCE_FUTURE, SOURCE_PRIOR = 0, 1, 2


# -- relabeling strategies ---------------------------------------------------
@dataclass(frozen=True)
class NoRelabel:
    name = "none"


@dataclass(frozen=True)
class Future:
    """Goal = a state reached later in the same trajectory (HER "future").

    ``k`` is the HER replay ratio; with sample-time relabeling every drawn
    transition is relabeled so it only documents the setting.
    """
    k: int = 4
    name = "future"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Prior:
    name = "prior"


@dataclass(frozen=True)
class Mixture:
    """Prior goal with probability ``lam``, future goal otherwise."""
    lam: float = 0.5
    name = "mixture"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")


@dataclass(frozen=True)
class FutureOrUniformGoalSpace:
    """Known-goal-space variant: uniform goal with probability ``lam``, else future."""
    k: int = 4
    lam: float = 0.5
    name = "future_or_uniform"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")


RelabelStrategy = NoRelabel | Future | Prior | Mixture | FutureOrUniformGoalSpace


def make_strategy(name: str, lam: float = 0.5, k: int = 4) -> RelabelStrategy:
    table = {
        "none": lambda: NoRelabel(),
        "future": lambda: Future(k),
        "prior": lambda: Prior(),
        "vae": lambda: Prior(),
        "mixture": lambda: Mixture(lam),
        "future_or_uniform": lambda: FutureOrUniformGoalSpace(k, lam),
    }
    if name not in table:
        raise ValueError(f"unknown relabel strategy {name!r}")
    return table[name]()


def draw_sources(strategy: RelabelStrategy, n: int, rng: Rng) -> np.ndarray:
    """Per-row goal source codes (stored / future / prior) for ``n`` relabels."""
    if isinstance(strategy, NoRelabel):
        return np.full(n, SOURCE_STORED)
    if isinstance(strategy, Future):
        return np.full(n, SOURCE_FUTURE)
    if isinstance(strategy, Prior):
        return np.full(n, SOURCE_PRIOR)
    if isinstance(strategy, (Mixture, FutureOrUniformGoalSpace)):
        return np.where(rng.random(n) < strategy.lam, SOURCE_PRIOR, SOURCE_FUTURE)
    raise TypeError(f"not a relabel strategy: {strategy!r}")


# -- rewards ---------------------------------------------------------------
REWARD_KINDS = ("latent_euclid", "mahalanobis", "pixel_mse", "oracle_state", "sparse")


@dataclass(frozen=True)
class RewardType:
    kind: str = "latent_euclid"
    scale: float = 1e-4
    epsilon: float = 0.10

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward type {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("reward scale must be positive")
        if self.epsilon <= 0:
            raise ValueError("sparse epsilon must be positive")


def _require(rt: RewardType, **inputs) -> None:
    missing = [k for k, v in inputs.items() if v is None]
    if missing:
        raise ValueError(f"{rt.kind} reward needs {', '.join(missing)}")


def compute_rewards(rt: RewardType, z_next=None, z_goal=None, next_var=None,
                    next_image=None, goal_image=None, next_state=None, goal_state=None,
                    n_entities: int | None = None) -> np.ndarray:
    """Batched rewards; each row is one (next state, goal) pair.

    ``next_var`` is the encoder variance at the next state (Mahalanobis);
    images are flattened pixel rows (pixel MSE); states are rows of
    :meth:`EnvState.vector` (oracle and sparse).
    """
    if rt.kind == "latent_euclid":
        _require(rt, z_next=z_next, z_goal=z_goal)
        diff = np.asarray(z_next, dtype=np.float64) - z_goal
        return -rt.scale * np.sqrt((diff * diff).sum(-1))
    if rt.kind == "mahalanobis":
        _require(rt, z_next=z_next, z_goal=z_goal, next_var=next_var)
        diff = np.asarray(z_next, dtype=np.float64) - z_goal
        var = np.maximum(np.asarray(next_var, dtype=np.float64), VARIANCE_FLOOR)
        return -rt.scale * np.sqrt((diff * diff / var).sum(-1))
    if rt.kind == "pixel_mse":
        _require(rt, next_image=next_image, goal_image=goal_image)
        diff = np.asarray(next_image, dtype=np.float64) - goal_image
        return -rt.scale * (diff * diff).mean(-1)
    _require(rt, next_state=next_state, goal_state=goal_state)
    dist = envs.batch_eval_distance(next_state, goal_state, n_entities)
    if rt.kind == "oracle_state":
        return -rt.scale * dist
    return np.where(dist <= rt.epsilon, 0.0, -1.0)


def compute_reward(rt: RewardType, z_next=None, z_goal=None, next_var=None, next_image=None,
                   goal_image=None, next_state=None, goal_state=None) -> float:
    """Single-pair form of :func:`compute_rewards`."""
    def row(x):
        return None if x is None else np.atleast_2d(np.asarray(x, dtype=np.float64))

    r = compute_rewards(rt, row(z_next), row(z_goal), row(next_var), row(next_image),
                        row(goal_image), row(next_state), row(goal_state))
    return float(r[0])


def mahalanobis_distance(z, z_goal, var) -> np.ndarray:
    diff = np.asarray(z, dtype=np.float64) - z_goal
    return np.sqrt((diff * diff / np.asarray(var, dtype=np.float64)).sum(-1))


# -- observation spaces --------------------------------------------------------
class LatentSpace:
    """VAE encoder-mean representation with goals drawn from the fitted prior.

    ``version`` must be bumped (via :meth:`invalidate`) whenever the VAE
    parameters change; replay buffers use it to refresh cached encodings.
    """

    kind = "latent"
    cacheable = True

    def __init__(self, vae: VaeModel, prior: FittedPrior):
        self.vae = vae
        self.prior = prior
        self.version = 0

    def invalidate(self) -> None:
        self.version += 1

    @property
    def dim(self) -> int:
        return self.vae.latent_dim

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return self.vae.encode(obs)[0]

    def encode_with_var(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mean, logvar = self.vae.encode(obs)
        with np.errstate(over="ignore"):
            return mean, np.maximum(np.exp(logvar), VARIANCE_FLOOR)

    def sample_goals(self, n: int, rng: Rng) -> np.ndarray:
        return sample_prior(self.prior, rng, n)

    def goal_images(self, goals: np.ndarray) -> np.ndarray:
        return decode(self.vae, goals)


class StateSpace:
    """Ground-truth state vectors; goals uniform over the environment goal space."""

    kind = "state"
    cacheable = False

    def __init__(self, spec: envs.EnvSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.state_dim

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64).reshape(-1, self.dim)

    def sample_goals(self, n: int, rng: Rng) -> np.ndarray:
        return envs.sample_goal_vectors(self.spec, n, rng)


class PixelSpace:
    """Raw flattened pixels; goals are rendered goal states."""

    kind = "pixel"
    cacheable = False

    def __init__(self, spec: envs.EnvSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.n_pixels

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64).reshape(-1, self.dim)

    def sample_goals(self, n: int, rng: Rng) -> np.ndarray:
        if not n:
            return np.zeros((0, self.dim))
        return np.stack([envs.render(self.spec, envs.sample_goal_state(self.spec, rng)).reshape(-1)
                         for _ in range(n)])

    def goal_images(self, goals: np.ndarray) -> np.ndarray:
        return np.asarray(goals, dtype=np.float64)


# -- buffer ----------------------------------------------------------------
@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    stored_goal_latent: np.ndarray
    traj_id: int
    step_index: int
    traj_len: int
    state: np.ndarray | None = None
    next_state: np.ndarray | None = None


@dataclass
class Batch:
    z: np.ndarray
    action: np.ndarray
    z_next: np.ndarray
    z_goal: np.ndarray
    reward: np.ndarray
    slots: np.ndarray
    source: np.ndarray


class ReplayBuffer:
    """Ring storage of whole trajectories with FIFO eviction.

    Trajectories are kept contiguous. When one does not fit before the end of
    the ring, writing wraps to slot 0; every trajectory overlapping the slots
    being written is evicted as a unit.
    """

    def __init__(self, capacity: int, obs_dim: int, goal_dim: int, state_dim: int,
                 action_dim: int = 2, obs_dtype=np.uint8):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim, self.goal_dim, self.state_dim = obs_dim, goal_dim, state_dim
        self.obs_dtype = np.dtype(obs_dtype)
        c = self.capacity
        self.obs = np.zeros((c, obs_dim), dtype=self.obs_dtype)
        self.next_obs = np.zeros((c, obs_dim), dtype=self.obs_dtype)
        self.action = np.zeros((c, action_dim))
        self.goal = np.zeros((c, goal_dim))
        self.state = np.zeros((c, state_dim))
        self.next_state = np.zeros((c, state_dim))
        self.traj_id = np.full(c, -1, dtype=np.int64)
        self.step_index = np.zeros(c, dtype=np.int64)
        self.traj_len = np.zeros(c, dtype=np.int64)
        self.valid = np.zeros(c, dtype=bool)
        self.ptr = 0
        self._starts: dict[int, int] = {}
        self._valid_slots: np.ndarray | None = None
        # encodings of obs / next_obs under a cacheable space, keyed by its version
        self._cache_key: tuple | None = None
        self._cache: dict[str, np.ndarray] = {}
        self._dirty: list[np.ndarray] = []

    def __len__(self) -> int:
        return int(self.valid.sum())

    @property
    def trajectory_ids(self) -> list[int]:
        return sorted(self._starts)

    def _encode_obs(self, x) -> np.ndarray:
        x = np.asarray(x).reshape(-1)
        if x.size != self.obs_dim:
            raise ValueError(f"observation has {x.size} values, buffer expects {self.obs_dim}")
        if self.obs_dtype == np.uint8:
            return np.round(np.asarray(x, dtype=np.float64) * 255.0).astype(np.uint8)
        return x.astype(self.obs_dtype)

    def _decode_obs(self, x: np.ndarray) -> np.ndarray:
        if self.obs_dtype == np.uint8:
            return x.astype(np.float64) * (1.0 / 255.0)
        return x.astype(np.float64)

    def store_trajectory(self, transitions: Sequence[Transition]) -> None:
        n = len(transitions)
        if n == 0:
            raise ValueError("empty trajectory")
        if n > self.capacity:
            raise ValueError(f"trajectory of length {n} exceeds capacity {self.capacity}")
        tid = transitions[0].traj_id
        for i, t in enumerate(transitions):
            if t.traj_id != tid or t.step_index != i or t.traj_len != n:
                raise ValueError(
                    f"inconsistent trajectory metadata at position {i}: traj_id={t.traj_id}, "
                    f"step_index={t.step_index}, traj_len={t.traj_len} (expected {tid}, {i}, {n})")
        if tid in self._starts:
            raise ValueError(f"trajectory {tid} already stored")
        if self.ptr + n > self.capacity:
            self._evict(self.ptr, self.capacity)
            self.ptr = 0
        lo, hi = self.ptr, self.ptr + n
        self._evict(lo, hi)
        for i, t in enumerate(transitions):
            s = lo + i
            self.obs[s] = self._encode_obs(t.obs)
            self.next_obs[s] = self._encode_obs(t.next_obs)
            self.action[s] = t.action
            self.goal[s] = np.asarray(t.stored_goal_latent).reshape(-1)
            if t.state is not None:
                self.state[s] = t.state
            if t.next_state is not None:
                self.next_state[s] = t.next_state
        self.traj_id[lo:hi] = tid
        self.step_index[lo:hi] = np.arange(n)
        self.traj_len[lo:hi] = n
        self.valid[lo:hi] = True
        self._starts[tid] = lo
        self.ptr = hi
        self._valid_slots = None
        self._dirty.append(np.arange(lo, hi))

    def _evict(self, lo: int, hi: int) -> None:
        for tid in np.unique(self.traj_id[lo:hi][self.valid[lo:hi]]):
            start = self._starts.pop(int(tid))
            length = int(self.traj_len[start])
            self.valid[start:start + length] = False
            self.traj_id[start:start + length] = -1

    def valid_slots(self) -> np.ndarray:
        if self._valid_slots is None:
            self._valid_slots = np.flatnonzero(self.valid)
        return self._valid_slots

    def _sync_cache(self, space) -> None:
        key = (id(space), space.version)
        if key != self._cache_key:
            if not self._cache or self._cache["z"].shape[1] != space.dim:
                shape = (self.capacity, space.dim)
                self._cache = {k: np.zeros(shape) for k in ("z", "z_next", "var", "var_next")}
            dirty = self.valid_slots()
            self._cache_key = key
        elif self._dirty:
            dirty = np.concatenate(self._dirty)
        else:
            return
        self._dirty = []
        if dirty.size == 0:
            return
        raw = self._decode_obs(np.concatenate([self.obs[dirty], self.next_obs[dirty]]))
        mean, var = space.encode_with_var(raw)
        k = dirty.size
        self._cache["z"][dirty], self._cache["z_next"][dirty] = mean[:k], mean[k:]
        self._cache["var"][dirty], self._cache["var_next"][dirty] = var[:k], var[k:]

    def _encode_rows(self, space, slots, fut_slots, want_var):
        """Encodings of obs[slots], next_obs[slots], next_obs[fut_slots] (+ next-state variance)."""
        n = slots.size
        if getattr(space, "cacheable", False):
            self._sync_cache(space)
            c = self._cache
            var = c["var_next"][slots] if want_var else None
            return c["z"][slots], c["z_next"][slots], c["z_next"][fut_slots], var
        raw = self._decode_obs(np.concatenate([self.obs[slots], self.next_obs[slots], self.next_obs[fut_slots]]))
        if want_var:
            enc, var = space.encode_with_var(raw)
            var = var[n:2 * n]
        else:
            enc, var = space.encode(raw), None
        return enc[:n], enc[n:2 * n], enc[2 * n:], var

    def slot_of(self, traj_id: int, step_index: int) -> int:
        if traj_id not in self._starts:
            raise KeyError(f"trajectory {traj_id} not in buffer")
        start = self._starts[traj_id]
        if not 0 <= step_index < self.traj_len[start]:
            raise IndexError(f"step {step_index} outside trajectory {traj_id}")
        return start + step_index

    def get(self, traj_id: int, step_index: int) -> Transition:
        s = self.slot_of(traj_id, step_index)
        return Transition(self._decode_obs(self.obs[s]), self.action[s].copy(),
                          self._decode_obs(self.next_obs[s]), self.goal[s].copy(),
                          int(self.traj_id[s]), int(self.step_index[s]), int(self.traj_len[s]),
                          self.state[s].copy(), self.next_state[s].copy())

    def future_slots(self, slots: np.ndarray, rng: Rng) -> np.ndarray:
        """For each slot, a slot of the same trajectory at or after it.

        The goal is that slot's *next* observation, so the goal state index is
        uniform over ``step_index + 1 .. traj_len``.
        """
        step = self.step_index[slots]
        length = self.traj_len[slots]
        offset = (rng.random(len(slots)) * (length - step)).astype(np.int64)
        return slots + offset

    def relabel(self, traj_id: int, step_index: int, strategy: RelabelStrategy, space, rng: Rng) -> np.ndarray:
        """Goal for one stored transition under ``strategy`` (stored data untouched)."""
        slot = np.array([self.slot_of(traj_id, step_index)])
        src = draw_sources(strategy, 1, rng)[0]
        if src == SOURCE_STORED:
            return self.goal[slot[0]].copy()
        if src == SOURCE_PRIOR:
            return space.sample_goals(1, rng)[0]
        fut = self.future_slots(slot, rng)
        return space.encode(self._decode_obs(self.next_obs[fut]))[0]

    def sample_batch(self, n: int, strategy: RelabelStrategy, reward_type: RewardType, space,
                     rng: Rng) -> Batch:
        """Uniformly drawn (with replacement) transitions, relabeled and re-rewarded."""
        slots_all = self.valid_slots()
        if slots_all.size == 0:
            raise ValueError("sample_batch: replay buffer is empty")
        slots = slots_all[rng.integers(0, slots_all.size, size=n)]
        source = draw_sources(strategy, n, rng)
        fut_rows = np.flatnonzero(source == SOURCE_FUTURE)
        prior_rows = np.flatnonzero(source == SOURCE_PRIOR)
        fut_slots = self.future_slots(slots[fut_rows], rng) if fut_rows.size else fut_rows

        want_var = reward_type.kind == "mahalanobis"
        z, z_next, z_fut, var = self._encode_rows(space, slots, fut_slots, want_var)

        goals = self.goal[slots].copy()
        goals[fut_rows] = z_fut
        if prior_rows.size:
            goals[prior_rows] = space.sample_goals(prior_rows.size, rng)

        kw = {}
        if want_var:
            kw["next_var"] = var
        if reward_type.kind == "pixel_mse":
            kw["next_image"] = self._decode_obs(self.next_obs[slots])
            kw["goal_image"] = space.goal_images(goals)
        if reward_type.kind in ("oracle_state", "sparse"):
            if not isinstance(space, StateSpace):
                raise ValueError(f"{reward_type.kind} reward requires state observations")
            kw["next_state"] = self.next_state[slots]
            kw["goal_state"] = goals
        reward = compute_rewards(reward_type, z_next=z_next, z_goal=goals, **kw)
        return Batch(z, self.action[slots].copy(), z_next, goals, reward, slots, source)

    def observation_images(self, max_count: int | None = None, rng: Rng | None = None) -> np.ndarray:
        """Decoded stored observations (optionally a random subset)."""
        slots = self.valid_slots()
        if max_count is not None and slots.size > max_count:
            slots = np.sort(rng.choice(slots, size=max_count, replace=False))
        return self._decode_obs(self.obs[slots])
