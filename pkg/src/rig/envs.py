"""Point-mass pixel environments: reacher, pusher and two-puck pusher.

The agent is a disc whose velocity is the (clipped) action times ``v_max``.
Pucks are pushed quasi-statically: any overlap left after the agent moves is
resolved by translating the puck along the center line by the penetration
depth. Pucks do not collide with each other.

All functions are pure over :class:`EnvState` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np

from .nn import Rng

WORKSPACE = 1.0
_MAX_RESOLVE_ITERS = 20


class EnvKind(str, Enum):
    REACHER = "reacher"
    PUSHER = "pusher"
    MULTI_OBJECT_PUSHER = "multiobject"

    @property
    def n_pucks(self) -> int:
        return {"reacher": 0, "pusher": 1, "multiobject": 2}[self.value]


@dataclass(frozen=True)
class EnvSpec:
    kind: EnvKind = EnvKind.REACHER
    horizon: int = 50
    v_max: float = 0.15
    agent_radius: float = 0.10
    puck_radius: float = 0.08
    success_threshold: float = 0.10
    image_size: int = 16
    # drawn disc sizes; 0 means "same as the physical radius"
    agent_render_radius: float = 0.0
    puck_render_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("v_max", "agent_radius", "puck_radius", "success_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.image_size < 2:
            raise ValueError("image_size must be >= 2")
        if self.agent_render_radius < 0 or self.puck_render_radius < 0:
            raise ValueError("render radii must be nonnegative")

    @property
    def drawn_radii(self) -> tuple[float, float]:
        return (self.agent_render_radius or self.agent_radius,
                self.puck_render_radius or self.puck_radius)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_size, self.image_size, 3)

    @property
    def n_pixels(self) -> int:
        return self.image_size * self.image_size * 3

    @property
    def state_dim(self) -> int:
        return 2 * (1 + self.kind.n_pucks)


@dataclass(frozen=True)
class EnvState:
    agent: tuple[float, float]
    pucks: tuple[tuple[float, float], ...] = ()
    n_active: int = field(default=-1)

    def __post_init__(self):
        object.__setattr__(self, "agent", (float(self.agent[0]), float(self.agent[1])))
        object.__setattr__(self, "pucks", tuple((float(p[0]), float(p[1])) for p in self.pucks))
        if self.n_active < 0:
            object.__setattr__(self, "n_active", len(self.pucks))
        if not 0 <= self.n_active <= len(self.pucks):
            raise ValueError("n_active out of range")

    @property
    def active_pucks(self) -> tuple[tuple[float, float], ...]:
        return self.pucks[:self.n_active]

    def vector(self) -> np.ndarray:
        """Agent position followed by every puck position (inactive ones included)."""
        return np.array([*self.agent, *(c for p in self.pucks for c in p)], dtype=np.float64)


def _clip(v: float) -> float:
    return min(max(v, -WORKSPACE), WORKSPACE)


def _uniform_point(rng: Rng, xlo=-WORKSPACE, xhi=WORKSPACE) -> tuple[float, float]:
    return (float(rng.uniform(xlo, xhi)), float(rng.uniform(-WORKSPACE, WORKSPACE)))


def _sample_layout(spec: EnvSpec, rng: Rng) -> EnvState:
    min_sep = spec.agent_radius + spec.puck_radius
    if spec.kind is EnvKind.REACHER:
        return EnvState(_uniform_point(rng))
    if spec.kind is EnvKind.PUSHER:
        halves = [(-WORKSPACE, WORKSPACE)]
    else:
        # each puck lives in its own half of the workspace
        halves = [(-WORKSPACE, 0.0), (0.0, WORKSPACE)]
    agent = _uniform_point(rng)
    pucks = []
    for lo, hi in halves:
        while True:
            p = _uniform_point(rng, lo, hi)
            if math.dist(p, agent) > min_sep:
                break
        pucks.append(p)
    return EnvState(agent, tuple(pucks))


def reset(spec: EnvSpec, rng: Rng) -> EnvState:
    return _sample_layout(spec, rng)


def sample_goal_state(spec: EnvSpec, rng: Rng) -> EnvState:
    return _sample_layout(spec, rng)


def sample_goal_vectors(spec: EnvSpec, n: int, rng: Rng) -> np.ndarray:
    """``n`` goals as :meth:`EnvState.vector` rows, distributed like :func:`sample_goal_state`."""
    min_sep = spec.agent_radius + spec.puck_radius
    agent = rng.uniform(-WORKSPACE, WORKSPACE, (n, 2))
    cols = [agent]
    halves = {EnvKind.REACHER: [], EnvKind.PUSHER: [(-WORKSPACE, WORKSPACE)],
              EnvKind.MULTI_OBJECT_PUSHER: [(-WORKSPACE, 0.0), (0.0, WORKSPACE)]}[spec.kind]
    for lo, hi in halves:
        puck = np.empty((n, 2))
        todo = np.arange(n)
        while todo.size:
            puck[todo, 0] = rng.uniform(lo, hi, todo.size)
            puck[todo, 1] = rng.uniform(-WORKSPACE, WORKSPACE, todo.size)
            # rejection sampling, as in the scalar version
            todo = todo[np.hypot(*(puck[todo] - agent[todo]).T) <= min_sep]
        cols.append(puck)
    return np.concatenate(cols, axis=1)


def step(spec: EnvSpec, state: EnvState, action) -> EnvState:
    ax = min(max(float(action[0]), -1.0), 1.0)
    ay = min(max(float(action[1]), -1.0), 1.0)
    agent = [_clip(state.agent[0] + spec.v_max * ax), _clip(state.agent[1] + spec.v_max * ay)]
    pucks = [list(p) for p in state.pucks]
    reach = spec.agent_radius + spec.puck_radius
    for _ in range(_MAX_RESOLVE_ITERS):
        moved = False
        for p in pucks[:state.n_active]:
            dx, dy = p[0] - agent[0], p[1] - agent[1]
            dist = math.hypot(dx, dy)
            depth = reach - dist
            if depth <= 0:
                continue
            moved = True
            if dist > 0:
                ux, uy = dx / dist, dy / dist
            else:
                ux, uy = (ax, ay) if (ax or ay) else (1.0, 0.0)
                norm = math.hypot(ux, uy)
                ux, uy = ux / norm, uy / norm
            # push the puck out along the center line, then back the agent off
            # by whatever the workspace boundary refused
            px, py = p[0] + ux * depth, p[1] + uy * depth
            p[0], p[1] = _clip(px), _clip(py)
            dist = math.hypot(p[0] - agent[0], p[1] - agent[1])
            residual = reach - dist
            if residual > 0:
                if dist > 0:
                    ux, uy = (p[0] - agent[0]) / dist, (p[1] - agent[1]) / dist
                agent[0] = _clip(agent[0] - ux * residual)
                agent[1] = _clip(agent[1] - uy * residual)
        if not moved:
            break
    return EnvState(tuple(agent), tuple(tuple(p) for p in pucks), state.n_active)


def penetration(spec: EnvSpec, state: EnvState) -> float:
    """Largest agent-puck overlap depth among active pucks (0 if none overlap)."""
    reach = spec.agent_radius + spec.puck_radius
    depths = [reach - math.dist(state.agent, p) for p in state.active_pucks]
    return max([0.0, *depths])


@lru_cache(maxsize=8)
def pixel_centers(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Workspace coordinates of pixel centers; row 0 is the top (y = +1)."""
    cell = 2.0 * WORKSPACE / size
    coords = -WORKSPACE + (np.arange(size) + 0.5) * cell
    xs = np.broadcast_to(coords[None, :], (size, size))
    ys = np.broadcast_to(coords[::-1, None], (size, size))
    return xs, ys


def _disc(size: int, center, radius: float) -> np.ndarray:
    xs, ys = pixel_centers(size)
    return ((xs - center[0]) ** 2 + (ys - center[1]) ** 2) <= radius * radius


def render(spec: EnvSpec, state: EnvState) -> np.ndarray:
    """Binary H x W x 3 image: agent in channel 0, puck i in channel i + 1."""
    img = np.zeros(spec.image_shape)
    ra, rp = spec.drawn_radii
    img[:, :, 0] = _disc(spec.image_size, state.agent, ra)
    for i, p in enumerate(state.active_pucks):
        img[:, :, i + 1] = _disc(spec.image_size, p, rp)
    return img


def eval_distance(spec: EnvSpec, state: EnvState, goal: EnvState) -> float:
    """Mean Euclidean distance of the agent and each active puck to its goal."""
    if state.n_active != goal.n_active:
        raise ValueError(f"object count mismatch: state has {state.n_active}, goal has {goal.n_active}")
    dists = [math.dist(state.agent, goal.agent)]
    dists += [math.dist(p, g) for p, g in zip(state.active_pucks, goal.active_pucks)]
    return float(np.mean(dists))


def batch_eval_distance(states: np.ndarray, goals: np.ndarray, n_entities: int | None = None) -> np.ndarray:
    """Vectorized :func:`eval_distance` over rows of :meth:`EnvState.vector`."""
    s = np.asarray(states, dtype=np.float64)
    g = np.asarray(goals, dtype=np.float64)
    k = s.shape[-1] // 2 if n_entities is None else n_entities
    diff = (s[..., :2 * k] - g[..., :2 * k]).reshape(*s.shape[:-1], k, 2)
    return np.sqrt((diff ** 2).sum(-1)).mean(-1)


def set_object_count(spec: EnvSpec, state: EnvState, count: int, rng: Rng | None = None) -> EnvState:
    """Deactivate pucks beyond ``count`` (MultiObjectPusher only).

    ``rng`` is accepted for interface symmetry; the choice of which pucks remain
    is deterministic (the first ``count``).
    """
    if spec.kind is not EnvKind.MULTI_OBJECT_PUSHER:
        raise ValueError(f"set_object_count requires the multiobject env, got {spec.kind.value}")
    if count not in (0, 1, 2):
        raise ValueError("count must be 0, 1 or 2")
    return replace(state, n_active=count)


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Dump an image as binary PPM (P6)."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    data = np.round(img * 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())
