"""End-to-end training loop, evaluation protocol and result files.

``run_rig`` trains a goal-conditioned TD3 agent on top of a pluggable
observation space (VAE latent, ground-truth state or raw pixels) and writes
``config.json``, ``progress.csv``, ``eval_episodes.csv``, ``timing.csv`` and
``checkpoint.npz`` into the run's output directory. ``load_report`` reads a
finished run back.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envs, rl
from .config import ExperimentConfig, to_dict, validate
from .envs import EnvKind, EnvSpec, EnvState
from .nn import Rng, load_arrays, make_rng, save_arrays
from .replay import LatentSpace, PixelSpace, ReplayBuffer, StateSpace, Transition
from .vae import FittedPrior, VaeModel, fit_prior, fit_prior_to_latents, train_vae

log = logging.getLogger(__name__)

PROGRESS_COLUMNS = ("env_steps", "episode", "mean_final_distance", "median_final_distance",
                    "success_rate", "latent_return", "vae_loss", "critic_loss", "actor_objective",
                    "wall_time_s")
EPISODE_COLUMNS = ("env_steps", "episode", "final_distance", "success", "object_count")
EVAL_SEED_SALT = 7919


class DivergenceError(RuntimeError):
    """A loss became non-finite during training."""


@dataclass
class EvalRow:
    env_steps: int
    episode: int
    mean_final_distance: float
    median_final_distance: float
    success_rate: float
    latent_return: float
    distances: list[float] = field(default_factory=list, repr=False)
    successes: list[bool] = field(default_factory=list, repr=False)
    object_counts: list[int] = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    seed: int = 0
    name: str = ""
    variable_objects: "EvalReport | None" = field(default=None, repr=False)
    trainer: object = field(default=None, repr=False)

    @property
    def final(self) -> EvalRow:
        return self.rows[-1]

    def trailing_success(self, episodes: int = 100) -> float:
        """Success rate over the most recent ``episodes`` evaluation episodes."""
        flat = [s for row in self.rows for s in row.successes]
        tail = flat[-episodes:]
        return float(np.mean(tail)) if tail else 0.0

    def steps_to_reach(self, threshold: float, stat: str = "median_final_distance") -> int | None:
        for row in self.rows:
            if getattr(row, stat) <= threshold:
                return row.env_steps
        return None

    def by_object_count(self) -> dict[int, list[float]]:
        out: dict[int, list[float]] = {}
        for row in self.rows:
            for c, d in zip(row.object_counts, row.distances):
                out.setdefault(c, []).append(d)
        return out


# -- observation plumbing ------------------------------------------------------
def observe(cfg: ExperimentConfig, state: EnvState) -> np.ndarray:
    """Raw observation row handed to the observation space."""
    if cfg.observation == "state":
        return state.vector()
    return envs.render(cfg.env, state).reshape(-1)


def collect_exploration_data(cfg: ExperimentConfig, rng: Rng) -> np.ndarray:
    """Rendered observations from a uniform-random-action policy.

    Returns exactly ``cfg.vae.pretrain_images`` flattened images.
    """
    spec = cfg.env
    n = cfg.vae.pretrain_images
    per_reset = cfg.vae.explore_steps_per_reset or spec.horizon
    out = np.zeros((n, spec.n_pixels))
    i = 0
    while i < n:
        s = envs.reset(spec, rng)
        for _ in range(per_reset):
            if i >= n:
                break
            out[i] = envs.render(spec, s).reshape(-1)
            i += 1
            s = envs.step(spec, s, rng.uniform(-1.0, 1.0, size=2))
    return out


def build_space(cfg: ExperimentConfig, vae: VaeModel | None, prior: FittedPrior | None):
    if cfg.observation == "latent":
        return LatentSpace(vae, prior)
    if cfg.observation == "state":
        return StateSpace(cfg.env)
    return PixelSpace(cfg.env)


def _obs_dim(cfg: ExperimentConfig) -> int:
    return cfg.env.state_dim if cfg.observation == "state" else cfg.env.n_pixels


def _check_finite(what: str, value: float, step: int) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became {value} at env step {step}")
    return value


# -- evaluation ------------------------------------------------------------------
def evaluate(cfg: ExperimentConfig, agent: rl.Agent, space, episodes: int, rng: Rng,
             variable_objects: bool = False, env_steps: int = 0, episode: int = 0) -> EvalRow:
    """Noise-free rollouts towards encoded goal images; ground truth only for the metric."""
    spec = cfg.env
    dists, succ, counts, returns = [], [], [], []
    for _ in range(episodes):
        goal = envs.sample_goal_state(spec, rng)
        s = envs.reset(spec, rng)
        if variable_objects:
            count = int(rng.integers(0, 3))
            goal = envs.set_object_count(spec, goal, count)
            s = envs.set_object_count(spec, s, count)
        z_goal = space.encode(observe(cfg, goal)[None, :])[0]
        z = space.encode(observe(cfg, s)[None, :])[0]
        ret = 0.0
        for _ in range(spec.horizon):
            s = envs.step(spec, s, rl.act(agent, z, z_goal))
            z = space.encode(observe(cfg, s)[None, :])[0]
            ret -= float(np.linalg.norm(z - z_goal))
        d = envs.eval_distance(spec, s, goal)
        dists.append(d)
        succ.append(d <= spec.success_threshold)
        counts.append(s.n_active)
        returns.append(ret)
    return EvalRow(env_steps, episode, float(np.mean(dists)), float(np.median(dists)),
                   float(np.mean(succ)), float(np.mean(returns)), dists, succ, counts)


def run_variable_object_eval(cfg: ExperimentConfig, agent: rl.Agent, space, rng: Rng,
                             episodes: int = 300) -> EvalReport:
    """Evaluation with 0, 1 or 2 pucks drawn uniformly per episode."""
    if cfg.env.kind is not EnvKind.MULTI_OBJECT_PUSHER:
        raise ValueError("variable-object evaluation requires the multiobject env")
    row = evaluate(cfg, agent, space, episodes, rng, variable_objects=True)
    return EvalReport([row], cfg.seed, cfg.name)


# -- training --------------------------------------------------------------------
class _Trainer:
    """State for one run; split out of :func:`run_rig` to keep the loop readable."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        (self.env_rng, self.vae_rng, self.agent_rng, self.replay_rng,
         self.noise_rng, self.goal_rng) = [make_rng([cfg.seed, i]) for i in range(6)]
        self.spec: EnvSpec = cfg.env
        self.vae: VaeModel | None = None
        self.prior: FittedPrior | None = None
        self.data = np.zeros((0, self.spec.n_pixels))
        self.vae_loss = float("nan")
        self.vae_trained = False
        if cfg.observation == "latent":
            self._init_vae()
        self.space = build_space(cfg, self.vae, self.prior)
        self.agent = rl.Agent(self.space.dim, self.space.dim, self.agent_rng, config=cfg.rl.td3())
        self.noise = rl.OuNoise(2, self.noise_rng, cfg.rl.ou_theta, cfg.rl.ou_sigma)
        obs_dtype = np.float64 if cfg.observation == "state" else np.uint8
        self.buffer = ReplayBuffer(cfg.rl.replay_capacity, _obs_dim(cfg), self.space.dim,
                                   self.spec.state_dim, obs_dtype=obs_dtype)
        self.strategy = cfg.relabel.build()
        self.reward_type = cfg.reward.build()
        self.steps = 0
        self.episode = 0
        self.critic_losses: list[float] = []
        self.actor_objs: list[float] = []

    def _init_vae(self) -> None:
        v = self.cfg.vae
        self.vae = VaeModel(self.spec.n_pixels, v.latent_dim, v.beta, v.hidden, self.vae_rng)
        if v.pretrain:
            self.data = collect_exploration_data(self.cfg, self.env_rng)
            if v.train and v.pretrain_epochs:
                tl = train_vae(self.vae, self.data, v.pretrain_epochs, v.lr, self.vae_rng, v.batch_size,
                               warmup_epochs=v.warmup_epochs)
                self.vae_loss = _check_finite("vae loss", tl.loss[-1], 0)
                self.vae_trained = True
            self.prior = fit_prior(self.vae, self.data)
        else:
            # no data yet: refit from observed images before each episode until the first training
            self.prior = FittedPrior(np.zeros(v.latent_dim), np.ones(v.latent_dim))

    # -- VAE maintenance
    def _retrain(self, images: np.ndarray, epochs: int) -> None:
        v = self.cfg.vae
        if epochs and v.train:
            warmup = 0 if self.vae_trained else v.warmup_epochs
            tl = train_vae(self.vae, images, epochs, v.lr, self.vae_rng, v.batch_size, warmup_epochs=warmup)
            self.vae_loss = _check_finite("vae loss", tl.loss[-1], self.steps)
            self.vae_trained = True
        self.space.prior = fit_prior(self.vae, images)
        self.space.invalidate()

    def _finetune(self) -> None:
        v = self.cfg.vae
        n_data = int(round(v.finetune_images * v.finetune_data_fraction)) if len(self.data) else 0
        n_data = min(n_data, len(self.data))
        n_buf = min(v.finetune_images - n_data, len(self.buffer))
        parts = []
        if n_data:
            parts.append(self.data[self.vae_rng.choice(len(self.data), n_data, replace=False)])
        if n_buf:
            parts.append(self.buffer.observation_images(n_buf, self.vae_rng))
        if parts:
            self._retrain(np.concatenate(parts), v.finetune_epochs)

    def _online_refit_prior(self, first_obs: np.ndarray) -> None:
        imgs = self.buffer.observation_images(self.cfg.vae.online_max_images, self.vae_rng) \
            if len(self.buffer) else first_obs[None, :]
        self.space.prior = fit_prior_to_latents(self.space.encode(imgs))

    def _online_train(self) -> None:
        v = self.cfg.vae
        imgs = self.buffer.observation_images(v.online_max_images, self.vae_rng)
        self._retrain(imgs, v.online_epochs)

    # -- rollouts
    def _episode_goal(self) -> np.ndarray:
        if self.cfg.exploration_goals == "prior":
            return self.space.sample_goals(1, self.goal_rng)[0]
        goal = envs.sample_goal_state(self.spec, self.goal_rng)
        return self.space.encode(observe(self.cfg, goal)[None, :])[0]

    def run_episode(self, on_step) -> None:
        cfg, spec = self.cfg, self.spec
        s = envs.reset(spec, self.env_rng)
        obs = observe(cfg, s)
        if cfg.observation == "latent" and cfg.vae.online and not self.vae_trained:
            self._online_refit_prior(obs)
        z_goal = self._episode_goal()
        z = self.space.encode(obs[None, :])[0]
        self.noise.reset()
        traj = []
        for t in range(spec.horizon):
            a = rl.act(self.agent, z, z_goal, self.noise)
            s2 = envs.step(spec, s, a)
            obs2 = observe(cfg, s2)
            traj.append(Transition(obs, a, obs2, z_goal, self.episode, t, spec.horizon,
                                   s.vector(), s2.vector()))
            s, obs = s2, obs2
            z = self.space.encode(obs[None, :])[0]
            self.steps += 1
            self._train_updates()
            on_step()
        self.buffer.store_trajectory(traj)
        self.episode += 1

    def _train_updates(self) -> None:
        if len(self.buffer) == 0:
            return
        cfg = self.cfg
        for _ in range(cfg.rl.updates_per_step):
            batch = self.buffer.sample_batch(cfg.rl.batch_size, self.strategy, self.reward_type,
                                             self.space, self.replay_rng)
            closs, aobj = rl.train_step(self.agent, batch, self.replay_rng)
            self.critic_losses.append(_check_finite("critic loss", closs, self.steps))
            if aobj is not None:
                self.actor_objs.append(_check_finite("actor objective", aobj, self.steps))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.10g}"


def run_rig(cfg: ExperimentConfig, record_wall_time: bool = False) -> EvalReport:
    """Train one configuration end to end and return its evaluation report.

    ``progress.csv`` is rewritten after every evaluation. The ``wall_time_s``
    column is left empty unless ``record_wall_time`` is set so that identical
    configurations produce byte-identical files; timings always go to
    ``timing.csv``.
    """
    validate(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
    t0 = time.perf_counter()
    tr = _Trainer(cfg)
    report = EvalReport(seed=cfg.seed, name=cfg.name)
    csv_rows: list[list[str]] = []
    episode_rows: list[list[str]] = []
    timings: list[tuple[int, float]] = []

    def do_eval():
        eval_rng = make_rng([cfg.seed, EVAL_SEED_SALT])
        row = evaluate(cfg, tr.agent, tr.space, cfg.eval_episodes, eval_rng, env_steps=tr.steps,
                       episode=tr.episode)
        report.rows.append(row)
        closs = float(np.mean(tr.critic_losses)) if tr.critic_losses else float("nan")
        aobj = float(np.mean(tr.actor_objs)) if tr.actor_objs else float("nan")
        tr.critic_losses.clear()
        tr.actor_objs.clear()
        wall = time.perf_counter() - t0
        timings.append((tr.steps, wall))
        csv_rows.append([_fmt(v) for v in (row.env_steps, row.episode, row.mean_final_distance,
                                            row.median_final_distance, row.success_rate,
                                            row.latent_return, tr.vae_loss, closs, aobj,
                                            wall if record_wall_time else None)])
        _write_csv(out / "progress.csv", PROGRESS_COLUMNS, csv_rows)
        episode_rows.extend([str(row.env_steps), str(i), _fmt(d), str(int(ok)), str(c)]
                            for i, (d, ok, c) in enumerate(zip(row.distances, row.successes, row.object_counts)))
        _write_csv(out / "eval_episodes.csv", EPISODE_COLUMNS, episode_rows)
        _write_csv(out / "timing.csv", ("env_steps", "wall_time_s"),
                   [[str(s), f"{w:.3f}"] for s, w in timings])
        log.info("%s seed=%d step=%d mean=%.3f median=%.3f success=%.2f", cfg.name, cfg.seed,
                 row.env_steps, row.mean_final_distance, row.median_final_distance, row.success_rate)

    # a retrain due before the first episode is stored waits for the episode end
    deferred = []

    def on_step():
        v = cfg.vae
        if cfg.observation == "latent" and v.online and tr.steps % v.online_interval == 0:
            if len(tr.buffer):
                tr._online_train()
            else:
                deferred.append(tr.steps)
        if tr.steps % cfg.eval_interval == 0:
            do_eval()

    do_eval()
    for _ in range(cfg.episodes):
        tr.run_episode(on_step)
        if deferred:
            deferred.clear()
            tr._online_train()
        v = cfg.vae
        if (cfg.observation == "latent" and not v.online and v.finetune_period
                and tr.episode % v.finetune_period == 0):
            tr._finetune()
    if tr.steps % cfg.eval_interval != 0:
        do_eval()
    if cfg.variable_object_eval:
        vo = run_variable_object_eval(cfg, tr.agent, tr.space, make_rng([cfg.seed, EVAL_SEED_SALT, 1]))
        vo.rows[0].env_steps = tr.steps
        _write_variable_object_csv(out / "variable_objects.csv", vo)
        report.variable_objects = vo
    if cfg.save_checkpoint:
        save_checkpoint(out / "checkpoint.npz", cfg, tr)
    report.trainer = tr
    return report


def load_report(run_dir: str | Path) -> EvalReport:
    """Rebuild the report of a finished run from its CSV files."""
    run_dir = Path(run_dir)
    cfg = json.loads((run_dir / "config.json").read_text())
    with open(run_dir / "progress.csv", newline="") as fh:
        progress = list(csv.DictReader(fh))
    with open(run_dir / "eval_episodes.csv", newline="") as fh:
        episodes = list(csv.DictReader(fh))
    report = EvalReport(seed=cfg["seed"], name=cfg["name"])
    for r in progress:
        steps = int(r["env_steps"])
        mine = [e for e in episodes if int(e["env_steps"]) == steps]
        report.rows.append(EvalRow(steps, int(r["episode"]), float(r["mean_final_distance"]),
                                   float(r["median_final_distance"]), float(r["success_rate"]),
                                   float(r["latent_return"]),
                                   [float(e["final_distance"]) for e in mine],
                                   [e["success"] == "1" for e in mine],
                                   [int(e["object_count"]) for e in mine]))
    vo = run_dir / "variable_objects_episodes.csv"
    if vo.is_file():
        with open(vo, newline="") as fh:
            eps = list(csv.DictReader(fh))
        d = [float(e["final_distance"]) for e in eps]
        row = EvalRow(int(eps[0]["env_steps"]) if eps else 0, 0, float(np.mean(d)), float(np.median(d)),
                      float(np.mean([e["success"] == "1" for e in eps])), float("nan"), d,
                      [e["success"] == "1" for e in eps], [int(e["object_count"]) for e in eps])
        report.variable_objects = EvalReport([row], report.seed, report.name)
    return report


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def _write_variable_object_csv(path: Path, report: EvalReport) -> None:
    groups = report.by_object_count()
    rows = [[str(c), str(len(d)), _fmt(float(np.mean(d))), _fmt(float(np.median(d)))]
            for c, d in sorted(groups.items())]
    _write_csv(path, ("object_count", "episodes", "mean_final_distance", "median_final_distance"), rows)
    row = report.final
    _write_csv(path.with_name("variable_objects_episodes.csv"), EPISODE_COLUMNS,
               [[str(row.env_steps), str(i), _fmt(d), str(int(ok)), str(c)]
                for i, (d, ok, c) in enumerate(zip(row.distances, row.successes, row.object_counts))])


# -- checkpoints -------------------------------------------------------------------
def save_checkpoint(path: Path, cfg: ExperimentConfig, tr: _Trainer) -> None:
    arrays = {f"agent/{k}": v for k, v in tr.agent.state().items()}
    if tr.vae is not None:
        arrays.update({f"vae/{k}": v for k, v in tr.vae.state().items()})
        arrays["prior/mean"] = tr.space.prior.mean
        arrays["prior/variance"] = tr.space.prior.variance
    save_arrays(path, arrays, {"config": to_dict(cfg), "env_steps": tr.steps, "episode": tr.episode})


def load_checkpoint(path: str | Path):
    """Rebuild ``(cfg, agent, space)`` from a checkpoint file."""
    from .config import config_from_dict

    arrays, meta = load_arrays(path)
    cfg = config_from_dict(meta["config"])
    vae = prior = None
    if cfg.observation == "latent":
        v = cfg.vae
        vae = VaeModel(cfg.env.n_pixels, v.latent_dim, v.beta, v.hidden)
        vae.load_state({k[4:]: a for k, a in arrays.items() if k.startswith("vae/")})
        prior = FittedPrior(arrays["prior/mean"], arrays["prior/variance"])
    space = build_space(cfg, vae, prior)
    agent = rl.Agent(space.dim, space.dim, make_rng(0), config=cfg.rl.td3())
    agent.load_state({k[6:]: a for k, a in arrays.items() if k.startswith("agent/")})
    return cfg, agent, space


# -- known-goal-space comparison -----------------------------------------------------
APPENDIX_D_GRID = (("future", "sparse"), ("future", "oracle_state"),
                   ("future_or_uniform", "sparse"), ("future_or_uniform", "oracle_state"))


def appendix_d_configs(cfg: ExperimentConfig) -> dict[str, ExperimentConfig]:
    """State-observation reach runs for each (strategy, reward) pair of the comparison."""
    out = {}
    for strategy, reward in APPENDIX_D_GRID:
        name = f"{strategy}-{reward}"
        out[name] = dataclasses.replace(
            cfg, name=name, observation="state", exploration_goals="env",
            env=dataclasses.replace(cfg.env, kind=EnvKind.REACHER),
            relabel=dataclasses.replace(cfg.relabel, strategy=strategy),
            reward=dataclasses.replace(cfg.reward, kind=reward),
            output_dir=str(Path(cfg.output_dir) / name))
    return out


def run_appendix_d(cfg: ExperimentConfig, names=None) -> dict[str, EvalReport]:
    """Run the strategy x reward grid; each report's ``trailing_success()`` is the headline."""
    out = {}
    for name, sub in appendix_d_configs(cfg).items():
        if names is None or name in names:
            out[name] = run_rig(sub)
    return out
