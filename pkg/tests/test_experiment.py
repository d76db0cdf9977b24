import dataclasses
import json

import numpy as np
import pytest

from rig import envs, rl
from rig.config import ExperimentConfig, config_from_dict
from rig.envs import EnvKind
from rig.experiment import (DivergenceError, build_space, collect_exploration_data, evaluate,
                            load_checkpoint, run_appendix_d, run_rig, run_variable_object_eval,
                            appendix_d_configs)
from rig.nn import make_rng


def tiny(tmp_path, **over):
    base = {
        "episodes": 2, "eval_interval": 10, "eval_episodes": 2, "output_dir": str(tmp_path / "run"),
        "env": {"kind": "reacher", "horizon": 5},
        "vae": {"latent_dim": 2, "hidden": [8], "pretrain_images": 20, "pretrain_epochs": 2,
                "finetune_period": 1, "finetune_epochs": 1, "finetune_images": 10},
        "rl": {"hidden": [8], "batch_size": 4, "updates_per_step": 1, "replay_capacity": 100},
    }
    for k, v in over.items():
        if isinstance(v, dict):
            base[k] = {**base.get(k, {}), **v}
        else:
            base[k] = v
    return config_from_dict(base)


def test_exploration_data_counts():
    cfg = config_from_dict({"vae": {"pretrain_images": 100}})
    imgs = collect_exploration_data(cfg, make_rng(0))
    assert imgs.shape == (100, 768)
    np.testing.assert_array_equal(imgs, collect_exploration_data(cfg, make_rng(0)))
    big = config_from_dict({"env": {"kind": "pusher"}})
    assert collect_exploration_data(big, make_rng(1)).shape == (10_000, 768)


def test_zero_episodes_gives_only_initial_row(tmp_path):
    report = run_rig(tiny(tmp_path, episodes=0))
    assert len(report.rows) == 1 and report.rows[0].env_steps == 0
    lines = (tmp_path / "run" / "progress.csv").read_text().splitlines()
    assert lines[0].startswith("env_steps,episode,mean_final_distance")
    assert len(lines) == 2


@pytest.mark.parametrize("observation,reward", [("latent", "latent_euclid"), ("latent", "mahalanobis"),
                                                ("latent", "pixel_mse"), ("state", "oracle_state"),
                                                ("state", "sparse"), ("pixel", "pixel_mse")])
def test_runs_are_byte_identical(tmp_path, observation, reward):
    cfg = tiny(tmp_path, observation=observation, reward={"kind": reward})
    run_rig(cfg)
    first = (tmp_path / "run" / "progress.csv").read_bytes()
    run_rig(dataclasses.replace(cfg, output_dir=str(tmp_path / "again")))
    assert (tmp_path / "again" / "progress.csv").read_bytes() == first
    assert first.count(b"\n") == 3  # header, step 0, step 10


def test_outputs_and_checkpoint(tmp_path):
    # no fine-tune after the last evaluation, so the saved model is the evaluated one
    cfg = tiny(tmp_path, vae={"finetune_period": 0})
    report = run_rig(cfg)
    out = tmp_path / "run"
    assert config_from_dict(json.loads((out / "config.json").read_text())) == cfg
    cfg2, agent, space = load_checkpoint(out / "checkpoint.npz")
    assert cfg2 == cfg
    row = evaluate(cfg, agent, space, 2, make_rng([cfg.seed, 7919]), env_steps=report.final.env_steps)
    assert row.distances == report.final.distances


def test_ablation_switches_share_one_path(tmp_path):
    for relabel in ("none", "future", "vae", "mixture"):
        for goals in ("prior", "env"):
            cfg = tiny(tmp_path, relabel={"strategy": relabel}, exploration_goals=goals)
            assert len(run_rig(cfg).rows) == 2


def test_online_vae_and_frozen_control(tmp_path):
    online = tiny(tmp_path, episodes=4, vae={"pretrain": False, "online": True, "online_interval": 10,
                                               "online_epochs": 1})
    report = run_rig(online)
    assert report.trainer.vae_trained
    frozen = dataclasses.replace(online, vae=dataclasses.replace(online.vae, train=False))
    report = run_rig(frozen)
    assert not report.trainer.vae_trained


def test_online_retrain_due_before_first_episode_waits(tmp_path):
    cfg = tiny(tmp_path, episodes=2, vae={"pretrain": False, "online": True, "online_interval": 3,
                                          "online_epochs": 1})
    assert run_rig(cfg).trainer.vae_trained


def zero_agent(space):
    a = rl.Agent(space.dim, space.dim, make_rng(0), config=rl.Td3Config(hidden=(4,)))
    a.policy.flat[:] = 0
    return a


def test_zero_policy_distance_is_stationary_distance():
    cfg = config_from_dict({"observation": "state", "reward": {"kind": "oracle_state"},
                            "env": {"kind": "pusher"}})
    space = build_space(cfg, None, None)
    row = evaluate(cfg, zero_agent(space), space, 20, make_rng(3))
    rng = make_rng(3)
    expected = []
    for _ in range(20):
        goal = envs.sample_goal_state(cfg.env, rng)
        start = envs.reset(cfg.env, rng)
        expected.append(envs.eval_distance(cfg.env, start, goal))
    np.testing.assert_allclose(row.distances, expected)


def test_metric_is_independent_of_observation_mode():
    state_cfg = config_from_dict({"observation": "state", "reward": {"kind": "oracle_state"}})
    pixel_cfg = config_from_dict({"observation": "pixel", "reward": {"kind": "pixel_mse"}})
    rows = []
    for cfg in (state_cfg, pixel_cfg):
        space = build_space(cfg, None, None)
        rows.append(evaluate(cfg, zero_agent(space), space, 10, make_rng(4)))
    assert rows[0].distances == rows[1].distances
    one = evaluate(state_cfg, zero_agent(build_space(state_cfg, None, None)),
                   build_space(state_cfg, None, None), 1, make_rng(5))
    assert one.distances == evaluate(state_cfg, zero_agent(build_space(state_cfg, None, None)),
                                     build_space(state_cfg, None, None), 1, make_rng(5)).distances


def test_variable_object_eval_strata():
    cfg = config_from_dict({"observation": "state", "reward": {"kind": "oracle_state"},
                            "env": {"kind": "multiobject", "horizon": 2}})
    space = build_space(cfg, None, None)
    report = run_variable_object_eval(cfg, zero_agent(space), space, make_rng(6))
    groups = report.by_object_count()
    assert sorted(groups) == [0, 1, 2]
    assert all(len(v) >= 60 for v in groups.values())
    assert sum(len(v) for v in groups.values()) == 300
    wrong = config_from_dict({"observation": "state", "reward": {"kind": "oracle_state"}})
    with pytest.raises(ValueError):
        run_variable_object_eval(wrong, zero_agent(space), space, make_rng(6))


def test_variable_object_eval_inside_run(tmp_path):
    cfg = tiny(tmp_path, env={"kind": "multiobject"}, variable_object_eval=True)
    report = run_rig(cfg)
    assert report.variable_objects is not None
    assert (tmp_path / "run" / "variable_objects.csv").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_aborts_with_diagnostic(tmp_path):
    cfg = tiny(tmp_path, rl={"critic_lr": 1e308, "actor_lr": 1e308})
    with pytest.raises(DivergenceError, match="env step"):
        run_rig(cfg)


def test_appendix_d_grid(tmp_path):
    base = tiny(tmp_path, episodes=1)
    grid = appendix_d_configs(base)
    assert len(grid) == 4
    for sub in grid.values():
        assert sub.observation == "state" and sub.env.kind is EnvKind.REACHER
    out = run_appendix_d(base, names=["future_or_uniform-sparse"])
    assert list(out) == ["future_or_uniform-sparse"]
    assert 0.0 <= out["future_or_uniform-sparse"].trailing_success() <= 1.0
