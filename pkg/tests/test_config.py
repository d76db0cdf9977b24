import pytest

from rig.config import ConfigError, ExperimentConfig, config_from_dict, merge, to_dict


def test_defaults_follow_table_values():
    cfg = config_from_dict({})
    assert cfg.vae.beta == 5.0 and cfg.relabel.lam == 0.5
    assert cfg.rl.batch_size == 128 and cfg.rl.gamma == 0.99 and cfg.rl.tau == 0.01
    assert cfg.rl.policy_noise == 0.2 and cfg.rl.noise_clip == 0.5 and cfg.rl.policy_delay == 2
    assert cfg.rl.updates_per_step == 4 and cfg.reward.scale == 1e-4
    assert cfg.vae.finetune_period == 25 and cfg.env.horizon == 50


def test_roundtrip():
    cfg = config_from_dict({"env": {"kind": "pusher"}, "vae": {"hidden": [32, 32]}})
    assert config_from_dict(to_dict(cfg)) == cfg


@pytest.mark.parametrize("data,key", [
    ({"bogus": 1}, "bogus"),
    ({"env": {"nope": 1}}, "env.nope"),
    ({"env": {"horizon": -3}}, "env"),
    ({"episodes": -1}, "episodes"),
    ({"relabel": {"lam": 1.5}}, "relabel.lam"),
    ({"rl": {"gamma": 2.0}}, "rl"),
    ({"vae": {"latent_dim": 0}}, "vae.latent_dim"),
    ({"reward": {"kind": "sparse"}}, "reward.kind"),
    ({"rl": {"batch_size": "big"}}, "rl.batch_size"),
    ({"env": {"kind": "door"}}, "env.kind"),
    ({"variable_object_eval": True}, "variable_object_eval"),
])
def test_errors_name_the_key(data, key):
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.key == key


def test_merge_precedence():
    merged = merge({"a": 1, "b": {"c": 2, "d": 3}}, {"b": {"c": 5}})
    assert merged == {"a": 1, "b": {"c": 5, "d": 3}}


def test_total_steps():
    assert ExperimentConfig(episodes=10).total_steps == 500
