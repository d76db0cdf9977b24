"""Named experiment presets and the variant grids used by ``rig ablate``.

A preset is a partial config dict merged over the defaults. Ablation presets
also carry a grid: variant name -> further overrides.
"""
from __future__ import annotations

from .config import ExperimentConfig, config_from_dict, merge

# The library default reward scale is tiny; at that scale the critic targets
# sit well below the network's initial output noise, so the presets use 1.
_REWARD = {"scale": 1.0}

# Small rendered discs carry too few lit pixels for an MLP VAE at 16x16 to
# localize them, so the pixel presets draw the agent and pucks larger than
# their physical size.
_PIXEL_ENV = {"agent_render_radius": 0.6, "puck_render_radius": 0.5}

# Latent size matches the scene's degrees of freedom. Spare dimensions let the
# fitted prior put most of its mass off the set of reachable encodings, so
# sampled goals become unreachable and final distances stall.
REACHER = {
    "name": "rig-reacher",
    "episodes": 400,
    "eval_interval": 2000,
    "env": {"kind": "reacher", **_PIXEL_ENV},
    "reward": _REWARD,
    "vae": {"latent_dim": 2, "pretrain_images": 100, "pretrain_epochs": 300,
            "explore_steps_per_reset": 1, "finetune_epochs": 10},
}

PUSHER = {
    "name": "rig-pusher",
    "episodes": 1000,
    "eval_interval": 5000,
    "env": {"kind": "pusher", **_PIXEL_ENV},
    "reward": _REWARD,
    "vae": {"latent_dim": 4, "pretrain_images": 10_000, "pretrain_epochs": 50,
            "explore_steps_per_reset": 10, "finetune_epochs": 3},
}

MULTI = merge(PUSHER, {"name": "rig-multiobject", "env": {"kind": "multiobject"}, "vae": {"latent_dim": 6}})

PRESETS: dict[str, dict] = {
    "rig-reacher": REACHER,
    "rig-pusher": PUSHER,
    "rig-multiobject": MULTI,
    "ablate-reward": merge(REACHER, {"name": "ablate-reward"}),
    "ablate-relabel": merge(PUSHER, {"name": "ablate-relabel"}),
    "ablate-online-vae": merge(REACHER, {
        "name": "ablate-online-vae", "episodes": 600, "eval_interval": 3000,
        "vae": {"pretrain": False, "online": True, "online_interval": 3000, "online_epochs": 10},
    }),
    "baseline-her-pixel": merge(REACHER, {
        "name": "baseline-her-pixel", "observation": "pixel", "exploration_goals": "env",
        "reward": {"kind": "pixel_mse"}, "relabel": {"strategy": "future"},
    }),
    "baseline-oracle": merge(REACHER, {
        "name": "baseline-oracle", "observation": "state", "exploration_goals": "env",
        "reward": {"kind": "oracle_state"},
    }),
    "variable-objects": merge(MULTI, {"name": "variable-objects", "variable_object_eval": True}),
    "appendix-d": {
        "name": "appendix-d", "observation": "state", "exploration_goals": "env",
        "episodes": 600, "eval_interval": 2000,
        "env": {"kind": "reacher"},
        "relabel": {"strategy": "future_or_uniform", "lam": 0.5, "k": 4},
        "reward": {"kind": "sparse"},
    },
}

GRIDS: dict[str, dict[str, dict]] = {
    "ablate-reward": {
        "latent_euclid": {"reward": {"kind": "latent_euclid"}},
        "mahalanobis": {"reward": {"kind": "mahalanobis"}},
        "pixel_mse": {"reward": {"kind": "pixel_mse"}},
    },
    "ablate-relabel": {
        "none": {"relabel": {"strategy": "none"}},
        "future": {"relabel": {"strategy": "future"}},
        "vae": {"relabel": {"strategy": "vae"}},
        "rig": {"relabel": {"strategy": "mixture", "lam": 0.5}},
    },
    "ablate-online-vae": {
        "online": {},
        "untrained": {"vae": {"train": False}},
    },
    "appendix-d": {
        "future-sparse": {"relabel": {"strategy": "future"}, "reward": {"kind": "sparse"}},
        "future-oracle_state": {"relabel": {"strategy": "future"}, "reward": {"kind": "oracle_state"}},
        "future_or_uniform-sparse": {"reward": {"kind": "sparse"}},
        "future_or_uniform-oracle_state": {"reward": {"kind": "oracle_state"}},
    },
}


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name]


def variants(name: str) -> dict[str, dict]:
    """Override dicts for each run of the preset's grid (a single run if it has none)."""
    return GRIDS.get(name, {"default": {}})


def resolve(name: str, overrides: dict | None = None, variant: str | None = None) -> ExperimentConfig:
    data = preset_dict(name)
    if variant is not None:
        data = merge(data, variants(name)[variant])
    return config_from_dict(merge(data, overrides or {}))
