"""Goal-conditioned reinforcement learning on a VAE latent space.

Modules: ``autodiff`` (tape autodiff on numpy), ``nn`` (MLPs, RNG helpers),
``vae``, ``envs`` (pixel point-mass tasks), ``replay`` (relabeling buffer and
rewards), ``rl`` (TD3), ``experiment`` (training loop), ``presets``, ``plot``
and ``cli``.
"""

__version__ = "0.1.0"
