"""beta-VAE over flattened binary-ish images.

Gaussian encoder producing ``[mean | logvar]``, Bernoulli decoder producing
per-pixel logits. The deterministic state encoding is the encoder mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .nn import SIGMA_FLOOR, Mlp, Rng, load_mlp_state, mlp_state, reparameterize

VARIANCE_FLOOR = SIGMA_FLOOR**2
PRIOR_VARIANCE_FLOOR = 1e-6


@dataclass
class DiagGaussian:
    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mean.shape != self.logvar.shape:
            raise ad.ShapeError("DiagGaussian", self.mean.shape, self.logvar.shape)

    @property
    def variance(self) -> np.ndarray:
        return np.maximum(np.exp(self.logvar), VARIANCE_FLOOR)


@dataclass
class FittedPrior:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.maximum(np.asarray(self.variance, dtype=np.float64), PRIOR_VARIANCE_FLOOR)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class TrainingLog:
    loss: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    bce: list[float] = field(default_factory=list)


class VaeModel:
    def __init__(self, n_pixels: int, latent_dim: int, beta: float = 5.0,
                 hidden: Sequence[int] = (64, 64), rng: Rng | None = None):
        if latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        self.n_pixels = int(n_pixels)
        self.latent_dim = int(latent_dim)
        self.beta = float(beta)
        self.hidden = tuple(int(h) for h in hidden)
        self.encoder = Mlp([self.n_pixels, *self.hidden, 2 * self.latent_dim], "split", rng)
        self.decoder = Mlp([self.latent_dim, *self.hidden, self.n_pixels], "identity", rng)

    @property
    def params(self):
        return self.encoder.params + self.decoder.params

    def state(self) -> dict[str, np.ndarray]:
        return {**mlp_state("encoder", self.encoder), **mlp_state("decoder", self.decoder)}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        load_mlp_state("encoder", self.encoder, arrays)
        load_mlp_state("decoder", self.decoder, arrays)

    def encode(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Encoder mean and log-variance for a batch of images."""
        out = self.encoder.predict(_flatten(self, images))
        d = self.latent_dim
        return out[:, :d], out[:, d:]


def _flatten(model: VaeModel, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim >= 2 and x[0].size == model.n_pixels:
        return x.reshape(x.shape[0], model.n_pixels)
    if x.size == model.n_pixels:
        return x.reshape(1, model.n_pixels)
    raise ad.ShapeError("vae input", x.shape, (model.n_pixels,))


def _check_pixels(x: np.ndarray) -> None:
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")


def kl_to_unit_gaussian(mean: ad.Tensor, logvar: ad.Tensor) -> ad.Tensor:
    """Per-row KL(N(mean, exp(logvar)) || N(0, I)), summed over latent dims."""
    inner = ad.exp(logvar) + ad.square(mean) - logvar
    return ad.scale(ad.sum_(inner, axis=-1) - mean.shape[-1], 0.5)


def vae_loss(model: VaeModel, batch, rng: Rng, eps: np.ndarray | None = None,
             beta: float | None = None):
    """beta * KL + BCE, averaged over the batch, with one reparameterized sample per image.

    Returns ``(loss, kl, bce)`` where ``loss`` is a differentiable scalar node and
    ``kl``/``bce`` are batch-mean floats. ``eps`` fixes the reparameterization noise;
    ``beta`` overrides ``model.beta``.
    """
    x = _flatten(model, batch)
    _check_pixels(x)
    n, d = x.shape[0], model.latent_dim
    enc = model.encoder(x)
    mean, logvar = enc[:, :d], enc[:, d:]
    if eps is None:
        eps = rng.standard_normal((n, d))
    z = reparameterize(mean, logvar, eps)
    logits = model.decoder(z)
    kl = ad.mean(kl_to_unit_gaussian(mean, logvar))
    bce = ad.scale(ad.sum_(ad.bce_with_logits(logits, x)), 1.0 / n)
    loss = ad.scale(kl, model.beta if beta is None else beta) + bce
    return loss, float(kl.data), float(bce.data)


def train_vae(model: VaeModel, dataset, epochs: int, lr: float, rng: Rng,
              batch_size: int = 64, optimizer: ad.Adam | None = None,
              warmup_epochs: int = 0) -> TrainingLog:
    """Adam on shuffled minibatches; returns per-epoch means of loss, KL and BCE.

    With ``warmup_epochs`` the KL weight ramps linearly from 0 to ``model.beta``
    over that many epochs, which keeps the posterior from collapsing onto the
    prior before the decoder has learned anything.
    """
    x = _flatten(model, dataset) if np.size(dataset) else np.zeros((0, model.n_pixels))
    if x.shape[0] == 0:
        raise ValueError("train_vae: empty dataset")
    _check_pixels(x)
    opt = optimizer or ad.Adam(model.params, lr=lr)
    log = TrainingLog()
    n = x.shape[0]
    for epoch in range(int(epochs)):
        beta = model.beta * min(1.0, epoch / warmup_epochs) if warmup_epochs else model.beta
        order = rng.permutation(n)
        tot = np.zeros(3)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            loss, kl, bce = vae_loss(model, x[idx], rng, beta=beta)
            loss.backward()
            opt.step()
            tot += len(idx) * np.array([float(loss.data), kl, bce])
        tot /= n
        log.loss.append(float(tot[0]))
        log.kl.append(float(tot[1]))
        log.bce.append(float(tot[2]))
    return log


def encode_mean(model: VaeModel, image) -> np.ndarray:
    """Deterministic encoding: the encoder mean. A single image gives a 1-D latent."""
    single = np.size(image) == model.n_pixels
    mean, _ = model.encode(image)
    return mean[0] if single else mean


def fit_prior(model: VaeModel, dataset) -> FittedPrior:
    if np.size(dataset) == 0:
        raise ValueError("fit_prior: empty dataset")
    return fit_prior_to_latents(model.encode(dataset)[0])


def fit_prior_to_latents(latents: np.ndarray) -> FittedPrior:
    """Per-dimension mean and population variance, variance floored."""
    z = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if z.shape[0] == 0:
        raise ValueError("fit_prior: empty dataset")
    return FittedPrior(z.mean(axis=0), z.var(axis=0))


def sample_prior(prior: FittedPrior, rng: Rng, n: int | None = None) -> np.ndarray:
    shape = prior.mean.shape if n is None else (n, prior.dim)
    return prior.mean + np.sqrt(prior.variance) * rng.standard_normal(shape)


def decode(model: VaeModel, z) -> np.ndarray:
    """Per-pixel Bernoulli means (flattened) for a latent or batch of latents."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if z.shape[-1] != model.latent_dim:
        raise ad.ShapeError("decode", z.shape, (model.latent_dim,))
    logits = model.decoder.predict(z.reshape(-1, model.latent_dim))
    probs = ad._sigmoid(logits)
    return probs[0] if single else probs
