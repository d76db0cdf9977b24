"""Multilayer perceptrons, seeded randomness and parameter files.

Every stochastic component in the package takes an explicit ``numpy.random.Generator``
built on the PCG64 bit generator (see :func:`make_rng`); nothing touches global
random state.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SIGMA_FLOOR = 1e-6
PARAM_FORMAT_VERSION = 1
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid", "split")

Rng = np.random.Generator


def make_rng(seed: int | Sequence[int]) -> Rng:
    """PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn(rng: Rng, n: int) -> list[Rng]:
    """Derive ``n`` independent child generators from ``rng``."""
    seeds = rng.integers(0, 2**63 - 1, size=n)
    return [make_rng(int(s)) for s in seeds]


class Mlp:
    """Fully connected network with relu hidden layers.

    ``output`` selects the head: ``identity``, ``tanh``, ``sigmoid``, or ``split``
    (identity output meant to be cut in two halves, e.g. mean and log-variance).
    """

    def __init__(self, widths: Sequence[int], output: str = "identity", rng: Rng | None = None):
        if len(widths) < 2 or any(int(w) <= 0 for w in widths):
            raise ValueError(f"Mlp widths must be >= 2 positive sizes, got {list(widths)}")
        if output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output!r}")
        self.widths = [int(w) for w in widths]
        self.output = output
        shapes = [(a, b) for a, b in zip(self.widths[:-1], self.widths[1:])]
        # all parameters are views into one flat buffer (cheap copies and Polyak steps)
        self.flat = np.zeros(sum(a * b + b for a, b in shapes))
        self.weights, self.biases = [], []
        offset = 0
        for a, b in shapes:
            self.weights.append(Tensor(self.flat[offset:offset + a * b].reshape(a, b), requires_grad=True))
            offset += a * b
            self.biases.append(Tensor(self.flat[offset:offset + b], requires_grad=True))
            offset += b
        if rng is not None:
            init_params(self, rng)

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return self.flat.size

    def _check_input(self, x_shape: tuple) -> None:
        if len(x_shape) != 2 or x_shape[-1] != self.widths[0]:
            raise ad.ShapeError("mlp_forward", x_shape, (None, self.widths[0]))

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        self._check_input(x.shape)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.linear(h, w, b)
            if i < last:
                h = ad.relu(h)
        if self.output == "tanh":
            h = ad.tanh(h)
        elif self.output == "sigmoid":
            h = ad.sigmoid(h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on plain arrays without recording a graph."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x.shape)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                np.maximum(h, 0.0, out=h)
        if self.output == "tanh":
            h = np.tanh(h)
        elif self.output == "sigmoid":
            h = ad._sigmoid(h)
        return h

    def copy(self) -> "Mlp":
        other = Mlp(self.widths, self.output)
        other.load_arrays(self.arrays())
        return other

    def arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def load_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.params
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.data.shape != np.shape(a):
                raise ad.ShapeError("load_arrays", p.data.shape, np.shape(a))
            p.data[...] = a


def mlp_forward(net: Mlp, x) -> Tensor:
    return net(x)


def init_params(net: Mlp, rng: Rng) -> None:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    for w, b in zip(net.weights, net.biases):
        bound = 1.0 / np.sqrt(w.data.shape[0])
        w.data[...] = rng.uniform(-bound, bound, size=w.data.shape)
        b.data[...] = 0.0


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    target.flat *= 1.0 - tau
    target.flat += tau * online.flat


def std_from_logvar(logvar: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.maximum(np.exp(0.5 * np.asarray(logvar, dtype=np.float64)), SIGMA_FLOOR)


def gaussian_sample(rng: Rng, mean: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Draw mean + sigma * eps, eps ~ N(0, I), sigma floored at ``SIGMA_FLOOR``."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mean.shape != logvar.shape:
        raise ad.ShapeError("gaussian_sample", mean.shape, logvar.shape)
    return mean + std_from_logvar(logvar) * rng.standard_normal(mean.shape)


def reparameterize(mean: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    """Differentiable mean + exp(logvar / 2) * eps with fixed noise ``eps``."""
    floor = 2.0 * np.log(SIGMA_FLOOR)
    sigma = ad.exp(ad.scale(ad.clip(logvar, floor, None), 0.5))
    return mean + sigma * eps


# -- parameter files -------------------------------------------------------
def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float arrays plus a JSON metadata blob to an ``.npz`` file.

    The archive carries ``__version__`` so readers can refuse unknown layouts.
    """
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__version__"] = np.array(PARAM_FORMAT_VERSION)
    payload["__meta__"] = np.array(json.dumps(meta or {}))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as f:
        version = int(f["__version__"])
        if version != PARAM_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported parameter format version {version}")
        meta = json.loads(str(f["__meta__"]))
        arrays = {k: f[k] for k in f.files if not k.startswith("__")}
    return arrays, meta


def mlp_state(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    return {f"{prefix}.{i}": a for i, a in enumerate(net.arrays())}


def load_mlp_state(prefix: str, net: Mlp, arrays: dict[str, np.ndarray]) -> None:
    net.load_arrays([arrays[f"{prefix}.{i}"] for i in range(len(net.params))])
