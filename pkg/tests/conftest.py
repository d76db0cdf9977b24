import numpy as np
import pytest

from rig import autodiff as ad


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f with respect to array x (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))))


def check_grad(build, inputs, eps: float = 1e-5) -> float:
    """Worst relative error between backprop and finite differences.

    ``build(*tensors)`` returns a Tensor; it is reduced with fixed random weights.
    """
    rng = np.random.default_rng(123)
    leaves = [ad.Tensor(x, requires_grad=True) for x in inputs]
    out = build(*leaves)
    w = rng.standard_normal(out.shape)
    loss = ad.sum_(out * w)
    loss.backward()

    def f():
        return float((build(*[ad.Tensor(l.data) for l in leaves]).data * w).sum())

    worst = 0.0
    for leaf in leaves:
        num = numeric_grad(f, leaf.data, eps)
        got = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        worst = max(worst, rel_error(got, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
