import numpy as np
import pytest

from rig import autodiff as ad
from conftest import check_grad

CASES = 100
TOL = 1e-4


def away_from(x, points, margin=1e-3):
    """Nudge entries away from kinks so finite differences stay on one side."""
    x = x.copy()
    for p in points:
        near = np.abs(x - p) < margin
        x[near] = p + np.where(x[near] >= p, margin, -margin) * 2
    return x


def random_shape(rng):
    return tuple(int(s) for s in rng.integers(1, 4, size=rng.integers(1, 3)))


def unary_case(rng, name):
    shape = random_shape(rng)
    x = rng.standard_normal(shape)
    if name in ("log", "sqrt"):
        x = np.abs(x) + 0.2
    if name == "relu":
        x = away_from(x, [0.0])
    if name == "clip":
        x = away_from(x, [-0.5, 0.5])
    return x


UNARY = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "log": ad.log,
    "square": ad.square,
    "sqrt": ad.sqrt,
    "softplus": ad.softplus,
    "clip": lambda a: ad.clip(a, -0.5, 0.5),
    "scale": lambda a: ad.scale(a, -2.5),
    "neg": lambda a: -a,
    "sum_all": lambda a: ad.sum_(a),
    "sum_axis": lambda a: ad.sum_(a, axis=-1),
    "mean": lambda a: ad.mean(a),
    "sqnorm": ad.sqnorm,
    "reshape": lambda a: ad.reshape(a, (-1,)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    worst = max(check_grad(UNARY[name], [unary_case(rng, name)]) for _ in range(CASES))
    assert worst < TOL


BINARY = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
    "minimum": ad.minimum,
    "maximum": ad.maximum,
    "bce_with_logits": ad.bce_with_logits,
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    rng = np.random.default_rng(len(name))
    worst = 0.0
    for _ in range(CASES):
        shape = random_shape(rng)
        a = rng.standard_normal(shape)
        if name == "bce_with_logits":
            b = rng.uniform(0, 1, shape)
        else:
            # broadcast the second operand along the leading axis half the time
            b = rng.standard_normal(shape[1:] if len(shape) > 1 and rng.random() < 0.5 else shape)
        if name in ("minimum", "maximum"):
            b = b + np.where(np.abs(np.broadcast_to(b, a.shape) - a).min() < 1e-3, 0.01, 0.0)
        worst = max(worst, check_grad(BINARY[name], [a, b]))
    assert worst < TOL


def test_matmul_and_linear_gradients():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(CASES):
        n, k, m = rng.integers(1, 5, size=3)
        x, w, b = rng.standard_normal((n, k)), rng.standard_normal((k, m)), rng.standard_normal(m)
        worst = max(worst, check_grad(ad.matmul, [x, w]), check_grad(ad.linear, [x, w, b]))
    assert worst < TOL


def test_structural_gradients():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(CASES):
        n = int(rng.integers(1, 4))
        a, b = rng.standard_normal((n, 2)), rng.standard_normal((n, 3))
        worst = max(worst, check_grad(lambda p, q: ad.concat([p, q]), [a, b]))
        worst = max(worst, check_grad(lambda p: ad.slice_(p, (slice(None), slice(1, 3))), [b]))
        idx = rng.integers(0, n, size=4)
        worst = max(worst, check_grad(lambda p: ad.slice_(p, idx), [a]))
    assert worst < TOL


def test_composite_graph_with_reuse():
    rng = np.random.default_rng(9)

    def f(x, w):
        h = ad.tanh(x @ w)
        return ad.sum_(h * h + ad.sigmoid(h), axis=-1) + ad.sqnorm(x)

    for _ in range(CASES):
        worst = check_grad(f, [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
        assert worst < TOL


def test_gradient_accumulates_over_shared_leaf():
    x = ad.Tensor(np.array([2.0, -1.0]), requires_grad=True)
    ad.sum_(x * x + x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_shape_mismatch_raises_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ad.ShapeError):
        ad.add(np.ones((2, 3)), np.ones(4))


def test_constants_get_no_gradient():
    w = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    x = ad.Tensor(np.ones((1, 2)))
    ad.sum_(x @ w).backward()
    assert x.grad is None
    np.testing.assert_allclose(w.grad, np.ones((2, 2)))


def test_bce_is_finite_for_saturated_logits():
    y = ad.bce_with_logits(np.array([800.0, -800.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(y.data, [800.0, 800.0])


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first step exactly lr * sign(grad) (up to eps)
    p = ad.parameter([1.0, -2.0, 3.0])
    opt = ad.Adam([p], lr=0.1)
    p.grad = np.array([0.5, -4.0, 1e-3])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9, 2.9], atol=1e-5)


def test_adam_minimizes_quadratic():
    p = ad.parameter([3.0, -2.0])
    opt = ad.Adam([p], lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        ad.sqnorm(p - np.array([1.0, 1.0])).backward()
        opt.step()
    np.testing.assert_allclose(p.data, [1.0, 1.0], atol=1e-3)


def test_adam_state_roundtrip():
    p = ad.parameter([1.0, 2.0])
    opt = ad.Adam([p], lr=0.01)
    p.grad = np.array([1.0, -1.0])
    opt.step()
    saved = opt.state_dict()
    q = ad.parameter(p.data)
    opt2 = ad.Adam([q], lr=0.01)
    opt2.load_state_dict(saved)
    p.grad = q.grad = np.array([0.3, 0.2])
    opt.step()
    opt2.step()
    np.testing.assert_array_equal(p.data, q.data)
