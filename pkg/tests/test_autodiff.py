import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specmae import autodiff as ad
from specmae.autodiff import Tensor, backward, finite_difference_check

TOL = 1e-4


def rnd(seed, *shape):
    return np.random.default_rng(seed).normal(size=shape)


def weighted(out, seed):
    """Random linear functional so every output entry affects the scalar."""
    return ad.sum_all(ad.mul(out, Tensor(rnd(seed + 1000, *out.shape))))


shapes = st.tuples(st.integers(1, 16), st.integers(1, 32))


@settings(max_examples=8, deadline=None)
@given(shapes, st.integers(0, 10**6))
def test_elementwise_primitives(shape, seed):
    a, b = rnd(seed, *shape), rnd(seed + 1, *shape)
    bias = rnd(seed + 2, shape[1])
    assert finite_difference_check(lambda x, y: weighted(ad.add(x, y), seed), [a, b]) <= TOL
    assert finite_difference_check(lambda x, y: weighted(ad.add(x, y), seed), [a, bias]) <= TOL
    assert finite_difference_check(lambda x, y: weighted(ad.mul(x, y), seed), [a, b]) <= TOL
    assert finite_difference_check(lambda x: weighted(ad.scale(x, -1.7), seed), [a]) <= TOL
    assert finite_difference_check(lambda x: ad.sum_all(x), [a]) <= TOL
    assert finite_difference_check(lambda x: weighted(ad.gelu(x), seed), [a]) <= TOL
    assert finite_difference_check(lambda x: weighted(ad.softmax(x), seed), [a]) <= TOL


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 16), st.integers(1, 32), st.integers(1, 12), st.integers(0, 10**6))
def test_matrix_primitives(n, k, m, seed):
    x, w, b = rnd(seed, n, k), rnd(seed + 1, k, m), rnd(seed + 2, m)
    assert finite_difference_check(lambda p, q: weighted(ad.matmul(p, q), seed), [x, w]) <= TOL
    assert finite_difference_check(lambda p, q, r: weighted(ad.linear(p, q, r), seed), [x, w, b]) <= TOL
    xb, wb = rnd(seed + 3, 2, n, k), rnd(seed + 4, 2, k, m)
    assert finite_difference_check(lambda p, q: weighted(ad.matmul(p, q), seed), [xb, wb]) <= TOL
    assert finite_difference_check(lambda p: weighted(ad.transpose(p), seed), [x]) <= TOL
    assert finite_difference_check(lambda p: weighted(ad.transpose(p, (0, 2, 1)), seed), [xb]) <= TOL
    assert finite_difference_check(lambda p: weighted(ad.reshape(p, (n * k,)), seed), [x]) <= TOL


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 16), st.integers(3, 32), st.integers(0, 10**6))
def test_layer_norm_gradient(n, d, seed):
    x, g, b = rnd(seed, n, d), rnd(seed + 1, d), rnd(seed + 2, d)
    assert finite_difference_check(lambda p, q, r: weighted(ad.layer_norm(p, q, r), seed), [x, g, b]) <= TOL


def test_layer_norm_two_wide_gradient_absolute():
    # two-element rows normalize to (+1, -1); the input gradient is O(eps), so
    # rounding dominates the relative error and an absolute bound is used
    x = Tensor(rnd(1, 8, 2), requires_grad=True)
    out = weighted(ad.layer_norm(x, Tensor(rnd(2, 2)), Tensor(rnd(3, 2))), 1)
    (gx,) = backward(out, [x])
    assert np.abs(gx).max() < 1e-2
    h = 1e-5
    for j in range(x.data.size):
        plus, minus = x.data.copy(), x.data.copy()
        plus.flat[j] += h
        minus.flat[j] -= h
        f = lambda v: float(weighted(ad.layer_norm(Tensor(v), Tensor(rnd(2, 2)), Tensor(rnd(3, 2))), 1).data)
        assert abs((f(plus) - f(minus)) / (2 * h) - gx.flat[j]) < 1e-8


@settings(max_examples=8, deadline=None)
@given(st.integers(2, 16), st.integers(1, 32), st.integers(0, 10**6))
def test_row_primitives_gradient(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rnd(seed, 2, n, d)
    idx = rng.choice(n, size=max(1, n // 2), replace=False)
    rest = np.setdiff1d(np.arange(n), idx)
    assert finite_difference_check(lambda p: weighted(ad.gather_rows(p, idx), seed), [x]) <= TOL
    # repeated indices accumulate
    rep = np.array([0, 0, n - 1])
    assert finite_difference_check(lambda p: weighted(ad.gather_rows(p, rep), seed), [x]) <= TOL
    rows, tmpl = rnd(seed + 1, 2, idx.size, d), rnd(seed + 2, 2, n, d)
    assert finite_difference_check(
        lambda p, t: weighted(ad.scatter_rows(p, idx, t), seed), [rows, tmpl]) <= TOL
    a, b = rnd(seed + 3, 2, idx.size, d), rnd(seed + 4, 2, rest.size + 1, d)
    assert finite_difference_check(lambda p, q: weighted(ad.concat_rows(p, q), seed), [a, b]) <= TOL


@settings(max_examples=8, deadline=None)
@given(shapes, st.integers(0, 10**6))
def test_masked_mse_gradient(shape, seed):
    pred, target = rnd(seed, *shape), rnd(seed + 1, *shape)
    mask = (np.random.default_rng(seed).random(shape) < 0.5).astype(np.uint8)
    mask.flat[0] = 1
    assert finite_difference_check(lambda p: ad.masked_mse(p, target, mask), [pred]) <= TOL


def test_three_layer_composite():
    x = rnd(0, 8, 12)
    w1, b1, w2, b2, w3, b3 = rnd(1, 12, 16), rnd(2, 16), rnd(3, 16, 16), rnd(4, 16), rnd(5, 16, 4), rnd(6, 4)

    def f(x, w1, b1, w2, b2, w3, b3):
        h = ad.gelu(ad.linear(x, w1, b1))
        h = ad.gelu(ad.linear(h, w2, b2))
        return weighted(ad.linear(h, w3, b3), 7)

    assert finite_difference_check(f, [x, w1, b1, w2, b2, w3, b3]) <= TOL


def test_attention_block_gradient():
    from specmae.model import block

    d, heads = 8, 2
    rng = np.random.default_rng(3)
    names = {
        "b.ln1.g": (d,), "b.ln1.b": (d,),
        "b.attn.q.w": (d, d), "b.attn.q.b": (d,), "b.attn.k.w": (d, d),
        "b.attn.v.w": (d, d), "b.attn.v.b": (d,), "b.attn.proj.w": (d, d), "b.attn.proj.b": (d,),
        "b.ln2.g": (d,), "b.ln2.b": (d,),
        "b.mlp.fc1.w": (d, 2 * d), "b.mlp.fc1.b": (2 * d,), "b.mlp.fc2.w": (2 * d, d), "b.mlp.fc2.b": (d,),
    }
    keys = list(names)
    point = [rng.normal(size=(1, 8, d))] + [rng.normal(size=names[k]) * 0.5 for k in keys]

    def f(x, *ps):
        return weighted(block(x, dict(zip(keys, ps)), "b", heads), 5)

    assert finite_difference_check(f, point) <= TOL


def test_softmax_rows_and_shift():
    x = rnd(0, 5, 7)
    s = ad.softmax(Tensor(x)).data
    assert np.allclose(s.sum(axis=-1), 1.0) and np.all(s > 0)
    assert np.allclose(ad.softmax(Tensor(x + 123.0)).data, s)
    assert np.all(np.isfinite(ad.softmax(Tensor(np.array([[1000.0, -1000.0]]))).data))


def test_layer_norm_unit_gain():
    y = ad.layer_norm(Tensor(rnd(1, 6, 32)), Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    assert np.allclose(y.mean(axis=-1), 0, atol=1e-12)
    assert np.allclose(y.var(axis=-1), 1, atol=1e-4)


def test_gelu_values():
    assert ad.gelu(Tensor(np.array(0.0))).data == 0.0
    x = 1.3
    want = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
    assert ad.gelu(Tensor(np.array(x))).data == pytest.approx(want, rel=1e-15)


def test_scatter_restores_gathered_rows():
    x = rnd(2, 6, 3)
    idx = np.array([4, 1, 2])
    g = ad.gather_rows(Tensor(x), idx)
    back = ad.scatter_rows(g, idx, Tensor(np.zeros_like(x))).data
    assert np.array_equal(back[idx], x[idx])
    assert not back[[0, 3, 5]].any()
    with pytest.raises(ValueError):
        ad.scatter_rows(Tensor(x[:2]), np.array([1, 1]), Tensor(np.zeros_like(x)))


def test_known_gradients():
    x = Tensor(np.array([3.0]), requires_grad=True)
    backward(ad.sum_all(ad.mul(x, x)))
    assert x.grad[0] == 6.0
    c = Tensor(np.array([2.0]), requires_grad=True)
    y = Tensor(np.array([5.0]), requires_grad=True)
    (gc,) = backward(ad.sum_all(y), [c])
    assert gc[0] == 0.0


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    h = ad.mul(x, x)
    backward(ad.sum_all(ad.add(h, h)))
    assert np.array_equal(x.grad, 4 * x.data)


def test_no_grad_and_shape_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))
    with pytest.raises(ad.ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        backward(ad.mul(x, x))


def test_fd_check_detects_wrong_gradient():
    def bad(x):
        wrong = ad._make(x.data * 2, (x,), lambda g: (g,), "bad")  # true derivative is 2
        return ad.sum_all(wrong)

    assert finite_difference_check(bad, [np.ones(3)]) > 0.4
    with pytest.raises(FloatingPointError):
        finite_difference_check(lambda x: ad.scale(ad.sum_all(x), np.inf), [np.ones(2)])
