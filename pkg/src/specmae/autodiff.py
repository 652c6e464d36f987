"""A small dense-tensor reverse-mode autodiff core on top of numpy.

Only the primitives a pre-norm ViT encoder/decoder needs are provided.
Row-oriented primitives (gather/scatter/concat, softmax, layer_norm) act on
axis -2 (rows) or -1 (features); leading axes are batch axes. The only
broadcasting allowed is a trailing "bias-style" add.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, op="leaf", name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents, vjp, op) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), vjp, op)
    return Tensor(data, op=op)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.reshape(-1, *shape).sum(axis=0)


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape[a.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not compatible")
    bshape = b.shape
    return _make(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, bshape)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype
    return _make(
        np.asarray(a.data.sum(dtype=np.float64), dtype=dtype),
        (a,),
        lambda g: (np.broadcast_to(g, shape).astype(dtype),),
        "sum",
    )


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """(..., n, k) @ (k, m) or (..., n, k) @ (..., k, m) with equal batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    ok = a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]
    if ok and b.ndim > 2:
        ok = a.shape[:-2] == b.shape[:-2]
    if not ok:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ _swap(b.data)
        if b.ndim == 2:
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = _swap(a.data) @ g
        return ga, gb

    return _make(out, (a, b), vjp, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 axes, got shape {a.shape}")
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu(a) -> Tensor:
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_K * x**3))
    out = 0.5 * x * (1 + t)

    def vjp(g):
        d = 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * _GELU_C * (1 + 3 * _GELU_K * x * x)
        return (g * d,)

    return _make(out, (a,), vjp, "gelu")


def softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ShapeError(f"softmax: empty last axis in shape {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), vjp, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError(f"layer_norm: empty last axis in shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx_hat = g * gain.data
        gx = rstd * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, _reduce_to(g * xhat, (d,)), _reduce_to(g, (d,))

    return _make(out, (x, gain, bias), vjp, "layer_norm")


def linear(x, w, b) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: input {x.shape}, weight {w.shape}, bias {b.shape}")
    out = x.data @ w.data + b.data
    k, m = w.shape

    def vjp(g):
        g2 = g.reshape(-1, m)
        return g @ w.data.T, x.data.reshape(-1, k).T @ g2, g2.sum(axis=0)

    return _make(out, (x, w, b), vjp, "linear")


def _row_index(idx: np.ndarray, lead: tuple[int, ...], n_rows: int):
    """Flat row indices into x.reshape(-1, D) for a 1-D or per-batch idx."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexError(f"row index out of range for {n_rows} rows")
    if idx.ndim == 1:
        nb = int(np.prod(lead)) if lead else 1
        flat = (np.arange(nb)[:, None] * n_rows + idx[None, :])
        return flat.reshape(*lead, idx.size) if lead else flat[0]
    if not lead:
        return idx
    if idx.shape[:-1] != lead:
        raise ShapeError(f"row index batch shape {idx.shape[:-1]} vs tensor batch {lead}")
    nb = int(np.prod(lead))
    offs = (np.arange(nb) * n_rows).reshape(*lead, 1)
    return idx + offs


def gather_rows(x, idx) -> Tensor:
    """Select rows (axis -2). ``idx`` is shared (1-D) or per batch item (..., n).

    A 2-D ``x`` with a batched ``idx`` yields a batched output; repeated
    indices are allowed and their gradients accumulate.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"gather_rows: need at least 2 axes, got shape {x.shape}")
    n, d = x.shape[-2], x.shape[-1]
    flat = _row_index(idx, x.shape[:-2], n)
    src = x.data.reshape(-1, d)
    out = src[flat]
    shape = x.shape

    def vjp(g):
        gx = np.zeros((src.shape[0], d), dtype=g.dtype)
        np.add.at(gx, flat.reshape(-1), g.reshape(-1, d))
        return (gx.reshape(shape),)

    return _make(out, (x,), vjp, "gather_rows")


def scatter_rows(x, idx, template) -> Tensor:
    """Copy of ``template`` with rows ``idx`` replaced by the rows of ``x``."""
    x, template = as_tensor(x), as_tensor(template)
    if template.ndim < 2:
        raise ShapeError(f"scatter_rows: template needs 2+ axes, got {template.shape}")
    n, d = template.shape[-2], template.shape[-1]
    flat = _row_index(idx, template.shape[:-2], n).reshape(-1)
    if x.data.size != flat.size * d or x.shape[-1] != d:
        raise ShapeError(f"scatter_rows: rows {x.shape} do not fit {template.shape} at {np.shape(idx)}")
    if np.unique(flat).size != flat.size:
        raise ValueError("scatter_rows: duplicate row indices")
    out = template.data.reshape(-1, d).copy()
    out[flat] = x.data.reshape(-1, d)
    tshape, xshape = template.shape, x.shape

    def vjp(g):
        g2 = g.reshape(-1, d)
        gt = g2.copy()
        gt[flat] = 0
        return g2[flat].reshape(xshape), gt.reshape(tshape)

    return _make(out.reshape(tshape), (x, template), vjp, "scatter_rows")


def concat_rows(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"concat_rows: shapes {a.shape} and {b.shape} are not compatible")
    na = a.shape[-2]
    return _make(
        np.concatenate([a.data, b.data], axis=-2),
        (a, b),
        lambda g: (g[..., :na, :], g[..., na:, :]),
        "concat_rows",
    )


def masked_mse(pred, target, mask) -> Tensor:
    """sum(mask * (pred - target)^2) / sum(mask); target and mask are constants."""
    pred = as_tensor(pred)
    target = np.asarray(getattr(target, "data", target))
    mask = np.asarray(mask)
    if target.shape != pred.shape or mask.shape != pred.shape:
        raise ShapeError(f"masked_mse: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    count = float(mask.sum(dtype=np.float64))
    if count <= 0:
        raise ValueError("masked_mse: empty mask")
    dtype = pred.data.dtype
    w = mask.astype(dtype)
    diff = pred.data - target.astype(dtype)
    value = float((w * diff * diff).sum(dtype=np.float64)) / count
    return _make(
        np.asarray(value, dtype=dtype),
        (pred,),
        lambda g: ((2.0 / count) * g * w * diff,),
        "masked_mse",
    )


# ---------------------------------------------------------------- backward


class ComputeGraph:
    """Nodes reachable from a root, parents before children."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def build(cls, root: Tensor) -> "ComputeGraph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def backward(self, root: Tensor) -> dict[int, np.ndarray]:
        if root.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None) if not node.is_leaf else grads.get(id(node))
            if g is None or node.is_leaf:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    pg = np.broadcast_to(pg, parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads


def backward(root: Tensor, leaves: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Reverse-mode sweep from a scalar ``root``.

    Sets ``.grad`` on every reachable leaf. When ``leaves`` is given, their
    gradients are returned in order, zero-filled for leaves ``root`` does not
    depend on.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        grads = {}
        graph = ComputeGraph([])
    else:
        graph = ComputeGraph.build(root)
        grads = graph.backward(root)
    for node in graph.leaves():
        g = grads.get(id(node))
        node.grad = None if g is None else np.asarray(g, dtype=node.data.dtype)
    if leaves is None:
        return None
    out = []
    for leaf in leaves:
        g = grads.get(id(leaf))
        out.append(np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.data.dtype))
    return out


def finite_difference_check(
    f: Callable[..., Tensor],
    point: Sequence[np.ndarray],
    h: float = 1e-5,
    coords: Sequence[tuple[int, int]] | None = None,
) -> float:
    """Max relative error between backward() and central differences.

    ``f`` maps tensors built from ``point`` to a scalar tensor. ``coords``
    optionally restricts the check to (input, flat index) pairs. Relative
    error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    point = [np.array(p, dtype=np.float64) for p in point]
    leaves = [Tensor(p.copy(), requires_grad=True) for p in point]
    root = f(*leaves)
    analytic = backward(root, leaves)
    if coords is None:
        coords = [(i, j) for i, p in enumerate(point) for j in range(p.size)]

    def evaluate(vals):
        with no_grad():
            v = float(f(*[Tensor(x) for x in vals]).data)
        if not math.isfinite(v):
            raise FloatingPointError("non-finite function value during finite differences")
        return v

    worst = 0.0
    for i, j in coords:
        plus = [p.copy() for p in point]
        minus = [p.copy() for p in point]
        plus[i].flat[j] += h
        minus[i].flat[j] -= h
        num = (evaluate(plus) - evaluate(minus)) / (2 * h)
        ana = float(analytic[i].flat[j])
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, err)
    return worst
