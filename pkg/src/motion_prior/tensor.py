"""A small reverse-mode autodiff engine on top of numpy.

Only the operations the motion model needs are provided. Every tensor keeps a
creation sequence number; sorting the reachable graph by that number in
descending order gives a valid reverse topological order, which is what
``backward`` walks.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_seq = itertools.count()

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents=(), _backward=None, op=""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._seq = next(_seq)
        self.op = op

    # -- basic info -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return _make(a.data / b.data, (a, b), bw, "div")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _make(out, (a,), bw, "pow")


def square(a: Tensor) -> Tensor:
    def bw(g):
        return (2.0 * g * a.data,)

    return _make(a.data * a.data, (a,), bw, "square")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw, "exp")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), bw, "sqrt")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)

    def bw(g):
        return (g * scale,)

    return _make(a.data * scale, (a,), bw, "leaky_relu")


# -- reductions and shape ----------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def cumsum(a: Tensor, axis: int = 0) -> Tensor:
    """Inclusive running sum, accumulated one element at a time like ``np.cumsum``."""
    a = as_tensor(a)

    def bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), (a,), bw, "cumsum")


def scatter(src: Tensor, index: np.ndarray, size: int) -> Tensor:
    """Add rows of ``src`` into a zero tensor with ``size`` rows at positions ``index``.

    Repeated indices accumulate.
    """
    index = np.asarray(index)
    out = np.zeros((size,) + src.shape[1:], dtype=src.dtype)
    np.add.at(out, index, src.data)

    def bw(g):
        return (g[index],)

    return _make(out, (src,), bw, "scatter")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def cross(a: Tensor, b: Tensor) -> Tensor:
    """Cross product over the last axis (size 3)."""

    def bw(g):
        return np.cross(b.data, g), np.cross(g, a.data)

    return _make(np.cross(a.data, b.data), (a, b), bw, "cross")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else y + bias


# -- temporal operators ------------------------------------------------------

def _same_padding(T: int, k: int, stride: int) -> tuple[int, int, int]:
    t_out = -(-T // stride)
    total = max((t_out - 1) * stride + k - T, 0)
    return t_out, total // 2, total - total // 2


def conv1d_temporal(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                    padding: str = "same") -> Tensor:
    """1-D convolution over the time axis.

    ``x`` is ``[..., T, Cin]``, ``weight`` is ``[k, Cin, Cout]``. Output time
    length is ``ceil(T/stride)`` under ``"same"`` (zero padding) and
    ``(T-k)//stride + 1`` under ``"valid"``.
    """
    k, cin, cout = weight.shape
    if k < 1 or stride < 1:
        raise ValueError(f"kernel size and stride must be >= 1, got k={k} stride={stride}")
    if x.shape[-1] != cin:
        raise ValueError(f"input has {x.shape[-1]} channels but weight expects {cin}")
    T = x.shape[-2]
    if padding == "same":
        t_out, left, right = _same_padding(T, k, stride)
    elif padding == "valid":
        if T < k:
            raise ValueError(f"valid convolution needs T >= k, got T={T} k={k}")
        t_out, left, right = (T - k) // stride + 1, 0, 0
    else:
        raise ValueError(f"unknown padding policy {padding!r}")

    pad_width = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad_width)
    span = stride * (t_out - 1) + 1
    out = np.zeros(x.shape[:-2] + (t_out, cout), dtype=np.result_type(x.dtype, weight.dtype))
    for kk in range(k):
        out += xp[..., kk:kk + span:stride, :] @ weight.data[kk]
    if bias is not None:
        out += bias.data

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        g2 = g.reshape(-1, cout)
        for kk in range(k):
            sl = xp[..., kk:kk + span:stride, :]
            gw[kk] = sl.reshape(-1, cin).T @ g2
            gxp[..., kk:kk + span:stride, :] += g @ weight.data[kk].T
        gx = gxp[..., left:left + T, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv1d_temporal")


def upsample_temporal(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour repetition along the time axis (``[..., T, C]``)."""
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    T = x.shape[-2]

    def bw(g):
        return (g.reshape(g.shape[:-2] + (T, factor, g.shape[-1])).sum(axis=-2),)

    return _make(np.repeat(x.data, factor, axis=-2), (x,), bw, "upsample_temporal")


# -- backward ------------------------------------------------------------------

def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Returns a map from each leaf tensor with ``requires_grad`` to its
    accumulated gradient.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached: no tracked tensor contributes to it")

    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        for p in t._parents:
            if p.requires_grad and id(p) not in nodes:
                stack_.append(p)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for t in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            leaves[t] = t.grad
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if not p.requires_grad or pg is None:
                continue
            pg = np.asarray(pg, dtype=p.dtype)
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    return leaves


def grad_check(function: Callable[[], Tensor], parameters: Iterable[Tensor], epsilon: float = 1e-6,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Largest relative deviation between analytic and central-difference gradients.

    The relative error for each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. With ``max_coords`` only a
    random subset of that many coordinates per parameter is differenced.
    """
    rng = np.random.default_rng(seed)
    params = list(parameters)
    for p in params:
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError("non-finite parameter value")
        p.grad = None
    loss = function()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError("grad_check needs contiguous parameter arrays")
        coords = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(function().data)
            flat[i] = orig - epsilon
            f_minus = float(function().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError("non-finite loss during finite differencing")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        p.grad = None
    return worst
