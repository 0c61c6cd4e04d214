"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation records its parents and a closure mapping the
output gradient to parent gradients.  ``compute_gradients`` walks the recorded
graph in reverse topological order.  Only scalar losses are differentiated.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised when a loss has no recorded computation to differentiate."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording (inference, decoding, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Immutable n-d array node in the computation graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = out
    t.name = ""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _check_suffix_broadcast(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> None:
    # b may equal a, be a trailing suffix of a (leading-batch broadcast) or a scalar
    if a == b or b == ():
        return
    if len(b) <= len(a) and a[len(a) - len(b):] == b:
        return
    raise ShapeError(f"{op}: cannot combine shapes {a} and {b}")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    g = grad.sum(axis=tuple(range(lead))) if lead > 0 else grad
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < b.ndim:
        a, b = b, a
    _check_suffix_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return g, _reduce_to(g, sb)

    return _record(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    return add(a, scale(_as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a Python scalar."""
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < b.ndim:
        a, b = b, a
    _check_suffix_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, _reduce_to(g * ad, bd.shape)

    return _record(ad * bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _record(a.data * c, (a,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _record(np.maximum(x.data, 0.0), (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _record(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    xd = x.data

    def backward(g):
        return (g / xd,)

    return _record(np.log(xd), (x,), backward)


# ----------------------------------------------------------------------------
# reductions and shape


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _record(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis), 1.0 / float(n))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _record(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _record(x.data.transpose(axes), (x,), backward)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _record(np.stack([x.data for x in xs], axis=axis), tuple(xs), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace positions where ``mask`` is True (broadcast to x) by ``value``."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)

    def backward(g):
        return (np.where(m, 0.0, g),)

    return _record(np.where(m, value, x.data), (x,), backward)


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., m, k) @ (k, n)`` or batched ``(..., m, k) @ (..., k, n)``."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: need rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(ad @ bd, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w + b`` over the last axis, broadcast across leading dims."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} incompatible with weight shape {w.shape}")
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, x.shape[0])), w), (w.shape[1],))
    else:
        y = matmul(x, w)
    return y if b is None else add(y, b)


# ----------------------------------------------------------------------------
# normalisation / probability


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = _log_softmax_np(x.data, axis)
    y = np.exp(out)

    def backward(g):
        return (g - y * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), backward)


def _log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: feature dim {d} vs gain {gain.shape} / bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _record(xhat * gd + bias.data, (x, gain, bias), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into looked-up rows."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding: ids outside [0, {n})")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape, dtype=DTYPE)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _record(table.data[ids], (table,), backward)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return _record(x.data * keep, (x,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 2) -> Tensor:
    """Valid 2-D convolution, channels-last.

    x: (B, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,) -> (B, H', W', Cout)
    with H' = (H - kh) // stride + 1.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw, cin, cout = w.shape
    B, H, W, _ = x.shape
    if H < kh or W < kw:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1
    xd, wd = x.data, w.data
    patches = np.empty((B, Ho, Wo, kh, kw, cin), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            patches[:, :, :, i, j, :] = xd[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :]
    cols = patches.reshape(B * Ho * Wo, kh * kw * cin)
    wmat = wd.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(B, Ho, Wo, cout) + b.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(wd.shape)
        gb = g2.sum(axis=0)
        gcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh, kw, cin)
        gx = np.zeros(xd.shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                gx[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += gcols[:, :, :, i, j, :]
        return gx, gw, gb

    return _record(out, (x, w, b), backward)


def custom(out: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Record an externally computed op (e.g. a fused loss with its own gradient)."""
    return _record(np.asarray(out, dtype=DTYPE), parents, backward)


# ----------------------------------------------------------------------------
# parameters and gradients


@dataclass
class Parameter:
    name: str
    value: Tensor
    trainable: bool = True

    def __post_init__(self):
        self.value.requires_grad = self.trainable
        self.value.name = self.name

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.value.requires_grad = flag

    def assign(self, data: np.ndarray) -> None:
        """Replace the stored value by a fresh leaf tensor."""
        data = np.asarray(data, dtype=DTYPE)
        if data.shape != self.value.shape:
            raise ShapeError(f"{self.name}: cannot assign {data.shape} to {self.value.shape}")
        self.value = Tensor(data.copy(), requires_grad=self.trainable, name=self.name)


class ModelParams:
    """Ordered store of uniquely named parameters."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: Dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise KeyError(f"duplicate parameter name {p.name!r}")
        self._params[p.name] = p
        return p

    def create(self, name: str, data, trainable: bool = True) -> Parameter:
        return self.add(Parameter(name, Tensor(np.array(data, dtype=DTYPE)), trainable))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].value

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def trainable(self):
        return [p for p in self._params.values() if p.trainable]

    def numel(self, trainable_only: bool = False) -> int:
        return int(np.sum([p.value.data.size for p in self if p.trainable or not trainable_only]))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.value.data.copy() for p in self}


def backward(loss: Tensor) -> Dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss; returns gradients keyed by ``id(node)``."""
    if loss.data.size != 1:
        raise GraphError(f"can only differentiate scalar losses, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any recorded computation over trainable parameters")
    order = []
    seen = set()
    stack_ = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def compute_gradients(loss: Tensor, params: ModelParams) -> Dict[str, np.ndarray]:
    """d(loss)/d(p) for every trainable parameter (zeros when unreachable)."""
    grads = backward(loss)
    out = {}
    for p in params.trainable():
        g = grads.get(id(p.value))
        out[p.name] = np.zeros_like(p.value.data) if g is None else g
    return out
