"""Dense n-d arrays with reverse-mode automatic differentiation.

Only the operations needed by the TDM network and its losses are provided.
Every differentiable op records a node holding its parents and a backward
rule; :func:`backward` replays the reachable nodes in reverse creation order
(which is a valid topological order, since parents always exist before their
children).

Example
-------
>>> w = Tensor([1.0, -2.0], requires_grad=True)
>>> loss = (w * w).sum()
>>> backward(loss)
>>> w.grad
array([ 2., -4.])
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPES = {"f64": np.float64, "f32": np.float32}

_state = threading.local()
_seq = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible with the operation."""


class ContractError(RuntimeError):
    """An op or backward pass was called outside its preconditions."""


class TapeError(RuntimeError):
    """The recorded graph was already consumed by a previous backward pass."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs."""

    def __init__(self, op: str, name: str | None = None):
        self.op = op
        self.tensor_name = name
        where = f" (input {name!r})" if name else ""
        super().__init__(f"non-finite values produced by op '{op}'{where}")


def _default_dtype():
    return getattr(_state, "dtype", np.float64)


def set_default_dtype(dtype) -> None:
    """Set the thread's default float type (``np.float64`` or ``np.float32``)."""
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}, got {dtype!r}")
        dtype = DTYPES[dtype]
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _state.dtype = dtype


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextmanager
def no_grad():
    """Disable recording on the current thread."""
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class _Node:
    __slots__ = ("op", "parents", "backward", "seq", "consumed", "out_id")

    def __init__(self, op: str, parents: tuple, backward: Callable, out_id: int):
        self.op = op
        self.out_id = out_id
        self.parents = parents
        self.backward = backward
        self.seq = next(_seq)
        self.consumed = False


class Tensor:
    """A float array that can take part in gradient recording.

    Leaves created with ``requires_grad=True`` carry a zero-initialised
    ``grad`` buffer of identical shape; :func:`backward` accumulates into it.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else _default_dtype()
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self._node: _Node | None = None

    # -- basic accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4, threshold=8)}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ---------------------------------------------------------
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
        return neg(self)

    def __pow__(self, exponent: float):
        return pow_(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def max(self, axis=None):
        return max_(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = _default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


def _record(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result, attaching a graph node when any parent needs grad."""
    if not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise NonFiniteError(op)
        bad = next(p for p in parents if not np.all(np.isfinite(p.data)))
        raise NonFiniteError(op, bad.name or "<non-finite input>")
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(op, tuple(parents), backward, id(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _record("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def pow_(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    with np.errstate(all="ignore"):
        out = x ** exponent
    return _record("pow", out, (a,),
                   lambda g: (g * exponent * x ** (exponent - 1),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return _record("log", out, (a,), lambda g: (g / x,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record("abs", np.abs(x), (a,), lambda g: (g * np.sign(x),))


# -- reductions and shape ops ----------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes]))
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _record("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), bw)


def max_(a, axis=None) -> Tensor:
    """Maximum; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    x = a.data
    if axis is None:
        flat = int(np.argmax(x))

        def bw(g):
            out = np.zeros_like(x)
            out.flat[flat] = g
            return (out,)

        return _record("max", np.asarray(x.flat[flat]), (a,), bw)
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)

    def bw(g):
        out = np.zeros_like(x)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _record("max", np.take_along_axis(x, idx, axis=axis).squeeze(axis), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _record("getitem", np.array(a.data[index]), (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"cannot concat shapes {ref} and {t.shape} along axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _record("stack", out, tuple(tensors), bw)


def _shift_array(x: np.ndarray, k: int) -> np.ndarray:
    """Translate along the last axis by ``k``: out[..., t] = x[..., t - k], zero fill."""
    out = np.zeros_like(x)
    n = x.shape[-1]
    if k >= n or -k >= n:
        return out
    if k > 0:
        out[..., k:] = x[..., : n - k]
    elif k < 0:
        out[..., : n + k] = x[..., -k:]
    else:
        out[...] = x
    return out


def shift(a, k: int) -> Tensor:
    """Delay the last axis by ``k`` samples, filling vacated positions with zeros."""
    a = as_tensor(a)
    k = int(k)
    return _record("shift", _shift_array(a.data, k), (a,), lambda g: (_shift_array(g, -k),))


# -- network ops ---------------------------------------------------------------

def _windows3x3(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """im2col for a padded [N, C, H+2, W+2] array -> [N*H*W, C*9]."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))  # N,C,H,W,3,3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv2d(x, weight, bias) -> Tensor:
    """3x3 cross-correlation with zero padding 1 over a batch of frames.

    ``x`` is [N, C_in, H, W] (frames act as the batch), ``weight`` is
    [C_out, C_in, 3, 3] and ``bias`` is [C_out]. Output is [N, C_out, H, W].
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4 or bias.ndim != 1:
        raise DimensionError(f"conv2d expects 4-d input/weight and 1-d bias, got {x.shape}, {weight.shape}, {bias.shape}")
    n, c_in, h, w = x.shape
    c_out = weight.shape[0]
    if weight.shape[1:] != (c_in, 3, 3) or bias.shape[0] != c_out:
        raise DimensionError(f"conv2d weight {weight.shape} / bias {bias.shape} do not match input channels {c_in}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _windows3x3(xp, h, w)
    wmat = weight.data.reshape(c_out, c_in * 9)
    out = (cols @ wmat.T + bias.data).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        gw = (gm.T @ cols).reshape(weight.shape)
        gb = gm.sum(axis=0)
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, h, w, c_in, 3, 3)
            gxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    gxp[:, :, i:i + h, j:j + w] += gcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, 1:-1, 1:-1]
        return gx, gw, gb

    return _record("conv2d", np.ascontiguousarray(out), (x, weight, bias), bw)


def _fixed_corr(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """out[c, t] = sum_{tau=-r..r} kernel[tau + r] * x[c, t + tau] with zero padding.

    The terms are accumulated in increasing tau order starting from 0.0 so the
    result is reproducible by a plain scalar loop.
    """
    r = (kernel.shape[0] - 1) // 2
    t = x.shape[-1]
    xp = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(r, r)])
    out = np.zeros_like(x)
    for i in range(kernel.shape[0]):
        out += kernel[i] * xp[..., i:i + t]
    return out


def conv1d_fixed(x, kernel) -> Tensor:
    """Depthwise temporal correlation of [C, T] features with a fixed odd-length kernel.

    The kernel is a constant: no gradient is produced for it.
    """
    x = as_tensor(x)
    k = kernel.data if isinstance(kernel, Tensor) else np.asarray(kernel, dtype=x.dtype)
    if k.ndim != 1 or k.shape[0] % 2 != 1:
        raise DimensionError(f"conv1d_fixed needs an odd-length 1-d kernel, got shape {k.shape}")
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"conv1d_fixed needs T >= 1, got shape {x.shape}")
    flipped = k[::-1].copy()
    return _record("conv1d_fixed", _fixed_corr(x.data, k), (x,), lambda g: (_fixed_corr(g, flipped),))


def batchnorm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation of [N, C, H, W] over the (N, H, W) axes.

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, exponential average with
    ``momentum``). In inference mode the running buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm2d shape mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    axes = (0, 2, 3)
    if training:
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    g4 = gamma.data[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * g4
        if training:
            gx = inv[None, :, None, None] * (
                gxhat - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return _record("batchnorm2d", out, (x, gamma, beta), bw)


def avgpool2d(x) -> Tensor:
    """2x2 average pooling with stride 2; odd trailing rows/columns are dropped."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"avgpool2d expects [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise DimensionError(f"avgpool2d needs H, W >= 2, got {h}x{w}")
    core = x.data[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
    out = core.mean(axis=(3, 5))

    def bw(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        gx[:, :, : 2 * ho, : 2 * wo] = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
        return (gx,)

    return _record("avgpool2d", out, (x,), bw)


def spatial_mean(x) -> Tensor:
    """[N, C, H, W] frames -> [C, N] per-channel mean over each frame."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"spatial_mean expects [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3)).T

    def bw(g):
        return (np.broadcast_to((g.T / (h * w))[:, :, None, None], x.shape).copy(),)

    return _record("spatial_mean", np.ascontiguousarray(out), (x,), bw)


def concat_channels(tensors: Sequence) -> Tensor:
    """Concatenate [C_i, T] tensors into [sum C_i, T]."""
    return concat(tensors, axis=0)


def conv1x1(x, weight, bias) -> Tensor:
    """Channel mixing of [C_in, T] with weight [C_out, C_in] and bias [C_out]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[0] or bias.shape != (weight.shape[0],):
        raise DimensionError(f"conv1x1 shape mismatch: x {x.shape}, weight {weight.shape}, bias {bias.shape}")
    xd, wd = x.data, weight.data
    out = wd @ xd + bias.data[:, None]
    return _record("conv1x1", out, (x, weight, bias),
                   lambda g: (wd.T @ g, g @ xd.T, g.sum(axis=1)))


def mse_reduce(a, b) -> Tensor:
    """Mean squared difference over all elements."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mse_reduce needs equal shapes, got {a.shape} and {b.shape}")
    d = a.data - b.data
    n = d.size
    return _record("mse_reduce", np.asarray(np.mean(d * d)), (a, b),
                   lambda g: (2.0 * g * d / n, -2.0 * g * d / n))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _record("softmax", p, (x,), bw)


# -- backward ------------------------------------------------------------------

class Tape:
    """The recorded operations reachable from a tensor, in creation order."""

    def __init__(self, nodes: list[_Node]):
        self.nodes = nodes

    @classmethod
    def reaching(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[_Node] = []
        stack = [out]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.parents)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires-grad leaf."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
    if loss._node is None:
        if loss.requires_grad:
            loss.grad += 1.0
            return
        raise ContractError("loss was not produced by recorded operations")
    tape = Tape.reaching(loss)
    if any(n.consumed for n in tape.nodes):
        raise TapeError("graph already consumed by a previous backward pass; run a new forward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.out_id, None)
        fn, node.backward, node.consumed = node.backward, None, True
        if g is None:
            continue
        for parent, pg in zip(node.parents, fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._node is None:
                parent.grad += pg
            elif id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def parameters_finite(tensors: Iterable[tuple[str, Tensor]]) -> str | None:
    """Name of the first tensor holding NaN/Inf in data or grad, else None."""
    for name, t in tensors:
        if not np.all(np.isfinite(t.data)):
            return name
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            return f"{name}.grad"
    return None
