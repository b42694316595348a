"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input requires a gradient.  Outside a tape, the same functions are
plain numpy computations, which is what generation uses.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     y = x * x
    >>> grads = tape.backward(y)
    >>> float(x.grad)
    6.0
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class NumericError(ArithmeticError):
    """A primitive produced NaN or Inf, or received it."""


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class UndefinedLossError(ValueError):
    """Cross-entropy over a batch where every position is padding."""


_TAPES: list["Tape"] = []


def _current_tape() -> Optional["Tape"]:
    return _TAPES[-1] if _TAPES else None


# Set by the gradient checker: collects the on/off pattern of every ReLU input so
# finite differences that straddle a kink can be detected.
_KINK_PROBE: Optional[list] = None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as they execute, so the list is already in
    topological order and the backward pass simply walks it in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, node: Node) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor) -> dict:
        return backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> dict:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Returns a mapping from leaf tensor to its gradient array.  A tape can be
    consumed once; a second call raises :class:`TapeError` until ``reset``.
    """
    if tape.consumed:
        raise TapeError("backward() already called on this tape")
    if loss.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
    tape.consumed = True
    produced = {id(n.output) for n in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    out = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g
        out[leaf] = g
    return out


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], fn) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = _current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Node(op, tuple(inputs), out, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _emit("div", ad / bd, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _emit("log", y, (x,), lambda g: (g / xd,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    if _KINK_PROBE is not None:
        _KINK_PROBE.append(np.packbits(pos).tobytes())
    return _emit("relu", np.where(pos, x.data, 0.0).astype(x.dtype), (x,),
                 lambda g: (g * pos,))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant (no gradient there)."""
    mask = np.asarray(mask, dtype=bool)
    y = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)
    shape = x.shape
    return _emit("masked_fill", y, (x,),
                 lambda g: (_unbroadcast(np.where(mask, 0.0, g), shape).astype(g.dtype),))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _emit("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# -- shape ---------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _emit("getitem", np.asarray(x.data[index]), (x,), fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into the rows."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.ravel(), g.reshape(-1, shape[-1]))
        return (full,)

    return _emit("embedding", table.data[ids], (table,), fn)


# -- reductions ----------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), fn)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as in ``np.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return _emit("matmul", np.matmul(ad, bd), (a, b), fn)


# -- fused normalizers ---------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, (x,),
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _emit("log_softmax", y, (x,),
                 lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-6) -> Tensor:
    if x.shape[-1] < 2:
        raise DimensionError("layer_norm needs at least 2 features on the last axis")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data if gamma is not None else None
    y = xhat if gamma is None else xhat * gd
    if beta is not None:
        y = y + beta.data
    def fn(g):
        gx_hat = g * gd if gd is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        out = [gx]
        if gamma is not None:
            out.append(_unbroadcast(g * xhat, gd.shape))
        if beta is not None:
            out.append(_unbroadcast(g, beta.shape))
        return tuple(out)

    inputs = [x] + [t for t in (gamma, beta) if t is not None]
    return _emit("layer_norm", y, inputs, fn)


def cross_entropy(logits: Tensor, targets, pad_mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-pad positions.

    ``pad_mask`` is true where a position is padding.  Raises
    :class:`UndefinedLossError` if nothing is left to average.
    """
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise ValueError("target id outside [0, V)")
    valid = np.ones(targets.shape, bool) if pad_mask is None else ~np.asarray(pad_mask, bool)
    count = int(valid.sum())
    if count == 0:
        raise UndefinedLossError("every position is padding")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum() / count
    w = valid.astype(logits.dtype) / count

    def fn(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None],
                          np.take_along_axis(p, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (p * (w * g)[..., None],)

    return _emit("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), fn)
