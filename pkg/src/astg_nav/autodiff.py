"""A small dense-tensor library with reverse-mode differentiation.

Every op on a tracked tensor records its parents and a closure computing the
parents' gradient contributions. ``backward`` replays those records in
reverse order of creation. Only leaf tensors created with
``requires_grad=True`` keep a ``.grad`` buffer; intermediate gradients live
for the duration of one backward pass.
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1

_ids = itertools.count()


class DimensionError(ValueError):
    pass


class GradientUsageError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.node_id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.backward_fn is not None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    if any(p.tracked for p in parents):
        out.parents = tuple(parents)
        out.backward_fn = fn
    return out


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# --- primitive ops -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., m, k) @ (k, p) or batched (..., m, k) @ (..., k, p) with equal batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def fn(g):
        ga = g @ _swap(b.data)
        gb = _swap(a.data) @ g
        if b.data.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *gb.shape[-2:]).sum(axis=0)
        return ga, gb

    return _result(a.data @ b.data, (a, b), fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return _result(a.data + b.data, (a, b),
                       lambda g: (g, g.reshape(-1, b.shape[0]).sum(axis=0)))
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def scalar_mul(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scalar_mul(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise DimensionError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fn(g):
        return np.split(g, bounds, axis=ax)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, fn)


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
        return _result(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))
    ax = axis % a.data.ndim
    n = a.shape[ax]

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _result(a.data.mean(axis=ax, keepdims=keepdims), (a,), fn)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return _result(_swap(a.data), (a,), lambda g: (_swap(g),))


def repeat(a: Tensor, axis: int, count: int) -> Tensor:
    """Tile a size-1 axis ``count`` times."""
    a = as_tensor(a)
    ax = axis % a.data.ndim
    if a.shape[ax] != 1:
        raise DimensionError(f"repeat: axis {axis} of shape {a.shape} must have size 1")
    shape = a.shape[:ax] + (count,) + a.shape[ax + 1:]
    return _result(np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (g.sum(axis=ax, keepdims=True),))


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (the axis is dropped)."""
    a = as_tensor(a)
    ax = axis % a.data.ndim

    def fn(g):
        out = np.zeros(a.shape)
        sl = [slice(None)] * a.data.ndim
        sl[ax] = index
        out[tuple(sl)] = g
        return (out,)

    return _result(np.take(a.data, index, axis=ax), (a,), fn)


# --- backward ------------------------------------------------------------

class Tape:
    """Recorded nodes reachable from a loss, in recording order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> Tape:
        seen = {}
        stack = [loss]
        while stack:
            t = stack.pop()
            if t.node_id in seen or not t.tracked:
                continue
            seen[t.node_id] = t
            stack.extend(t.parents)
        return cls(sorted(seen.values(), key=lambda t: t.node_id))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every tracked leaf's ``grad``."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise GradientUsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.tracked:
        raise GradientUsageError("loss does not depend on any tracked tensor")
    tape = Tape.from_loss(loss)
    grads = {loss.node_id: np.ones(loss.shape)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.tracked:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg


# --- checkpoints ---------------------------------------------------------

def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write named arrays as JSON. Floats use repr, so values round-trip exactly."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "meta": meta or {},
        "params": {name: {"shape": list(a.shape), "values": [float(v) for v in np.ravel(a)]}
                   for name, a in arrays.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    arrays = {}
    for name, entry in doc["params"].items():
        values = np.array(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(entry["shape"])):
            raise CheckpointError(f"parameter {name}: {values.size} values for shape {entry['shape']}")
        arrays[name] = values.reshape(entry["shape"])
    return arrays, doc.get("meta", {})


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5,
                     indices: Optional[Iterable] = None) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    for idx in (np.ndindex(x.shape) if indices is None else indices):
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad
