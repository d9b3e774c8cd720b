"""Dense float64 tensors with reverse-mode automatic differentiation.

Small numpy-backed engine sufficient for an encoder-decoder transformer
and the training objectives built on top of it. Ops record a computation
graph when (and only when) gradients are enabled and some input requires
them; ``backward`` walks the graph once in reverse topological order and
accumulates gradients into the leaf tensors.

Everything is float64. Forward evaluation is pure: ops never mutate
their inputs and identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
MASK_NEG = -1e9  # additive attention mask value; large but finite to avoid NaN

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation / decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    """Build an op result, recording the graph only when it matters."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate additively into every reachable leaf tensor
    (``requires_grad`` tensors with no parents); repeated calls on the
    same graph keep accumulating, matching the usual autodiff contract.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    # iterative topological order (graphs can be deep)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} vs {b.data.shape}") from None

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.data.shape} vs {b.data.shape}") from None

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _make(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} vs {b.data.shape}") from None

    def bwd(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _make(data, (a, b), bwd)


def pow_const(a, p: float) -> Tensor:
    a = as_tensor(a)
    data = a.data**p

    def bwd(g):
        return ((a, g * p * a.data ** (p - 1)),)

    return _make(data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def bwd(g):
        return ((a, g * data),)

    return _make(data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def bwd(g):
        return ((a, g / a.data),)

    return _make(data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        return ((a, g * data * (1.0 - data)),)

    return _make(data, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        return ((a, g * (a.data > 0.0)),)

    return _make(data, (a,), bwd)


def gelu(a) -> Tensor:
    """tanh-approximation GELU."""
    a = as_tensor(a)
    x = a.data
    inner = GELU_C * (x + GELU_A * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bwd(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * GELU_C * (1.0 + 3.0 * GELU_A * x**2)
        return ((a, g * d),)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.data.shape).copy()),)

    return _make(data, (a,), bwd)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis] if isinstance(axis, int) else int(
            np.prod([a.data.shape[i] for i in axis])
        )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(g):
        return ((a, g.reshape(a.data.shape)),)

    return _make(data, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bwd(g):
        return ((a, g.transpose(inv)),)

    return _make(data, (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((t, g[tuple(idx)]))
        return tuple(pieces)

    return _make(data, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.data.shape} x {b.data.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.data.shape} x {b.data.shape}") from None

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.data.shape)), (b, _unbroadcast(gb, b.data.shape)))

    return _make(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# neural-net primitives


def embedding(weight, ids) -> Tensor:
    """Look up rows of `weight` (V, d) by an integer id array."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding: ids must be integers")
    vocab = weight.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(
            f"embedding: id out of range [0, {vocab}) (min={ids.min()}, max={ids.max()})"
        )
    data = weight.data[ids]

    def bwd(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[1]))
        return ((weight, gw),)

    return _make(data, (weight,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((a, data * (g - dot)),)

    return _make(data, (a,), bwd)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def bwd(g):
        return ((a, g - np.exp(data) * g.sum(axis=axis, keepdims=True)),)

    return _make(data, (a,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis; a constant row maps to zeros before affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain/bias {gain.data.shape}/{bias.data.shape} for width {n}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = centered * istd
    data = xhat * gain.data + bias.data

    def bwd(g):
        gx_hat = g * gain.data
        s1 = gx_hat.sum(axis=-1, keepdims=True)
        s2 = (gx_hat * xhat).sum(axis=-1, keepdims=True)
        gx = istd / n * (n * gx_hat - s1 - xhat * s2)
        axes = tuple(range(g.ndim - 1))
        return ((x, gx), (gain, (g * xhat).sum(axis=axes)), (bias, g.sum(axis=axes)))

    return _make(data, (x, gain, bias), bwd)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; rate 0 is the identity map."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return as_tensor(x)
    x = as_tensor(x)
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


def cross_entropy_gather(log_probs, ids) -> Tensor:
    """Pick per-position log-probabilities of the target ids.

    log_probs: (..., V); ids: integer array of the leading shape.
    """
    log_probs = as_tensor(log_probs)
    ids = np.asarray(ids)
    if ids.shape != log_probs.data.shape[:-1]:
        raise ShapeError(
            f"cross_entropy_gather: ids {ids.shape} vs log_probs {log_probs.data.shape}"
        )
    vocab = log_probs.data.shape[-1]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"cross_entropy_gather: id out of range [0, {vocab})")
    data = np.take_along_axis(log_probs.data, ids[..., None], axis=-1)[..., 0]

    def bwd(g):
        gl = np.zeros_like(log_probs.data)
        np.put_along_axis(gl, ids[..., None], g[..., None], axis=-1)
        return ((log_probs, gl),)

    return _make(data, (log_probs,), bwd)


def kl_from_logits(student_logits, teacher_log_probs: np.ndarray) -> Tensor:
    """Per-position KL(student || teacher) over the last axis.

    The teacher is a constant log-probability array (normalized). The
    backward pass uses the algebraically simplified Jacobian product
    p*(d - sum(p*d)) with d = log p_student - log p_teacher, which is
    exactly zero when the two distributions coincide — so a search that
    starts at the teacher sees a genuinely stationary point instead of
    floating-point noise.
    """
    z = as_tensor(student_logits)
    lt = np.asarray(teacher_log_probs, dtype=np.float64)
    if lt.shape != z.data.shape:
        raise ShapeError(f"kl_from_logits: shapes {z.data.shape} vs {lt.shape}")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(ls)
    diff = ls - lt
    data = (p * diff).sum(axis=-1)

    def bwd(g):
        pd = p * diff
        gz = g[..., None] * (pd - p * pd.sum(axis=-1, keepdims=True))
        return ((z, gz),)

    return _make(data, (z,), bwd)


def kl_teacher_student(teacher_log_probs: np.ndarray, student_logits) -> Tensor:
    """Per-position KL(teacher || student) over the last axis.

    Teacher log-probabilities are a constant normalized array; the
    gradient with respect to the student logits is the classic
    p_student - p_teacher, exactly zero when student equals teacher.
    """
    z = as_tensor(student_logits)
    lt = np.asarray(teacher_log_probs, dtype=np.float64)
    if lt.shape != z.data.shape:
        raise ShapeError(f"kl_teacher_student: shapes {lt.shape} vs {z.data.shape}")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    pt = np.exp(lt)
    data = (pt * (lt - ls)).sum(axis=-1)

    def bwd(g):
        gz = g[..., None] * (np.exp(ls) - pt)
        return ((z, gz),)

    return _make(data, (z,), bwd)
