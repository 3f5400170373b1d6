"""Dense n-d tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a contiguous row-major numpy array and records, for every
operation, a closure that propagates gradients back to its parents.  The
primitive set is exactly what the transformer needs: elementwise arithmetic,
batched matmul, shape manipulation, softmax / layer norm over the last axis,
GELU/tanh, axis reductions, and seeded dropout / stochastic-depth masks.

Floating-point width is a process-global switch (`set_default_dtype`):
float32 for training, float64 for gradient checking.  Every op validates its
output for non-finite values and raises `NonFiniteError` on failure, so a
finished forward pass is guaranteed finite.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or +-inf."""


_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    """Set the process-global element type ('float32' or 'float64')."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the global default dtype."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block (pure evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return data


class Tensor:
    """N-dimensional array node in a reverse-mode autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[np.ndarray], None] | None, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._backward = backward if needs else None
        out._parents = tuple(p for p in parents if p.requires_grad) if needs else ()
        return out

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

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad,
                      dtype=dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this node; gradients sum into `.grad`."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without a seed gradient requires a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative DFS: deep graphs must not hit the recursion limit
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            if node is not self:
                node.grad = None  # free intermediate buffers; leaves keep theirs

    def _send(self, parent: "Tensor", g: np.ndarray) -> None:
        if parent.requires_grad:
            parent._accumulate(g)

    # -- operators ------------------------------------------------------------

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, like=self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def _binary_shapes_ok(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _binary_shapes_ok(a.data, b.data, "add")
    out_data = a.data + b.data

    def backward(g):
        out._send(a, _unbroadcast(g, a.shape))
        out._send(b, _unbroadcast(g, b.shape))

    out = Tensor._result(out_data, (a, b), backward, "add")
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _binary_shapes_ok(a.data, b.data, "sub")
    out_data = a.data - b.data

    def backward(g):
        out._send(a, _unbroadcast(g, a.shape))
        out._send(b, _unbroadcast(-g, b.shape))

    out = Tensor._result(out_data, (a, b), backward, "sub")
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _binary_shapes_ok(a.data, b.data, "mul")
    out_data = a.data * b.data

    def backward(g):
        out._send(a, _unbroadcast(g * b.data, a.shape))
        out._send(b, _unbroadcast(g * a.data, b.shape))

    out = Tensor._result(out_data, (a, b), backward, "mul")
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _binary_shapes_ok(a.data, b.data, "div")
    out_data = a.data / b.data

    def backward(g):
        out._send(a, _unbroadcast(g / b.data, a.shape))
        out._send(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    out = Tensor._result(out_data, (a, b), backward, "div")
    return out


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    e = float(exponent)
    out_data = a.data ** e

    def backward(g):
        out._send(a, g * e * a.data ** (e - 1.0))

    out = Tensor._result(out_data, (a,), backward, "power")
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        out._send(a, g * out.data)

    out = Tensor._result(out_data, (a,), backward, "exp")
    return out


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        out._send(a, g * 0.5 / out.data)

    out = Tensor._result(out_data, (a,), backward, "sqrt")
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        out._send(a, g * (1.0 - out.data * out.data))

    out = Tensor._result(out_data, (a,), backward, "tanh")
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit (tanh form)."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        out._send(a, g * d)

    out = Tensor._result(out_data, (a,), backward, "gelu")
    return out


# -- matmul and shape ops -----------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix multiply; leading batch dims broadcast."""
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    try:
        out_data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        out._send(a, _unbroadcast(ga, a.shape))
        out._send(b, _unbroadcast(gb, b.shape))

    out = Tensor._result(out_data, (a, b), backward, "matmul")
    return out


def reshape(a, *shape) -> Tensor:
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = np.ascontiguousarray(a.data.reshape(shape))

    def backward(g):
        out._send(a, g.reshape(a.shape))

    out = Tensor._result(out_data, (a,), backward, "reshape")
    return out


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    out_data = np.ascontiguousarray(a.data.transpose(axes))
    inverse = np.argsort(axes)

    def backward(g):
        out._send(a, g.transpose(inverse))

    out = Tensor._result(out_data, (a,), backward, "transpose")
    return out


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out._send(t, g[tuple(idx)])

    out = Tensor._result(out_data, tuple(tensors), backward, "concat")
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, parts):
            out._send(t, part)

    out = Tensor._result(out_data, tuple(tensors), backward, "stack")
    return out


def _getitem(a: Tensor, key) -> Tensor:
    out_data = np.ascontiguousarray(a.data[key])

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        out._send(a, ga)

    out = Tensor._result(out_data, (a,), backward, "getitem")
    return out


def index_select(a, axis: int, indices) -> Tensor:
    """Gather slices along `axis` (duplicate indices allowed)."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out_data = np.ascontiguousarray(np.take(a.data, idx, axis=axis))

    def backward(g):
        ga = np.zeros_like(a.data)
        key: list = [slice(None)] * a.ndim
        key[axis] = idx
        np.add.at(ga, tuple(key), g)
        out._send(a, ga)

    out = Tensor._result(out_data, (a,), backward, "index_select")
    return out


# -- reductions ---------------------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    out_data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        out._send(a, np.broadcast_to(g, a.shape).copy())

    out = Tensor._result(out_data, (a,), backward, "sum")
    return out


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    out_data = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in axis]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        out._send(a, np.broadcast_to(g / count, a.shape).copy())

    out = Tensor._result(out_data, (a,), backward, "mean")
    return out


# -- softmax / layer norm -----------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        s = out.data
        out._send(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    out = Tensor._result(out_data, (a,), backward, "softmax")
    return out


LAYERNORM_EPS = 1e-6  # added to the variance; keeps zero-variance rows finite


def layer_norm(x, gamma, beta, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the affine scale/shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm: affine params {gamma.shape}/{beta.shape} do not match feature dim {x.shape[-1:]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out_data = xh * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        out._send(gamma, (g * xh).sum(axis=lead))
        out._send(beta, g.sum(axis=lead))
        dxh = g * gamma.data
        n = x.shape[-1]
        dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                    - xh * (dxh * xh).mean(axis=-1, keepdims=True))
        # dx above folds the 1/n factors of the two means; verified by gradcheck
        out._send(x, dx)

    out = Tensor._result(out_data, (x, gamma, beta), backward, "layer_norm")
    return out


# -- stochastic masks (train-mode only) ----------------------------------------

def dropout(x, p: float, rng: np.random.Generator | None = None, train: bool = False) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    x = _as_tensor(x)
    if not train or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("train-mode dropout requires a seeded Generator")
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep
    out_data = x.data * mask

    def backward(g):
        out._send(x, g * mask)

    out = Tensor._result(out_data, (x,), backward, "dropout")
    return out


def drop_path(x, p: float, rng: np.random.Generator | None = None,
              train: bool = False, batch_axis: int = 0) -> Tensor:
    """Stochastic depth: zero whole samples of a residual branch."""
    x = _as_tensor(x)
    if not train or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"drop-path rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("train-mode drop_path requires a seeded Generator")
    keep = 1.0 - p
    gate_shape = [1] * x.ndim
    gate_shape[batch_axis] = x.shape[batch_axis]
    gate = (rng.random(gate_shape) < keep).astype(x.data.dtype) / keep
    out_data = x.data * gate

    def backward(g):
        out._send(x, g * gate)

    out = Tensor._result(out_data, (x,), backward, "drop_path")
    return out


# -- multi-head attention -----------------------------------------------------

def multi_head_attention(q, k, v, heads: int,
                         wq, wk, wv, wo,
                         bq=None, bk=None, bv=None, bo=None,
                         return_weights: bool = False):
    """Scaled dot-product attention with input/output projections.

    `q` has shape (..., S_q, D) and `k`/`v` share (..., S_kv, D); leading
    batch dims broadcast.  Self-attention is the q is k is v case; a query
    sequence of length 1 against V keys is the cross-attention pooling used
    by the variable aggregator.  Scores are scaled by 1/sqrt(D/heads).
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    d = q.shape[-1]
    if d % heads != 0:
        raise ShapeError(f"embedding dim {d} is not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeError(f"q/k/v feature dims differ: {q.shape}, {k.shape}, {v.shape}")
    dh = d // heads

    def project(x, w, b):
        y = matmul(x, w)
        if b is not None:
            y = add(y, b)
        # (..., S, D) -> (..., heads, S, dh)
        y = reshape(y, y.shape[:-1] + (heads, dh))
        return swapaxes(y, -2, -3)

    qh = project(q, wq, bq)
    kh = project(k, wk, bk)
    vh = project(v, wv, bv)

    scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)                       # (..., heads, S_q, dh)
    ctx = swapaxes(ctx, -2, -3)                  # (..., S_q, heads, dh)
    ctx = reshape(ctx, ctx.shape[:-2] + (d,))
    out = matmul(ctx, wo)
    if bo is not None:
        out = add(out, bo)
    if return_weights:
        return out, attn
    return out


# -- parameter store ----------------------------------------------------------

class ParamStore:
    """Named parameter tensors with deterministic lexicographic iteration."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        if params:
            for name, t in params.items():
                self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def tensors(self) -> Iterator[Tensor]:
        for _, t in self.items():
            yield t

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self.items():
            out.add(name, Tensor(t.data.copy(), dtype=t.data.dtype))
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, t in self.items():
            out.add(name, Tensor(t.data.astype(dtype), dtype=dtype))
        return out

    def set_trainable(self, predicate: Callable[[str], bool]) -> None:
        """Mark parameters trainable or frozen by name; frozen ones receive no grads."""
        for name, t in self._params.items():
            t.requires_grad = bool(predicate(name))

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if self._params[n].requires_grad]


# -- finite-difference verification --------------------------------------------

def gradient_check(f: Callable[[ParamStore], Tensor], params: ParamStore,
                   eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central finite differences.

    `f` maps the store to a scalar loss.  Requires 64-bit parameters; the
    relative error per element is |autodiff - fd| / max(|fd|, 1e-8) and the
    max is taken over every element of every parameter.
    """
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise TypeError(f"gradient_check requires float64 parameters; {name!r} is {t.data.dtype}")

    params.zero_grad()
    loss = f(params)
    if loss.size != 1:
        raise ShapeError(f"gradient_check needs a scalar loss, got shape {loss.shape}")
    _check_finite(loss.data, "gradient_check loss")
    loss.backward()

    worst = 0.0
    with no_grad():
        for name, t in params.items():
            if not t.requires_grad:
                continue
            ad = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            ad_flat = ad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f(params).data)
                flat[i] = orig - eps
                lo = float(f(params).data)
                flat[i] = orig
                fd = (hi - lo) / (2.0 * eps)
                rel = abs(ad_flat[i] - fd) / max(abs(fd), 1e-8)
                if rel > worst:
                    worst = rel
    return worst
