"""Dense tensors with reverse-mode automatic differentiation.

Every formula in the attention stack is expressed through the operations
in this module. A :class:`Tensor` wraps a row-major numpy array; taped
operations record their parents and a backward closure, and
:meth:`Tensor.backward` propagates gradients through the recorded graph.
The finite-difference checker :func:`finite_diff_check` is the independent
oracle used to validate every analytic gradient.

Float64 is the default precision (gradient checks are meaningless at
float32 tolerances); float32 can be selected for training speed.

All randomness flows through :class:`Rng`, a seeded PCG64 generator:
identical seeds give identical streams on every platform.
"""

from __future__ import annotations

import zlib
from contextlib import contextmanager

import numpy as np

from . import kernels as K
from .errors import DataError, NumericsError, ParameterError, ShapeError, UsageError

DEFAULT_DTYPE = np.float64

_checked = False
_grad_disabled = 0


def set_checked(flag: bool) -> None:
    """Toggle checked mode: every op output is scanned for NaN/Inf."""
    global _checked
    _checked = bool(flag)


@contextmanager
def no_grad():
    """Disable taping inside the block; forwards run without graph records."""
    global _grad_disabled
    _grad_disabled += 1
    try:
        yield
    finally:
        _grad_disabled -= 1


class Rng:
    """Deterministic pseudorandom stream (numpy PCG64).

    The single generator algorithm used project-wide. ``child(*tags)``
    derives an independent stream from the seed plus CRC32 of the tags,
    so per-component streams are stable regardless of creation order.
    """

    def __init__(self, seed: int, _entropy: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._entropy = _entropy
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *_entropy]))
        )

    def child(self, *tags: str) -> "Rng":
        extra = tuple(zlib.crc32(t.encode("utf-8")) for t in tags)
        return Rng(self.seed, self._entropy + extra)

    def normal(self, shape, std: float = 1.0, mean: float = 0.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def truncated_normal(self, shape, std: float, bound_stds: float = 2.0) -> np.ndarray:
        """Normal draw with out-of-bound values redrawn (BERT-style init)."""
        out = self._gen.normal(0.0, std, size=shape)
        lim = bound_stds * std
        bad = np.abs(out) > lim
        while bad.any():
            out[bad] = self._gen.normal(0.0, std, size=int(bad.sum()))
            bad = np.abs(out) > lim
        return out

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]

    def shuffle(self, seq: list) -> None:
        for i in range(len(seq) - 1, 0, -1):
            j = int(self._gen.integers(0, i + 1))
            seq[i], seq[j] = seq[j], seq[i]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


class Tensor:
    """A dense array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), float(other))

    def __truediv__(self, other):
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return tensor_sum(self)

    def backward(self) -> None:
        backward(self)


def _finalize(out: Tensor) -> Tensor:
    if _checked and not np.all(np.isfinite(out.data)):
        raise NumericsError("non-finite values produced (checked mode)")
    return out


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_disabled == 0 and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return _finalize(out)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        const = float(b)

        def bwd_const(g, acc):
            acc(a, g)

        return _make(a.data + const, (a,), bwd_const)

    def bwd(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        const = float(b)

        def bwd_const(g, acc):
            acc(a, g * const)

        return _make(a.data * const, (a,), bwd_const)

    def bwd(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with gradients da = g @ b^T, db = a^T @ g."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )

    def bwd(g, acc):
        acc(a, g @ b.data.T)
        acc(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    def bwd(g, acc):
        acc(a, _c(g.T))

    return _make(_c(a.data.T), (a,), bwd)


def tensor_sum(a: Tensor) -> Tensor:
    def bwd(g, acc):
        acc(a, np.full_like(a.data, float(g)))

    return _make(a.data.sum(), (a,), bwd)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, acc):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            acc(p, _c(g[tuple(sl)]))

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bwd)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2D tensor; backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows expects 1D indices, got shape {idx.shape}")
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2D table, got {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise DataError(
            f"gather_rows index out of range [0, {table.data.shape[0]})"
        )

    def bwd(g, acc):
        dt = np.zeros_like(table.data)
        K.scatter_add_rows(dt, idx, _c(g))
        acc(table, dt)

    return _make(table.data[idx], (table,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects 2D input, got {x.data.shape}")
    out_data = K.softmax_fwd(_c(x.data))

    def bwd(g, acc):
        acc(x, K.softmax_bwd(out_data, _c(g)))

    return _make(out_data, (x,), bwd)


def tanh_elem(x: Tensor) -> Tensor:
    out_data = K.tanh_fwd(_c(x.data))

    def bwd(g, acc):
        acc(x, K.tanh_bwd(out_data, _c(g)))

    return _make(out_data, (x,), bwd)


def sigmoid_elem(x: Tensor) -> Tensor:
    out_data = K.sigmoid_fwd(_c(x.data))

    def bwd(g, acc):
        acc(x, K.sigmoid_bwd(out_data, _c(g)))

    return _make(out_data, (x,), bwd)


def gelu_elem(x: Tensor) -> Tensor:
    xd = _c(x.data)
    out_data = K.gelu_fwd(xd)

    def bwd(g, acc):
        acc(x, K.gelu_bwd(xd, _c(g)))

    return _make(out_data, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-row standardization followed by an elementwise affine map."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) or bias.data.shape != (
        x.data.shape[1],
    ):
        raise ShapeError(
            f"layer_norm shapes: x {x.data.shape}, gain {gain.data.shape}, "
            f"bias {bias.data.shape}"
        )
    out_data, xhat, rstd = K.layernorm_fwd(_c(x.data), _c(gain.data), _c(bias.data), eps)

    def bwd(g, acc):
        dx, dgain, dbias = K.layernorm_bwd(_c(g), xhat, rstd, _c(gain.data))
        acc(x, dx)
        acc(gain, dgain)
        acc(bias, dbias)

    return _make(out_data, (x, gain, bias), bwd)


def dropout(x: Tensor, p: float, rng: Rng | None, training: bool) -> Tensor:
    """Zero elements with probability ``p`` and rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        def bwd_id(g, acc):
            acc(x, g)

        return _make(x.data.copy(), (x,), bwd_id)
    if rng is None:
        raise ParameterError("dropout in training mode needs an Rng")
    keep = (rng.uniform(x.data.shape) >= p).astype(x.data.dtype)
    scale = 1.0 / (1.0 - p)
    mask = keep * scale

    def bwd(g, acc):
        acc(x, g * mask)

    return _make(x.data * mask, (x,), bwd)


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true classes, via log-sum-exp.

    Gradient w.r.t. the logits is (softmax - onehot) / batch.
    """
    lab = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or lab.ndim != 1 or lab.shape[0] != logits.data.shape[0]:
        raise ShapeError(
            f"cross_entropy shapes: logits {logits.data.shape}, labels {lab.shape}"
        )
    ncls = logits.data.shape[1]
    if lab.size and (lab.min() < 0 or lab.max() >= ncls):
        raise DataError(f"label out of range [0, {ncls})")
    loss, probs = K.ce_fwd(_c(logits.data), lab)

    def bwd(g, acc):
        scale = float(np.asarray(g).reshape(-1)[0]) / lab.shape[0]
        d = probs.copy()
        d[np.arange(lab.shape[0]), lab] -= 1.0
        acc(logits, d * scale)

    return _make(
        np.asarray(loss, dtype=logits.data.dtype).reshape(()), (logits,), bwd
    )


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate gradients of ``loss`` into every participating tensor.

    Repeated calls without clearing grads accumulate additively. The flow
    buffer is private to each call, so re-running backward on the same
    graph adds exactly one more copy of each gradient.
    """
    if loss.data.size != 1:
        raise UsageError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    flows: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data)
    }

    def acc(t: Tensor, g: np.ndarray) -> None:
        cur = flows.get(id(t))
        flows[id(t)] = g if cur is None else cur + g

    for node in reversed(topo):
        g = flows.get(id(node))
        if g is None or node._backward is None:
            continue
        node._backward(g, acc)

    for node in topo:
        if not node.requires_grad:
            continue
        g = flows.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error at each coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    x.zero_grad()
    y = f(x)
    if y.data.size != 1:
        raise UsageError("finite_diff_check needs a scalar-valued function")
    y.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(x).data)
            flat[i] = orig - step
            fm = float(f(x).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * step)
    numeric = numeric.reshape(x.data.shape)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
