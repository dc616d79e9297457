"""Hot numeric kernels with two interchangeable backends.

The training loop spends nearly all of its time in a handful of fused
row-wise and elementwise operations (softmax, layer norm, GELU, the Adam
update, embedding scatter-add). Each of them exists twice here: a plain
numpy implementation and a numba ``@njit`` twin. The active backend is
chosen at import time from the ``CTXATTN_KERNELS`` environment variable
(``numba`` or ``numpy``) and can be switched at runtime with
:func:`set_backend`. Matrix products always go through numpy's BLAS; numba
would not beat it there.

Both backends compute the same quantities; accumulation order differs, so
results may disagree in the last few ulps. Within one backend everything
is bit-reproducible.

``benchmarks/bench_kernels.py`` compares the two backends side by side.
"""

import math
import os
import warnings

import numpy as np

from .errors import ParameterError

# tanh-form GELU constants
_GELU_K0 = math.sqrt(2.0 / math.pi)
_GELU_K1 = 0.044715

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _np_softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def _np_softmax_bwd(out, g):
    inner = (g * out).sum(axis=1, keepdims=True)
    return out * (g - inner)


def _np_tanh_fwd(x):
    return np.tanh(x)


def _np_tanh_bwd(out, g):
    return g * (1.0 - out * out)


def _np_sigmoid_fwd(x):
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _np_sigmoid_bwd(out, g):
    return g * out * (1.0 - out)


def _np_gelu_fwd(x):
    u = _GELU_K0 * (x + _GELU_K1 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _np_gelu_bwd(x, g):
    u = _GELU_K0 * (x + _GELU_K1 * x * x * x)
    t = np.tanh(u)
    du = _GELU_K0 * (1.0 + 3.0 * _GELU_K1 * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _np_layernorm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0].copy()


def _np_layernorm_bwd(g, xhat, rstd, gain):
    gg = g * gain
    m1 = gg.mean(axis=1, keepdims=True)
    m2 = (gg * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (gg - m1 - xhat * m2)
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def _np_ce_fwd(logits, labels):
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    denom = ex.sum(axis=1, keepdims=True)
    probs = ex / denom
    lse = m[:, 0] + np.log(denom[:, 0])
    picked = logits[np.arange(logits.shape[0]), labels]
    loss = float((lse - picked).mean())
    return loss, probs


def _np_adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _np_scatter_add_rows(table, idx, g):
    np.add.at(table, idx, g)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

@njit(cache=True)
def _nb_softmax_fwd(x):
    n, m = x.shape
    out = np.empty_like(x)
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            e = math.exp(x[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(m):
            out[i, j] /= s
    return out


@njit(cache=True)
def _nb_softmax_bwd(out, g):
    n, m = out.shape
    dx = np.empty_like(out)
    for i in range(n):
        inner = 0.0
        for j in range(m):
            inner += g[i, j] * out[i, j]
        for j in range(m):
            dx[i, j] = out[i, j] * (g[i, j] - inner)
    return dx


@njit(cache=True)
def _nb_tanh_fwd(x):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = math.tanh(flat_in[i])
    return out


@njit(cache=True)
def _nb_tanh_bwd(out, g):
    dx = np.empty_like(out)
    fo, fg, fd = out.ravel(), g.ravel(), dx.ravel()
    for i in range(fo.size):
        fd[i] = fg[i] * (1.0 - fo[i] * fo[i])
    return dx


@njit(cache=True)
def _nb_sigmoid_fwd(x):
    out = np.empty_like(x)
    fi, fo = x.ravel(), out.ravel()
    for i in range(fi.size):
        v = fi[i]
        if v >= 0.0:
            fo[i] = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            fo[i] = e / (1.0 + e)
    return out


@njit(cache=True)
def _nb_sigmoid_bwd(out, g):
    dx = np.empty_like(out)
    fo, fg, fd = out.ravel(), g.ravel(), dx.ravel()
    for i in range(fo.size):
        fd[i] = fg[i] * fo[i] * (1.0 - fo[i])
    return dx


@njit(cache=True)
def _nb_gelu_fwd(x):
    out = np.empty_like(x)
    fi, fo = x.ravel(), out.ravel()
    for i in range(fi.size):
        v = fi[i]
        u = _GELU_K0 * (v + _GELU_K1 * v * v * v)
        fo[i] = 0.5 * v * (1.0 + math.tanh(u))
    return out


@njit(cache=True)
def _nb_gelu_bwd(x, g):
    dx = np.empty_like(x)
    fi, fg, fd = x.ravel(), g.ravel(), dx.ravel()
    for i in range(fi.size):
        v = fi[i]
        u = _GELU_K0 * (v + _GELU_K1 * v * v * v)
        t = math.tanh(u)
        du = _GELU_K0 * (1.0 + 3.0 * _GELU_K1 * v * v)
        fd[i] = fg[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return dx


@njit(cache=True)
def _nb_layernorm_fwd(x, gain, bias, eps):
    n, d = x.shape
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            out[i, j] = h * gain[j] + bias[j]
    return out, xhat, rstd


@njit(cache=True)
def _nb_layernorm_bwd(g, xhat, rstd, gain):
    n, d = g.shape
    dx = np.empty_like(g)
    dgain = np.zeros(d, dtype=g.dtype)
    dbias = np.zeros(d, dtype=g.dtype)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            gg = g[i, j] * gain[j]
            m1 += gg
            m2 += gg * xhat[i, j]
        m1 /= d
        m2 /= d
        r = rstd[i]
        for j in range(d):
            gg = g[i, j] * gain[j]
            dx[i, j] = r * (gg - m1 - xhat[i, j] * m2)
            dgain[j] += g[i, j] * xhat[i, j]
            dbias[j] += g[i, j]
    return dx, dgain, dbias


@njit(cache=True)
def _nb_ce_fwd(logits, labels):
    b, c = logits.shape
    probs = np.empty_like(logits)
    loss = 0.0
    for i in range(b):
        mx = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(c):
            e = math.exp(logits[i, j] - mx)
            probs[i, j] = e
            s += e
        for j in range(c):
            probs[i, j] /= s
        loss += mx + math.log(s) - logits[i, labels[i]]
    return loss / b, probs


@njit(cache=True)
def _nb_adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    # flat views so 1-D and 2-D parameters share one loop
    pf = p.reshape(-1)
    gf = g.reshape(-1)
    mf = m.reshape(-1)
    vf = v.reshape(-1)
    for i in range(pf.size):
        mi = beta1 * mf[i] + (1.0 - beta1) * gf[i]
        vi = beta2 * vf[i] + (1.0 - beta2) * gf[i] * gf[i]
        mf[i] = mi
        vf[i] = vi
        pf[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)


@njit(cache=True)
def _nb_scatter_add_rows(table, idx, g):
    for i in range(idx.size):
        row = idx[i]
        for j in range(g.shape[1]):
            table[row, j] += g[i, j]


_KERNEL_NAMES = (
    "softmax_fwd",
    "softmax_bwd",
    "tanh_fwd",
    "tanh_bwd",
    "sigmoid_fwd",
    "sigmoid_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "ce_fwd",
    "adam_update",
    "scatter_add_rows",
)

BACKENDS = {
    "numpy": {name: globals()[f"_np_{name}"] for name in _KERNEL_NAMES},
}
if HAVE_NUMBA:
    BACKENDS["numba"] = {name: globals()[f"_nb_{name}"] for name in _KERNEL_NAMES}

_active_backend = ""


def set_backend(name: str) -> None:
    """Rebind the module-level kernel functions to the named backend."""
    global _active_backend
    if name not in ("numpy", "numba"):
        raise ParameterError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ParameterError("numba backend requested but numba is not installed")
    for kname, fn in BACKENDS[name].items():
        globals()[kname] = fn
    _active_backend = name


def get_backend() -> str:
    return _active_backend


def _default_backend() -> str:
    requested = os.environ.get("CTXATTN_KERNELS", "").strip().lower()
    if requested in ("numpy", "numba"):
        if requested == "numba" and not HAVE_NUMBA:
            warnings.warn("CTXATTN_KERNELS=numba but numba is unavailable; using numpy")
            return "numpy"
        return requested
    if requested:
        warnings.warn(f"ignoring unknown CTXATTN_KERNELS value {requested!r}")
    return "numba" if HAVE_NUMBA else "numpy"


set_backend(_default_backend())
