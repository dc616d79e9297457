"""Three interchangeable multi-head attention mechanisms.

* ``vanilla``: scaled dot-product softmax attention.
* ``cg`` (context-guided): queries and keys are blended with a projected
  context matrix through per-position tanh gates before the softmax.
* ``qacg`` (quasi-attention context-guided): a sigmoid-based
  quasi-attention matrix is combined additively with the softmax
  attention through a bidirectional per-position gate, so final
  attention entries can be negative (subtractive attention) or exceed 1.

All functions build on the autodiff ops in :mod:`ctxattn.tensor`, so the
whole stack is differentiable and gradient-checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ParameterError
from .tensor import Tensor

VARIANTS = ("vanilla", "cg", "qacg")


@dataclass
class HeadParams:
    """Per-head projections plus the head's gate weight vectors."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    gate_vq: Tensor | None = None  # d_h x 1, hidden-side gate weights
    gate_vk: Tensor | None = None


@dataclass
class AttentionParams:
    """One attention sublayer's parameters.

    The context pathway tensors are None for the vanilla variant. The
    blend projections (``uq``/``uk`` for cg, ``zq``/``zk`` for qacg) and
    the context-side gate vectors are shared across heads; only the
    hidden-side gate vectors inside :class:`HeadParams` are per head.
    """

    heads: list[HeadParams]
    wo: Tensor
    ln_gain: Tensor
    ln_bias: Tensor
    uq: Tensor | None = None  # d x d_h context blend projections (cg)
    uk: Tensor | None = None
    zq: Tensor | None = None  # d x d_h quasi context projections (qacg)
    zk: Tensor | None = None
    gate_vqc: Tensor | None = None  # d_h x 1, context-side gate weights
    gate_vkc: Tensor | None = None
    alpha: float = 1.0  # quasi attention scale
    beta: float = 1.0  # gate composition weights
    gamma: float = 1.0


@dataclass
class AttentionTrace:
    """Captured attention internals for one (layer, head) of one forward.

    ``a_quasi`` and ``lambda_a`` are None for variants without a quasi
    pathway. Arrays are detached copies, safe to keep after the pass.
    """

    layer: int
    head: int
    a_self: np.ndarray
    a_final: np.ndarray
    a_quasi: np.ndarray | None = None
    lambda_a: np.ndarray | None = None
    instance: object = None


def self_attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Row-stochastic attention: softmax of q k^T / sqrt(d_h)."""
    d_h = q.data.shape[1]
    if d_h == 0:
        raise ParameterError("attention head dimension must be positive")
    scores = T.mul(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_h))
    return T.softmax_rows(scores)


def cg_gates(
    q: Tensor,
    k: Tensor,
    ctx_q: Tensor,
    ctx_k: Tensor,
    gate_vq: Tensor,
    gate_vk: Tensor,
    gate_vqc: Tensor,
    gate_vkc: Tensor,
) -> tuple[Tensor, Tensor]:
    """Zero-symmetric blend gates in (-1, 1), one scalar per position.

    ``ctx_q``/``ctx_k`` are the context matrix already projected into
    head space (n x d_h). Each gate is the tanh of a hidden-side score
    plus a context-side score.
    """
    lam_q = T.tanh_elem(T.add(T.matmul(q, gate_vq), T.matmul(ctx_q, gate_vqc)))
    lam_k = T.tanh_elem(T.add(T.matmul(k, gate_vk), T.matmul(ctx_k, gate_vkc)))
    return lam_q, lam_k


def cg_blend(x: Tensor, ctx_x: Tensor, lam: Tensor) -> Tensor:
    """Per-position convex-style blend (1 - lam) * x + lam * ctx_x.

    ``lam`` is n x 1 and broadcasts across the feature columns of its
    row. lam = 0 returns x bitwise; lam = 1 returns ctx_x.
    """
    one_minus = T.add(T.mul(lam, -1.0), 1.0)
    return T.add(T.mul(one_minus, x), T.mul(lam, ctx_x))


def quasi_context_qk(c: Tensor, zq: Tensor, zk: Tensor) -> tuple[Tensor, Tensor]:
    """Project the context matrix into quasi query/key head space."""
    return T.matmul(c, zq), T.matmul(c, zk)


def quasi_attention_matrix(cq: Tensor, ck: Tensor, alpha: float = 1.0) -> Tensor:
    """Sigmoid similarity of quasi query/key pairs, entries in (0, alpha)."""
    d_h = cq.data.shape[1]
    if d_h == 0:
        raise ParameterError("attention head dimension must be positive")
    scores = T.mul(T.matmul(cq, T.transpose(ck)), 1.0 / math.sqrt(d_h))
    a = T.sigmoid_elem(scores)
    if alpha != 1.0:
        a = T.mul(a, float(alpha))
    return a


def quasi_gate(
    q: Tensor,
    k: Tensor,
    cq: Tensor,
    ck: Tensor,
    gate_vq: Tensor,
    gate_vk: Tensor,
    gate_vqc: Tensor,
    gate_vkc: Tensor,
    beta: float = 1.0,
    gamma: float = 1.0,
) -> Tensor:
    """Bidirectional composition gate lambda_A = 1 - (beta*g_q + gamma*g_k).

    ``g_q`` and ``g_k`` are sigmoid gates per position, so with the
    default beta = gamma = 1 the result lies in (-1, 1): negative values
    subtract the quasi attention, positive values add it.
    """
    g_q = T.sigmoid_elem(T.add(T.matmul(q, gate_vq), T.matmul(cq, gate_vqc)))
    g_k = T.sigmoid_elem(T.add(T.matmul(k, gate_vk), T.matmul(ck, gate_vkc)))
    weighted = T.add(T.mul(g_q, float(beta)), T.mul(g_k, float(gamma)))
    return T.add(T.mul(weighted, -1.0), 1.0)


def composed_attention(a_self: Tensor, lam_a: Tensor, a_quasi: Tensor) -> Tensor:
    """Final attention a_self + lam_a * a_quasi with lam_a broadcast per row.

    Entries lie in (-1, 2) for the default gate ranges; rows need not
    sum to 1.
    """
    return T.add(a_self, T.mul(lam_a, a_quasi))


def multi_head_attention(
    hidden: Tensor,
    c: Tensor | None,
    variant: str,
    params: AttentionParams,
    *,
    training: bool = False,
    rng: T.Rng | None = None,
    dropout_p: float = 0.0,
    attn_dropout_p: float = 0.0,
    trace_sink: list | None = None,
    layer: int = 0,
    instance: object = None,
) -> Tensor:
    """Full attention sublayer: heads, concat, output projection, add-norm.

    ``c`` is the shared per-layer context matrix (required for cg/qacg).
    With ``trace_sink`` a list, one :class:`AttentionTrace` per head is
    appended. Attention-probability dropout (``attn_dropout_p``) applies
    to vanilla/cg only; qacg rows are not probability distributions.
    """
    if variant not in VARIANTS:
        raise ParameterError(f"unknown attention variant: {variant!r}")
    if variant != "vanilla" and c is None:
        raise ConfigError(f"variant {variant!r} requires a context matrix")

    ctx_q = ctx_k = cq = ck = None
    if variant == "cg":
        ctx_q = T.matmul(c, params.uq)
        ctx_k = T.matmul(c, params.uk)
    elif variant == "qacg":
        cq, ck = quasi_context_qk(c, params.zq, params.zk)

    head_outputs = []
    for h, hp in enumerate(params.heads):
        q = T.matmul(hidden, hp.wq)
        k = T.matmul(hidden, hp.wk)
        v = T.matmul(hidden, hp.wv)

        a_quasi = lam_a = None
        if variant == "vanilla":
            a_self = a_final = self_attention_weights(q, k)
        elif variant == "cg":
            lam_q, lam_k = cg_gates(
                q, k, ctx_q, ctx_k,
                hp.gate_vq, hp.gate_vk, params.gate_vqc, params.gate_vkc,
            )
            a_self = a_final = self_attention_weights(
                cg_blend(q, ctx_q, lam_q), cg_blend(k, ctx_k, lam_k)
            )
        else:
            a_self = self_attention_weights(q, k)
            a_quasi = quasi_attention_matrix(cq, ck, params.alpha)
            lam_a = quasi_gate(
                q, k, cq, ck,
                hp.gate_vq, hp.gate_vk, params.gate_vqc, params.gate_vkc,
                params.beta, params.gamma,
            )
            a_final = composed_attention(a_self, lam_a, a_quasi)

        if trace_sink is not None:
            trace_sink.append(
                AttentionTrace(
                    layer=layer,
                    head=h,
                    a_self=a_self.data.copy(),
                    a_final=a_final.data.copy(),
                    a_quasi=None if a_quasi is None else a_quasi.data.copy(),
                    lambda_a=None if lam_a is None else lam_a.data.copy(),
                    instance=instance,
                )
            )

        a_used = a_final
        if training and attn_dropout_p > 0.0 and variant != "qacg":
            a_used = T.dropout(a_final, attn_dropout_p, rng, training)
        head_outputs.append(T.matmul(a_used, v))

    merged = T.matmul(T.concat(head_outputs, axis=1), params.wo)
    if training and dropout_p > 0.0:
        merged = T.dropout(merged, dropout_p, rng, training)
    return T.layer_norm(T.add(hidden, merged), params.ln_gain, params.ln_bias)
