"""Encoder model: embeddings, attention layers, classification head.

A model is a :class:`ModelConfig` plus a flat ``name -> Tensor``
parameter dict. Names are stable and hierarchical
(``layer0.attn.head1.wq``, ``embeddings.token``, ...), which is what the
checkpoint format, the optimizer state, and partial loading key on.

The context pathway (context embedding table, per-layer fusion
projection, blend/quasi projections, gate vectors) exists only for the
``cg`` and ``qacg`` variants and is initialized from a small-std normal
so a freshly added pathway barely perturbs a trained backbone; with
``exact_zero_context_init`` it starts at exactly zero, making cg/qacg
forwards bitwise equal to the vanilla model's.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .attention import AttentionParams, HeadParams, multi_head_attention
from .context import context_matrix
from .errors import ConfigError, DataError, ParameterError
from .tensor import Rng, Tensor

BACKBONE_STD = 0.02
CONTEXT_STD = math.exp(-3.0)
LAYER_NORM_EPS = 1e-12

_VARIANTS = ("vanilla", "cg", "qacg")
_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class ModelConfig:
    variant: str = "vanilla"
    num_layers: int = 2
    num_heads: int = 2
    hidden: int = 32
    ffn_dim: int = 64
    vocab_size: int = 64
    max_len: int = 32
    num_classes: int = 3
    num_contexts: int = 8
    dropout: float = 0.1
    attn_dropout: float = 0.0
    context_residual: bool = False
    exact_zero_context_init: bool = False
    seed: int = 0
    dtype: str = "float64"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        self.variant = str(self.variant).lower()
        if self.variant not in _VARIANTS:
            raise ParameterError(f"unknown variant: {self.variant!r}")
        if self.num_heads < 1 or self.hidden % self.num_heads != 0:
            raise ParameterError(
                f"hidden size {self.hidden} not divisible by {self.num_heads} heads"
            )
        if self.num_classes < 2:
            raise ParameterError("num_classes must be at least 2")
        if self.max_len < 2:
            raise ParameterError("max_len must be at least 2")
        if self.num_layers < 0:
            raise ParameterError("num_layers must be nonnegative")
        if self.num_contexts < 1:
            raise ParameterError("num_contexts must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in _DTYPES:
            raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map for every parameter of this config."""
    d, dh, ffn = config.hidden, config.head_dim, config.ffn_dim
    ctx = config.variant != "vanilla"
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (config.vocab_size, d),
        "embeddings.position": (config.max_len, d),
        "embeddings.segment": (2, d),
        "embeddings.ln.gain": (d,),
        "embeddings.ln.bias": (d,),
    }
    for i in range(config.num_layers):
        at = f"layer{i}.attn"
        for h in range(config.num_heads):
            shapes[f"{at}.head{h}.wq"] = (d, dh)
            shapes[f"{at}.head{h}.wk"] = (d, dh)
            shapes[f"{at}.head{h}.wv"] = (d, dh)
            if ctx:
                shapes[f"{at}.head{h}.gate_vq"] = (dh, 1)
                shapes[f"{at}.head{h}.gate_vk"] = (dh, 1)
        shapes[f"{at}.wo"] = (d, d)
        if ctx:
            blend_q, blend_k = (
                ("uq", "uk") if config.variant == "cg" else ("zq", "zk")
            )
            shapes[f"{at}.{blend_q}"] = (d, dh)
            shapes[f"{at}.{blend_k}"] = (d, dh)
            shapes[f"{at}.gate_vqc"] = (dh, 1)
            shapes[f"{at}.gate_vkc"] = (dh, 1)
            shapes[f"layer{i}.ctx.wc"] = (d, 2 * d)
        shapes[f"{at}.ln.gain"] = (d,)
        shapes[f"{at}.ln.bias"] = (d,)
        shapes[f"layer{i}.ffn.w1"] = (d, ffn)
        shapes[f"layer{i}.ffn.b1"] = (ffn,)
        shapes[f"layer{i}.ffn.w2"] = (ffn, d)
        shapes[f"layer{i}.ffn.b2"] = (d,)
        shapes[f"layer{i}.ffn.ln.gain"] = (d,)
        shapes[f"layer{i}.ffn.ln.bias"] = (d,)
    shapes["classifier.w"] = (config.num_classes, d)
    if ctx:
        shapes["context.embedding"] = (config.num_contexts, d)
    return shapes


def is_context_parameter(name: str) -> bool:
    """True for parameters that exist only in the context pathway."""
    if name == "context.embedding" or ".ctx." in name:
        return True
    return (
        name.endswith((".uq", ".uk", ".zq", ".zk"))
        or ".gate_v" in name
    )


def init_model(config: ModelConfig, rng: Rng | None = None) -> dict[str, Tensor]:
    """Draw all parameters for ``config``.

    Each parameter gets its own child stream keyed by name, so the
    backbone draws are identical across variants with the same seed.
    Layer-norm gains start at 1, biases at 0; context-pathway weights
    come from N(0, CONTEXT_STD^2) (or exactly 0 with
    ``exact_zero_context_init``); everything else is truncated normal
    with std BACKBONE_STD.
    """
    if rng is None:
        rng = Rng(config.seed)
    dtype = config.np_dtype
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("ln.gain"):
            data = np.ones(shape)
        elif name.endswith(("ln.bias", ".b1", ".b2")):
            data = np.zeros(shape)
        elif is_context_parameter(name):
            if config.exact_zero_context_init:
                data = np.zeros(shape)
            else:
                data = rng.child(name).normal(shape, std=CONTEXT_STD)
        else:
            data = rng.child(name).truncated_normal(shape, std=BACKBONE_STD)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def _layer_attention_params(
    config: ModelConfig, params: dict[str, Tensor], i: int
) -> AttentionParams:
    at = f"layer{i}.attn"
    ctx = config.variant != "vanilla"
    heads = [
        HeadParams(
            wq=params[f"{at}.head{h}.wq"],
            wk=params[f"{at}.head{h}.wk"],
            wv=params[f"{at}.head{h}.wv"],
            gate_vq=params[f"{at}.head{h}.gate_vq"] if ctx else None,
            gate_vk=params[f"{at}.head{h}.gate_vk"] if ctx else None,
        )
        for h in range(config.num_heads)
    ]
    return AttentionParams(
        heads=heads,
        wo=params[f"{at}.wo"],
        ln_gain=params[f"{at}.ln.gain"],
        ln_bias=params[f"{at}.ln.bias"],
        uq=params.get(f"{at}.uq"),
        uk=params.get(f"{at}.uk"),
        zq=params.get(f"{at}.zq"),
        zk=params.get(f"{at}.zk"),
        gate_vqc=params.get(f"{at}.gate_vqc"),
        gate_vkc=params.get(f"{at}.gate_vkc"),
        alpha=config.alpha,
        beta=config.beta,
        gamma=config.gamma,
    )


def encoder_forward(
    token_ids,
    ctx: int | None,
    config: ModelConfig,
    params: dict[str, Tensor],
    mode: str = "eval",
    rng: Rng | None = None,
    trace_sink: list | None = None,
    segment_ids=None,
    capture: dict | None = None,
    instance: object = None,
) -> Tensor:
    """Run the encoder and return the first position's final hidden row (1 x d).

    ``ctx`` is the integer context id; required for cg/qacg, ignored by
    the vanilla variant (which is structurally context-blind).
    ``segment_ids`` defaults to all zeros. ``capture``, when a dict,
    receives the gathered token-embedding tensor under
    ``"token_embeddings"`` for gradient-saliency use.
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 1:
        raise DataError("token_ids must be a non-empty 1D sequence")
    n = ids.size
    if n > config.max_len:
        raise DataError(f"sequence length {n} exceeds max_len {config.max_len}")
    if config.variant != "vanilla" and ctx is None:
        raise ConfigError(f"variant {config.variant!r} requires a context id")

    tok = T.gather_rows(params["embeddings.token"], ids)
    if capture is not None:
        capture["token_embeddings"] = tok
    pos = T.gather_rows(params["embeddings.position"], np.arange(n, dtype=np.int64))
    seg_idx = (
        np.zeros(n, dtype=np.int64)
        if segment_ids is None
        else np.asarray(segment_ids, dtype=np.int64)
    )
    seg = T.gather_rows(params["embeddings.segment"], seg_idx)
    h = T.layer_norm(
        T.add(T.add(tok, pos), seg),
        params["embeddings.ln.gain"],
        params["embeddings.ln.bias"],
        LAYER_NORM_EPS,
    )
    if training and config.dropout > 0.0:
        h = T.dropout(h, config.dropout, rng, training)

    for i in range(config.num_layers):
        c = None
        if config.variant != "vanilla":
            c = context_matrix(
                ctx,
                h,
                params["context.embedding"],
                params[f"layer{i}.ctx.wc"],
                residual=config.context_residual,
            )
        h = multi_head_attention(
            h,
            c,
            config.variant,
            _layer_attention_params(config, params, i),
            training=training,
            rng=rng,
            dropout_p=config.dropout,
            attn_dropout_p=config.attn_dropout,
            trace_sink=trace_sink,
            layer=i,
            instance=instance,
        )
        f = T.add(T.matmul(h, params[f"layer{i}.ffn.w1"]), params[f"layer{i}.ffn.b1"])
        f = T.gelu_elem(f)
        f = T.add(T.matmul(f, params[f"layer{i}.ffn.w2"]), params[f"layer{i}.ffn.b2"])
        if training and config.dropout > 0.0:
            f = T.dropout(f, config.dropout, rng, training)
        h = T.layer_norm(
            T.add(h, f),
            params[f"layer{i}.ffn.ln.gain"],
            params[f"layer{i}.ffn.ln.bias"],
            LAYER_NORM_EPS,
        )
    return T.gather_rows(h, np.zeros(1, dtype=np.int64))


def class_logits(e_cls: Tensor, w_cls: Tensor) -> Tensor:
    """Unnormalized class scores e_cls @ w_cls^T (1 x C)."""
    return T.matmul(e_cls, T.transpose(w_cls))


def classify(e_cls: Tensor, w_cls: Tensor) -> Tensor:
    """Class probability row: softmax of the class logits."""
    return T.softmax_rows(class_logits(e_cls, w_cls))


class Model:
    """Config + parameters + the vocabularies needed to run end to end."""

    def __init__(
        self,
        config: ModelConfig,
        params: dict[str, Tensor],
        context_vocab=None,
        token_vocab=None,
    ):
        self.config = config
        self.params = params
        self.context_vocab = context_vocab
        self.token_vocab = token_vocab

    @classmethod
    def create(
        cls,
        config: ModelConfig,
        context_vocab=None,
        token_vocab=None,
        rng: Rng | None = None,
    ) -> "Model":
        return cls(config, init_model(config, rng), context_vocab, token_vocab)

    def forward(self, token_ids, ctx: int | None = None, mode: str = "eval", **kw) -> Tensor:
        return encoder_forward(token_ids, ctx, self.config, self.params, mode, **kw)

    def logits(self, token_ids, ctx: int | None = None, mode: str = "eval", **kw) -> Tensor:
        e_cls = self.forward(token_ids, ctx, mode, **kw)
        return class_logits(e_cls, self.params["classifier.w"])

    def predict_proba(self, token_ids, ctx: int | None = None, segment_ids=None) -> np.ndarray:
        """Eval-mode class probabilities as a plain length-C array."""
        with T.no_grad():
            e_cls = self.forward(token_ids, ctx, "eval", segment_ids=segment_ids)
            return classify(e_cls, self.params["classifier.w"]).data[0].copy()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None
