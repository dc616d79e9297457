"""Model diagnostics: gradient saliency, attention traces, exports.

Everything here reads a trained model without mutating it. Exports are
CSV files meant for external plotting; floats are printed with 9
significant digits. Histogram exports re-verify on every trace that the
final attention equals self attention plus the gated quasi term, as a
consistency audit of what is being plotted.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionTrace
from .data import SPECIAL_TOKENS
from .errors import NumericsError, ParameterError, UsageError
from .model import Model, ModelConfig
from .tensor import Rng, Tensor

AUDIT_TOL = 1e-9

# Theoretical value ranges of each traced variable; histogram bins span
# these exactly.
VARIABLE_RANGES = {
    "a_self": (0.0, 1.0),
    "a_quasi": (0.0, 1.0),
    "lambda_a": (-1.0, 1.0),
    "a_final": (-1.0, 2.0),
}


@dataclass
class SaliencyReport:
    """Per-token relevance for one classified instance.

    Scores are L2 norms of the predicted-class logit's gradient with
    respect to each position's token embedding, normalized by the
    maximum (all-zero when the logit is constant).
    """

    tokens: list[str]
    scores: np.ndarray
    special_mask: list[bool]
    context: tuple[str | None, str]
    predicted_index: int
    predicted_label: str


def gradient_saliency(model: Model, instance, labels: list[str] | None = None) -> SaliencyReport:
    """Token relevance scores for the model's own predicted class."""
    ctx = None if model.config.variant == "vanilla" else instance.ctx
    model.zero_grads()
    capture: dict = {}
    logits = model.logits(
        instance.token_ids,
        ctx,
        mode="eval",
        segment_ids=instance.segment_ids,
        capture=capture,
    )
    pred = int(np.argmax(logits.data[0]))
    onehot = np.zeros_like(logits.data)
    onehot[0, pred] = 1.0
    T.tensor_sum(T.mul(logits, Tensor(onehot))).backward()

    grads = capture["token_embeddings"].grad
    scores = np.sqrt((grads * grads).sum(axis=1))
    peak = float(scores.max())
    if peak > 0.0:
        scores = scores / peak
    else:
        warnings.warn("all-zero saliency scores: the predicted logit is constant")
    model.zero_grads()

    ids = list(instance.token_ids)
    vocab = model.token_vocab
    tokens = [vocab.word(i) if vocab else str(i) for i in ids]
    _ex, target, aspect = instance.origin
    return SaliencyReport(
        tokens=tokens,
        scores=scores,
        special_mask=[i < len(SPECIAL_TOKENS) for i in ids],
        context=(target, aspect),
        predicted_index=pred,
        predicted_label=labels[pred] if labels else str(pred),
    )


def collect_traces(
    model: Model,
    instances: list,
    layer: int | str = "all",
    head: int | str = "all",
) -> list[AttentionTrace]:
    """Attention internals for every instance, filtered by layer/head."""
    if layer != "all" and not 0 <= int(layer) < model.config.num_layers:
        raise UsageError(f"layer {layer} out of range")
    if head != "all" and not 0 <= int(head) < model.config.num_heads:
        raise UsageError(f"head {head} out of range")
    out: list[AttentionTrace] = []
    for inst in instances:
        sink: list[AttentionTrace] = []
        ctx = None if model.config.variant == "vanilla" else inst.ctx
        with T.no_grad():
            model.forward(
                inst.token_ids,
                ctx,
                mode="eval",
                trace_sink=sink,
                segment_ids=inst.segment_ids,
            )
        for tr in sink:
            tr.instance = inst.origin
            if layer != "all" and tr.layer != int(layer):
                continue
            if head != "all" and tr.head != int(head):
                continue
            out.append(tr)
    return out


def audit_traces(traces: list[AttentionTrace], tol: float = AUDIT_TOL) -> None:
    """Check a_final == a_self + lambda_a * a_quasi on every quasi trace."""
    for tr in traces:
        if tr.a_quasi is None:
            continue
        recomposed = tr.a_self + tr.lambda_a * tr.a_quasi
        worst = float(np.max(np.abs(tr.a_final - recomposed)))
        if worst > tol:
            raise NumericsError(
                f"attention composition audit failed at layer {tr.layer} "
                f"head {tr.head}: max deviation {worst:.3e}"
            )


@dataclass
class HistogramExport:
    """Fixed-range histogram over one traced variable."""

    variable: str
    edges: np.ndarray
    counts: np.ndarray
    n_examples: int
    n_entries: int

    def csv_rows(self) -> list[tuple]:
        return [
            (_fmt(self.edges[i]), _fmt(self.edges[i + 1]), int(self.counts[i]))
            for i in range(len(self.counts))
        ]


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def export_histograms(
    traces: list[AttentionTrace], variable: str, bins: int = 60
) -> HistogramExport:
    """Histogram of all matrix entries of ``variable`` across traces."""
    if variable not in VARIABLE_RANGES:
        raise ParameterError(
            f"unknown variable {variable!r}; choose from {sorted(VARIABLE_RANGES)}"
        )
    if not traces:
        raise UsageError("no traces to export")
    audit_traces(traces)
    values = []
    for tr in traces:
        arr = getattr(tr, variable)
        if arr is None:
            raise UsageError(
                f"trace from layer {tr.layer} head {tr.head} has no "
                f"{variable!r} (not a quasi-attention model)"
            )
        values.append(arr.ravel())
    flat = np.concatenate(values)
    counts, edges = np.histogram(flat, bins=bins, range=VARIABLE_RANGES[variable])
    return HistogramExport(
        variable=variable,
        edges=edges,
        counts=counts,
        n_examples=len({tr.instance for tr in traces}),
        n_entries=int(flat.size),
    )


def write_histogram_csv(path, export: HistogramExport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        w.writerows(export.csv_rows())


def export_token_attention(
    trace: AttentionTrace, token_strings: list[str], saliency=None
) -> list[tuple]:
    """Per-token table for one trace: first-position attention rows.

    Columns are the self-attention row of the classifier position and
    the gated quasi contribution (lambda_a * a_quasi) of that row, each
    normalized by its absolute maximum; plus an optional saliency
    column. Returns rows (position, token, self_attn, quasi_contrib,
    saliency).
    """
    n = trace.a_self.shape[0]
    if len(token_strings) != n:
        raise UsageError(
            f"{len(token_strings)} tokens for an attention matrix of size {n}"
        )
    if saliency is not None and len(saliency) != n:
        raise UsageError("saliency length does not match token count")
    audit_traces([trace])

    self_row = trace.a_self[0].copy()
    if trace.a_quasi is not None:
        quasi_row = (trace.lambda_a[0] * trace.a_quasi[0]).copy()
    else:
        quasi_row = np.zeros(n)

    def norm(row: np.ndarray) -> np.ndarray:
        peak = float(np.max(np.abs(row)))
        return row / peak if peak > 0.0 else row

    self_row = norm(self_row)
    quasi_row = norm(quasi_row)
    rows = []
    for i in range(n):
        sal = _fmt(saliency[i]) if saliency is not None else ""
        rows.append(
            (i, token_strings[i], _fmt(self_row[i]), _fmt(quasi_row[i]), sal)
        )
    return rows


def write_token_attention_csv(path, rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "token", "self_attn", "quasi_contrib", "saliency"])
        w.writerows(rows)


def gradcheck_model(
    variant: str,
    seed: int = 3,
    scale: float = 0.5,
    step: float = 1e-5,
) -> dict[str, float]:
    """Finite-difference check of a full micro model, per parameter tensor.

    Parameters are redrawn at a generic scale: the tiny production init
    makes some attention-projection gradients fall below the
    finite-difference noise floor, which would measure noise rather
    than correctness.
    """
    cfg = ModelConfig(
        variant=variant,
        num_layers=1,
        num_heads=1,
        hidden=4,
        ffn_dim=8,
        vocab_size=12,
        max_len=8,
        num_classes=3,
        num_contexts=4,
        dropout=0.0,
        seed=seed,
    )
    m = Model.create(cfg)
    r = Rng(seed).child("gradcheck")
    for name, p in m.params.items():
        s = r.child(name)
        if name.endswith("ln.gain"):
            p.data = np.ascontiguousarray(1.0 + s.normal(p.data.shape, std=0.2))
        else:
            p.data = np.ascontiguousarray(s.normal(p.data.shape, std=scale))

    batch = [([2, 5, 7], 0, 1), ([2, 4, 9], 2, 0), ([2, 8, 3], 3, 2)]

    def loss_fn(_p):
        parts = [
            m.logits(ids, ctx if variant != "vanilla" else None)
            for ids, ctx, _l in batch
        ]
        return T.cross_entropy_logits(
            T.concat(parts, axis=0), [l for _i, _c, l in batch]
        )

    return {
        name: T.finite_diff_check(loss_fn, p, step=step)
        for name, p in m.params.items()
    }
