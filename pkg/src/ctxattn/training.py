"""Adam optimizer, training loop, and model evaluation entry points.

Training minimizes the mean cross entropy over per-query classification
instances with per-epoch seeded shuffles. The dev split is scored every
``eval_every`` epochs on instance accuracy and eval-mode cross entropy;
the lowest-dev-loss parameter snapshot is restored into the model when
the loop finishes.
A non-finite loss aborts the run with a diagnostic record of the
offending batch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels as K
from . import tensor as T
from .errors import ParameterError, TrainingDivergedError, UsageError
from .metrics import (
    MetricReport,
    PredictionRecord,
    absa_metrics,
    overall_accuracy,
    tabsa_metrics,
)
from .model import Model
from .tensor import Rng, Tensor


class Adam:
    """Standard Adam with bias correction, applied in place per tensor."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            K.adam_update(
                p.data,
                np.ascontiguousarray(p.grad),
                self.m[name],
                self.v[name],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 1e-3
    dropout: float = 0.1
    seed: int = 0
    eval_every: int = 1  # in epochs

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ParameterError("epochs, batch_size, eval_every must be >= 1")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _instance_ctx(model: Model, instance) -> int | None:
    return None if model.config.variant == "vanilla" else instance.ctx


def batch_loss(model: Model, batch, mode: str = "train", rng: Rng | None = None) -> Tensor:
    """Cross entropy over a batch: per-instance forwards, concatenated logits."""
    parts = [
        model.logits(
            inst.token_ids,
            _instance_ctx(model, inst),
            mode=mode,
            rng=rng,
            segment_ids=inst.segment_ids,
        )
        for inst in batch
    ]
    labels = [inst.label for inst in batch]
    return T.cross_entropy_logits(T.concat(parts, axis=0), labels)


def _divergence_dump(model: Model, batch, epoch: int, step: int, loss_val: float) -> dict:
    worst = max(
        ((float(np.max(np.abs(p.data))), n) for n, p in model.params.items()),
        default=(0.0, ""),
    )
    return {
        "event": "diverged",
        "epoch": epoch,
        "step": step,
        "loss": repr(loss_val),
        "batch": [list(inst.origin) for inst in batch],
        "max_abs_parameter": {"name": worst[1], "value": worst[0]},
    }


def train(
    model: Model,
    train_set: list,
    dev_set: list,
    cfg: TrainConfig,
    log_file=None,
) -> dict:
    """Fit ``model`` on instances, keeping the best-dev parameter snapshot.

    Returns a history dict with per-step log records, the dev accuracy
    trajectory, and the restored best epoch. ``log_file``, when given,
    receives one JSON record per line as training progresses.
    """
    if not train_set or not dev_set:
        raise UsageError("train_set and dev_set must be non-empty")
    model.config.dropout = cfg.dropout
    opt = Adam(model.params, cfg.learning_rate)
    rng = Rng(cfg.seed).child("train")
    n = len(train_set)
    log: list[dict] = []
    dev_history: list[dict] = []
    best_acc = -1.0
    best_loss = float("inf")
    best_epoch = -1
    best_snapshot: dict[str, np.ndarray] | None = None
    step = 0

    def emit(rec: dict) -> None:
        log.append(rec)
        if log_file is not None:
            log_file.write(json.dumps(rec) + "\n")

    for epoch in range(1, cfg.epochs + 1):
        erng = rng.child(f"epoch{epoch}")
        order = erng.permutation(n)
        drng = erng.child("dropout")
        for lo in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[lo : lo + cfg.batch_size]]
            loss = batch_loss(model, batch, mode="train", rng=drng)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                dump = _divergence_dump(model, batch, epoch, step, loss_val)
                emit(dump)
                raise TrainingDivergedError(
                    f"non-finite loss {loss_val!r} at epoch {epoch} step {step}"
                )
            loss.backward()
            opt.step()
            opt.zero_grad()
            step += 1
            emit(
                {
                    "step": step,
                    "epoch": epoch,
                    "loss": loss_val,
                    "lr": cfg.learning_rate,
                }
            )
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            recs = predict_records(model, dev_set)
            acc = overall_accuracy(recs)
            # eval-mode dev cross entropy; smoother selection signal than
            # accuracy, which can sit on a plateau for many epochs
            dev_loss = float(
                np.mean([-np.log(max(r.probs[r.gold], 1e-300)) for r in recs])
            )
            dev_history.append({"epoch": epoch, "accuracy": acc, "loss": dev_loss})
            emit(
                {"event": "dev_eval", "epoch": epoch, "accuracy": acc, "loss": dev_loss}
            )
            if dev_loss < best_loss:
                best_loss = dev_loss
                best_acc = acc
                best_epoch = epoch
                best_snapshot = {
                    name: p.data.copy() for name, p in model.params.items()
                }

    if best_snapshot is not None:
        for name, p in model.params.items():
            p.data = best_snapshot[name]
    return {
        "config": cfg.to_dict(),
        "steps": step,
        "log": log,
        "dev_history": dev_history,
        "best_epoch": best_epoch,
        "best_accuracy": best_acc,
        "best_loss": best_loss,
    }


def predict_records(model: Model, instances: list) -> list[PredictionRecord]:
    """Eval-mode probability rows for every instance, in input order."""
    out = []
    for inst in instances:
        probs = model.predict_proba(
            inst.token_ids,
            _instance_ctx(model, inst),
            segment_ids=inst.segment_ids,
        )
        ex_id, target, aspect = inst.origin
        out.append(PredictionRecord(ex_id, target, aspect, inst.label, probs))
    return out


def evaluate_tabsa(model: Model, instances: list, spec) -> MetricReport:
    if not instances:
        raise UsageError("empty evaluation set")
    return tabsa_metrics(predict_records(model, instances), spec)


def evaluate_absa(model: Model, instances: list, spec) -> MetricReport:
    if not instances:
        raise UsageError("empty evaluation set")
    return absa_metrics(predict_records(model, instances), spec)


def evaluate(model: Model, instances: list, spec) -> MetricReport:
    """Dispatch on the task mode."""
    if spec.mode == "tabsa":
        return evaluate_tabsa(model, instances, spec)
    return evaluate_absa(model, instances, spec)
