"""Command-line entry point.

Subcommands: gen-data, train, eval, analyze, trace, gradcheck, inspect.
Exit codes: 0 success, 1 usage/configuration error, 2 data or file
format error. Training runs are driven by an INI config file with
``--section.key value`` (or unambiguous ``--key value``) overrides; the
fully resolved config is echoed into the output directory before any
work starts. Output layout under ``--out``: the config echo plus
``checkpoints/``, ``logs/``, ``reports/``, ``exports/``. Timestamps
appear only in log file headers, so reruns with identical inputs
produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import sys
from datetime import datetime, timezone

from . import analysis, checkpoint, data, training
from .context import ContextVocab
from .errors import (
    CheckpointError,
    ConfigError,
    CtxAttnError,
    DataError,
    FormatError,
    NumericsError,
    ParameterError,
    ParseError,
    TrainingDivergedError,
    UsageError,
    VocabError,
)
from .model import Model, ModelConfig
from .tensor import Rng

GRADCHECK_TOLERANCE = 1e-4

_DEFAULT_CONFIG = {
    "task": {"mode": "tabsa", "aux_mode": "false"},
    "model": {
        "variant": "qacg",
        "num_layers": "2",
        "num_heads": "2",
        "hidden": "32",
        "ffn_dim": "64",
        "max_len": "32",
        "dropout": "0.1",
        "attn_dropout": "0.0",
        "context_residual": "false",
        "exact_zero_context_init": "false",
        "seed": "7",
        "dtype": "float64",
    },
    "train": {
        "epochs": "8",
        "batch_size": "32",
        "learning_rate": "1e-3",
        "dropout": "0.1",
        "seed": "7",
        "eval_every": "1",
    },
    "data": {
        "train": "data/train.jsonl",
        "dev": "data/dev.jsonl",
        "test": "data/test.jsonl",
    },
}


def _new_config() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(_DEFAULT_CONFIG)
    return cp


def load_run_config(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    """Defaults, then the config file, then ``--key value`` overrides."""
    cp = _new_config()
    if path is not None:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        read = cp.read(path)
        if not read:
            raise UsageError(f"could not read config file: {path}")
    apply_overrides(cp, overrides)
    return cp


def apply_overrides(cp: configparser.ConfigParser, extra: list[str]) -> None:
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument: {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for --{key}")
            val = extra[i + 1]
            i += 2
        if "." in key:
            section, opt = key.split(".", 1)
            if not cp.has_section(section):
                raise UsageError(f"unknown config section: {section!r}")
            cp.set(section, opt, val)
        else:
            hits = [s for s in cp.sections() if cp.has_option(s, key)]
            if not hits:
                raise UsageError(f"unknown config key: {key!r}")
            if len(hits) > 1:
                raise UsageError(
                    f"ambiguous config key {key!r} (in sections {hits}); "
                    f"qualify it as --section.{key}"
                )
            cp.set(hits[0], key, val)


def _ensure_layout(out_dir: str) -> None:
    for sub in ("", "checkpoints", "logs", "reports", "exports"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)


def _echo_config(cp: configparser.ConfigParser, out_dir: str) -> None:
    buf = io.StringIO()
    cp.write(buf)
    with open(os.path.join(out_dir, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def _load_model_for(path: str) -> tuple[Model, data.TaskSpec, bool]:
    model, report = checkpoint.load_checkpoint(path)
    extras = report.get("extras") or {}
    if "task" in extras:
        spec = data.TaskSpec.from_dict(extras["task"])
    else:
        spec = data.task_spec("tabsa")
    aux_mode = bool(extras.get("aux_mode", False))
    if model.token_vocab is None:
        raise UsageError(
            f"checkpoint {path} carries no token vocabulary; it cannot "
            f"tokenize raw datasets"
        )
    return model, spec, aux_mode


def _expand_file(path: str, model: Model, spec, aux_mode: bool):
    examples = data.parse_dataset(path, spec)
    return examples, data.expand_examples(
        examples, spec, model.token_vocab, model.config.max_len, aux_mode
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = data.task_spec(args.task)
    rng = Rng(args.seed).child("gen")
    examples = data.generate_synthetic(spec, args.n, rng, args.difficulty)
    train, dev, test = data.split_dataset(examples)
    os.makedirs(args.out, exist_ok=True)
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        data.write_dataset(os.path.join(args.out, f"{name}.jsonl"), part)
    stats = data.corpus_stats(examples, spec)
    with open(os.path.join(args.out, "stats.txt"), "w", encoding="utf-8") as fh:
        fh.write(data.format_stats(stats))
    print(
        f"wrote {len(train)}/{len(dev)}/{len(test)} train/dev/test examples to {args.out}"
    )
    return 0


def cmd_train(args, overrides: list[str]) -> int:
    cp = load_run_config(args.config, overrides)
    out_dir = args.out
    _ensure_layout(out_dir)
    _echo_config(cp, out_dir)

    spec = data.task_spec(cp.get("task", "mode"))
    aux_mode = cp.getboolean("task", "aux_mode")
    train_examples = data.parse_dataset(cp.get("data", "train"), spec)
    dev_examples = data.parse_dataset(cp.get("data", "dev"), spec)

    extra_words = set(spec.targets)
    for aspect in spec.aspects:
        extra_words.update(data.tokenize_words(aspect))
    vocab = data.Vocab.build(
        (ex.text for ex in train_examples), extra_words=sorted(extra_words)
    )
    ctx_vocab = data.task_context_vocab(spec)

    mc = cp["model"]
    model_config = ModelConfig(
        variant=mc.get("variant"),
        num_layers=mc.getint("num_layers"),
        num_heads=mc.getint("num_heads"),
        hidden=mc.getint("hidden"),
        ffn_dim=mc.getint("ffn_dim"),
        vocab_size=len(vocab),
        max_len=mc.getint("max_len"),
        num_classes=len(spec.sentiment_labels),
        num_contexts=ctx_vocab.size,
        dropout=mc.getfloat("dropout"),
        attn_dropout=mc.getfloat("attn_dropout"),
        context_residual=mc.getboolean("context_residual"),
        exact_zero_context_init=mc.getboolean("exact_zero_context_init"),
        seed=mc.getint("seed"),
        dtype=mc.get("dtype"),
    )
    tc = cp["train"]
    train_config = training.TrainConfig(
        epochs=tc.getint("epochs"),
        batch_size=tc.getint("batch_size"),
        learning_rate=tc.getfloat("learning_rate"),
        dropout=tc.getfloat("dropout"),
        seed=tc.getint("seed"),
        eval_every=tc.getint("eval_every"),
    )

    train_set = data.expand_examples(
        train_examples, spec, vocab, model_config.max_len, aux_mode
    )
    dev_set = data.expand_examples(
        dev_examples, spec, vocab, model_config.max_len, aux_mode
    )
    model = Model.create(model_config, ctx_vocab, vocab)

    log_path = os.path.join(out_dir, "logs", "train.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(f"# started {datetime.now(timezone.utc).isoformat()}\n")
        history = training.train(model, train_set, dev_set, train_config, log_file=fh)

    ckpt_path = os.path.join(out_dir, "checkpoints", "best.ckpt")
    checkpoint.save_checkpoint(
        model, ckpt_path, extras={"task": spec.to_dict(), "aux_mode": aux_mode}
    )
    summary = {
        "steps": history["steps"],
        "best_epoch": history["best_epoch"],
        "best_dev_accuracy": history["best_accuracy"],
        "train_instances": len(train_set),
        "dev_instances": len(dev_set),
        "parameters": model.parameter_count(),
        "checkpoint": ckpt_path,
    }
    with open(
        os.path.join(out_dir, "reports", "train_summary.txt"), "w", encoding="utf-8"
    ) as fh:
        for k, v in summary.items():
            fh.write(f"{k} {v}\n")
    print(
        f"trained {model_config.variant} for {train_config.epochs} epochs: "
        f"best dev accuracy {history['best_accuracy']:.4f} "
        f"(epoch {history['best_epoch']}), checkpoint {ckpt_path}"
    )
    return 0


def cmd_eval(args) -> int:
    model, spec, aux_mode = _load_model_for(args.checkpoint)
    _examples, instances = _expand_file(args.data, model, spec, aux_mode)
    report = training.evaluate(model, instances, spec)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.data))[0]
    text_path = os.path.join(args.out, f"metrics_{stem}.txt")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(report.format_text())
    with open(os.path.join(args.out, f"metrics_{stem}.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(report.format_line() + "\n")
    print(report.format_text(), end="")
    return 0


def cmd_analyze(args) -> int:
    model, spec, aux_mode = _load_model_for(args.checkpoint)
    _examples, instances = _expand_file(args.data, model, spec, aux_mode)
    instances = instances[: args.limit]
    os.makedirs(args.out, exist_ok=True)
    for i, inst in enumerate(instances):
        sal = analysis.gradient_saliency(model, inst, labels=spec.sentiment_labels)
        traces = analysis.collect_traces(model, [inst], layer=args.layer, head=args.head)
        rows = analysis.export_token_attention(traces[0], sal.tokens, sal.scores)
        target = inst.origin[1] or "na"
        path = os.path.join(
            args.out, f"saliency_{i:03d}_{target}_{inst.origin[2]}.csv"
        )
        analysis.write_token_attention_csv(path, rows)
    print(f"wrote {len(instances)} saliency tables to {args.out}")
    return 0


def cmd_trace(args) -> int:
    model, spec, aux_mode = _load_model_for(args.checkpoint)
    _examples, instances = _expand_file(args.data, model, spec, aux_mode)
    instances = instances[: args.limit]
    traces = analysis.collect_traces(model, instances, layer=args.layer, head=args.head)
    os.makedirs(args.out, exist_ok=True)
    variables = ["a_self", "a_final"]
    if model.config.variant == "qacg":
        variables += ["a_quasi", "lambda_a"]
    for var in variables:
        export = analysis.export_histograms(traces, var, bins=args.bins)
        analysis.write_histogram_csv(
            os.path.join(args.out, f"hist_{var}.csv"), export
        )
        print(
            f"{var}: {export.n_entries} entries over {export.n_examples} "
            f"instances, {int(export.counts.sum())} binned"
        )
    return 0


def cmd_gradcheck(args) -> int:
    errors = analysis.gradcheck_model(args.variant, seed=args.seed)
    worst = max(errors.values())
    for name in sorted(errors):
        print(f"{errors[name]:.3e}  {name}")
    print(f"max relative error: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def cmd_inspect(args) -> int:
    model, report = checkpoint.load_checkpoint(args.checkpoint)
    print("config:")
    for k, v in model.config.to_dict().items():
        print(f"  {k} = {v}")
    print(f"parameters: {model.parameter_count()}")
    if model.context_vocab is not None:
        print(f"context vocab: targets={model.context_vocab.targets} "
              f"aspects={model.context_vocab.aspects}")
    if model.token_vocab is not None:
        print(f"token vocab: {len(model.token_vocab)} tokens")
    extras = report.get("extras")
    if extras:
        print(f"extras: {json.dumps(extras, sort_keys=True)}")
    print("tensors:")
    for name, p in model.params.items():
        print(f"  {name}  {p.data.dtype}  {tuple(p.data.shape)}")
    return 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxattn",
        description="Context-aware attention models for (targeted) "
        "aspect-based sentiment analysis.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--task", choices=["tabsa", "absa"], default="tabsa")
    p.add_argument("--n", type=int, required=True, help="total examples")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--difficulty", choices=["easy", "standard", "hard"],
                   default="standard")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model from a config")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--out", default="run", help="output directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="reports")

    p = sub.add_parser("analyze", help="gradient saliency token tables")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--out", default="exports")

    p = sub.add_parser("trace", help="attention histogram exports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=200)
    p.add_argument("--layer", default="all")
    p.add_argument("--head", default="all")
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--out", default="exports")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--variant", choices=["vanilla", "cg", "qacg"], default="qacg")
    p.add_argument("--seed", type=int, default=3)

    p = sub.add_parser("inspect", help="print checkpoint config and contents")
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] == "train":
            args, extra = parser.parse_known_args(argv)
        else:
            args, extra = parser.parse_args(argv), []
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    if args.command is None:
        parser.print_usage()
        return 1
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args, extra)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "trace":
            return cmd_trace(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        parser.print_usage()
        return 1
    except (UsageError, ConfigError, ParameterError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (
        DataError,
        ParseError,
        VocabError,
        FormatError,
        CheckpointError,
        NumericsError,
        TrainingDivergedError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return 2
    except CtxAttnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
