"""Acceptance gate: ten numbered criteria, one test each.

Covers zero-init equivalence with the plain transformer, output range
bounds, end-to-end finite-difference gradients, subtractive attention,
context-dependent learning on the planted corpus, auxiliary-sentence
mode, metric oracle equivalence, context-pathway init statistics,
diagnostic exports, and checkpoint round-trips. Each test ends with a
printed PASS line carrying the measured quantities, so a verbose run
yields one line per criterion.

The trained-model fixtures are session scoped and shared: criterion 5
trains cg, qacg, and vanilla once; criteria 4, 6, 9, and 10 reuse those
runs or add the aux-mode ones. Training budgets are asserted inside the
tests, so run this file without a parallel CPU load.
"""

import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from ctxattn import analysis, attention, checkpoint, data, metrics, training
from ctxattn.model import CONTEXT_STD, Model, ModelConfig, init_model, is_context_parameter, parameter_shapes
from ctxattn.tensor import Rng, Tensor

from _oracles import absa_report, random_prediction_table, tabsa_report

# Corpus and recipe for the learning criteria. The standard mix keeps
# the no-context sentiment ceiling near 59% on every split while giving
# the context pathway a strong planted signal. Batch size 16 at lr 1e-3
# with no dropout and model/train seed 3 escapes the all-none prior
# early for every variant, so each run fits the time budget easily.
CORPUS_SEED = 7
CORPUS_SIZE = 2857  # 70/15/15 split puts exactly 2000 examples in train
CORPUS_DIFFICULTY = "standard"
MODEL_SEED = 3
RECIPE = dict(batch_size=16, learning_rate=1e-3, dropout=0.0, seed=MODEL_SEED)
CG_EPOCHS = 15
QACG_EPOCHS = 12
VANILLA_EPOCHS = 12
CG_AUX_EPOCHS = 24
QACG_AUX_EPOCHS = 12

TRAIN_BUDGET_SECONDS = 600.0
CONTEXT_ACCURACY_FLOOR = 0.90
BLIND_ACCURACY_CEILING = 0.65
AUX_GAP_POINTS = 0.05


# ---------------------------------------------------------------------------
# shared corpus and trained models
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def corpus():
    spec = data.task_spec("tabsa")
    examples = data.generate_synthetic(
        spec, CORPUS_SIZE, Rng(CORPUS_SEED).child("gen"), CORPUS_DIFFICULTY
    )
    train_ex, dev_ex, test_ex = data.split_dataset(examples)
    assert len(train_ex) == 2000
    extra = set(spec.targets)
    for aspect in spec.aspects:
        extra.update(data.tokenize_words(aspect))
    vocab = data.Vocab.build(
        (ex.text for ex in train_ex), extra_words=sorted(extra)
    )
    return SimpleNamespace(
        spec=spec,
        vocab=vocab,
        ctx_vocab=data.task_context_vocab(spec),
        train_ex=train_ex,
        dev_ex=dev_ex,
        test_ex=test_ex,
    )


def _expand(corpus, examples, aux):
    return data.expand_examples(
        examples, corpus.spec, corpus.vocab, 32, aux
    )


def _train_variant(corpus, variant, aux, epochs):
    config = ModelConfig(
        variant=variant, num_layers=2, num_heads=2, hidden=32, ffn_dim=64,
        vocab_size=len(corpus.vocab), max_len=32, num_classes=3,
        num_contexts=corpus.ctx_vocab.size, dropout=0.0, seed=MODEL_SEED,
    )
    model = Model.create(config, corpus.ctx_vocab, corpus.vocab)
    train_set = _expand(corpus, corpus.train_ex, aux)
    dev_set = _expand(corpus, corpus.dev_ex, aux)
    test_set = _expand(corpus, corpus.test_ex, aux)
    cfg = training.TrainConfig(epochs=epochs, eval_every=1, **RECIPE)
    t0 = time.perf_counter()
    history = training.train(model, train_set, dev_set, cfg)
    wall = time.perf_counter() - t0
    records = training.predict_records(model, test_set)
    report = metrics.tabsa_metrics(records, corpus.spec)
    return SimpleNamespace(
        model=model, wall=wall, history=history, test_set=test_set,
        records=records, report=report,
    )


@pytest.fixture(scope="session")
def trained_cg(corpus):
    return _train_variant(corpus, "cg", False, CG_EPOCHS)


@pytest.fixture(scope="session")
def trained_qacg(corpus):
    return _train_variant(corpus, "qacg", False, QACG_EPOCHS)


@pytest.fixture(scope="session")
def trained_vanilla(corpus):
    return _train_variant(corpus, "vanilla", False, VANILLA_EPOCHS)


@pytest.fixture(scope="session")
def trained_cg_aux(corpus):
    return _train_variant(corpus, "cg", True, CG_AUX_EPOCHS)


@pytest.fixture(scope="session")
def trained_qacg_aux(corpus):
    return _train_variant(corpus, "qacg", True, QACG_AUX_EPOCHS)


# ---------------------------------------------------------------------------
# criterion 1: zero-init equivalence
# ---------------------------------------------------------------------------

def test_criterion_01_zero_init_equivalence():
    t0 = time.perf_counter()
    base = dict(
        num_layers=2, num_heads=2, hidden=32, ffn_dim=64, vocab_size=40,
        max_len=16, num_classes=3, num_contexts=8, dropout=0.0, seed=11,
    )
    vanilla = Model.create(ModelConfig(variant="vanilla", **base))
    gated = {
        variant: Model.create(
            ModelConfig(variant=variant, exact_zero_context_init=True, **base)
        )
        for variant in ("cg", "qacg")
    }
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 17))
        ids = rng.integers(0, 40, size=n).tolist()
        ctx = int(rng.integers(0, 8))
        ref = vanilla.predict_proba(ids)
        for m in gated.values():
            got = m.predict_proba(ids, ctx)
            worst = max(worst, float(np.max(np.abs(got - ref))))
    elapsed = time.perf_counter() - t0
    assert worst == 0.0, f"zeroed context pathway must be inert, diff {worst}"
    assert elapsed < 60.0
    print(f"PASS criterion 1: zero-init equivalence, max |diff| = {worst} "
          f"over 100 inputs ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 2: bound suite
# ---------------------------------------------------------------------------

def test_criterion_02_bound_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        d_h = int(rng.integers(2, 9))
        d = int(rng.integers(4, 17))
        s = float(rng.uniform(0.02, 0.4))
        q = Tensor(rng.normal(0.0, s, (n, d_h)))
        k = Tensor(rng.normal(0.0, s, (n, d_h)))
        c = Tensor(rng.normal(0.0, s, (n, d)))
        zq = Tensor(rng.normal(0.0, s, (d, d_h)))
        zk = Tensor(rng.normal(0.0, s, (d, d_h)))
        gvq = Tensor(rng.normal(0.0, s, (d_h, 1)))
        gvk = Tensor(rng.normal(0.0, s, (d_h, 1)))
        gvqc = Tensor(rng.normal(0.0, s, (d_h, 1)))
        gvkc = Tensor(rng.normal(0.0, s, (d_h, 1)))

        a_self = attention.self_attention_weights(q, k).data
        cq, ck = attention.quasi_context_qk(c, zq, zk)
        a_quasi = attention.quasi_attention_matrix(cq, ck).data
        lam_a = attention.quasi_gate(q, k, cq, ck, gvq, gvk, gvqc, gvkc)
        a_final = attention.composed_attention(
            Tensor(a_self), lam_a, Tensor(a_quasi)
        ).data
        lam = lam_a.data

        assert np.all(a_quasi > 0.0) and np.all(a_quasi < 1.0)
        assert np.all(lam > -1.0) and np.all(lam < 1.0)
        assert np.all(a_final > -1.0) and np.all(a_final < 2.0)
        assert np.max(np.abs(a_self.sum(axis=1) - 1.0)) <= 1e-6
        recomposed = a_self + lam * a_quasi
        assert np.max(np.abs(a_final - recomposed)) <= 1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"PASS criterion 2: bounds and composition identity over 1000 "
          f"draws ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 3: gradient suite
# ---------------------------------------------------------------------------

def test_criterion_03_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for variant in ("vanilla", "cg", "qacg"):
        errors = analysis.gradcheck_model(variant)
        worst[variant] = max(errors.values())
        assert worst[variant] < 1e-4, (
            f"{variant}: finite-difference mismatch {worst[variant]:.3e}"
        )
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    summary = ", ".join(f"{v} {worst[v]:.2e}" for v in worst)
    print(f"PASS criterion 3: gradient suite, max relative errors "
          f"{summary} ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 4: subtractive attention
# ---------------------------------------------------------------------------

def test_criterion_04_subtractive_attention(trained_qacg):
    composed = attention.composed_attention(
        Tensor([[1.0, 0.0]]), Tensor([[-1.0]]), Tensor([[0.5, 0.5]])
    ).data
    assert np.array_equal(composed, np.array([[0.5, -0.5]]))

    t0 = time.perf_counter()
    most_negative = 0.0
    for lo in range(0, 200, 50):
        traces = analysis.collect_traces(
            trained_qacg.model, trained_qacg.test_set[lo : lo + 50]
        )
        most_negative = min(
            most_negative, min(float(tr.a_final.min()) for tr in traces)
        )
        if most_negative < 0.0:
            break
    elapsed = time.perf_counter() - t0
    assert most_negative < 0.0, "trained qacg shows no subtractive entries"
    assert elapsed < 60.0
    print(f"PASS criterion 4: constructed entry exactly -0.5; trained "
          f"minimum composed weight {most_negative:.4f} ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 5: context-dependence learning
# ---------------------------------------------------------------------------

def test_criterion_05_context_dependence(trained_cg, trained_qacg, trained_vanilla):
    cg_acc = trained_cg.report["sentiment_accuracy"]
    qacg_acc = trained_qacg.report["sentiment_accuracy"]
    blind_acc = trained_vanilla.report["sentiment_accuracy"]
    for run, label in ((trained_cg, "cg"), (trained_qacg, "qacg"),
                       (trained_vanilla, "vanilla")):
        assert run.wall < TRAIN_BUDGET_SECONDS, (
            f"{label} training took {run.wall:.0f}s"
        )
    assert cg_acc >= CONTEXT_ACCURACY_FLOOR, f"cg sentiment {cg_acc:.4f}"
    assert qacg_acc >= CONTEXT_ACCURACY_FLOOR, f"qacg sentiment {qacg_acc:.4f}"
    assert blind_acc <= BLIND_ACCURACY_CEILING, f"vanilla sentiment {blind_acc:.4f}"
    print(f"PASS criterion 5: held-out sentiment accuracy cg {cg_acc:.4f} "
          f"({trained_cg.wall:.0f}s), qacg {qacg_acc:.4f} "
          f"({trained_qacg.wall:.0f}s), context-blind vanilla "
          f"{blind_acc:.4f} ({trained_vanilla.wall:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 6: auxiliary-sentence mode
# ---------------------------------------------------------------------------

def test_criterion_06_aux_sentence_mode(
    trained_cg, trained_qacg, trained_cg_aux, trained_qacg_aux
):
    pairs = (
        ("cg", trained_cg, trained_cg_aux),
        ("qacg", trained_qacg, trained_qacg_aux),
    )
    parts = []
    for label, plain, aux in pairs:
        plain_acc = plain.report["sentiment_accuracy"]
        aux_acc = aux.report["sentiment_accuracy"]
        assert aux_acc >= CONTEXT_ACCURACY_FLOOR, (
            f"{label} aux sentiment {aux_acc:.4f}"
        )
        assert abs(aux_acc - plain_acc) <= AUX_GAP_POINTS, (
            f"{label}: aux {aux_acc:.4f} vs plain {plain_acc:.4f}"
        )
        parts.append(f"{label} {aux_acc:.4f} (gap {aux_acc - plain_acc:+.4f})")
    print(f"PASS criterion 6: aux-sentence accuracies {', '.join(parts)}")


# ---------------------------------------------------------------------------
# criterion 7: metric oracle equivalence
# ---------------------------------------------------------------------------

def _report_delta(lib, oracle):
    assert set(lib.values) == set(oracle)
    worst = 0.0
    for key, want in oracle.items():
        got = lib.values[key]
        if want is None or got is None:
            assert want is None and got is None, key
            continue
        worst = max(worst, abs(got - want))
    return worst


def test_criterion_07_metric_oracle_equivalence(tabsa_spec, absa_spec):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for i in range(100):
        if i % 2 == 0:
            rows = random_prediction_table(rng, tabsa_spec, with_target=True)
            records = [metrics.PredictionRecord(*r) for r in rows]
            worst = max(worst, _report_delta(
                metrics.tabsa_metrics(records, tabsa_spec),
                tabsa_report(rows, tabsa_spec),
            ))
        else:
            rows = random_prediction_table(rng, absa_spec, with_target=False)
            records = [metrics.PredictionRecord(*r) for r in rows]
            worst = max(worst, _report_delta(
                metrics.absa_metrics(records, absa_spec),
                absa_report(rows, absa_spec),
            ))
    assert worst <= 1e-12, f"library and oracle metrics differ by {worst}"

    # tie handling: interleaved tied scores give exactly chance AUC
    assert metrics.roc_auc([1.0, 1.0, 0.0, 0.0], [1, 0, 1, 0]) == 0.5
    assert metrics.roc_auc([0.3, 0.3, 0.3], [1, 0, 1]) == 0.5
    assert metrics.roc_auc([0.9, 0.1], [1, 0]) == 1.0
    assert metrics.roc_auc([0.1, 0.9], [1, 0]) == 0.0
    assert metrics.roc_auc([0.5, 0.8], [1, 1]) is None

    # rank statistics are invariant under strictly monotone transforms
    scores = rng.normal(size=40)
    labels = (rng.random(40) < 0.4).astype(int).tolist()
    base = metrics.roc_auc(scores.tolist(), labels)
    affine = metrics.roc_auc((3.0 * scores + 2.0).tolist(), labels)
    curved = metrics.roc_auc(np.exp(scores).tolist(), labels)
    assert base == affine == curved
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"PASS criterion 7: 100 oracle tables, max |diff| = {worst:.1e}; "
          f"tie and monotone invariants hold ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 8: init statistics
# ---------------------------------------------------------------------------

def test_criterion_08_init_statistics():
    t0 = time.perf_counter()
    draws = []
    for seed in (0, 1):
        config = ModelConfig(
            variant="qacg", num_layers=2, num_heads=2, hidden=32, ffn_dim=64,
            vocab_size=40, max_len=16, num_classes=3, num_contexts=8,
            dropout=0.0, seed=seed,
        )
        params = init_model(config)
        for name, p in params.items():
            if is_context_parameter(name):
                draws.append(p.data.reshape(-1))
    sample = np.concatenate(draws)
    assert sample.size >= 10_000
    std = float(sample.std(ddof=1))
    rel = abs(std - CONTEXT_STD) / CONTEXT_STD
    elapsed = time.perf_counter() - t0
    assert rel <= 0.10, f"context init std {std:.6f} vs e^-3 {CONTEXT_STD:.6f}"
    assert elapsed < 60.0
    print(f"PASS criterion 8: context-pathway init std {std:.6f} over "
          f"{sample.size} draws, {100 * rel:.2f}% from e^-3 ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 9: diagnostics
# ---------------------------------------------------------------------------

def test_criterion_09_diagnostics(trained_qacg):
    instances = trained_qacg.test_set[:220]
    assert len(instances) >= 200
    traces = analysis.collect_traces(trained_qacg.model, instances)
    analysis.audit_traces(traces)  # raises on any recomposition drift
    export = analysis.export_histograms(traces, "lambda_a", bins=60)
    assert export.n_examples >= 200
    # the fixed (-1, 1) range puts a bin edge exactly at zero
    assert export.edges[30] == 0.0
    negative_mass = int(export.counts[:30].sum())
    positive_mass = int(export.counts[30:].sum())
    assert negative_mass > 0 and positive_mass > 0, (
        f"gate histogram one-sided: {negative_mass} vs {positive_mass}"
    )
    print(f"PASS criterion 9: gate histogram over {export.n_examples} "
          f"instances has {negative_mass} negative and {positive_mass} "
          f"positive entries; trace audit clean")


# ---------------------------------------------------------------------------
# criterion 10: checkpoint round-trip
# ---------------------------------------------------------------------------

def test_criterion_10_checkpoint_round_trip(
    trained_qacg, trained_vanilla, tmp_path
):
    path = tmp_path / "qacg.ckpt"
    checkpoint.save_checkpoint(trained_qacg.model, str(path))
    loaded, report = checkpoint.load_checkpoint(str(path))
    assert not report["initialized"] and not report["ignored"]
    for inst in trained_qacg.test_set[:50]:
        before = trained_qacg.model.predict_proba(
            inst.token_ids, inst.ctx, segment_ids=inst.segment_ids
        )
        after = loaded.predict_proba(
            inst.token_ids, inst.ctx, segment_ids=inst.segment_ids
        )
        assert np.array_equal(before, after)

    vpath = tmp_path / "vanilla.ckpt"
    checkpoint.save_checkpoint(trained_vanilla.model, str(vpath))
    qacg_config = ModelConfig.from_dict(
        {**trained_vanilla.model.config.to_dict(), "variant": "qacg"}
    )
    upgraded, up_report = checkpoint.load_checkpoint(str(vpath), config=qacg_config)
    expected_new = sorted(
        name for name in parameter_shapes(qacg_config) if is_context_parameter(name)
    )
    assert sorted(up_report["initialized"]) == expected_new
    for name in ("embeddings.token", "layer0.attn.head0.wq", "classifier.w"):
        assert np.array_equal(
            upgraded.params[name].data, trained_vanilla.model.params[name].data
        )
    print(f"PASS criterion 10: bitwise round-trip on 50 instances; "
          f"vanilla->qacg upgrade initialized {len(expected_new)} "
          f"context tensors")
