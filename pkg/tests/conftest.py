import numpy as np
import pytest

from ctxattn import data
from ctxattn.model import Model, ModelConfig
from ctxattn.tensor import Rng


@pytest.fixture(scope="session")
def tabsa_spec():
    return data.task_spec("tabsa")


@pytest.fixture(scope="session")
def absa_spec():
    return data.task_spec("absa")


@pytest.fixture(scope="session")
def tiny_tabsa(tabsa_spec):
    """Small generated corpus with vocab and expanded instances."""
    examples = data.generate_synthetic(
        tabsa_spec, 120, Rng(5).child("gen"), "standard"
    )
    train, dev, test = data.split_dataset(examples)
    extra = set(tabsa_spec.targets)
    for a in tabsa_spec.aspects:
        extra.update(data.tokenize_words(a))
    vocab = data.Vocab.build(
        (ex.text for ex in examples), extra_words=sorted(extra)
    )
    return {
        "spec": tabsa_spec,
        "examples": examples,
        "train": train,
        "dev": dev,
        "test": test,
        "vocab": vocab,
        "ctx_vocab": data.task_context_vocab(tabsa_spec),
        "instances": data.expand_examples(examples, tabsa_spec, vocab, 32, False),
    }


def micro_config(variant, **kw):
    base = dict(
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
        seed=11,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def micro_model():
    def make(variant, **kw):
        return Model.create(micro_config(variant, **kw))

    return make


def rand_params(model, seed=0, scale=0.5):
    """Overwrite a model's parameters with generic-scale random values."""
    r = Rng(seed).child("randparams")
    for name, p in model.params.items():
        s = r.child(name)
        if name.endswith("ln.gain"):
            p.data = np.ascontiguousarray(1.0 + s.normal(p.data.shape, std=0.2))
        else:
            p.data = np.ascontiguousarray(s.normal(p.data.shape, std=scale))
    return model
