"""Datasets: schema, parsing, tokenization, expansion, synthetic corpora.

A dataset file is UTF-8 with one JSON record per line:
``{"id": ..., "text": ..., "opinions": [{"target", "aspect", "sentiment"}, ...]}``.
Targets are pre-masked in the text (``loc1``, ``loc2``). Two task
presets exist: ``tabsa`` (two targets, four aspects, labels
none/negative/positive) and ``absa`` (no targets, five aspects, labels
none/negative/neutral/positive/conflict).

Every example expands into one classification instance per (mentioned
target, aspect) pair; pairs without a listed opinion get the closed
world label ``none``.

The synthetic generator plants each pair's sentiment through cue words
that are unique to an (aspect, sentiment) bank, and frequently puts
pairs with OPPOSITE sentiments into one sentence. A context-blind model
sees identical token sequences for both instances of such a sentence
and therefore cannot beat chance on them, while a context-conditioned
model can read the queried aspect's cue.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import NamedTuple

from .context import ContextVocab
from .errors import DataError, ParseError, VocabError
from .tensor import Rng

PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN = "[pad]", "[unk]", "[cls]", "[sep]"
SPECIAL_TOKENS = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN]
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3

NONE_LABEL = "none"

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


class Opinion(NamedTuple):
    target: str | None
    aspect: str
    sentiment: str


@dataclass
class TabsaExample:
    id: str
    text: str
    opinions: list[Opinion]


@dataclass
class TaskSpec:
    """Closed vocabularies of one task: targets, aspects, sentiment labels."""

    mode: str
    targets: list[str]
    aspects: list[str]
    sentiment_labels: list[str]

    def label_index(self, label: str) -> int:
        try:
            return self.sentiment_labels.index(label)
        except ValueError:
            raise VocabError(f"unknown sentiment label: {label!r}") from None

    @property
    def none_index(self) -> int:
        return self.sentiment_labels.index(NONE_LABEL)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "targets": list(self.targets),
            "aspects": list(self.aspects),
            "sentiment_labels": list(self.sentiment_labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["mode"], list(d["targets"]), list(d["aspects"]),
                   list(d["sentiment_labels"]))


def task_spec(mode: str) -> TaskSpec:
    """Built-in task presets keyed by mode name."""
    mode = mode.lower()
    if mode == "tabsa":
        return TaskSpec(
            mode="tabsa",
            targets=["loc1", "loc2"],
            aspects=["general", "price", "transit-location", "safety"],
            sentiment_labels=["none", "negative", "positive"],
        )
    if mode == "absa":
        return TaskSpec(
            mode="absa",
            targets=[],
            aspects=["price", "anecdotes", "food", "ambience", "service"],
            sentiment_labels=["none", "negative", "neutral", "positive", "conflict"],
        )
    raise VocabError(f"unknown task mode: {mode!r}")


def task_context_vocab(spec: TaskSpec) -> ContextVocab:
    return ContextVocab(spec.targets, spec.aspects)


class ClassifierInstance(NamedTuple):
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    ctx: int
    label: int
    origin: tuple[str, str | None, str]  # (example id, target, aspect)


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

def tokenize_words(text: str) -> list[str]:
    """Lowercase and split on whitespace; punctuation becomes its own token."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token string to id map; ids 0..3 are the fixed special tokens."""

    def __init__(self, words: list[str]):
        for w in words:
            if w in SPECIAL_TOKENS:
                raise VocabError(f"special token {w!r} cannot be a corpus word")
        if len(set(words)) != len(words):
            raise VocabError("duplicate words in vocabulary")
        self.tokens = SPECIAL_TOKENS + list(words)
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts, extra_words=()) -> "Vocab":
        """Collect the sorted unique token set of ``texts`` plus extras."""
        seen = set()
        for text in texts:
            seen.update(tokenize_words(text))
        seen.update(extra_words)
        seen.difference_update(SPECIAL_TOKENS)
        return cls(sorted(seen))

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def word(self, token_id: int) -> str:
        return self.tokens[token_id]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def to_dict(self) -> dict:
        return {"words": self.tokens[len(SPECIAL_TOKENS):]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["words"]))


def tokenize(text: str, vocab: Vocab, max_len: int) -> list[int]:
    """[cls] plus word ids, unknowns mapped to [unk], truncated to max_len."""
    ids = [CLS_ID] + [vocab.id(w) for w in tokenize_words(text)]
    return ids[:max_len]


# ---------------------------------------------------------------------------
# parsing and serialization
# ---------------------------------------------------------------------------

def _validate_example(ex: TabsaExample, spec: TaskSpec, words: list[str]) -> None:
    seen_pairs = set()
    for op in ex.opinions:
        if op.aspect not in spec.aspects:
            raise VocabError(f"example {ex.id}: unknown aspect {op.aspect!r}")
        if op.sentiment not in spec.sentiment_labels:
            raise VocabError(f"example {ex.id}: unknown sentiment {op.sentiment!r}")
        if spec.mode == "tabsa":
            if op.target is None:
                raise DataError(f"example {ex.id}: opinion missing target")
            if op.target not in spec.targets:
                raise VocabError(f"example {ex.id}: unknown target {op.target!r}")
            if op.target not in words:
                raise DataError(
                    f"example {ex.id}: target {op.target!r} never appears in text"
                )
        else:
            if op.target is not None:
                raise DataError(
                    f"example {ex.id}: target {op.target!r} not allowed in absa mode"
                )
        key = (op.target, op.aspect)
        if key in seen_pairs:
            raise DataError(f"example {ex.id}: duplicate opinion pair {key}")
        seen_pairs.add(key)


def parse_dataset(path, spec: TaskSpec) -> list[TabsaExample]:
    """Read a line-delimited dataset file, validating against ``spec``."""
    examples: list[TabsaExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line=lineno) from None
            try:
                ops = [
                    Opinion(o.get("target"), o["aspect"], o["sentiment"])
                    for o in rec["opinions"]
                ]
                ex = TabsaExample(id=str(rec["id"]), text=str(rec["text"]),
                                  opinions=ops)
            except (KeyError, TypeError) as e:
                raise ParseError(f"missing or malformed field: {e}", line=lineno) from None
            _validate_example(ex, spec, tokenize_words(ex.text))
            examples.append(ex)
    return examples


def example_to_record(ex: TabsaExample) -> dict:
    return {
        "id": ex.id,
        "text": ex.text,
        "opinions": [
            {"target": o.target, "aspect": o.aspect, "sentiment": o.sentiment}
            for o in ex.opinions
        ],
    }


def write_dataset(path, examples: list[TabsaExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_record(ex)) + "\n")


# ---------------------------------------------------------------------------
# instance expansion
# ---------------------------------------------------------------------------

def build_instance(
    example: TabsaExample,
    target: str | None,
    aspect: str,
    spec: TaskSpec,
    vocab: Vocab,
    max_len: int,
    aux_mode: bool = False,
    ctx_vocab: ContextVocab | None = None,
) -> ClassifierInstance:
    """One classification instance for a (target, aspect) query.

    ``aux_mode`` appends ``[sep]`` plus the target and aspect words to
    the tokens (segment id 1), truncating the text portion if needed so
    the suffix always survives.
    """
    if ctx_vocab is None:
        ctx_vocab = task_context_vocab(spec)
    ctx = ctx_vocab.context_id(target, aspect)

    label = NONE_LABEL
    for op in example.opinions:
        if op.target == target and op.aspect == aspect:
            label = op.sentiment
            break

    text_ids = [vocab.id(w) for w in tokenize_words(example.text)]
    if aux_mode:
        aux_words = (tokenize_words(target) if target else []) + tokenize_words(aspect)
        aux_ids = [SEP_ID] + [vocab.id(w) for w in aux_words]
        budget = max_len - 1 - len(aux_ids)
        if budget < 1:
            raise DataError(
                f"max_len {max_len} leaves no room for text beside the "
                f"{len(aux_ids)}-token auxiliary suffix"
            )
        token_ids = [CLS_ID] + text_ids[:budget] + aux_ids
        segment_ids = [0] * (len(token_ids) - len(aux_words)) + [1] * len(aux_words)
    else:
        token_ids = [CLS_ID] + text_ids[: max_len - 1]
        segment_ids = [0] * len(token_ids)

    return ClassifierInstance(
        token_ids=tuple(token_ids),
        segment_ids=tuple(segment_ids),
        ctx=ctx,
        label=spec.label_index(label),
        origin=(example.id, target, aspect),
    )


def mentioned_targets(example: TabsaExample, spec: TaskSpec) -> list[str]:
    words = set(tokenize_words(example.text))
    return [t for t in spec.targets if t in words]


def expand_examples(
    examples: list[TabsaExample],
    spec: TaskSpec,
    vocab: Vocab,
    max_len: int,
    aux_mode: bool = False,
) -> list[ClassifierInstance]:
    """All (mentioned target, aspect) instances, in deterministic order."""
    ctx_vocab = task_context_vocab(spec)
    out: list[ClassifierInstance] = []
    for ex in examples:
        targets = mentioned_targets(ex, spec) if spec.mode == "tabsa" else [None]
        for t in targets:
            for a in spec.aspects:
                out.append(
                    build_instance(ex, t, a, spec, vocab, max_len, aux_mode, ctx_vocab)
                )
    return out


# ---------------------------------------------------------------------------
# synthetic corpus generation
# ---------------------------------------------------------------------------

# Cue word banks: every word appears in exactly one (aspect, sentiment)
# bank of its task, so a cue word alone identifies the pair it plants.
_TABSA_CUES: dict[tuple[str, str], list[str]] = {
    ("general", "negative"): ["awful", "dreadful", "grim"],
    ("general", "positive"): ["lovely", "charming", "delightful"],
    ("price", "negative"): ["overpriced", "pricey", "extortionate"],
    ("price", "positive"): ["cheap", "affordable", "bargain"],
    ("transit-location", "negative"): ["remote", "isolated", "inaccessible"],
    ("transit-location", "positive"): ["central", "convenient", "connected"],
    ("safety", "negative"): ["dangerous", "unsafe", "sketchy"],
    ("safety", "positive"): ["safe", "secure", "peaceful"],
}

_ABSA_CUES: dict[tuple[str, str], list[str]] = {
    ("price", "negative"): ["overpriced", "exorbitant", "steep"],
    ("price", "neutral"): ["midpriced", "standard", "midrange"],
    ("price", "positive"): ["affordable", "reasonable", "bargain"],
    ("price", "conflict"): ["fluctuating", "variable", "unpredictable"],
    ("anecdotes", "negative"): ["disappointing", "regrettable", "forgettable"],
    ("anecdotes", "neutral"): ["uneventful", "routine", "unremarkable"],
    ("anecdotes", "positive"): ["memorable", "wonderful", "magical"],
    ("anecdotes", "conflict"): ["contradictory", "confusing", "baffling"],
    ("food", "negative"): ["bland", "stale", "inedible"],
    ("food", "neutral"): ["simple", "plain", "ordinary"],
    ("food", "positive"): ["delicious", "tasty", "exquisite"],
    ("food", "conflict"): ["inconsistent", "uneven", "patchy"],
    ("ambience", "negative"): ["noisy", "cramped", "dingy"],
    ("ambience", "neutral"): ["casual", "quiet", "lowkey"],
    ("ambience", "positive"): ["cozy", "elegant", "stylish"],
    ("ambience", "conflict"): ["unsettled", "chaotic", "jarring"],
    ("service", "negative"): ["rude", "slow", "dismissive"],
    ("service", "neutral"): ["formal", "brisk", "impersonal"],
    ("service", "positive"): ["attentive", "welcoming", "courteous"],
    ("service", "conflict"): ["erratic", "moody", "unreliable"],
}

_SINGLE_TEMPLATES = [
    "{t} is {c}",
    "{t} seems really {c}",
    "{t} feels {c} overall",
    "locals reckon {t} is {c}",
    "{t} looks {c} these days",
    "{t} appears {c} lately",
    "{t} remains {c}",
    "visitors find {t} {c}",
]
_SINGLE_PREFIXES = ["", "honestly", "overall"]
_WITHIN_TEMPLATES = [
    "{t} is {c1} but {c2}",
    "{t} seems {c1} yet {c2}",
    "{t} is {c1} although rather {c2}",
    "{t} feels {c1} even if {c2}",
    "{t} stays {c1} despite being {c2}",
    "people call {t} {c1} but also {c2}",
]
_TWO_TARGET_TEMPLATES = [
    "{t1} is {c1} while {t2} is {c2}",
    "{t1} seems {c1} but {t2} feels {c2}",
    "{t1} is {c1} and {t2} is {c2}",
    "{t1} stays {c1} whereas {t2} is {c2}",
]
_ABSA_SINGLE_TEMPLATES = [
    "the place was {c}",
    "we found it {c}",
    "it felt {c} overall",
    "frankly it was {c}",
]
_ABSA_PAIR_TEMPLATES = [
    "it was {c1} but {c2}",
    "the place felt {c1} and {c2}",
    "we thought it {c1} yet {c2}",
]

# Sentence category mix per difficulty: (single pair, one target with two
# opposite aspects, two targets with opposite aspects, two targets random).
_TABSA_MIX = {
    "easy": (0.55, 0.25, 0.15, 0.05),
    "standard": (0.32, 0.44, 0.18, 0.06),
    "hard": (0.15, 0.45, 0.30, 0.10),
}


def _pick_category(rng: Rng, mix: tuple[float, ...]) -> int:
    u = float(rng.uniform(()))
    acc = 0.0
    for i, p in enumerate(mix):
        acc += p
        if u < acc:
            return i
    return len(mix) - 1


def _opposite(sent: str) -> str:
    return "positive" if sent == "negative" else "negative"


def _gen_tabsa_sentence(spec: TaskSpec, rng: Rng, mix) -> tuple[str, list[Opinion]]:
    cat = _pick_category(rng, mix)
    polar = ["negative", "positive"]
    if cat == 0:
        t = rng.choice(spec.targets)
        a = rng.choice(spec.aspects)
        s = rng.choice(polar)
        cue = rng.choice(_TABSA_CUES[(a, s)])
        text = rng.choice(_SINGLE_TEMPLATES).format(t=t, c=cue)
        prefix = rng.choice(_SINGLE_PREFIXES)
        if prefix:
            text = prefix + " " + text
        return text, [Opinion(t, a, s)]
    if cat == 1:
        t = rng.choice(spec.targets)
        a1 = rng.choice(spec.aspects)
        a2 = rng.choice([a for a in spec.aspects if a != a1])
        s1 = rng.choice(polar)
        s2 = _opposite(s1)
        text = rng.choice(_WITHIN_TEMPLATES).format(
            t=t, c1=rng.choice(_TABSA_CUES[(a1, s1)]), c2=rng.choice(_TABSA_CUES[(a2, s2)])
        )
        return text, [Opinion(t, a1, s1), Opinion(t, a2, s2)]
    # two-target sentences; distinct aspects so a cue's aspect alone
    # identifies which pair it belongs to
    t1, t2 = spec.targets[0], spec.targets[1]
    a1 = rng.choice(spec.aspects)
    a2 = rng.choice([a for a in spec.aspects if a != a1])
    s1 = rng.choice(polar)
    s2 = _opposite(s1) if cat == 2 else rng.choice(polar)
    text = rng.choice(_TWO_TARGET_TEMPLATES).format(
        t1=t1, t2=t2,
        c1=rng.choice(_TABSA_CUES[(a1, s1)]), c2=rng.choice(_TABSA_CUES[(a2, s2)]),
    )
    return text, [Opinion(t1, a1, s1), Opinion(t2, a2, s2)]


def _gen_absa_sentence(spec: TaskSpec, rng: Rng) -> tuple[str, list[Opinion]]:
    sents = [s for s in spec.sentiment_labels if s != NONE_LABEL]
    if float(rng.uniform(())) < 0.5:
        a = rng.choice(spec.aspects)
        s = rng.choice(sents)
        text = rng.choice(_ABSA_SINGLE_TEMPLATES).format(
            c=rng.choice(_ABSA_CUES[(a, s)])
        )
        return text, [Opinion(None, a, s)]
    a1 = rng.choice(spec.aspects)
    a2 = rng.choice([a for a in spec.aspects if a != a1])
    s1, s2 = rng.choice(sents), rng.choice(sents)
    text = rng.choice(_ABSA_PAIR_TEMPLATES).format(
        c1=rng.choice(_ABSA_CUES[(a1, s1)]), c2=rng.choice(_ABSA_CUES[(a2, s2)])
    )
    return text, [Opinion(None, a1, s1), Opinion(None, a2, s2)]


def generate_synthetic(
    spec: TaskSpec,
    n_examples: int,
    rng: Rng,
    difficulty: str = "standard",
) -> list[TabsaExample]:
    """Deterministic template corpus with planted per-pair sentiments.

    Texts are unique within one corpus. Most multi-pair sentences carry
    two opposite sentiments, which caps what any context-blind model can
    score on the sentiment subtask near chance for those pairs.

    The accepted examples are shuffled before ids are assigned: rejection
    against earlier duplicates skews the tail of the raw stream toward
    whichever template family still has room, so without the shuffle a
    contiguous train/dev/test split would not draw from one distribution.
    """
    if n_examples < 1:
        raise DataError("n_examples must be at least 1")
    if difficulty not in _TABSA_MIX:
        raise DataError(f"unknown difficulty {difficulty!r}")
    mix = _TABSA_MIX[difficulty]
    seen: set[str] = set()
    out: list[tuple[str, list[Opinion]]] = []
    attempts = 0
    limit = 400 * n_examples
    while len(out) < n_examples:
        attempts += 1
        if attempts > limit:
            raise DataError(
                f"could not generate {n_examples} unique sentences "
                f"(got {len(out)}); reduce n or extend the template banks"
            )
        if spec.mode == "tabsa":
            text, ops = _gen_tabsa_sentence(spec, rng, mix)
        else:
            text, ops = _gen_absa_sentence(spec, rng)
        if text in seen:
            continue
        seen.add(text)
        out.append((text, ops))
    rng.shuffle(out)
    return [
        TabsaExample(id=f"syn-{i:05d}", text=text, opinions=ops)
        for i, (text, ops) in enumerate(out)
    ]


def split_dataset(
    examples: list[TabsaExample], train_frac: float = 0.70, dev_frac: float = 0.15
) -> tuple[list[TabsaExample], list[TabsaExample], list[TabsaExample]]:
    n = len(examples)
    n_train = round(train_frac * n)
    n_dev = round(dev_frac * n)
    return (
        examples[:n_train],
        examples[n_train : n_train + n_dev],
        examples[n_train + n_dev :],
    )


def corpus_stats(examples: list[TabsaExample], spec: TaskSpec) -> dict:
    """Self-audit statistics over planted opinions."""
    sentiment_counts = {s: 0 for s in spec.sentiment_labels if s != NONE_LABEL}
    aspect_counts = {a: 0 for a in spec.aspects}
    multi_target = 0
    multi_target_opposite = 0
    for ex in examples:
        for op in ex.opinions:
            sentiment_counts[op.sentiment] += 1
            aspect_counts[op.aspect] += 1
        targets = {op.target for op in ex.opinions}
        if len(targets) > 1:
            multi_target += 1
            sents = {op.sentiment for op in ex.opinions}
            if "negative" in sents and "positive" in sents:
                multi_target_opposite += 1
    n_opinions = sum(sentiment_counts.values())
    shares = {
        s: (c / n_opinions if n_opinions else 0.0)
        for s, c in sentiment_counts.items()
    }
    uniform = 1.0 / len(sentiment_counts)
    return {
        "n_examples": len(examples),
        "n_opinions": n_opinions,
        "sentiment_counts": sentiment_counts,
        "sentiment_shares": shares,
        "max_share_deviation": max(
            (abs(v - uniform) for v in shares.values()), default=0.0
        ),
        "aspect_counts": aspect_counts,
        "multi_target_examples": multi_target,
        "multi_target_opposite_examples": multi_target_opposite,
        "multi_target_opposite_fraction": (
            multi_target_opposite / multi_target if multi_target else 0.0
        ),
    }


def format_stats(stats: dict) -> str:
    lines = []
    for key, val in stats.items():
        if isinstance(val, dict):
            body = ", ".join(f"{k}={v}" for k, v in val.items())
            lines.append(f"{key}: {body}")
        elif isinstance(val, float):
            lines.append(f"{key}: {val:.6f}")
        else:
            lines.append(f"{key}: {val}")
    return "\n".join(lines) + "\n"
