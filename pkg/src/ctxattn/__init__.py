"""Context-aware attention models for aspect-based sentiment analysis.

A small trainable transformer encoder built on a numpy reverse-mode
autodiff core, with three attention variants (vanilla softmax,
context-guided, quasi-attention), task metrics, synthetic corpora,
checkpointing, and attention/saliency diagnostics. Hot numeric kernels
run through numba when available; set ``CTXATTN_KERNELS=numpy`` to
force the pure-numpy fallback.
"""

from .attention import (
    AttentionParams,
    AttentionTrace,
    HeadParams,
    composed_attention,
    multi_head_attention,
    quasi_attention_matrix,
    quasi_gate,
    self_attention_weights,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .context import ContextVocab, context_matrix
from .data import (
    ClassifierInstance,
    Opinion,
    TabsaExample,
    TaskSpec,
    Vocab,
    build_instance,
    corpus_stats,
    expand_examples,
    generate_synthetic,
    parse_dataset,
    split_dataset,
    task_context_vocab,
    task_spec,
    tokenize,
    tokenize_words,
    write_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CtxAttnError,
    DataError,
    FormatError,
    NumericsError,
    ParameterError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
    UsageError,
    VocabError,
)
from .kernels import get_backend, set_backend
from .metrics import (
    MetricReport,
    PredictionRecord,
    absa_metrics,
    overall_accuracy,
    precision_recall_f1,
    restricted_argmax,
    roc_auc,
    tabsa_metrics,
)
from .model import (
    Model,
    ModelConfig,
    classify,
    encoder_forward,
    init_model,
    is_context_parameter,
    parameter_shapes,
)
from .tensor import Rng, Tensor, backward, finite_diff_check, no_grad, set_checked
from .training import Adam, TrainConfig, evaluate, evaluate_absa, evaluate_tabsa, train
from .analysis import (
    HistogramExport,
    SaliencyReport,
    collect_traces,
    export_histograms,
    export_token_attention,
    gradcheck_model,
    gradient_saliency,
)

__version__ = "0.1.0"
