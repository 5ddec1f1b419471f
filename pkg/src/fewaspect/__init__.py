"""Few-shot multi-label aspect detection.

Prototypical episode classification with support-set and query-set
attention, trained episodically with a squared-error ranking loss, plus
a REINFORCE-learned per-instance decision threshold.
"""

from .data import (ClassSplit, Corpus, EmbeddingTable, Sentence, SyntheticConfig,
                   generate_synthetic, init_embeddings, load_corpus,
                   load_embeddings, load_split, save_split, split_classes,
                   write_corpus)
from .episode import MetaTask, label_vector, sample_episode
from .errors import (ConfigError, DomainError, NumericError, ParseError,
                     SamplingError, ShapeError, UndefinedMetricError,
                     ValidationError)
from .metrics import EvalSummary, auc, default_tau, evaluate, evaluate_tasks, macro_f1
from .model import (AblationFlags, ModelConfig, ModelParams, forward_episode,
                    init_model_params, load_checkpoint, save_checkpoint)
from .policy import (apply_threshold, beta_log_pdf, beta_mode, build_state,
                     instance_f1, policy_forward, sample_threshold, train_policy)
from .tensor import Tensor, no_grad
from .training import TrainConfig, TrainResult, train_main

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "ClassSplit", "ConfigError", "Corpus", "DomainError",
    "EmbeddingTable", "EvalSummary", "MetaTask", "ModelConfig", "ModelParams",
    "NumericError", "ParseError", "SamplingError", "Sentence", "ShapeError",
    "SyntheticConfig", "Tensor", "TrainConfig", "TrainResult",
    "UndefinedMetricError", "ValidationError", "apply_threshold", "auc",
    "beta_log_pdf", "beta_mode", "build_state", "default_tau", "evaluate",
    "evaluate_tasks", "forward_episode", "generate_synthetic", "init_embeddings",
    "init_model_params", "instance_f1", "label_vector", "load_checkpoint",
    "load_corpus", "load_embeddings", "load_split", "macro_f1", "no_grad",
    "policy_forward", "sample_episode", "sample_threshold", "save_checkpoint",
    "save_split", "split_classes", "train_main", "train_policy", "write_corpus",
]
