"""Stage-1 episodic training: per-episode MSE optimization with Adam and
early stopping on validation AUC.

Each epoch samples fresh training episodes from the training classes,
takes one optimizer step per episode on the summed per-query loss, then
measures ranking AUC on a fixed set of validation-class episodes. The
parameters with the best validation AUC are returned once the score has
failed to improve for ``patience`` consecutive epochs.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import ClassSplit, Corpus, EmbeddingTable, init_embeddings
from .episode import sample_episode
from .errors import ConfigError, NumericError, ValidationError
from .metrics import default_tau, evaluate_tasks, sample_eval_tasks
from .model import (AblationFlags, EpisodeForward, ModelConfig, forward_episode,
                    init_model_params, params_to_arrays)
from .tensor import Tensor


@dataclass
class TrainConfig:
    """Protocol knobs; the defaults are the reference training recipe."""

    n_way: int = 5
    k_shot: int = 5
    q_per_class: int = 5
    episodes_per_epoch: int = 800
    val_episodes: int = 600
    test_episodes: int = 600
    learning_rate: float = 1e-3
    policy_learning_rate: float = 1e-4
    patience: int = 3
    max_epochs: int = 30
    seeds: list[int] = field(default_factory=lambda: [5, 10, 15, 20, 25])
    embedding_dim: int = 50
    hidden_dim: int = 50
    window: int = 3
    repeat_count: int = 10
    squared_distance: bool = False
    train_temperature: float = 1.0
    policy_temperature: float = 2.0
    ablations: list[str] = field(default_factory=list)

    def validate(self) -> None:
        counts = {
            "n_way": self.n_way, "k_shot": self.k_shot,
            "q_per_class": self.q_per_class,
            "episodes_per_epoch": self.episodes_per_epoch,
            "val_episodes": self.val_episodes, "test_episodes": self.test_episodes,
            "max_epochs": self.max_epochs,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")
        if self.learning_rate <= 0 or self.policy_learning_rate <= 0:
            raise ConfigError("learning rates must be positive")
        if self.train_temperature <= 0 or self.policy_temperature <= 0:
            raise ConfigError("temperatures must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        AblationFlags.from_names(self.ablations)
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            window=self.window,
            repeat_count=self.repeat_count,
            squared_distance=self.squared_distance,
        )

    def ablation_flags(self) -> AblationFlags:
        return AblationFlags.from_names(self.ablations)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


class AdamState:
    """First/second moment buffers and step counter for one parameter set."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update in place; missing gradients count as zero."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise NumericError(
                f"non-finite gradient for {name} at step {state.t}: "
                f"|g|max={np.max(np.abs(g[np.isfinite(g)]), initial=0.0):.3e}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def mse_loss(y_hat: Tensor, y_q: np.ndarray) -> Tensor:
    """Squared error against the L1-normalized label vector.

    The labels are divided by their positive count so the target sums to
    1 like the prediction does.
    """
    y = np.asarray(y_q, dtype=np.float64)
    npos = float(y.sum())
    if npos == 0:
        raise ValidationError("label vector has no positive class")
    target = Tensor(y / npos)
    return T.tsum(T.square(T.sub(y_hat, target)))


def episode_loss(forward: EpisodeForward) -> Tensor:
    """Sum of per-query losses; one optimizer step is taken per episode."""
    losses = [mse_loss(s, y) for s, y in zip(forward.scores, forward.labels)]
    return functools.reduce(T.add, losses)


@dataclass
class TrainResult:
    arrays: dict[str, np.ndarray]
    best_val_auc: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    log: list[dict]


def checkpoint_config(corpus: Corpus, config: TrainConfig, seed: int, stage: str) -> dict:
    """Config echo stored in the checkpoint header."""
    return {
        "stage": stage,
        "seed": seed,
        "vocab": list(corpus.id_to_token),
        "model": asdict(config.model_config()),
        "train": config.to_dict(),
        "policy_temperature": config.policy_temperature,
    }


def train_main(corpus: Corpus, split: ClassSplit, config: TrainConfig, seed: int,
               embeddings: EmbeddingTable | None = None,
               log_path: str | None = None,
               progress=None) -> TrainResult:
    """Stage-1 training run for one seed.

    Returns the parameter snapshot with the best validation AUC along
    with the per-epoch log records (epoch, train loss, val AUC, val
    macro-F1).
    """
    config.validate()
    ablation = config.ablation_flags()
    rng_init = np.random.default_rng([seed, 0])
    if embeddings is None:
        embeddings = init_embeddings(corpus.vocab, config.embedding_dim, rng_init)
    params = init_model_params(embeddings, config.model_config(), rng_init)
    trainable = params.trainable()
    opt = AdamState(trainable)

    rng_val = np.random.default_rng([seed, 2])
    val_tasks = sample_eval_tasks(corpus, split.validation, config.n_way,
                                  config.k_shot, config.q_per_class,
                                  config.val_episodes, rng_val)
    tau = default_tau(config.n_way)

    best_auc = -np.inf
    best_arrays = params_to_arrays(params)
    best_epoch = 0
    since_improve = 0
    records: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            rng_train = np.random.default_rng([seed, 1, epoch])
            total = 0.0
            for _ in range(config.episodes_per_epoch):
                task = sample_episode(corpus, split.train, config.n_way,
                                      config.k_shot, config.q_per_class, rng_train)
                forward = forward_episode(task, params, ablation,
                                          config.train_temperature)
                loss = episode_loss(forward)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite training loss at epoch {epoch}")
                T.zero_grads(trainable.values())
                T.backward(loss)
                adam_step(trainable, opt, config.learning_rate)
                total += value
            summary = evaluate_tasks(params, val_tasks, "static", tau, ablation,
                                     config.train_temperature)
            record = {
                "epoch": epoch,
                "train_loss": total / config.episodes_per_epoch,
                "val_auc": summary.mean_auc,
                "val_macro_f1": summary.mean_f1,
            }
            records.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if progress:
                progress(record)
            if summary.mean_auc > best_auc:
                best_auc = summary.mean_auc
                best_arrays = params_to_arrays(params)
                best_epoch = epoch
                since_improve = 0
            else:
                since_improve += 1
                if since_improve >= config.patience:
                    return TrainResult(best_arrays, best_auc, best_epoch,
                                       epoch, True, records)
        return TrainResult(best_arrays, best_auc, best_epoch,
                           config.max_epochs, False, records)
    finally:
        if log_fh:
            log_fh.close()
