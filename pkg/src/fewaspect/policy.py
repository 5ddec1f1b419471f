"""Dynamic decision threshold: a per-instance Beta-distributed threshold
learned with REINFORCE against a mode-action baseline.

The policy network reads a state built from the episode geometry (the
squared prototype/query differences plus the ranking distribution) and
produces Beta parameters a, b > 1. During training a threshold is sampled
from Beta(a, b) and rewarded by the instance F1 it achieves relative to
the F1 of the distribution's mode; at inference the mode itself is the
threshold, so predictions are deterministic.

The state is treated as a plain numeric input: the main network keeps
training through its own squared-error loss only, never through the
policy objective.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import ClassSplit, Corpus
from .episode import sample_episode
from .errors import ConfigError, DomainError, NumericError, ValidationError
from .metrics import evaluate_tasks, sample_eval_tasks
from .model import forward_episode, params_from_arrays, params_to_arrays
from .tensor import Tensor
from .training import AdamState, TrainConfig, adam_step, episode_loss, mse_loss

_MAIN_ARRAY_NAMES = ("embeddings", "conv_kernel", "conv_bias", "attn_weight", "attn_bias")


class PolicyParams:
    """Trunk plus the two Beta-parameter heads."""

    def __init__(self, trunk_weight: Tensor, trunk_bias: Tensor,
                 head_a_weight: Tensor, head_a_bias: Tensor,
                 head_b_weight: Tensor, head_b_bias: Tensor):
        self.trunk_weight = trunk_weight
        self.trunk_bias = trunk_bias
        self.head_a_weight = head_a_weight
        self.head_a_bias = head_a_bias
        self.head_b_weight = head_b_weight
        self.head_b_bias = head_b_bias

    def trainable(self) -> dict[str, Tensor]:
        return {
            "trunk_weight": self.trunk_weight,
            "trunk_bias": self.trunk_bias,
            "head_a_weight": self.head_a_weight,
            "head_a_bias": self.head_a_bias,
            "head_b_weight": self.head_b_weight,
            "head_b_bias": self.head_b_bias,
        }


def init_policy_params(state_dim: int, hidden_dim: int,
                       rng: np.random.Generator) -> PolicyParams:
    def normal(*shape):
        return Tensor(rng.normal(0.0, 0.1, size=shape), requires_grad=True)

    return PolicyParams(
        trunk_weight=normal(state_dim, hidden_dim),
        trunk_bias=normal(hidden_dim),
        head_a_weight=normal(hidden_dim),
        head_a_bias=normal(),
        head_b_weight=normal(hidden_dim),
        head_b_bias=normal(),
    )


def policy_params_from_arrays(arrays: dict[str, np.ndarray]) -> PolicyParams:
    try:
        return PolicyParams(**{name: Tensor(arrays[name].copy(), requires_grad=True)
                               for name in ("trunk_weight", "trunk_bias",
                                            "head_a_weight", "head_a_bias",
                                            "head_b_weight", "head_b_bias")})
    except KeyError as exc:
        raise ConfigError(f"policy checkpoint is missing array {exc}") from exc


def build_state(prototypes: np.ndarray, query_reps: np.ndarray,
                y_hat: np.ndarray) -> np.ndarray:
    """Concatenate the N squared-difference vectors, then the N scores."""
    if prototypes.shape != query_reps.shape:
        raise ValueError("prototype and query representation shapes differ")
    if prototypes.shape[0] != y_hat.shape[0]:
        raise ValueError("score vector length does not match class count")
    state = np.concatenate([np.square(prototypes - query_reps).ravel(), y_hat])
    if not np.all(np.isfinite(state)):
        raise NumericError("policy state contains non-finite values")
    return state


def policy_forward(state: np.ndarray, params: PolicyParams) -> tuple[Tensor, Tensor]:
    """State -> Beta parameters, both guaranteed > 1 by the shifted softplus."""
    s = Tensor(state)
    h = T.tanh(T.add(T.matmul(s, params.trunk_weight), params.trunk_bias))
    a = T.add(T.softplus(T.add(T.matmul(h, params.head_a_weight), params.head_a_bias)), 1.0)
    b = T.add(T.softplus(T.add(T.matmul(h, params.head_b_weight), params.head_b_bias)), 1.0)
    if not (np.isfinite(a.data) and np.isfinite(b.data)):
        raise NumericError("policy head produced a non-finite Beta parameter")
    return a, b


def beta_mode(a: float, b: float) -> float:
    """Mode (a-1)/(a+b-2); only defined on the interior-mode regime a, b > 1."""
    if a <= 1.0 or b <= 1.0:
        raise DomainError(f"beta mode needs a > 1 and b > 1, got a={a}, b={b}")
    return (a - 1.0) / (a + b - 2.0)


def beta_log_pdf(tau: float, a: float, b: float) -> float:
    """Log density of Beta(a, b) at tau, normalizer via log-gamma."""
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie strictly inside (0, 1), got {tau}")
    if a <= 0.0 or b <= 0.0:
        raise DomainError(f"beta parameters must be positive, got a={a}, b={b}")
    log_norm = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    return (a - 1.0) * math.log(tau) + (b - 1.0) * math.log1p(-tau) - log_norm


def beta_log_pdf_t(tau: float, a: Tensor, b: Tensor) -> Tensor:
    """Differentiable-in-(a, b) log density at a fixed sampled tau."""
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie strictly inside (0, 1), got {tau}")
    term_a = T.scale(T.add(a, -1.0), math.log(tau))
    term_b = T.scale(T.add(b, -1.0), math.log1p(-tau))
    log_norm = T.sub(T.add(T.lgamma(a), T.lgamma(b)), T.lgamma(T.add(a, b)))
    return T.sub(T.add(term_a, term_b), log_norm)


def sample_threshold(a: float, b: float, rng: np.random.Generator) -> float:
    """Draw tau from Beta(a, b), nudged off the endpoints."""
    tau = float(rng.beta(a, b))
    return float(np.clip(tau, 1e-12, 1.0 - 1e-12))


def apply_threshold(y_hat: np.ndarray, tau: float) -> set[int]:
    """Classes whose score reaches the threshold; may be empty."""
    return {int(i) for i in np.flatnonzero(np.asarray(y_hat) >= tau)}


def instance_f1(predicted: set[int], true: set[int]) -> float:
    """Set F1 for one instance; an empty prediction scores 0."""
    if not true:
        raise ValidationError("true label set must be nonempty")
    tp = len(predicted & true)
    if tp == 0:
        return 0.0
    precision = tp / len(predicted)
    recall = tp / len(true)
    return 2.0 * precision * recall / (precision + recall)


def policy_loss(score: float, score_star: float, log_p):
    """Negative advantage-weighted log probability: -(score - score*) * log_p."""
    advantage = score - score_star
    if isinstance(log_p, Tensor):
        return T.scale(log_p, -advantage)
    return -advantage * log_p


@dataclass
class PolicyTrainResult:
    arrays: dict[str, np.ndarray]
    best_val_auc: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    log: list[dict]


def _joint_arrays(params, policy_params: PolicyParams) -> dict[str, np.ndarray]:
    arrays = params_to_arrays(params)
    for name, t in policy_params.trainable().items():
        arrays[f"policy/{name}"] = t.data.copy()
    return arrays


def train_policy(corpus: Corpus, split: ClassSplit, config: TrainConfig, seed: int,
                 stage1_arrays: dict[str, np.ndarray],
                 log_path: str | None = None,
                 progress=None) -> PolicyTrainResult:
    """Joint stage-2 run: REINFORCE on the policy, squared error on the main net.

    Per query the ranking distribution is computed at the smoothing
    temperature, a threshold is sampled, and the instance F1 advantage
    over the mode action weights the log-density gradient. The main
    network keeps taking its stage-1 steps (temperature 1) at its own
    learning rate. Selection and stopping again follow validation AUC.
    """
    config.validate()
    missing = [n for n in _MAIN_ARRAY_NAMES if n not in stage1_arrays]
    if missing:
        raise ConfigError(f"stage-1 checkpoint is missing arrays {missing}")
    ablation = config.ablation_flags()
    model_cfg = config.model_config()
    params = params_from_arrays(stage1_arrays, corpus.vocab, model_cfg)
    main_trainable = params.trainable()
    state_dim = config.n_way * config.hidden_dim + config.n_way

    rng_init = np.random.default_rng([seed, 4])
    policy_params = init_policy_params(state_dim, config.hidden_dim, rng_init)
    policy_trainable = policy_params.trainable()
    main_opt = AdamState(main_trainable)
    policy_opt = AdamState(policy_trainable)
    rng_tau = np.random.default_rng([seed, 7])

    rng_val = np.random.default_rng([seed, 6])
    val_tasks = sample_eval_tasks(corpus, split.validation, config.n_way,
                                  config.k_shot, config.q_per_class,
                                  config.val_episodes, rng_val)

    def current_policy_arrays() -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in policy_trainable.items()}

    best_auc = -np.inf
    best_arrays = _joint_arrays(params, policy_params)
    best_epoch = 0
    since_improve = 0
    records: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            rng_train = np.random.default_rng([seed, 5, epoch])
            main_total = 0.0
            policy_total = 0.0
            for _ in range(config.episodes_per_epoch):
                task = sample_episode(corpus, split.train, config.n_way,
                                      config.k_shot, config.q_per_class, rng_train)
                forward = forward_episode(task, params, ablation,
                                          config.policy_temperature)

                policy_losses = []
                for q, smoothed in enumerate(forward.scores):
                    y2 = smoothed.data
                    state = build_state(forward.prototypes.data,
                                        forward.query_reps[q].data, y2)
                    a_t, b_t = policy_forward(state, policy_params)
                    a, b = a_t.item(), b_t.item()
                    tau = sample_threshold(a, b, rng_tau)
                    true = {int(i) for i in np.flatnonzero(forward.labels[q] == 1)}
                    score = instance_f1(apply_threshold(y2, tau), true)
                    score_star = instance_f1(apply_threshold(y2, beta_mode(a, b)), true)
                    log_p = beta_log_pdf_t(tau, a_t, b_t)
                    policy_losses.append(policy_loss(score, score_star, log_p))
                policy_objective = functools.reduce(T.add, policy_losses)

                main_scores = [T.softmax_t(T.scale(d, -1.0), 1.0)
                               for d in forward.distances]
                main_losses = [mse_loss(s, y)
                               for s, y in zip(main_scores, forward.labels)]
                main_objective = functools.reduce(T.add, main_losses)

                pv, mv = policy_objective.item(), main_objective.item()
                if not (np.isfinite(pv) and np.isfinite(mv)):
                    raise NumericError(f"non-finite stage-2 loss at epoch {epoch}")
                T.zero_grads(policy_trainable.values())
                T.backward(policy_objective)
                adam_step(policy_trainable, policy_opt, config.policy_learning_rate)
                T.zero_grads(main_trainable.values())
                T.backward(main_objective)
                adam_step(main_trainable, main_opt, config.learning_rate)
                policy_total += pv
                main_total += mv

            summary = evaluate_tasks(params, val_tasks, "dynamic", None, ablation,
                                     config.policy_temperature,
                                     current_policy_arrays())
            record = {
                "epoch": epoch,
                "train_main_loss": main_total / config.episodes_per_epoch,
                "train_policy_loss": policy_total / config.episodes_per_epoch,
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
                best_arrays = _joint_arrays(params, policy_params)
                best_epoch = epoch
                since_improve = 0
            else:
                since_improve += 1
                if since_improve >= config.patience:
                    return PolicyTrainResult(best_arrays, best_auc, best_epoch,
                                             epoch, True, records)
        return PolicyTrainResult(best_arrays, best_auc, best_epoch,
                                 config.max_epochs, False, records)
    finally:
        if log_fh:
            log_fh.close()
