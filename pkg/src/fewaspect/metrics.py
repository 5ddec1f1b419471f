"""Multi-label episode evaluation: ranking AUC, macro-F1 under static or
dynamic thresholds, and aggregate reporting over many episodes.

AUC is pooled per episode over all (query, class) score/label pairs and
then averaged across episodes; macro-F1 is computed within an episode
over its classes and likewise averaged. Episodes whose pooled labels are
single-class (AUC undefined) are skipped with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Corpus
from .episode import MetaTask, sample_episode
from .errors import ConfigError, UndefinedMetricError
from .model import (AblationFlags, EpisodeForward, ModelConfig, forward_episode,
                    load_checkpoint, params_from_arrays)


def auc(scores, labels) -> float:
    """Pairwise ranking AUC: P(positive scores above negative), ties 0.5.

    Computed through midranks (Mann-Whitney identity), which agrees with
    the explicit pair count exactly because every intermediate is a small
    multiple of one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be equal-length vectors, got {s.shape} and {y.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")

    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[order[j + 1]] == s[order[i]]:
            j += 1
        # midrank for the tie group occupying positions i..j (1-based ranks)
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(np.sum(ranks[y == 1]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def macro_f1(predicted: list[set[int]], labels: list[np.ndarray], n_classes: int) -> float:
    """Mean over classes of per-class binary F1 across the episode's queries.

    A class with zero F1 denominator (no true and no predicted positives)
    contributes 0.
    """
    if not predicted:
        raise ValueError("macro_f1 needs at least one query")
    if len(predicted) != len(labels):
        raise ValueError("predicted and labels must align")
    total = 0.0
    for c in range(n_classes):
        tp = fp = fn = 0
        for pred, y in zip(predicted, labels):
            truth = y[c] == 1
            hit = c in pred
            if hit and truth:
                tp += 1
            elif hit:
                fp += 1
            elif truth:
                fn += 1
        denom = 2 * tp + fp + fn
        total += (2 * tp / denom) if denom > 0 else 0.0
    return total / n_classes


@dataclass
class EpisodeReport:
    scores: list[np.ndarray]
    labels: list[np.ndarray]
    predicted: list[set[int]]
    episode_auc: float | None
    episode_f1: float
    threshold_mode: str


@dataclass
class EvalSummary:
    mean_auc: float
    mean_f1: float
    episodes_used: int
    episodes_skipped: int
    threshold_mode: str
    tau: float | None
    per_episode_auc: list[float] = field(default_factory=list)
    per_episode_f1: list[float] = field(default_factory=list)
    reports: list[EpisodeReport] = field(default_factory=list)


def default_tau(n_way: int) -> float:
    """Static decision threshold: 0.2 in the 10-way setting, else 0.3."""
    return 0.2 if n_way == 10 else 0.3


def score_episode(forward: EpisodeForward, predicted: list[set[int]],
                  threshold_mode: str) -> EpisodeReport:
    """Pool the episode's scores and compute both metrics."""
    score_arrays = [s.data.copy() for s in forward.scores]
    flat_scores = np.concatenate(score_arrays)
    flat_labels = np.concatenate(forward.labels)
    try:
        ep_auc: float | None = auc(flat_scores, flat_labels)
    except UndefinedMetricError:
        ep_auc = None
    ep_f1 = macro_f1(predicted, forward.labels, len(forward.classes))
    return EpisodeReport(score_arrays, list(forward.labels), predicted,
                         ep_auc, ep_f1, threshold_mode)


def _static_predictions(forward: EpisodeForward, tau: float) -> list[set[int]]:
    return [{int(i) for i in np.flatnonzero(s.data >= tau)} for s in forward.scores]


def _dynamic_predictions(forward: EpisodeForward, policy_arrays: dict) -> list[set[int]]:
    from .policy import apply_threshold, beta_mode, build_state, policy_forward, policy_params_from_arrays

    params = policy_params_from_arrays(policy_arrays)
    preds = []
    for q in range(len(forward.scores)):
        state = build_state(forward.prototypes.data, forward.query_reps[q].data,
                            forward.scores[q].data)
        a_t, b_t = policy_forward(state, params)
        tau = beta_mode(a_t.item(), b_t.item())
        preds.append(apply_threshold(forward.scores[q].data, tau))
    return preds


def evaluate_tasks(params, tasks: list[MetaTask], threshold_mode: str = "static",
                   tau: float | None = None, ablation: AblationFlags | None = None,
                   temperature: float = 1.0, policy_arrays: dict | None = None,
                   collect_reports: bool = False) -> EvalSummary:
    """Evaluate pre-sampled episodes against in-memory parameters.

    Static mode thresholds the ranking distribution at ``tau``; dynamic
    mode thresholds each instance at the mode of its learned Beta
    distribution (no sampling, so results are reproducible bit for bit).
    """
    if threshold_mode not in ("static", "dynamic"):
        raise ConfigError(f"unknown threshold mode {threshold_mode!r}")
    if threshold_mode == "dynamic" and not policy_arrays:
        raise ConfigError("dynamic thresholding requires policy parameters; "
                          "train with --stage dt first")
    aucs: list[float] = []
    f1s: list[float] = []
    skipped = 0
    reports: list[EpisodeReport] = []
    for idx, task in enumerate(tasks):
        with T.no_grad():
            forward = forward_episode(task, params, ablation, temperature)
            if threshold_mode == "static":
                t = default_tau(len(task.classes)) if tau is None else tau
                predicted = _static_predictions(forward, t)
            else:
                predicted = _dynamic_predictions(forward, policy_arrays)
        report = score_episode(forward, predicted, threshold_mode)
        if report.episode_auc is None:
            warnings.warn(f"episode {idx}: AUC undefined (single-class labels); skipped",
                          RuntimeWarning, stacklevel=2)
            skipped += 1
            continue
        aucs.append(report.episode_auc)
        f1s.append(report.episode_f1)
        if collect_reports:
            reports.append(report)
    if not aucs:
        raise UndefinedMetricError("every episode had single-class pooled labels")
    return EvalSummary(
        mean_auc=float(np.mean(aucs)),
        mean_f1=float(np.mean(f1s)),
        episodes_used=len(aucs),
        episodes_skipped=skipped,
        threshold_mode=threshold_mode,
        tau=tau if threshold_mode == "static" else None,
        per_episode_auc=aucs,
        per_episode_f1=f1s,
        reports=reports,
    )


def sample_eval_tasks(corpus: Corpus, class_pool: list[str], n_way: int, k_shot: int,
                      q_per_class: int, episodes: int,
                      rng: np.random.Generator) -> list[MetaTask]:
    return [sample_episode(corpus, class_pool, n_way, k_shot, q_per_class, rng)
            for _ in range(episodes)]


def evaluate(checkpoint_path: str, corpus: Corpus, class_pool: list[str],
             n_way: int, k_shot: int, q_per_class: int, episodes: int, seed: int,
             threshold_mode: str = "static", tau: float | None = None,
             ablation: AblationFlags | None = None,
             collect_reports: bool = False) -> EvalSummary:
    """Checkpoint-level evaluation on freshly sampled held-out episodes.

    Dynamic mode scores and thresholds the smoothed (temperature 2)
    ranking distribution the policy was trained against; static mode uses
    temperature 1.
    """
    arrays, cfg = load_checkpoint(checkpoint_path)
    vocab_list = cfg["vocab"]
    if vocab_list != corpus.id_to_token:
        raise ConfigError("checkpoint vocabulary does not match the corpus; "
                          "evaluate against the corpus the model was trained on")
    model_cfg = ModelConfig(**cfg["model"])
    main_arrays = {k: v for k, v in arrays.items() if not k.startswith("policy/")}
    policy_arrays = {k.split("/", 1)[1]: v for k, v in arrays.items()
                     if k.startswith("policy/")}
    params = params_from_arrays(main_arrays, corpus.vocab, model_cfg)

    if threshold_mode == "dynamic":
        if not policy_arrays:
            raise ConfigError(f"{checkpoint_path} holds no policy parameters; "
                              "dynamic thresholding needs a joint (stage dt) checkpoint")
        state_dim = policy_arrays["trunk_weight"].shape[0]
        expected = n_way * model_cfg.hidden_dim + n_way
        if state_dim != expected:
            raise ConfigError(
                f"policy state length {state_dim} was trained for a different N; "
                f"{n_way}-way evaluation needs length {expected}"
            )
        temperature = float(cfg.get("policy_temperature", 2.0))
    else:
        temperature = 1.0

    rng = np.random.default_rng([seed, 3])
    tasks = sample_eval_tasks(corpus, class_pool, n_way, k_shot, q_per_class,
                              episodes, rng)
    return evaluate_tasks(params, tasks, threshold_mode, tau, ablation,
                          temperature, policy_arrays or None, collect_reports)
