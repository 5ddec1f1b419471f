"""Sampling of N-way K-shot meta-tasks with multi-label query supervision."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Corpus, Sentence
from .errors import SamplingError


@dataclass
class MetaTask:
    """One episode: N classes, K support sentences each, and labeled queries.

    ``query_labels[j][i]`` is 1 iff query j mentions ``classes[i]``; a query
    drawn through one class may therefore be multi-hot. Support and query
    ids never overlap within an episode.
    """

    classes: list[str]
    support: list[list[Sentence]]
    support_ids: list[list[int]]
    queries: list[Sentence]
    query_ids: list[int]
    query_labels: list[np.ndarray]


def label_vector(aspects: frozenset[str], classes: list[str]) -> np.ndarray:
    """Binary vector marking which episode classes a sentence mentions."""
    return np.array([1 if c in aspects else 0 for c in classes], dtype=np.float64)


def sample_episode(
    corpus: Corpus,
    class_pool: list[str],
    n_way: int,
    k_shot: int,
    q_per_class: int,
    rng: np.random.Generator,
) -> MetaTask:
    """Draw one N-way K-shot episode from the given class pool.

    Classes are drawn without replacement; within each class, support and
    query sentences are drawn without replacement. A sentence already used
    as support anywhere in the episode (multi-aspect sentences can back
    several classes) is excluded from every query draw, and a sentence is
    never repeated in the query set.
    """
    if len(class_pool) < n_way:
        raise SamplingError(
            f"partition has {len(class_pool)} classes, need {n_way} for an episode"
        )
    picked = rng.choice(len(class_pool), size=n_way, replace=False)
    classes = [class_pool[i] for i in picked]

    for name in classes:
        have = len(corpus.by_class.get(name, ()))
        if have < k_shot + q_per_class:
            raise SamplingError(
                f"class {name!r} has {have} sentences, need {k_shot + q_per_class}"
            )

    support: list[list[Sentence]] = []
    support_ids: list[list[int]] = []
    for name in classes:
        ids = corpus.by_class[name]
        sel = rng.choice(len(ids), size=k_shot, replace=False)
        chosen = [ids[i] for i in sel]
        support_ids.append(chosen)
        support.append([corpus.sentences[i] for i in chosen])

    used = {i for ids in support_ids for i in ids}
    query_ids: list[int] = []
    for name in classes:
        pool = [i for i in corpus.by_class[name] if i not in used]
        if len(pool) < q_per_class:
            raise SamplingError(
                f"class {name!r} has only {len(pool)} query candidates left, "
                f"need {q_per_class}"
            )
        sel = rng.choice(len(pool), size=q_per_class, replace=False)
        for i in sel:
            query_ids.append(pool[i])
            used.add(pool[i])

    queries = [corpus.sentences[i] for i in query_ids]
    labels = [label_vector(s.aspects, classes) for s in queries]
    return MetaTask(classes, support, support_ids, queries, query_ids, labels)


def episode_to_dict(task: MetaTask) -> dict:
    """JSON-ready form of an episode for audit or replay."""
    return {
        "classes": task.classes,
        "support": [
            [{"id": sid, "tokens": sent.tokens, "aspects": sorted(sent.aspects)}
             for sid, sent in zip(ids, sents)]
            for ids, sents in zip(task.support_ids, task.support)
        ],
        "queries": [
            {
                "id": qid,
                "tokens": sent.tokens,
                "aspects": sorted(sent.aspects),
                "labels": [int(v) for v in label],
            }
            for qid, sent, label in zip(task.query_ids, task.queries, task.query_labels)
        ],
    }


def dump_episodes(tasks: list[MetaTask], path: str) -> None:
    """Write one JSON object per episode, line-delimited."""
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(episode_to_dict(task)) + "\n")
