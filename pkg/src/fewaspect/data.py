"""Corpus ingestion, vocabulary and embedding management, class splits,
and the synthetic multi-aspect corpus generator.

Corpus files are UTF-8 line-delimited JSON records with a whitespace
tokenized "text" field and a nonempty "labels" list. Embedding files use
the common text format: token followed by space-separated floats, one
entry per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .tensor import Tensor


@dataclass
class Sentence:
    """One tokenized sentence and the aspect categories it mentions."""

    tokens: list[int]
    aspects: frozenset[str]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValidationError("a sentence needs at least one token")
        if not self.aspects:
            raise ValidationError("a sentence needs at least one aspect label")


@dataclass
class Corpus:
    """Sentences grouped by aspect category.

    ``vocab`` maps token strings to ids in first-occurrence order;
    ``id_to_token`` is its inverse. A multi-aspect sentence is indexed
    under every aspect it mentions.
    """

    sentences: list[Sentence]
    vocab: dict[str, int]
    classes: list[str] = field(default_factory=list)
    by_class: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.classes or not self.by_class:
            by_class: dict[str, list[int]] = {}
            classes: list[str] = []
            for i, sent in enumerate(self.sentences):
                for aspect in sorted(sent.aspects):
                    if aspect not in by_class:
                        by_class[aspect] = []
                        classes.append(aspect)
                    by_class[aspect].append(i)
            self.by_class = by_class
            self.classes = sorted(classes)
        self.id_to_token = [""] * len(self.vocab)
        for token, idx in self.vocab.items():
            self.id_to_token[idx] = token

    def text_of(self, sentence: Sentence) -> str:
        return " ".join(self.id_to_token[t] for t in sentence.tokens)


@dataclass
class ClassSplit:
    """Disjoint train / validation / test class name lists."""

    train: list[str]
    validation: list[str]
    test: list[str]

    def __post_init__(self):
        parts = [set(self.train), set(self.validation), set(self.test)]
        total = sum(len(p) for p in parts)
        if len(parts[0] | parts[1] | parts[2]) != total:
            raise ValidationError("split partitions overlap")


@dataclass
class EmbeddingTable:
    """Token vocabulary plus a trainable embedding matrix, one row per token."""

    vocab: dict[str, int]
    matrix: Tensor
    dim: int


def _tokenize(text: str) -> list[str]:
    return text.split()


def load_corpus(path: str) -> Corpus:
    """Parse a line-delimited corpus file.

    The vocabulary is built in first-occurrence order over the whole file,
    so loading is deterministic for a given byte content.
    """
    vocab: dict[str, int] = {}
    sentences: list[Sentence] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON record: {exc}") from exc
            if not isinstance(record, dict) or "text" not in record or "labels" not in record:
                raise ParseError(f"{path}:{lineno}: record needs 'text' and 'labels' fields")
            words = _tokenize(str(record["text"]))
            if not words:
                raise ValidationError(f"{path}:{lineno}: empty text field")
            labels = record["labels"]
            if not isinstance(labels, list) or not labels:
                raise ValidationError(f"{path}:{lineno}: empty label list")
            ids = []
            for w in words:
                if w not in vocab:
                    vocab[w] = len(vocab)
                ids.append(vocab[w])
            sentences.append(Sentence(ids, frozenset(str(l) for l in labels)))
    return Corpus(sentences, vocab)


def write_corpus(corpus: Corpus, path: str) -> None:
    """Write a corpus back to the line-delimited record format."""
    with open(path, "w", encoding="utf-8") as fh:
        for sent in corpus.sentences:
            record = {"text": corpus.text_of(sent), "labels": sorted(sent.aspects)}
            fh.write(json.dumps(record) + "\n")


def load_embeddings(path: str, vocab: dict[str, int], dim: int, rng: np.random.Generator) -> EmbeddingTable:
    """Build the embedding table for a vocabulary from a text-format file.

    Rows present in the file are copied verbatim; vocabulary tokens missing
    from the file each get their own trainable row drawn from N(0, 0.1).
    Tokens in the file but not in the vocabulary are ignored.
    """
    file_rows: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ParseError(
                    f"{path}:{lineno}: expected {dim} values for token {token!r}, got {len(values)}"
                )
            try:
                row = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric embedding value") from exc
            if token in vocab:
                file_rows[token] = row
    matrix = rng.normal(0.0, 0.1, size=(len(vocab), dim))
    for token, row in file_rows.items():
        matrix[vocab[token]] = row
    return EmbeddingTable(vocab, Tensor(matrix, requires_grad=True), dim)


def init_embeddings(vocab: dict[str, int], dim: int, rng: np.random.Generator) -> EmbeddingTable:
    """Embedding table with every row drawn from N(0, 0.1)."""
    matrix = rng.normal(0.0, 0.1, size=(len(vocab), dim))
    return EmbeddingTable(vocab, Tensor(matrix, requires_grad=True), dim)


@dataclass
class SyntheticConfig:
    """Shape of a generated corpus.

    Each class owns a disjoint pool of signal tokens; all classes share one
    background pool. A sentence mixes signal tokens of its class(es) with
    background tokens, so classes are separable but noisy.
    """

    num_classes: int = 30
    sentences_per_class: int = 100
    multi_aspect_fraction: float = 0.0
    vocab_size: int = 500
    sentence_length_range: tuple[int, int] = (6, 12)
    signal_tokens_per_class: int = 5
    signal_fraction: float = 0.5
    confusion_clique: int = 0
    partner_share: float = 0.5

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.sentences_per_class < 1:
            raise ConfigError("need at least one sentence per class")
        if not 0.0 <= self.multi_aspect_fraction <= 1.0:
            raise ConfigError(
                f"multi_aspect_fraction must lie in [0, 1], got {self.multi_aspect_fraction}"
            )
        if not 0.0 < self.signal_fraction <= 1.0:
            raise ConfigError(
                f"signal_fraction must lie in (0, 1], got {self.signal_fraction}"
            )
        if self.confusion_clique != 0:
            if self.confusion_clique < 2:
                raise ConfigError(
                    f"confusion_clique must be 0 or at least 2, got {self.confusion_clique}"
                )
            if self.num_classes % self.confusion_clique != 0:
                raise ConfigError(
                    f"confusion_clique {self.confusion_clique} must divide "
                    f"num_classes {self.num_classes}"
                )
        if not 0.0 < self.partner_share < 1.0:
            raise ConfigError(
                f"partner_share must lie in (0, 1), got {self.partner_share}"
            )
        lo, hi = self.sentence_length_range
        if lo < 2 or hi < lo:
            raise ConfigError(f"bad sentence length range {self.sentence_length_range}")
        reserved = self.num_classes * self.signal_tokens_per_class
        if self.vocab_size < reserved:
            raise ConfigError(
                f"vocab_size {self.vocab_size} cannot hold "
                f"{reserved} signal tokens ({self.num_classes} classes x "
                f"{self.signal_tokens_per_class})"
            )


def generate_synthetic(config: SyntheticConfig, seed: int) -> Corpus:
    """Generate a deterministic multi-aspect corpus.

    A ``signal_fraction`` share of each sentence is signal drawn from the
    owning class pool(s), the rest is shared background noise. When the
    vocab budget leaves no background tokens, sentences are all signal.
    With probability ``multi_aspect_fraction`` a sentence draws signal
    from a second class and carries both labels. The second class is
    uniform over the others, or over the sentence class's own group when
    ``confusion_clique`` partitions the classes into groups of that size;
    ``partner_share`` sets how much of the signal the second class takes,
    so values far from 0.5 yield lopsided two-label sentences.
    """
    config.validate()
    rng = np.random.default_rng([seed, 0x5ED])

    class_names = [f"class{c:03d}" for c in range(config.num_classes)]
    s = config.signal_tokens_per_class
    signal_words = {
        name: [f"sig_{name}_{k}" for k in range(s)] for name in class_names
    }
    n_background = config.vocab_size - config.num_classes * s
    background_words = [f"bg{k:04d}" for k in range(n_background)]

    lo, hi = config.sentence_length_range
    vocab: dict[str, int] = {}
    sentences: list[Sentence] = []

    def to_ids(words: list[str]) -> list[int]:
        ids = []
        for w in words:
            if w not in vocab:
                vocab[w] = len(vocab)
            ids.append(vocab[w])
        return ids

    for ci, name in enumerate(class_names):
        for _ in range(config.sentences_per_class):
            length = int(rng.integers(lo, hi + 1))
            if n_background == 0:
                n_signal = length
            else:
                n_signal = min(length, max(1, int(rng.binomial(length, config.signal_fraction))))
            two_label = rng.random() < config.multi_aspect_fraction
            if two_label:
                if config.confusion_clique:
                    c = config.confusion_clique
                    base = (ci // c) * c
                    oi = base + int(rng.integers(c - 1))
                    if oi >= ci:
                        oi += 1
                else:
                    oi = int(rng.integers(config.num_classes - 1))
                    if oi >= ci:
                        oi += 1
                other = class_names[oi]
                n_signal = max(2, n_signal)
                n_partner = int(n_signal * config.partner_share)
                n_partner = max(1, min(n_signal - 1, n_partner))
                picks = [signal_words[name][int(rng.integers(s))] for _ in range(n_signal - n_partner)]
                picks += [signal_words[other][int(rng.integers(s))] for _ in range(n_partner)]
                labels = frozenset({name, other})
            else:
                picks = [signal_words[name][int(rng.integers(s))] for _ in range(n_signal)]
                labels = frozenset({name})
            picks += [
                background_words[int(rng.integers(n_background))]
                for _ in range(length - len(picks))
            ]
            order = rng.permutation(len(picks))
            words = [picks[i] for i in order]
            sentences.append(Sentence(to_ids(words), labels))

    return Corpus(sentences, vocab)


def split_classes(
    corpus: Corpus,
    counts: tuple[int, int, int] | None = None,
    explicit: tuple[list[str], list[str], list[str]] | None = None,
    seed: int = 0,
) -> ClassSplit:
    """Partition the corpus classes into train / validation / test.

    Either ``counts`` (sizes that must sum to the class count; classes are
    shuffled deterministically under ``seed``) or ``explicit`` name lists
    (returned verbatim after disjointness and coverage checks).
    """
    if (counts is None) == (explicit is None):
        raise ValidationError("provide exactly one of counts or explicit lists")

    if explicit is not None:
        train, val, test = explicit
        split = ClassSplit(list(train), list(val), list(test))
        named = set(split.train) | set(split.validation) | set(split.test)
        if named != set(corpus.classes):
            missing = sorted(set(corpus.classes) - named)
            extra = sorted(named - set(corpus.classes))
            raise ValidationError(
                f"explicit split must cover the corpus classes exactly; "
                f"missing={missing[:5]} unknown={extra[:5]}"
            )
        return split

    n_train, n_val, n_test = counts
    if min(n_train, n_val, n_test) < 0 or n_train + n_val + n_test != len(corpus.classes):
        raise ValidationError(
            f"split counts {counts} must be nonnegative and sum to {len(corpus.classes)} classes"
        )
    rng = np.random.default_rng([seed, 0x59117])
    order = [corpus.classes[i] for i in rng.permutation(len(corpus.classes))]
    return ClassSplit(
        order[:n_train],
        order[n_train:n_train + n_val],
        order[n_train + n_val:],
    )


def save_split(split: ClassSplit, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"train": split.train, "validation": split.validation, "test": split.test},
            fh,
            indent=2,
        )
        fh.write("\n")


def load_split(path: str) -> ClassSplit:
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    try:
        return ClassSplit(
            list(record["train"]), list(record["validation"]), list(record["test"])
        )
    except KeyError as exc:
        raise ParseError(f"{path}: split file needs train/validation/test lists") from exc
