"""Episodic forward computation: encoder, support-set attention,
query-set attention, and distance ranking.

The encoder maps token ids through a trainable embedding table and a
length-preserving 1-d convolution. For each episode class the support-set
attention turns the K encoded support sentences into one prototype: a
shared generator, conditioned on the class's common aspect vector,
produces a class-specific attention matrix that reweights each sentence
toward the class's common aspect before averaging. The query-set
attention then builds one prototype-specific representation of the query
per class, without any parameters of its own, and queries are ranked by
normalised negative distances to the prototypes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import EmbeddingTable, Sentence
from .episode import MetaTask
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class ModelConfig:
    embedding_dim: int = 50
    hidden_dim: int = 50
    window: int = 3
    repeat_count: int = 10
    squared_distance: bool = False

    def validate(self) -> None:
        if self.window % 2 == 0 or self.window < 1:
            raise ShapeError(f"convolution window must be odd and positive, got {self.window}")
        if min(self.embedding_dim, self.hidden_dim, self.repeat_count) < 1:
            raise ShapeError("model dimensions must be positive")


@dataclass
class AblationFlags:
    """Runtime switches for the model-variant sweeps."""

    no_support_attention: bool = False
    no_attention_matrix: bool = False
    no_query_attention: bool = False

    @classmethod
    def from_names(cls, names) -> "AblationFlags":
        flags = cls()
        mapping = {
            "no-sa": "no_support_attention",
            "no-attn-matrix": "no_attention_matrix",
            "no-qa": "no_query_attention",
        }
        for name in names:
            if name not in mapping:
                raise ValueError(f"unknown ablation {name!r}; choose from {sorted(mapping)}")
            setattr(flags, mapping[name], True)
        return flags

    def names(self) -> list[str]:
        out = []
        if self.no_support_attention:
            out.append("no-sa")
        if self.no_attention_matrix:
            out.append("no-attn-matrix")
        if self.no_query_attention:
            out.append("no-qa")
        return out


class ModelParams:
    """All trainable parameters of the main network."""

    def __init__(self, embeddings: EmbeddingTable, conv_kernel: Tensor,
                 conv_bias: Tensor, attn_weight: Tensor, attn_bias: Tensor,
                 config: ModelConfig):
        self.embeddings = embeddings
        self.conv_kernel = conv_kernel
        self.conv_bias = conv_bias
        self.attn_weight = attn_weight
        self.attn_bias = attn_bias
        self.config = config

    def trainable(self) -> dict[str, Tensor]:
        return {
            "embeddings": self.embeddings.matrix,
            "conv_kernel": self.conv_kernel,
            "conv_bias": self.conv_bias,
            "attn_weight": self.attn_weight,
            "attn_bias": self.attn_bias,
        }


def init_model_params(embeddings: EmbeddingTable, config: ModelConfig,
                      rng: np.random.Generator) -> ModelParams:
    """Fresh parameters; everything except embeddings is drawn from N(0, 0.1)."""
    config.validate()
    if embeddings.dim != config.embedding_dim:
        raise ShapeError(
            f"embedding table dim {embeddings.dim} != configured {config.embedding_dim}"
        )

    def normal(*shape):
        return Tensor(rng.normal(0.0, 0.1, size=shape), requires_grad=True)

    return ModelParams(
        embeddings=embeddings,
        conv_kernel=normal(config.window, config.embedding_dim, config.hidden_dim),
        conv_bias=normal(config.hidden_dim),
        attn_weight=normal(config.hidden_dim, config.repeat_count),
        attn_bias=normal(config.hidden_dim),
        config=config,
    )


# ---------------------------------------------------------------------------
# forward building blocks


def encode(sentence: Sentence, params: ModelParams) -> Tensor:
    """Token ids -> contextual sequence, one row per token."""
    emb = T.take_rows(params.embeddings.matrix, sentence.tokens)
    return T.conv1d_same(emb, params.conv_kernel, params.conv_bias)


def common_aspect_vector(encoded: list[Tensor]) -> Tensor:
    """Grand word-level mean over all rows of all K encoded sequences."""
    if len(encoded) == 1:
        return T.tmean(encoded[0], axis=0)
    return T.tmean(T.concat_rows(encoded), axis=0)


def class_attention_matrix(common_vec: Tensor, params: ModelParams) -> Tensor:
    """Generate the class-specific attention matrix from the common vector.

    The common vector is stacked as ``repeat_count`` identical rows, mapped
    through the shared linear generator, and the bias is added to every row.
    """
    stacked = T.vstack([common_vec] * params.config.repeat_count)
    return T.add(T.matmul(params.attn_weight, stacked), params.attn_bias)


def denoise_instance(encoded: Tensor, common_vec: Tensor,
                     attn_matrix: Tensor | None,
                     return_weights: bool = False):
    """Attention-weighted pooling of one support sentence.

    Scores are the inner product of the common vector with ``tanh`` of the
    (optionally matrix-transformed) sequence; ``attn_matrix=None`` uses the
    identity transform. Returns the pooled vector, optionally with the
    attention weights.
    """
    if attn_matrix is None:
        transformed = T.tanh(encoded)
    else:
        transformed = T.tanh(T.matmul(encoded, attn_matrix))
    weights = T.softmax_t(T.matmul(transformed, common_vec), 1.0)
    pooled = T.matmul(weights, encoded)
    if return_weights:
        return pooled, weights
    return pooled


def compute_prototype(denoised: list[Tensor]) -> Tensor:
    """Arithmetic mean of the K denoised support representations."""
    if len(denoised) == 1:
        return denoised[0]
    return T.tmean(T.vstack(denoised), axis=0)


def query_representation(encoded_query: Tensor, prototype: Tensor,
                         return_weights: bool = False,
                         _tanh_cache: Tensor | None = None):
    """Prototype-specific pooling of a query sentence; no learned parameters."""
    transformed = T.tanh(encoded_query) if _tanh_cache is None else _tanh_cache
    weights = T.softmax_t(T.matmul(transformed, prototype), 1.0)
    pooled = T.matmul(weights, encoded_query)
    if return_weights:
        return pooled, weights
    return pooled


def prototype_distances(prototypes: Tensor, query_reps: Tensor,
                        squared: bool = False) -> Tensor:
    """Per-class distance between prototype and query representation rows."""
    if prototypes.shape != query_reps.shape:
        raise ShapeError(
            f"prototype and query representation shapes differ: "
            f"{prototypes.shape} vs {query_reps.shape}"
        )
    sq = T.tsum(T.square(T.sub(prototypes, query_reps)), axis=1)
    return sq if squared else T.sqrt(sq)


def rank(prototypes: Tensor, query_reps: Tensor, temperature: float,
         squared: bool = False) -> Tensor:
    """Normalise negative prototype distances into a ranking distribution."""
    dist = prototype_distances(prototypes, query_reps, squared)
    return T.softmax_t(-dist, temperature)


@dataclass
class EpisodeForward:
    """Everything the training and evaluation paths need from one episode."""

    classes: list[str]
    prototypes: Tensor                    # (N, d)
    query_reps: list[Tensor]              # one (N, d) per query
    distances: list[Tensor]               # one (N,) per query
    scores: list[Tensor]                  # one (N,) per query, at `temperature`
    labels: list[np.ndarray]
    temperature: float
    support_weights: list[list[Tensor]] = field(default_factory=list)
    query_weights: list[list[Tensor]] = field(default_factory=list)


def forward_episode(task: MetaTask, params: ModelParams,
                    ablation: AblationFlags | None = None,
                    temperature: float = 1.0,
                    record_weights: bool = False) -> EpisodeForward:
    """Full episode pass: encode, build prototypes, rank every query."""
    ablation = ablation or AblationFlags()
    squared = params.config.squared_distance

    prototypes: list[Tensor] = []
    support_weights: list[list[Tensor]] = []
    for class_sentences in task.support:
        encoded = [encode(s, params) for s in class_sentences]
        if ablation.no_support_attention:
            prototypes.append(compute_prototype([T.tmean(h, axis=0) for h in encoded]))
            support_weights.append([])
            continue
        common = common_aspect_vector(encoded)
        attn = None if ablation.no_attention_matrix else class_attention_matrix(common, params)
        denoised = []
        weights = []
        for h in encoded:
            if record_weights:
                r, w = denoise_instance(h, common, attn, return_weights=True)
                weights.append(w)
            else:
                r = denoise_instance(h, common, attn)
            denoised.append(r)
        prototypes.append(compute_prototype(denoised))
        support_weights.append(weights)
    proto_matrix = T.vstack(prototypes)

    query_reps: list[Tensor] = []
    distances: list[Tensor] = []
    scores: list[Tensor] = []
    query_weights: list[list[Tensor]] = []
    for sentence in task.queries:
        encoded_q = encode(sentence, params)
        if ablation.no_query_attention:
            word_mean = T.tmean(encoded_q, axis=0)
            reps = T.vstack([word_mean] * len(task.classes))
            q_weights: list[Tensor] = []
        else:
            tanh_q = T.tanh(encoded_q)
            reps_list = []
            q_weights = []
            for proto in prototypes:
                if record_weights:
                    r, w = query_representation(encoded_q, proto, return_weights=True,
                                                _tanh_cache=tanh_q)
                    q_weights.append(w)
                else:
                    r = query_representation(encoded_q, proto, _tanh_cache=tanh_q)
                reps_list.append(r)
            reps = T.vstack(reps_list)
        dist = prototype_distances(proto_matrix, reps, squared)
        query_reps.append(reps)
        distances.append(dist)
        scores.append(T.softmax_t(-dist, temperature))
        query_weights.append(q_weights)

    return EpisodeForward(
        classes=task.classes,
        prototypes=proto_matrix,
        query_reps=query_reps,
        distances=distances,
        scores=scores,
        labels=task.query_labels,
        temperature=temperature,
        support_weights=support_weights,
        query_weights=query_weights,
    )


# ---------------------------------------------------------------------------
# checkpoint format: length-prefixed JSON header + raw little-endian f64 blocks

_FORMAT_VERSION = 1


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], config: dict) -> None:
    """Write named float64 arrays with a JSON header describing them."""
    names = list(arrays.keys())
    header = {
        "format_version": _FORMAT_VERSION,
        "config": config,
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back into named arrays plus its config echo."""
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) != 4:
            raise ShapeError(f"{path}: truncated checkpoint header")
        (header_len,) = struct.unpack("<I", raw)
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != _FORMAT_VERSION:
            raise ShapeError(
                f"{path}: unsupported checkpoint format {header.get('format_version')}"
            )
        arrays: dict[str, np.ndarray] = {}
        for spec_entry in header["arrays"]:
            shape = tuple(spec_entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ShapeError(f"{path}: truncated payload for {spec_entry['name']}")
            arrays[spec_entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, header["config"]


def params_to_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.trainable().items()}


def params_from_arrays(arrays: dict[str, np.ndarray], vocab: dict[str, int],
                       config: ModelConfig) -> ModelParams:
    emb = EmbeddingTable(vocab, Tensor(arrays["embeddings"].copy(), requires_grad=True),
                         arrays["embeddings"].shape[1])
    return ModelParams(
        embeddings=emb,
        conv_kernel=Tensor(arrays["conv_kernel"].copy(), requires_grad=True),
        conv_bias=Tensor(arrays["conv_bias"].copy(), requires_grad=True),
        attn_weight=Tensor(arrays["attn_weight"].copy(), requires_grad=True),
        attn_bias=Tensor(arrays["attn_bias"].copy(), requires_grad=True),
        config=config,
    )
