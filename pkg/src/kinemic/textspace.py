"""Text embeddings, label prompting, and top-k soft-positive retrieval.

A deterministic hashed bag-of-tokens encoder is the default backend so the
whole pipeline runs without pretrained weights; any encoder mapping a string
to a unit-norm vector can be plugged in behind the same interface.  For each
action label, the k caption embeddings closest to the label's templated
prompt form that label's soft-positive list.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EncoderUnavailableError,
    InvalidArgumentError,
    UndefinedSimilarityError,
)
from .io import dump_json_bytes, read_json

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "a person does a {label}"
DEFAULT_EMBED_DIM = 512


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-6:
            raise InvalidArgumentError(f"embedding norm {norm} is not 1")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


# function words carry no action semantics and would otherwise dominate
# bag-of-tokens cosine between any two captions
_STOPWORDS = frozenset(
    "a an the is are was and with their his her its in on at for of to do "
    "does doing person man woman someone while".split()
)


def _tokenize(text: str) -> list[str]:
    cleaned = "".join(c if c.isalnum() else " " for c in text.lower())
    return [t for t in cleaned.split() if t not in _STOPWORDS]


class HashedBagOfTokensEncoder:
    """Signed feature-hashing of unigram token counts, unit-normalized.

    Stable across processes and platforms (token hashing uses blake2b, not
    Python's salted hash).
    """

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        if dim < 2:
            raise EncoderUnavailableError("embedding dimension must be >= 2")
        self.dim = dim

    @property
    def name(self) -> str:
        return f"hashed-bow-v1-d{self.dim}"

    def encode(self, text: str) -> TextEmbedding:
        text = normalize_text(text)
        if not text:
            raise InvalidArgumentError("cannot encode empty text")
        vec = np.zeros(self.dim)
        for token in _tokenize(text):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(digest, "little")
            idx = value % self.dim
            sign = 1.0 if (value >> 32) & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise InvalidArgumentError(f"text {text!r} produced no tokens")
        return TextEmbedding(vec / norm)


_ENCODERS = {"hashed-bow": HashedBagOfTokensEncoder}


def get_encoder(name: str, **kwargs):
    """Encoder registry; external backends can register here."""
    if name not in _ENCODERS:
        raise EncoderUnavailableError(
            f"unknown encoder {name!r}; available: {sorted(_ENCODERS)}"
        )
    return _ENCODERS[name](**kwargs)


def register_encoder(name: str, factory) -> None:
    _ENCODERS[name] = factory


def label_to_prompt(label: str, template: str = DEFAULT_TEMPLATE) -> str:
    """Expand an action label into a natural-language prompt."""
    if not label or not label.strip():
        raise InvalidArgumentError("label must be non-empty")
    return normalize_text(template.format(label=label))


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors (or TextEmbeddings/Latents)."""
    va = np.asarray(getattr(a, "vector", a), dtype=np.float64)
    vb = np.asarray(getattr(b, "vector", b), dtype=np.float64)
    if va.shape != vb.shape:
        raise InvalidArgumentError(f"dimension mismatch {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity with a zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


@dataclass
class SoftPairIndex:
    """Per-label ranked soft-positive lists over a captioned source set."""

    k: int
    encoder: str
    template: str
    pairs: dict[str, list[tuple[str, float]]]
    created_at: str | None = None

    def sources_for(self, label: str) -> list[tuple[str, float]]:
        if label not in self.pairs:
            raise InvalidArgumentError(f"label {label!r} not in index")
        return self.pairs[label]

    @property
    def labels(self) -> list[str]:
        return list(self.pairs)

    def effective_dataset_size(self, shots_per_class: int) -> int:
        """Distinct training samples exposed: (shots + k) per label."""
        return sum(shots_per_class + len(lst) for lst in self.pairs.values())

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "k": self.k,
            "encoder": self.encoder,
            "template": self.template,
            "created_at": self.created_at,
            "pairs": {
                label: [[sid, score] for sid, score in lst]
                for label, lst in self.pairs.items()
            },
        }

    def save(self, path) -> None:
        from pathlib import Path

        Path(path).write_bytes(dump_json_bytes(self.to_dict()) + b"\n")

    @classmethod
    def load(cls, path) -> "SoftPairIndex":
        doc = read_json(path)
        return cls(
            k=doc["k"],
            encoder=doc["encoder"],
            template=doc["template"],
            created_at=doc.get("created_at"),
            pairs={
                label: [(sid, float(score)) for sid, score in lst]
                for label, lst in doc["pairs"].items()
            },
        )


def build_soft_pairs(
    labels,
    source,
    k: int,
    template: str = DEFAULT_TEMPLATE,
    encoder=None,
    created_at: str | None = None,
) -> SoftPairIndex:
    """Rank source captions against each label prompt and keep the top k.

    Ties break by source id ascending; rebuilding from the same inputs is
    byte-identical (``created_at`` defaults to absent for that reason).
    """
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if not source:
        raise InvalidArgumentError("source set is empty")
    encoder = encoder or HashedBagOfTokensEncoder()
    if k > len(source):
        logger.warning(
            "k=%d exceeds source size %d; truncating", k, len(source)
        )
    ordered = sorted(source, key=lambda s: s.source_id)
    ids = [s.source_id for s in ordered]
    mat = np.stack([encoder.encode(s.caption).vector for s in ordered])

    pairs = {}
    for label in labels:
        prompt_vec = encoder.encode(label_to_prompt(label, template)).vector
        sims = mat @ prompt_vec  # all embeddings unit-norm
        ranking = sorted(zip(ids, sims), key=lambda t: (-t[1], t[0]))
        pairs[label] = [(sid, float(s)) for sid, s in ranking[: min(k, len(ids))]]
    return SoftPairIndex(
        k=k,
        encoder=encoder.name,
        template=template,
        pairs=pairs,
        created_at=created_at,
    )
