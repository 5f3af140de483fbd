"""Embedding and dictionary loading, plus the cost matrices fed to the solvers.

Embedding files use the word2vec text layout: a ``count dim`` header line
followed by one ``token v1 ... vd`` line per word, most frequent first.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MASS_MODELS = ("uniform", "zipf")


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingSpace:
    language_id: str
    words: list[str]
    vectors: np.ndarray
    duplicates_skipped: int = 0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d matrix")
        if len(self.words) != self.vectors.shape[0]:
            raise ValueError(
                f"{len(self.words)} words but {self.vectors.shape[0]} vector rows"
            )
        if len(set(self.words)) != len(self.words):
            raise ValueError(f"duplicate tokens in space {self.language_id!r}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError(f"non-finite entries in space {self.language_id!r}")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingSpace":
        return EmbeddingSpace(self.language_id, list(self.words), vectors, self.duplicates_skipped)


@dataclass
class DiscreteDistribution:
    """Weighted point cloud: ``support`` rows carry probability ``mass``."""

    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        self.mass = np.asarray(self.mass, dtype=np.float64).ravel()
        if self.support.shape[0] != self.mass.shape[0]:
            raise ValueError(
                f"support has {self.support.shape[0]} rows but mass has {self.mass.shape[0]} entries"
            )
        if np.any(self.mass < 0):
            raise ValueError("mass entries must be nonnegative")
        if abs(self.mass.sum() - 1.0) > 1e-9:
            raise ValueError(f"mass sums to {self.mass.sum()!r}, expected 1")

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]


@dataclass
class GoldDictionary:
    source_language: str
    target_language: str
    entries: dict[str, list[str]] = field(default_factory=dict)
    dropped_lines: int = 0
    dropped_oov_source: int = 0
    dropped_oov_target: int = 0
    duplicate_pairs: int = 0

    def __post_init__(self):
        for src, golds in self.entries.items():
            if not golds:
                raise ValueError(f"query {src!r} has no gold target")
            if len(set(golds)) != len(golds):
                raise ValueError(f"duplicate gold targets for {src!r}")

    def __len__(self):
        return len(self.entries)


def load_embeddings(path, max_vocab: int = 5000, language_id: str | None = None) -> EmbeddingSpace:
    """Read the first ``max_vocab`` vectors of a word2vec text file.

    Duplicate tokens keep their first occurrence; later copies are skipped and
    counted in ``duplicates_skipped``. The cap applies to kept rows.
    """
    if max_vocab < 1:
        raise ValueError("max_vocab must be >= 1")
    path = Path(path)
    if language_id is None:
        language_id = path.stem
    words: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    duplicates = 0
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError(f"{path}: header must be 'count dim', got {header!r}")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError(f"{path}: non-integer header {header!r}") from None
        if count < 0 or dim < 1:
            raise EmbeddingFormatError(f"{path}: invalid header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            if len(words) >= max_vocab:
                break
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}"
                )
            token = parts[0]
            if token in seen:
                duplicates += 1
                continue
            seen.add(token)
            words.append(token)
            rows.append(np.array(parts[1:], dtype=np.float64))
    if not words:
        raise EmbeddingFormatError(f"{path}: no usable rows")
    if duplicates:
        logger.warning("%s: skipped %d duplicate tokens", path, duplicates)
    return EmbeddingSpace(language_id, words, np.vstack(rows), duplicates)


def save_embeddings(space: EmbeddingSpace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{space.n} {space.dim}\n")
        for word, vec in zip(space.words, space.vectors):
            fh.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def center_embeddings(space: EmbeddingSpace) -> EmbeddingSpace:
    X = space.vectors
    return space.with_vectors(X - X.mean(axis=0, keepdims=True))


def cosine_distance_matrix(space_or_matrix) -> np.ndarray:
    """``1 - cos`` between every pair of rows; zero-norm rows are rejected."""
    X = getattr(space_or_matrix, "vectors", space_or_matrix)
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero-norm rows: {np.flatnonzero(norms == 0)[:10].tolist()}")
    U = X / norms[:, None]
    D = 1.0 - U @ U.T
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return np.clip(D, 0.0, 2.0)


def squared_euclidean_cost(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    C = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    # cancellation can leave tiny negatives
    np.maximum(C, 0.0, out=C)
    return C


def word_mass(n: int, model: str = "uniform") -> np.ndarray:
    """Per-word probability for a frequency-ordered vocabulary of size ``n``.

    ``zipf`` assigns mass proportional to ``1 / (rank + 10)`` with rank from 0.
    """
    if model == "uniform":
        return np.full(n, 1.0 / n)
    if model == "zipf":
        w = 1.0 / (np.arange(n) + 10.0)
        return w / w.sum()
    raise ValueError(f"unknown mass model {model!r}; choose from {MASS_MODELS}")


def as_distribution(space: EmbeddingSpace, model: str = "uniform") -> DiscreteDistribution:
    return DiscreteDistribution(space.vectors, word_mass(space.n, model))


def load_gold_dictionary(path, src: EmbeddingSpace, tgt: EmbeddingSpace) -> GoldDictionary:
    """Read ``source target`` pairs and keep those usable against the two vocabularies.

    A source word survives only if it is in ``src`` and at least one of its
    gold targets is in ``tgt``; out-of-vocabulary golds are dropped silently
    once the query itself is kept. Matching is exact, no case folding.
    """
    src_vocab = set(src.words)
    tgt_vocab = set(tgt.words)
    raw: dict[str, list[str]] = defaultdict(list)
    malformed = 0
    duplicates = 0
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                malformed += 1
                continue
            s, t = parts
            if t in raw[s]:
                duplicates += 1
                continue
            raw[s].append(t)
    entries: dict[str, list[str]] = {}
    oov_src = oov_tgt = 0
    for s, golds in raw.items():
        if s not in src_vocab:
            oov_src += len(golds)
            continue
        kept = [t for t in golds if t in tgt_vocab]
        if not kept:
            oov_tgt += len(golds)
            continue
        oov_tgt += len(golds) - len(kept)
        entries[s] = kept
    if not entries:
        raise ValueError(f"{path}: no usable dictionary entries against the loaded vocabularies")
    gold = GoldDictionary(
        src.language_id,
        tgt.language_id,
        entries,
        dropped_lines=malformed,
        dropped_oov_source=oov_src,
        dropped_oov_target=oov_tgt,
        duplicate_pairs=duplicates,
    )
    logger.info(
        "%s: %d queries kept; dropped %d malformed, %d oov-source, %d oov-target pairs",
        path, len(gold), malformed, oov_src, oov_tgt,
    )
    return gold
