"""Lexicon inference from couplings, retrieval metrics and paired significance."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .embed_io import EmbeddingSpace, GoldDictionary
from .ot import Coupling

logger = logging.getLogger(__name__)

REPORT_HEADER = "pair\tmetric\tk\tvalue\tquery_count\tdropped"


@dataclass
class Lexicon:
    source_language: str
    target_language: str
    # source word -> [(target word, score), ...], best first
    rankings: dict[str, list[tuple[str, float]]]
    k: int
    empty_rows: int = 0  # source words whose coupling row carried no mass
    fallback_rows: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def top(self, word: str, k: int | None = None) -> list[str]:
        ranking = self.rankings.get(word, [])
        return [t for t, _ in (ranking if k is None else ranking[:k])]


@dataclass
class EvalReport:
    pair: tuple[str, str]
    precision_at: dict[int, float]
    mean_average_precision: float
    query_count: int
    dropped_queries: int
    hits_at_1: np.ndarray | None = None  # per-query top-1 indicators in dictionary order
    queries: list[str] = field(default_factory=list)

    def rows(self) -> list[str]:
        tag = f"{self.pair[0]}-{self.pair[1]}"
        out = [f"{tag}\tP@k\t{k}\t{v:.6f}\t{self.query_count}\t{self.dropped_queries}"
               for k, v in sorted(self.precision_at.items())]
        out.append(f"{tag}\tMAP\t-\t{self.mean_average_precision:.6f}\t{self.query_count}\t{self.dropped_queries}")
        return out


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the ``k`` largest scores; ties go to the lowest index."""
    scores = np.asarray(scores)
    k = min(k, scores.shape[1])
    # stable sort on the negated scores keeps equal entries in index order
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def rank_scores(S: np.ndarray, src_space: EmbeddingSpace, tgt_space: EmbeddingSpace, k: int,
                fallback: np.ndarray | None = None, src_language: str | None = None,
                tgt_language: str | None = None) -> Lexicon:
    """Turn an ``(n_src, n_tgt)`` score matrix into a top-``k`` lexicon.

    Rows without positive mass get an empty ranking, or are scored from
    ``fallback`` when it is given (and listed in ``Lexicon.fallback_rows``).
    """
    S = np.asarray(S, dtype=np.float64)
    if S.shape != (src_space.n, tgt_space.n):
        raise ValueError(f"score shape {S.shape} does not match vocabularies ({src_space.n}, {tgt_space.n})")
    empty = ~(S > 0).any(axis=1)
    used_fallback = []
    if fallback is not None and empty.any():
        S = S.copy()
        S[empty] = fallback[empty]
        used_fallback = [src_space.words[i] for i in np.flatnonzero(empty)]
    idx = top_k_indices(S, k)
    rankings = {}
    for i, w in enumerate(src_space.words):
        if empty[i] and fallback is None:
            rankings[w] = []
            continue
        rankings[w] = [(tgt_space.words[j], float(S[i, j])) for j in idx[i]]
    return Lexicon(src_language or src_space.language_id, tgt_language or tgt_space.language_id,
                   rankings, k, int(empty.sum()), used_fallback)


def infer_translations(src_coupling: Coupling, tgt_coupling: Coupling, src_space: EmbeddingSpace,
                       tgt_space: EmbeddingSpace, k: int, nn_fallback: bool = False) -> Lexicon:
    """Top-``k`` translations from the coupling product ``Pi_src Pi_tgt^T``.

    With ``nn_fallback`` source rows that receive no coupling mass are ranked
    by cosine similarity in the shared space instead (``src_space`` and
    ``tgt_space`` must then hold the rotated vectors).
    """
    A, B = src_coupling.matrix, tgt_coupling.matrix
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"couplings disagree on the pivot size: {A.shape[1]} vs {B.shape[1]}")
    S = A @ B.T
    fb = cosine_scores(src_space.vectors, tgt_space.vectors) if nn_fallback else None
    return rank_scores(S, src_space, tgt_space, k, fb)


def cosine_scores(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    Xn = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-300)
    Zn = Z / np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), 1e-300)
    return Xn @ Zn.T


def _queries(lexicon: Lexicon, gold: GoldDictionary):
    kept = [q for q in gold.entries if q in lexicon.rankings]
    dropped = len(gold.entries) - len(kept)
    if not kept:
        raise ValueError(f"no gold queries found in the {lexicon.source_language} lexicon")
    return kept, dropped


def precision_at_k(lexicon: Lexicon, gold: GoldDictionary, k: int) -> float:
    """Share of queries with at least one gold target among the top ``k``."""
    if k > lexicon.k:
        raise ValueError(f"k={k} exceeds lexicon depth {lexicon.k}")
    kept, _ = _queries(lexicon, gold)
    hits = sum(1 for q in kept if set(lexicon.top(q, k)) & set(gold.entries[q]))
    return hits / len(kept)


def _ap_exact(ranks, n_gold: int) -> Fraction:
    # exact rational AP from sorted 1-based gold ranks
    return sum((Fraction(h, r) for h, r in enumerate(ranks, start=1)), Fraction(0)) / n_gold


def _exact_mean(values) -> float:
    # rounding once at the end keeps MAP independent of summation order
    return float(sum(values, Fraction(0)) / len(values))


def _ranks_in(ranking: list[str], golds) -> list[int]:
    return [rank for rank, t in enumerate(ranking, start=1) if t in golds]


def average_precision(ranking: list[str], golds) -> float:
    """``(1/G) sum over gold hits of hits_so_far / rank``; golds missing from the ranking add 0."""
    golds = set(golds)
    return float(_ap_exact(_ranks_in(ranking, golds), len(golds)))


def mean_average_precision(lexicon: Lexicon, gold: GoldDictionary) -> float:
    kept, _ = _queries(lexicon, gold)
    return _exact_mean([_ap_exact(_ranks_in(lexicon.top(q), set(gold.entries[q])), len(gold.entries[q]))
                        for q in kept])


def hits_at_1(lexicon: Lexicon, gold: GoldDictionary) -> tuple[list[str], np.ndarray]:
    kept, _ = _queries(lexicon, gold)
    return kept, np.array([bool(set(lexicon.top(q, 1)) & set(gold.entries[q])) for q in kept])


def evaluate_lexicon(lexicon: Lexicon, gold: GoldDictionary, ks=(1, 5, 10)) -> EvalReport:
    ks = sorted(k for k in set(ks) if k <= lexicon.k)
    kept, dropped = _queries(lexicon, gold)
    prec = {k: precision_at_k(lexicon, gold, k) for k in ks}
    queries, hits = hits_at_1(lexicon, gold)
    return EvalReport((lexicon.source_language, lexicon.target_language), prec,
                      mean_average_precision(lexicon, gold), len(kept), dropped, hits, queries)


def gold_ranks(scores_row: np.ndarray, gold_idx) -> list[int]:
    """1-based ranks of ``gold_idx`` in a row ordered by score, ties to the lowest index."""
    out = []
    for j in gold_idx:
        s = scores_row[j]
        out.append(int(np.sum(scores_row > s) + np.sum(scores_row[:j] == s)) + 1)
    return out


def evaluate_scores(S: np.ndarray, src_space: EmbeddingSpace, tgt_space: EmbeddingSpace,
                    gold: GoldDictionary, ks=(1, 5, 10), pair=None) -> EvalReport:
    """Same numbers as :func:`evaluate_lexicon` on a full-depth lexicon, without building it.

    Rows with no positive score count as misses at every depth.
    """
    src_index = src_space.index()
    tgt_index = tgt_space.index()
    kept = [q for q in gold.entries if q in src_index]
    dropped = len(gold.entries) - len(kept)
    if not kept:
        raise ValueError(f"no gold queries found in the {src_space.language_id} vocabulary")
    ks = sorted(set(ks))
    hits = {k: 0 for k in ks}
    aps, top1 = [], []
    for q in kept:
        row = S[src_index[q]]
        golds = [tgt_index[t] for t in gold.entries[q] if t in tgt_index]
        if not (row > 0).any() or not golds:
            ranks = []
        else:
            ranks = sorted(gold_ranks(row, golds))
        for k in ks:
            hits[k] += bool(ranks and ranks[0] <= k)
        top1.append(bool(ranks and ranks[0] == 1))
        aps.append(_ap_exact(ranks, len(gold.entries[q])))
    pair = pair or (src_space.language_id, tgt_space.language_id)
    return EvalReport(tuple(pair), {k: hits[k] / len(kept) for k in ks}, _exact_mean(aps),
                      len(kept), dropped, np.array(top1), kept)


def mcnemar_one_sided(hits_a, hits_b) -> float:
    """Exact one-sided McNemar p-value that system A beats system B.

    With ``b`` queries only A gets right and ``c`` only B gets right, returns
    ``P(X >= b)`` for ``X ~ Binomial(b + c, 1/2)``, or 1.0 without discordant pairs.
    """
    hits_a = np.asarray(hits_a, dtype=bool)
    hits_b = np.asarray(hits_b, dtype=bool)
    if hits_a.shape != hits_b.shape:
        raise ValueError(f"hit vectors differ in length: {hits_a.shape} vs {hits_b.shape}")
    b = int(np.sum(hits_a & ~hits_b))
    c = int(np.sum(~hits_a & hits_b))
    return binomial_upper_tail(b, b + c)


def binomial_upper_tail(x: int, n: int) -> float:
    """``P(X >= x)`` for ``X ~ Binomial(n, 1/2)``, summed exactly in integers."""
    if n == 0:
        return 1.0
    return math.fsum(math.comb(n, j) for j in range(x, n + 1)) / 2 ** n


def write_report(reports, path, extra_rows=(), header_notes=()) -> None:
    """Tab-separated report: ``pair metric k value query_count dropped``."""
    with open(path, "w", encoding="utf-8") as fh:
        for note in header_notes:
            fh.write(f"# {note}\n")
        fh.write(REPORT_HEADER + "\n")
        for r in reports:
            fh.write("\n".join(r.rows()) + "\n")
        for row in extra_rows:
            fh.write(row + "\n")


def average_rows(reports) -> list[str]:
    if not reports:
        return []
    out = []
    ks = sorted(set.intersection(*(set(r.precision_at) for r in reports)))
    n = len(reports)
    for k in ks:
        v = float(np.mean([r.precision_at[k] for r in reports]))
        out.append(f"average\tP@k\t{k}\t{v:.6f}\t{n}\t-")
    v = float(np.mean([r.mean_average_precision for r in reports]))
    out.append(f"average\tMAP\t-\t{v:.6f}\t{n}\t-")
    return out


def write_lexicon(lexicon: Lexicon, path) -> None:
    """One ``source<TAB>target<TAB>rank<TAB>score`` line per ranked candidate."""
    with open(path, "w", encoding="utf-8") as fh:
        for src, ranking in lexicon.rankings.items():
            for rank, (tgt, score) in enumerate(ranking, start=1):
                fh.write(f"{src}\t{tgt}\t{rank}\t{score:.9g}\n")
