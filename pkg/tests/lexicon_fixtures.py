"""Constructed score/gold fixtures and a plain-Python recount of the metrics.

The recount ranks with ``sorted`` on ``(-score, index)`` keys and never
touches the package's ranking code, so it is an independent check.
"""
from fractions import Fraction

import numpy as np

from baryalign.embed_io import EmbeddingSpace, GoldDictionary


def make_fixture(seed: int):
    rng = np.random.default_rng(seed)
    n_src, n_tgt = rng.integers(4, 15), rng.integers(4, 15)
    # small integer scores force plenty of ties
    S = rng.integers(0, 4, size=(n_src, n_tgt)).astype(float)
    S[rng.random(n_src) < 0.15] = 0.0  # rows without mass
    src = EmbeddingSpace("s", [f"s{i}" for i in range(n_src)], np.eye(n_src, 2) + 1)
    tgt = EmbeddingSpace("t", [f"t{j}" for j in range(n_tgt)], np.eye(n_tgt, 2) + 1)
    entries = {}
    for i in rng.choice(n_src + 3, size=rng.integers(2, n_src + 3), replace=False):
        g = rng.choice(n_tgt, size=rng.integers(1, 4), replace=False)
        entries[f"s{i}"] = [f"t{j}" for j in g]  # s{n_src}.. are out of vocabulary
    if not any(q in src.index() for q in entries):
        entries["s0"] = ["t0"]
    return S, src, tgt, GoldDictionary("s", "t", entries)


def recount(S, src, tgt, gold, ks):
    """P@k and MAP as exact fractions from a direct reading of the definitions."""
    rows = {w: i for i, w in enumerate(src.words)}
    cols = {w: j for j, w in enumerate(tgt.words)}
    queries = [q for q in gold.entries if q in rows]
    hits = {k: 0 for k in ks}
    ap_sum = Fraction(0)
    for q in queries:
        row = S[rows[q]]
        golds = {cols[t] for t in gold.entries[q]}
        if not any(v > 0 for v in row):
            continue
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        ranks = [r for r, j in enumerate(order, start=1) if j in golds]
        for k in ks:
            hits[k] += ranks[0] <= k
        ap_sum += sum(Fraction(h, r) for h, r in enumerate(ranks, start=1)) / len(gold.entries[q])
    n = len(queries)
    return {k: Fraction(hits[k], n) for k in ks}, ap_sum / n, n, len(gold.entries) - n
