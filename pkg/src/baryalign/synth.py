"""Seeded synthetic languages with a planted identity lexicon.

Every language is a shared Gaussian base cloud pushed through its own random
orthogonal map plus isotropic noise. Rows are shuffled per language, and the
word ``w<j>`` names base point ``j`` in every language, so the gold lexicon is
the identity on words.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed_io import EmbeddingSpace, save_embeddings


@dataclass(frozen=True)
class SynthConfig:
    languages: tuple[str, ...] = ("l0", "l1", "l2")
    n: int = 500
    d: int = 20
    noise: float = 1e-2
    seed: int = 0
    shuffle: bool = True
    # family name -> member languages; each family adds its own shared offset noise
    families: dict = field(default_factory=dict)
    family_noise: float = 0.0
    # languages built from an independent base cloud (no planted correspondence)
    distant: tuple[str, ...] = ()
    distant_noise: float = 0.5


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR of a Gaussian matrix."""
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))[None, :]


def generate(cfg: SynthConfig | None = None) -> tuple[list[EmbeddingSpace], dict[str, np.ndarray]]:
    """Build the languages; also returns each language's planted rotation."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    base = rng.standard_normal((cfg.n, cfg.d))
    fam_base = {}
    for fam in sorted(cfg.families):
        fam_base[fam] = base + cfg.family_noise * rng.standard_normal((cfg.n, cfg.d))
    member = {lang: fam for fam, langs in cfg.families.items() for lang in langs}
    spaces, rotations = [], {}
    for lang in cfg.languages:
        X = fam_base[member[lang]] if lang in member else base
        if lang in cfg.distant:
            X = X + cfg.distant_noise * rng.standard_normal(X.shape)
        Q = random_orthogonal(cfg.d, rng)
        Z = X @ Q + cfg.noise * rng.standard_normal(X.shape)
        order = rng.permutation(cfg.n) if cfg.shuffle else np.arange(cfg.n)
        words = [f"w{j}" for j in order]
        spaces.append(EmbeddingSpace(lang, words, Z[order]))
        rotations[lang] = Q
    return spaces, rotations


def write_dataset(cfg: SynthConfig, out_dir) -> dict[str, Path]:
    """Write ``<lang>.vec`` files, identity dictionaries for every ordered pair, and a run config."""
    out = Path(out_dir)
    (out / "dictionaries").mkdir(parents=True, exist_ok=True)
    spaces, _ = generate(cfg)
    paths = {}
    for s in spaces:
        p = out / f"{s.language_id}.vec"
        save_embeddings(s, p)
        paths[s.language_id] = p
    words = [f"w{j}" for j in range(cfg.n)]
    for a in cfg.languages:
        for b in cfg.languages:
            if a == b:
                continue
            with open(out / "dictionaries" / f"{a}-{b}.txt", "w", encoding="utf-8") as fh:
                fh.writelines(f"{w}\t{w}\n" for w in words)
    lines = [f"languages.{lang} = {paths[lang].name}" for lang in cfg.languages]
    lines += [
        f"vocab_size = {cfg.n}",
        "dictionaries = dictionaries",
        f"seed = {cfg.seed}",
        "out = run",
    ]
    (out / "run.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths
