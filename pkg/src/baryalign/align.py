"""Multilingual alignment through a Wasserstein barycenter pivot.

Phase one matches every language to a pivot language with entropic
Gromov-Wasserstein on cosine distances and rotates it into the pivot frame.
Phase two alternates a free-support barycenter of all languages with one
Procrustes rotation per language. The hierarchical variant repeats phase two
at every internal node of a language tree.
"""
from __future__ import annotations

import io
import json
import logging
import re
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .barycenter import DEAD_MASS, BarycenterConfig, BarycenterState, compute_barycenter
from .embed_io import (
    DiscreteDistribution,
    EmbeddingSpace,
    center_embeddings,
    cosine_distance_matrix,
    squared_euclidean_cost,
    word_mass,
)
from .gromov import GWConfig, gromov_wasserstein
from .ot import Coupling, SinkhornConfig

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ORTHO_TOL = 1e-8
DRIFT_TOL = 1e-10

# Indo-European grouping of the six MUSE languages; Finnish and Turkish hang
# off the XLING root on their own.
TREE_PRESETS = {
    "muse": "((en,de),((es,pt),(fr,it)))",
    "xling": "((((en,de),(fr,it)),(ru,hr)),fi,tr)",
}


@dataclass
class OrthogonalMap:
    matrix: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.matrix, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"orthogonal map must be square, got {Q.shape}")
        self.matrix = Q
        err = self.orthogonality_error()
        if err > ORTHO_TOL:
            raise ValueError(f"matrix is not orthogonal (max |Q^T Q - I| = {err:.3g})")

    @classmethod
    def identity(cls, d: int) -> "OrthogonalMap":
        return cls(np.eye(d))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def orthogonality_error(self) -> float:
        Q = self.matrix
        return float(np.abs(Q.T @ Q - np.eye(Q.shape[0])).max())

    def compose(self, other: "OrthogonalMap") -> "OrthogonalMap":
        """``self`` followed by ``other`` (row-vector convention: ``x Q1 Q2``)."""
        return OrthogonalMap(_reorthonormalize(self.matrix @ other.matrix))


def _reorthonormalize(Q: np.ndarray) -> np.ndarray:
    if np.abs(Q.T @ Q - np.eye(Q.shape[0])).max() <= DRIFT_TOL:
        return Q
    U, _, Vt = np.linalg.svd(Q)
    return U @ Vt


@dataclass(frozen=True)
class PipelineConfig:
    gw: GWConfig = field(default_factory=GWConfig)
    bary: BarycenterConfig = field(default_factory=BarycenterConfig)
    ot: SinkhornConfig = field(default_factory=SinkhornConfig)
    outer_iters: int = 10
    pivot_index: int = 0
    mass_model: str = "uniform"
    warm_start: bool = True  # reuse the previous round's barycenter as the next starting point
    early_stop: float = 1e-4  # relative objective change that ends the outer loop

    def __post_init__(self):
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.pivot_index < 0:
            raise ValueError("pivot_index must be >= 0")


@dataclass
class AlignmentState:
    originals: list[EmbeddingSpace]  # centered inputs, never rotated
    maps: list[OrthogonalMap]
    masses: list[np.ndarray]
    couplings: list[Coupling] = field(default_factory=list)  # language -> pivot (barycenter or pivot language)
    barycenter: BarycenterState | None = None
    gw_couplings: list[Coupling] = field(default_factory=list)
    gw_converged: list[bool] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    pivot_index: int = 0
    kind: str = "barycenter"  # or "gw-pivot" after initialization only

    @property
    def languages(self) -> list[str]:
        return [s.language_id for s in self.originals]

    @property
    def spaces(self) -> list[EmbeddingSpace]:
        """Current coordinates ``X_i Q_i``."""
        return [s.with_vectors(s.vectors @ q.matrix) for s, q in zip(self.originals, self.maps)]

    def index_of(self, language: str) -> int:
        try:
            return self.languages.index(language)
        except ValueError:
            raise KeyError(f"unknown language {language!r}; have {self.languages}") from None

    def distributions(self) -> list[DiscreteDistribution]:
        return [DiscreteDistribution(s.vectors, b) for s, b in zip(self.spaces, self.masses)]

    def pairwise_map(self, i: int, k: int) -> np.ndarray:
        """Map from language ``i`` coordinates into language ``k`` coordinates."""
        return self.maps[i].matrix @ self.maps[k].matrix.T

    def score_matrix(self, i: int, k: int) -> np.ndarray:
        """Coupling product ``Pi_i Pi_k^T`` normalized to a joint distribution."""
        if i == k:
            return np.diag(self.masses[i])
        if not self.couplings:
            raise ValueError("state has no couplings; run the alignment first")
        S = self.couplings[i].matrix @ self.couplings[k].matrix.T
        total = S.sum()
        return S / total if total > 0 else S


def procrustes(X, coupling, Y) -> OrthogonalMap:
    """Orthogonal ``Q`` maximizing ``<X^T Pi Y, Q>``, i.e. ``U V^T`` from the SVD of ``X^T Pi Y``.

    Parameters
    ----------
    X : (n, d) array
    coupling : Coupling or (n, s) array
    Y : (s, d) array
    """
    P = coupling.matrix if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if P.shape != (X.shape[0], Y.shape[0]):
        raise ValueError(f"coupling shape {P.shape} does not match ({X.shape[0]}, {Y.shape[0]})")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    M = X.T @ (P @ Y)
    if not np.all(np.isfinite(M)):
        raise np.linalg.LinAlgError("non-finite cross-covariance in Procrustes")
    U, _, Vt = np.linalg.svd(M)
    return OrthogonalMap(U @ Vt)


def _prepare(spaces, cfg: PipelineConfig):
    spaces = list(spaces)
    if len(spaces) < 2:
        raise ValueError("need at least two languages")
    d = spaces[0].dim
    for s in spaces:
        if s.dim != d:
            raise ValueError(f"{s.language_id}: dimension {s.dim}, expected {d}")
    ids = [s.language_id for s in spaces]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate language tags: {ids}")
    if not 0 <= cfg.pivot_index < len(spaces):
        raise ValueError(f"pivot_index {cfg.pivot_index} out of range for {len(spaces)} languages")
    return [center_embeddings(s) for s in spaces]


def gw_initialize(spaces, cfg: PipelineConfig | None = None) -> AlignmentState:
    """Center every space, match it to the pivot with GW and rotate it into the pivot frame."""
    cfg = cfg or PipelineConfig()
    centered = _prepare(spaces, cfg)
    masses = [word_mass(s.n, cfg.mass_model) for s in centered]
    piv = cfg.pivot_index
    X_piv = centered[piv].vectors
    C_piv = cosine_distance_matrix(X_piv)
    d = X_piv.shape[1]
    maps, gw_couplings, flags = [], [], []
    for i, s in enumerate(centered):
        if i == piv:
            maps.append(OrthogonalMap.identity(d))
            gw_couplings.append(Coupling.diagonal(masses[i]))
            flags.append(True)
            continue
        try:
            res = gromov_wasserstein(cosine_distance_matrix(s.vectors), C_piv, masses[i], masses[piv],
                                     cfg.gw, return_log=True)
        except Exception as exc:
            raise type(exc)(f"[gw-init {s.language_id}] {exc}") from exc
        if not res.converged:
            logger.warning("%s: GW did not converge in %d outer iterations", s.language_id, res.n_iter)
        gw_couplings.append(res.coupling)
        flags.append(res.converged)
        maps.append(procrustes(s.vectors, res.coupling, X_piv))
        logger.info("%s: GW initialization done (%d outer iterations)", s.language_id, res.n_iter)
    return AlignmentState(centered, maps, masses, couplings=list(gw_couplings), gw_couplings=gw_couplings,
                          gw_converged=flags, pivot_index=piv, kind="gw-pivot")


def _objective(lam, dists, couplings, Y) -> tuple[float, float]:
    """Weighted transport cost of the given plans, sharp and with the entropy term."""
    sharp = ent = 0.0
    for li, mu, c in zip(lam, dists, couplings):
        cost = c.cost(squared_euclidean_cost(mu.support, Y))
        nz = c.matrix[c.matrix > 0]
        sharp += li * cost
        ent += li * (cost + c.epsilon * float(np.sum(nz * (np.log(nz) - 1.0))))
    return sharp, ent


def barycenter_align(state: AlignmentState, cfg: PipelineConfig | None = None, callback=None) -> AlignmentState:
    """Alternate barycenter, per-language transport and Procrustes for ``cfg.outer_iters`` rounds.

    The barycenter solve already returns the transports to its final support,
    so each round rotates every language by the Procrustes fit against those
    plans. History rows carry the weighted transport cost before and after
    the rotations; a round raising it by more than 1% is flagged. Stops early
    when the post-rotation cost changes by less than ``cfg.early_stop``
    relative to the previous round.

    A relative epsilon is resolved in the first round and then held, so the
    post-rotation entropic objective (also in the history) is the quantity
    every round lowers. The sharp cost of entropic plans can drift up by
    amounts far below epsilon.
    """
    cfg = cfg or PipelineConfig()
    m = len(state.originals)
    prev_obj = None
    bary = state.barycenter if cfg.warm_start else None
    ot_cfg = cfg.ot
    for rnd in range(1, cfg.outer_iters + 1):
        dists = state.distributions()
        init = bary.distribution if (bary is not None and cfg.warm_start) else None
        try:
            bary = compute_barycenter(dists, cfg.bary, ot_cfg, init=init)
        except Exception as exc:
            raise type(exc)(f"[barycenter round {rnd}] {exc}") from exc
        Y = bary.support
        new_maps = []
        for i in range(m):
            dq = procrustes(dists[i].support, bary.couplings[i], Y)
            new_maps.append(state.maps[i].compose(dq))
        state.maps = new_maps
        state.couplings = bary.couplings
        state.barycenter = bary
        if ot_cfg.relative:
            ot_cfg = ot_cfg.with_(epsilon=bary.couplings[0].epsilon, relative=False)
        rotated, rotated_ent = _objective(bary.lam, state.distributions(), bary.couplings, Y)
        change = None if prev_obj is None else (rotated - prev_obj) / max(abs(prev_obj), 1e-300)
        row = {
            "round": rnd,
            "barycenter_objective": bary.objective,
            "objective": rotated,
            "entropic_objective": rotated_ent,
            "relative_change": change,
            "barycenter_iterations": bary.iteration,
            "barycenter_converged": bary.converged,
            "increase_flag": bool(change is not None and change > 0.01),
            "orthogonality_error": max(q.orthogonality_error() for q in state.maps),
        }
        if row["increase_flag"]:
            logger.warning("round %d raised the objective by %.2f%%", rnd, 100 * change)
        state.history.append(row)
        if callback is not None:
            callback(row)
        logger.info("round %d: objective %.6g", rnd, rotated)
        if change is not None and abs(change) < cfg.early_stop:
            break
        prev_obj = rotated
    state.kind = "barycenter"
    return state


def align(spaces, cfg: PipelineConfig | None = None, callback=None) -> AlignmentState:
    """Both phases end to end."""
    cfg = cfg or PipelineConfig()
    return barycenter_align(gw_initialize(spaces, cfg), cfg, callback)


def arithmetic_mean_pivot(spaces, couplings, maps=None) -> np.ndarray:
    """Mean language ``(1/m) sum_k P_k X_k Q_k`` with ``P_k`` the row-normalized coupling.

    ``couplings[k]`` has pivot rows and language-``k`` columns; each row is
    rescaled to sum to one so a uniform soft permutation becomes a permutation.
    """
    mats = [np.asarray(getattr(s, "vectors", s), dtype=np.float64) for s in spaces]
    if len(couplings) != len(mats):
        raise ValueError("one coupling per language required")
    maps = maps if maps is not None else [None] * len(mats)
    out = None
    for X, c, q in zip(mats, couplings, maps):
        P = c.matrix if isinstance(c, Coupling) else np.asarray(c, dtype=np.float64)
        if P.shape[1] != X.shape[0]:
            raise ValueError(f"coupling has {P.shape[1]} columns for {X.shape[0]} words")
        rows = P.sum(1, keepdims=True)
        P = np.divide(P, rows, out=np.zeros_like(P), where=rows > 0)
        Z = P @ X
        if q is not None:
            Z = Z @ (q.matrix if isinstance(q, OrthogonalMap) else q)
        if out is not None and Z.shape != out.shape:
            raise ValueError(f"dimension mismatch: {Z.shape} vs {out.shape}")
        out = Z if out is None else out + Z
    return out / len(mats)


# ---------------------------------------------------------------- tree variant


@dataclass
class TreeNode:
    name: str
    children: list["TreeNode"] = field(default_factory=list)
    index: int = -1  # preorder position, used to derive per-node seeds
    parent: "TreeNode | None" = None
    distribution: DiscreteDistribution | None = None
    edge_coupling: Coupling | None = None  # rows: this node's support, cols: parent's support
    edge_map: OrthogonalMap | None = None  # rotation applied to this subtree at the parent's solve
    history: list[dict] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> list["TreeNode"]:
        return [n for n in self.walk() if n.is_leaf]


@dataclass
class LanguageTree:
    root: TreeNode
    state: AlignmentState  # leaf maps are the composed maps into the root frame

    def node(self, language: str) -> TreeNode:
        for n in self.root.walk():
            if n.is_leaf and n.name == language:
                return n
        raise KeyError(f"language {language!r} is not a leaf of the tree")

    def spec(self) -> str:
        return format_tree(self.root)


_TOKEN = re.compile(r"\s*([(),]|[^\s(),]+)")


def parse_tree(spec: str) -> TreeNode:
    """Parse ``((es,pt),(fr,it))``-style nested groups; bare names are leaves."""
    spec = TREE_PRESETS.get(spec, spec)
    tokens = _TOKEN.findall(spec.strip())
    if "".join(tokens) != re.sub(r"\s+", "", spec):
        raise ValueError(f"malformed tree spec {spec!r}")
    pos = 0

    def node():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError(f"tree spec ended early: {spec!r}")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            kids = [node()]
            while pos < len(tokens) and tokens[pos] == ",":
                pos += 1
                kids.append(node())
            if pos >= len(tokens) or tokens[pos] != ")":
                raise ValueError(f"unbalanced parentheses in tree spec {spec!r}")
            pos += 1
            if len(kids) < 2:
                raise ValueError(f"internal node with a single child in {spec!r}")
            return TreeNode("", kids)
        if tok in (")", ","):
            raise ValueError(f"unexpected {tok!r} in tree spec {spec!r}")
        return TreeNode(tok)

    root = node()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens in tree spec {spec!r}")
    if root.is_leaf:
        raise ValueError("tree needs at least two leaves")
    for i, n in enumerate(root.walk()):
        n.index = i
        for c in n.children:
            c.parent = n
        if not n.is_leaf:
            n.name = f"node{i}"
    names = [n.name for n in root.leaves()]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate leaves in tree spec {spec!r}")
    return root


def format_tree(node: TreeNode) -> str:
    if node.is_leaf:
        return node.name
    return "(" + ",".join(format_tree(c) for c in node.children) + ")"


def _prune(dist: DiscreteDistribution):
    keep = np.flatnonzero(dist.mass >= DEAD_MASS)
    mass = dist.mass[keep]
    return DiscreteDistribution(dist.support[keep], mass / mass.sum()), keep


def hierarchical_align(spaces, tree_spec, cfg: PipelineConfig | None = None,
                       state: AlignmentState | None = None) -> LanguageTree:
    """Barycenter alignment at every internal node of a language tree, children first.

    Each internal node aligns its children (leaf spaces or child barycenters)
    with :func:`barycenter_align` seeded by ``cfg.bary.seed`` plus the node's
    preorder index, then stores the child's coupling and rotation on the edge.
    A rotation found at a node is applied to the child's whole subtree, which
    leaves every coupling below it valid. Dead barycenter points (mass under
    1e-12) are pruned before a node is handed to its parent; the root keeps
    its full support.
    """
    cfg = cfg or PipelineConfig()
    if cfg.bary.lam is not None:
        raise ValueError("tree alignment uses uniform child weights; leave bary.lam unset")
    root = parse_tree(tree_spec) if isinstance(tree_spec, str) else tree_spec
    spaces = list(spaces)
    leaf_names = sorted(n.name for n in root.leaves())
    if leaf_names != sorted(s.language_id for s in spaces):
        raise ValueError(f"tree leaves {leaf_names} do not match languages "
                         f"{sorted(s.language_id for s in spaces)}")
    if state is None:
        state = gw_initialize(spaces, cfg)
    lang_index = {lang: i for i, lang in enumerate(state.languages)}
    d = state.originals[0].dim
    for i, X in enumerate(state.spaces):
        n = next(x for x in root.leaves() if x.name == state.languages[i])
        n.distribution = DiscreteDistribution(X.vectors, state.masses[i])

    def rotate_subtree(node, Q):
        for n in node.walk():
            if n.is_leaf:
                i = lang_index[n.name]
                state.maps[i] = state.maps[i].compose(Q)
            n.distribution = DiscreteDistribution(n.distribution.support @ Q.matrix, n.distribution.mass)

    def solve(node):
        for c in node.children:
            if not c.is_leaf:
                solve(c)
        # leaves enter with their own (original, map) pair, exactly as in the flat pipeline,
        # so a star tree reproduces the flat run; internal children start from the identity
        kids, maps, masses = [], [], []
        for c in node.children:
            if c.is_leaf:
                i = lang_index[c.name]
                kids.append(state.originals[i])
                maps.append(state.maps[i])
            else:
                kids.append(EmbeddingSpace(c.name, [f"{c.name}:{j}" for j in range(c.distribution.size)],
                                           c.distribution.support))
                maps.append(OrthogonalMap.identity(d))
            masses.append(c.distribution.mass)
        sub = AlignmentState(kids, maps, masses)
        sub_cfg = replace(cfg, bary=replace(cfg.bary, seed=cfg.bary.seed + node.index))
        barycenter_align(sub, sub_cfg)
        if node.parent is None:
            dist, keep = sub.barycenter.distribution, np.arange(sub.barycenter.distribution.size)
        else:
            dist, keep = _prune(sub.barycenter.distribution)
        for c, q_old, q, P in zip(node.children, maps, sub.maps, sub.couplings):
            if c.is_leaf:
                i = lang_index[c.name]
                state.maps[i] = q
                c.distribution = DiscreteDistribution(state.spaces[i].vectors, c.distribution.mass)
                c.edge_map = OrthogonalMap(_reorthonormalize(q_old.matrix.T @ q.matrix))
            else:
                rotate_subtree(c, q)
                c.edge_map = q
            M = P.matrix[:, keep]
            c.edge_coupling = Coupling(M, P.row_marginal, M.sum(0), n_iter=P.n_iter, converged=P.converged,
                                       marginal_error=P.marginal_error, epsilon=P.epsilon)
        node.distribution = dist
        node.history = sub.history
        logger.info("tree node %s aligned over %s", node.name, [c.name for c in node.children])

    solve(root)
    # star trees reproduce the flat state exactly; deeper trees leave couplings on the edges
    if all(c.is_leaf for c in root.children):
        order = [lang_index[c.name] for c in root.children]
        inv = np.argsort(order)
        state.couplings = [root.children[j].edge_coupling for j in inv]
        state.kind = "barycenter"
    else:
        state.couplings = []
        state.kind = "tree"
    state.history = root.history
    return LanguageTree(root, state)


def _path_to_root(node: TreeNode) -> list[TreeNode]:
    path = [node]
    while path[-1].parent is not None:
        path.append(path[-1].parent)
    return path


def translate_via_tree(tree: LanguageTree, src: str, tgt: str) -> Coupling:
    """Joint distribution between two leaves from the coupling product along their tree path.

    Edges climbed from ``src`` use the stored couplings, edges descended to
    ``tgt`` use their transposes; the product is rescaled to total mass one.
    """
    a = tree.node(src)
    b = tree.node(tgt)
    if a is b:
        return Coupling.diagonal(a.distribution.mass)
    up = _path_to_root(a)
    down = _path_to_root(b)
    down_ids = {id(n) for n in down}
    lca = next(n for n in up if id(n) in down_ids)
    M = None
    for n in up[:up.index(lca)]:
        M = n.edge_coupling.matrix if M is None else M @ n.edge_coupling.matrix
    for n in reversed(down[:down.index(lca)]):
        M = M @ n.edge_coupling.matrix.T
    total = M.sum()
    if total > 0:
        M = M / total
    return Coupling(M, M.sum(1), M.sum(0))


# ---------------------------------------------------------------- checkpoints


def _array_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _sparse(M: np.ndarray, rel: float):
    """Row-wise pruning of entries below ``rel`` times the row maximum."""
    if rel <= 0:
        mask = M > 0
    else:
        mask = M >= rel * M.max(axis=1, keepdims=True)
        mask &= M > 0
    rows, cols = np.nonzero(mask)
    return rows.astype(np.int64), cols.astype(np.int64), M[rows, cols]


def _dense(shape, rows, cols, vals) -> np.ndarray:
    M = np.zeros(tuple(int(x) for x in shape))
    M[rows, cols] = vals
    return M


def save_checkpoint(state: AlignmentState, path, config: dict | None = None, prune: float = 0.0,
                    tree: LanguageTree | None = None) -> None:
    """Write the state as a zip of ``.npy`` members plus ``meta.json``.

    Member timestamps are fixed so identical states give identical bytes.
    Couplings are stored as coordinate triplets; ``prune > 0`` drops entries
    below ``prune`` times their row maximum to keep large runs on disk.
    """
    meta = {
        "format": "baryalign-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": state.kind,
        "languages": state.languages,
        "pivot_index": state.pivot_index,
        "gw_converged": list(state.gw_converged),
        "history": state.history,
        "config": config or {},
        "coupling_prune": prune,
        "tree": tree.spec() if tree is not None else None,
    }
    arrays = {}
    for i, (s, q, b) in enumerate(zip(state.originals, state.maps, state.masses)):
        arrays[f"X{i}"] = s.vectors
        arrays[f"Q{i}"] = q.matrix
        arrays[f"mass{i}"] = b
    for name, cs in (("coupling", state.couplings), ("gw", state.gw_couplings)):
        for i, c in enumerate(cs):
            r, k, v = _sparse(c.matrix, prune)
            arrays[f"{name}{i}_shape"] = np.array(c.matrix.shape, dtype=np.int64)
            arrays[f"{name}{i}_rows"], arrays[f"{name}{i}_cols"], arrays[f"{name}{i}_vals"] = r, k, v
    if state.barycenter is not None:
        arrays["bary_support"] = state.barycenter.support
        arrays["bary_mass"] = state.barycenter.mass
        meta["barycenter_objective"] = state.barycenter.objective
    if tree is not None:
        for n in tree.root.walk():
            if n.parent is None:
                continue
            c = n.edge_coupling
            r, k, v = _sparse(c.matrix, prune)
            arrays[f"edge{n.index}_shape"] = np.array(c.matrix.shape, dtype=np.int64)
            arrays[f"edge{n.index}_rows"], arrays[f"edge{n.index}_cols"], arrays[f"edge{n.index}_vals"] = r, k, v
            arrays[f"edgeQ{n.index}"] = n.edge_map.matrix
            if not n.is_leaf:
                arrays[f"node{n.index}_support"] = n.distribution.support
                arrays[f"node{n.index}_mass"] = n.distribution.mass
    words = {lang: s.words for lang, s in zip(state.languages, state.originals)}
    stamp = (1980, 1, 1, 0, 0, 0)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def put(name, data):
            info = zipfile.ZipInfo(name, date_time=stamp)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
        put("meta.json", json.dumps(meta, sort_keys=True, indent=1, default=_json_default))
        put("words.json", json.dumps(words, ensure_ascii=False))
        for name in sorted(arrays):
            put(name + ".npy", _array_bytes(arrays[name]))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(state, meta, tree_or_None)``."""
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "baryalign-checkpoint":
            raise ValueError(f"{path}: not a checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {meta['version']} is newer than supported")
        words = json.loads(zf.read("words.json"))
        names = set(zf.namelist())

        def arr(name):
            return np.lib.format.read_array(io.BytesIO(zf.read(name + ".npy")), allow_pickle=False)

        def coupling(prefix):
            M = _dense(arr(prefix + "_shape"), arr(prefix + "_rows"), arr(prefix + "_cols"), arr(prefix + "_vals"))
            return Coupling(M, M.sum(1), M.sum(0))

        langs = meta["languages"]
        originals = [EmbeddingSpace(lang, words[lang], arr(f"X{i}")) for i, lang in enumerate(langs)]
        maps = [OrthogonalMap(arr(f"Q{i}")) for i in range(len(langs))]
        masses = [arr(f"mass{i}") for i in range(len(langs))]
        couplings = [coupling(f"coupling{i}") for i in range(len(langs)) if f"coupling{i}_shape.npy" in names]
        gws = [coupling(f"gw{i}") for i in range(len(langs)) if f"gw{i}_shape.npy" in names]
        bary = None
        if "bary_support.npy" in names:
            bary = BarycenterState(DiscreteDistribution(arr("bary_support"), arr("bary_mass")), couplings,
                                   meta.get("barycenter_objective", float("nan")))
        state = AlignmentState(originals, maps, masses, couplings, bary, gws, meta["gw_converged"],
                               meta["history"], meta["pivot_index"], meta["kind"])
        tree = None
        if meta.get("tree"):
            root = parse_tree(meta["tree"])
            lang_index = {lang: i for i, lang in enumerate(langs)}
            for n in root.walk():
                if n.is_leaf:
                    sp = state.spaces[lang_index[n.name]]
                    n.distribution = DiscreteDistribution(sp.vectors, masses[lang_index[n.name]])
                elif n.parent is not None:
                    n.distribution = DiscreteDistribution(arr(f"node{n.index}_support"), arr(f"node{n.index}_mass"))
                if n.parent is not None:
                    n.edge_coupling = coupling(f"edge{n.index}")
                    n.edge_map = OrthogonalMap(arr(f"edgeQ{n.index}"))
            tree = LanguageTree(root, state)
    return state, meta, tree


def config_dict(cfg: PipelineConfig) -> dict:
    """Plain-data view of a pipeline config for manifests and checkpoints."""
    return asdict(cfg)
