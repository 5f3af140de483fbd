"""Command-line entry point: ``baryalign <command> ...``."""
from __future__ import annotations

import argparse
import copy
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .align import (
    AlignmentState,
    arithmetic_mean_pivot,
    barycenter_align,
    gw_initialize,
    hierarchical_align,
    load_checkpoint,
    procrustes,
    save_checkpoint,
    translate_via_tree,
)
from .config import ConfigError, RunConfig, file_sha256, load_config
from .embed_io import (
    EmbeddingFormatError,
    EmbeddingSpace,
    load_embeddings,
    load_gold_dictionary,
    squared_euclidean_cost,
)
from .evaluate import (
    average_rows,
    cosine_scores,
    evaluate_scores,
    mcnemar_one_sided,
    rank_scores,
    write_lexicon,
    write_report,
)
from .ot import sinkhorn
from .synth import SynthConfig, write_dataset

logger = logging.getLogger("baryalign")

CHECKPOINT_NAME = "alignment.ckpt"
REPORT_NOTES = (
    "a query counts as a hit at k when any of its gold targets is among the top k",
    "queries are restricted to the loaded vocabularies; dropped = gold queries outside them",
    "transport objectives are the sharp cost <P, C> of the entropic plans, without the entropy term",
)

EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC, EXIT_OTHER = 2, 3, 4, 1


class PhaseError(RuntimeError):
    def __init__(self, phase: str, message: str, code: int = EXIT_OTHER):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase
        self.code = code


def _phase(phase, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PhaseError:
        raise
    except (ConfigError, EmbeddingFormatError, FileNotFoundError, KeyError) as exc:
        raise PhaseError(phase, str(exc), EXIT_INPUT) from exc
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise PhaseError(phase, str(exc), EXIT_NUMERIC) from exc
    except ValueError as exc:
        raise PhaseError(phase, str(exc), EXIT_INPUT) from exc


# ---------------------------------------------------------------- helpers


def _load_spaces(cfg: RunConfig, tags=None):
    spaces = []
    for tag, path in cfg.languages:
        if tags is not None and tag not in tags:
            continue
        spaces.append(_phase(f"load {tag}", load_embeddings, path, cfg.vocab_size, tag))
    return spaces


def _versions() -> dict:
    import scipy

    return {"baryalign": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_manifest(out: Path, command: str, cfg: RunConfig | None, inputs, outputs, extra=None):
    manifest = {
        "command": command,
        "config": cfg.resolved() if cfg is not None else None,
        "inputs": {str(p): file_sha256(p) for p in sorted(set(map(str, inputs)))},
        "outputs": {p.name: file_sha256(p) for p in sorted(outputs)},
        "versions": _versions(),
        "notes": list(REPORT_NOTES),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_convergence(path: Path, history) -> None:
    cols = ["round", "objective", "entropic_objective", "barycenter_objective", "relative_change", "barycenter_iterations",
            "barycenter_converged", "increase_flag", "orthogonality_error"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in history:
            fh.write("\t".join("" if row.get(c) is None else _fmt(row[c]) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _pair_scores(state: AlignmentState, tree, i: int, k: int) -> np.ndarray:
    if tree is not None and state.kind == "tree":
        return translate_via_tree(tree, state.languages[i], state.languages[k]).matrix
    return state.score_matrix(i, k)


def _find_dictionary(directory: Path, src: str, tgt: str) -> Path | None:
    for name in (f"{src}-{tgt}.txt", f"{src}-{tgt}.5000-6500.txt"):
        if (directory / name).exists():
            return directory / name
    matches = sorted(directory.glob(f"{src}-{tgt}*.txt"))
    return matches[0] if matches else None


def _evaluate_state(state, tree, dict_dir: Path, tags=None, ks=(1, 10)):
    """Reports for every directed pair with a dictionary; also returns the skipped pairs."""
    spaces = state.spaces
    reports, skipped = [], []
    idx = [i for i, t in enumerate(state.languages) if tags is None or t in tags]
    for i in idx:
        for k in idx:
            if i == k:
                continue
            src, tgt = state.languages[i], state.languages[k]
            path = _find_dictionary(dict_dir, src, tgt)
            if path is None:
                skipped.append(f"{src}-{tgt}")
                continue
            gold = _phase(f"dictionary {src}-{tgt}", load_gold_dictionary, path, spaces[i], spaces[k])
            S = _pair_scores(state, tree, i, k)
            reports.append(evaluate_scores(S, spaces[i], spaces[k], gold, ks))
    return reports, skipped


def _run_alignment(cfg: RunConfig, spaces, init_only=False, pipeline=None, callback=None):
    pipeline = pipeline or cfg.pipeline
    state = _phase("gw-init", gw_initialize, spaces, pipeline)
    if init_only:
        return state
    return _phase("barycenter", barycenter_align, state, pipeline, callback)


# ---------------------------------------------------------------- commands


def cmd_synth_gen(args) -> int:
    families = {}
    if args.families:
        for grp in args.families.split(";"):
            name, members = grp.split(":")
            families[name.strip()] = tuple(m.strip() for m in members.split(","))
    cfg = SynthConfig(
        languages=tuple(args.languages.split(",")),
        n=args.n,
        d=args.d,
        noise=args.noise,
        seed=args.seed,
        families=families,
        family_noise=args.family_noise,
        distant=tuple(x for x in (args.distant or "").split(",") if x),
    )
    out = Path(args.out)
    _phase("synth-gen", write_dataset, cfg, out)
    print(f"wrote {len(cfg.languages)} languages, dictionaries and run.cfg to {out}")
    return 0


def cmd_align(args) -> int:
    cfg = _phase("config", load_config, args.config, args.set or ())
    out = Path(args.out) if args.out else cfg.out
    out.mkdir(parents=True, exist_ok=True)
    spaces = _load_spaces(cfg)
    state = _run_alignment(cfg, spaces, init_only=args.init_only)
    ckpt = out / CHECKPOINT_NAME
    save_checkpoint(state, ckpt, config=cfg.resolved(), prune=args.prune)
    conv = out / "convergence.tsv"
    _write_convergence(conv, state.history)
    _write_manifest(out, "align --init-only" if args.init_only else "align", cfg,
                    [p for _, p in cfg.languages], [ckpt, conv],
                    {"gw_converged": dict(zip(state.languages, state.gw_converged))})
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_translate(args) -> int:
    state, meta, tree = _phase("checkpoint", load_checkpoint, args.checkpoint)
    i = _phase("translate", state.index_of, args.src)
    k = _phase("translate", state.index_of, args.tgt)
    spaces = state.spaces
    S = _pair_scores(state, tree, i, k)
    src = spaces[i]
    missing = 0
    if args.words:
        wanted = [w.strip() for w in Path(args.words).read_text(encoding="utf-8").split() if w.strip()]
        index = src.index()
        rows = [index[w] for w in wanted if w in index]
        missing = len(wanted) - len(rows)
        src = EmbeddingSpace(src.language_id, [src.words[r] for r in rows], src.vectors[rows])
        S = S[rows]
    fb = cosine_scores(src.vectors, spaces[k].vectors) if args.nn_fallback else None
    lex = rank_scores(S, src, spaces[k], args.topk, fallback=fb)
    out = Path(args.out) if args.out else Path(f"{args.src}-{args.tgt}.lexicon.tsv")
    write_lexicon(lex, out)
    print(f"{len(lex.rankings)} words translated to {out}; {missing} requested words not in vocabulary; "
          f"{lex.empty_rows} rows without coupling mass"
          + (f" ({len(lex.fallback_rows)} scored by nearest neighbours)" if args.nn_fallback else ""))
    return 0


def cmd_evaluate(args) -> int:
    state, meta, tree = _phase("checkpoint", load_checkpoint, args.checkpoint)
    dict_dir = Path(args.dictionaries)
    reports, skipped = _evaluate_state(state, tree, dict_dir)
    if not reports:
        raise PhaseError("evaluate", f"no dictionaries found in {dict_dir}", EXIT_INPUT)
    extra = average_rows(reports)
    if args.baseline:
        base_state, _, base_tree = _phase("baseline", load_checkpoint, args.baseline)
        base_reports, _ = _evaluate_state(base_state, base_tree, dict_dir)
        base = {r.pair: r for r in base_reports}
        for r in reports:
            b = base.get(r.pair)
            if b is None or b.queries != r.queries:
                continue
            p = mcnemar_one_sided(r.hits_at_1, b.hits_at_1)
            extra.append(f"{r.pair[0]}-{r.pair[1]}\tmcnemar_p\t1\t{p:.6g}\t{r.query_count}\t{r.dropped_queries}")
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("report.tsv")
    notes = list(REPORT_NOTES) + [f"skipped pairs without dictionary: {','.join(skipped) or 'none'}"]
    write_report(reports, out, extra, notes)
    for row in average_rows(reports):
        print(row)
    print(f"report: {out}")
    return 0


def _ablation_rows(setting: str, reports) -> list[str]:
    rows = []
    for r in reports:
        tag = f"{r.pair[0]}-{r.pair[1]}"
        for k, v in sorted(r.precision_at.items()):
            rows.append(f"{setting}\t{tag}\tP@{k}\t{v:.6f}")
        rows.append(f"{setting}\t{tag}\tMAP\t{r.mean_average_precision:.6f}")
    if reports:
        rows.append(f"{setting}\taverage\tP@1\t{np.mean([r.precision_at[1] for r in reports]):.6f}")
    return rows


def _mean_pivot_state(cfg: RunConfig, spaces) -> AlignmentState:
    """Arithmetic-mean pivot built from the GW matches, then one OT + Procrustes per language."""
    state = _phase("gw-init", gw_initialize, spaces, cfg.pipeline)
    piv = state.pivot_index
    cur = state.spaces
    Xbar = arithmetic_mean_pivot(cur, [c.matrix.T for c in state.gw_couplings])
    pmass = state.masses[piv]
    couplings = []
    for i, s in enumerate(cur):
        P = _phase("mean-pivot", sinkhorn, state.masses[i], pmass,
                   squared_euclidean_cost(s.vectors, Xbar), cfg.pipeline.ot)
        state.maps[i] = state.maps[i].compose(procrustes(s.vectors, P, Xbar))
        couplings.append(P)
    state.couplings = couplings
    state.kind = "mean-pivot"
    return state


def cmd_ablate(args) -> int:
    cfg = _phase("config", load_config, args.config, args.set or ())
    out = Path(args.out) if args.out else cfg.out / f"ablate-{args.mode}"
    out.mkdir(parents=True, exist_ok=True)
    if cfg.dictionaries is None:
        raise PhaseError("ablate", "config needs a dictionaries directory", EXIT_USAGE)
    rows = ["setting\tpair\tmetric\tvalue"]
    notes = []
    all_spaces = _load_spaces(cfg)
    if args.mode == "support-size":
        sizes = [s.n for s in all_spaces]
        grid = cfg.support_sizes or [int(round(np.mean(sizes))), int(round(2 * np.mean(sizes))), int(sum(sizes))]
        averages = []
        for s in grid:
            pipe = replace(cfg.pipeline, bary=replace(cfg.pipeline.bary, support_size=s))
            state = _run_alignment(cfg, all_spaces, pipeline=pipe)
            reports, _ = _evaluate_state(state, None, cfg.dictionaries)
            rows += _ablation_rows(f"support={s}", reports)
            averages.append(np.mean([r.precision_at[1] for r in reports]))
        trend = all(b >= a for a, b in zip(averages, averages[1:]))
        notes.append(f"average P@1 {'non-decreasing' if trend else 'not monotone'} in support size")
    elif args.mode == "language-subset":
        subsets = cfg.subsets or [cfg.tags]
        for sub in subsets:
            if len(sub) < 2:
                raise PhaseError("ablate", f"subset {sub} has fewer than 2 languages", EXIT_USAGE)
            unknown = set(sub) - set(cfg.tags)
            if unknown:
                raise PhaseError("ablate", f"subset mentions unknown languages {sorted(unknown)}", EXIT_USAGE)
            spaces = [s for s in all_spaces if s.language_id in sub]
            state = _run_alignment(cfg, spaces)
            reports, _ = _evaluate_state(state, None, cfg.dictionaries)
            rows += _ablation_rows("subset=" + ",".join(sub), reports)
    elif args.mode == "pivot-robustness":
        pivots = cfg.pivots or list(range(len(all_spaces)))
        averages = []
        for p in pivots:
            state = _run_alignment(cfg, all_spaces, pipeline=replace(cfg.pipeline, pivot_index=p))
            reports, _ = _evaluate_state(state, None, cfg.dictionaries)
            rows += _ablation_rows(f"pivot={cfg.tags[p]}", reports)
            averages.append(100 * np.mean([r.precision_at[1] for r in reports]))
        notes.append(f"average P@1 spread across pivots: {max(averages) - min(averages):.3f} points")
    elif args.mode == "mean-pivot":
        state = _run_alignment(cfg, all_spaces)
        reports, _ = _evaluate_state(state, None, cfg.dictionaries)
        rows += _ablation_rows("barycenter", reports)
        mean_state = _mean_pivot_state(cfg, all_spaces)
        reports, _ = _evaluate_state(mean_state, None, cfg.dictionaries)
        rows += _ablation_rows("mean-pivot", reports)
    report = out / "ablation.tsv"
    report.write_text("".join(f"# {n}\n" for n in notes) + "\n".join(rows) + "\n", encoding="utf-8")
    _write_manifest(out, f"ablate --mode {args.mode}", cfg, [p for _, p in cfg.languages], [report])
    for n in notes:
        print(n)
    print(f"report: {report}")
    return 0


def cmd_hierarchical(args) -> int:
    cfg = _phase("config", load_config, args.config, args.set or ())
    spec = args.tree or cfg.tree
    if not spec:
        raise PhaseError("hierarchical", "no tree given (config key 'tree' or --tree)", EXIT_USAGE)
    out = Path(args.out) if args.out else cfg.out / "hierarchical"
    out.mkdir(parents=True, exist_ok=True)
    spaces = _load_spaces(cfg)
    init = _phase("gw-init", gw_initialize, spaces, cfg.pipeline)
    flat = _phase("barycenter", barycenter_align, copy.deepcopy(init), cfg.pipeline)
    tree = _phase("tree", hierarchical_align, spaces, spec, cfg.pipeline, init)
    ckpt = out / CHECKPOINT_NAME
    save_checkpoint(tree.state, ckpt, config=cfg.resolved(), prune=args.prune, tree=tree)
    outputs = [ckpt]
    if cfg.dictionaries is not None:
        flat_reports, _ = _evaluate_state(flat, None, cfg.dictionaries)
        tree_reports, skipped = _evaluate_state(tree.state, tree, cfg.dictionaries)
        flat_by_pair = {r.pair: r for r in flat_reports}
        rows = ["pair\tflat_P@1\ttree_P@1\tdelta"]
        for r in tree_reports:
            f = flat_by_pair[r.pair].precision_at[1]
            t = r.precision_at[1]
            rows.append(f"{r.pair[0]}-{r.pair[1]}\t{f:.6f}\t{t:.6f}\t{t - f:+.6f}")
        report = out / "hierarchical.tsv"
        report.write_text(f"# tree {tree.spec()}\n" + "\n".join(rows) + "\n", encoding="utf-8")
        outputs.append(report)
        print("\n".join(rows))
    _write_manifest(out, "hierarchical", cfg, [p for _, p in cfg.languages], outputs, {"tree": tree.spec()})
    print(f"checkpoint: {ckpt}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="baryalign", description="Multilingual embedding alignment "
                                "through a Wasserstein barycenter pivot.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="run config (flat key = value file)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        sp.add_argument("--out", help="output directory (default: config 'out')")

    sp = sub.add_parser("align", help="GW initialization plus barycenter refinement")
    with_config(sp)
    sp.add_argument("--init-only", action="store_true", help="stop after GW initialization (baseline)")
    sp.add_argument("--prune", type=float, default=0.0,
                    help="store coupling entries above this fraction of their row maximum only")
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("translate", help="write a top-k lexicon from a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--src", required=True)
    sp.add_argument("--tgt", required=True)
    sp.add_argument("--topk", type=int, default=10)
    sp.add_argument("--words", help="file of source words to translate (default: whole vocabulary)")
    sp.add_argument("--nn-fallback", action="store_true",
                    help="rank rows without coupling mass by cosine similarity in the shared space")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("evaluate", help="P@1, P@10 and MAP for every pair with a dictionary")
    sp.add_argument("checkpoint")
    sp.add_argument("--dictionaries", required=True, help="directory of <src>-<tgt>*.txt files")
    sp.add_argument("--baseline", help="second checkpoint for one-sided McNemar tests")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="support-size, language-subset, pivot or mean-pivot comparisons")
    with_config(sp)
    sp.add_argument("--mode", required=True,
                    choices=["support-size", "language-subset", "pivot-robustness", "mean-pivot"])
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("hierarchical", help="tree-structured alignment compared against the flat run")
    with_config(sp)
    sp.add_argument("--tree", help="tree preset (muse, xling) or nested spec")
    sp.add_argument("--prune", type=float, default=0.0)
    sp.set_defaults(func=cmd_hierarchical)

    sp = sub.add_parser("synth-gen", help="write a seeded synthetic dataset with a planted lexicon")
    sp.add_argument("--out", required=True)
    sp.add_argument("--languages", default="l0,l1,l2")
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--d", type=int, default=20)
    sp.add_argument("--noise", type=float, default=1e-2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--families", help="e.g. 'a:l0,l1;b:l2,l3'")
    sp.add_argument("--family-noise", type=float, default=0.0)
    sp.add_argument("--distant", help="comma list of languages drawn from an unrelated cloud")
    sp.set_defaults(func=cmd_synth_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PhaseError as exc:
        print(f"error {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, EmbeddingFormatError, FileNotFoundError) as exc:
        print(f"error [input] {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
