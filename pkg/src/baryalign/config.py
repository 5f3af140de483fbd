"""Run configuration from flat ``key = value`` text.

Grammar, one entry per line::

    # comment
    languages.en = vectors/wiki.en.vec     # order of appearance is the language order
    vocab_size = 5000
    mass_model = uniform                   # or zipf
    seed = 0
    out = runs/muse
    dictionaries = dictionaries            # directory of <src>-<tgt>.txt files
    tree = muse                            # preset name or nested spec like ((es,pt),(fr,it))
    outer_iters = 10
    pivot_index = 0
    gw.epsilon = 5e-5                      # any GWConfig field
    gw.inner.max_iters = 1000              # any SinkhornConfig field of the GW inner solver
    ot.epsilon = 0.01                      # any SinkhornConfig field of the barycenter phase
    bary.support_size = 10000              # any BarycenterConfig field; bary.lam = 0.5,0.25,0.25
    ablate.support_sizes = 500,1000,1500
    ablate.subsets = en,de,fr;en,de
    ablate.pivots = 0,1,2

Relative paths resolve against the config file's directory. Unknown keys
are errors.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .align import PipelineConfig
from .barycenter import BarycenterConfig
from .gromov import GWConfig
from .ot import SinkhornConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    languages: list[tuple[str, Path]]
    vocab_size: int = 5000
    mass_model: str = "uniform"
    seed: int = 0
    out: Path = Path("run")
    dictionaries: Path | None = None
    tree: str | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    support_sizes: list[int] = field(default_factory=list)
    subsets: list[list[str]] = field(default_factory=list)
    pivots: list[int] = field(default_factory=list)
    source: Path | None = None

    def __post_init__(self):
        if len(self.languages) < 2:
            raise ConfigError("need at least two languages")
        tags = [t for t, _ in self.languages]
        if len(set(tags)) != len(tags):
            raise ConfigError(f"duplicate language tags: {tags}")
        paths = [str(p) for _, p in self.languages]
        if len(set(paths)) != len(paths):
            raise ConfigError("embedding paths must be distinct")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")

    @property
    def tags(self) -> list[str]:
        return [t for t, _ in self.languages]

    def resolved(self) -> dict:
        """Every setting after defaults, as plain data for manifests."""
        return {
            "languages": [[t, str(p)] for t, p in self.languages],
            "vocab_size": self.vocab_size,
            "mass_model": self.mass_model,
            "seed": self.seed,
            "out": str(self.out),
            "dictionaries": str(self.dictionaries) if self.dictionaries else None,
            "tree": self.tree,
            "pipeline": dataclasses.asdict(self.pipeline),
            "ablate": {"support_sizes": self.support_sizes, "subsets": self.subsets, "pivots": self.pivots},
        }


def _coerce(raw: str, annotation: str, key: str):
    ann = annotation.replace(" ", "")
    if raw.lower() in ("none", "null", "") and "None" in ann:
        return None
    try:
        if ann.startswith("bool"):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if ann.startswith("int"):
            return int(raw)
        if ann.startswith("float"):
            return float(raw)
        if ann.startswith("tuple[float"):
            return tuple(float(x) for x in raw.split(","))
        if ann.startswith("str"):
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {annotation}") from None
    raise ConfigError(f"{key}: unsupported field type {annotation}")


def _set_fields(obj, items: dict[str, str], prefix: str):
    types = {f.name: f.type for f in dataclasses.fields(obj)}
    updates = {}
    for name, raw in items.items():
        if name not in types:
            raise ConfigError(f"unknown key {prefix}{name}")
        updates[name] = _coerce(raw, types[name], prefix + name)
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.')}: {exc}") from None


def parse_config_text(text: str, base_dir=".") -> RunConfig:
    base = Path(base_dir)
    entries: dict[str, str] = {}
    langs: list[tuple[str, Path]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key.startswith("languages."):
            tag = key[len("languages."):]
            if not tag or tag in [t for t, _ in langs]:
                raise ConfigError(f"line {lineno}: bad or repeated language tag {tag!r}")
            langs.append((tag, base / value))
            continue
        if key in entries:
            raise ConfigError(f"line {lineno}: repeated key {key}")
        entries[key] = value
    return _build(langs, entries, base)


def _build(langs, entries, base) -> RunConfig:
    groups = {"gw.inner.": {}, "gw.": {}, "ot.": {}, "bary.": {}}
    top = {}
    for key, value in entries.items():
        for prefix in groups:
            if key.startswith(prefix):
                groups[prefix][key[len(prefix):]] = value
                break
        else:
            top[key] = value

    def as_int(key, default):
        raw = top.pop(key, default)
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot read {raw!r} as int") from None

    seed = as_int("seed", "0")
    gw_inner = _set_fields(GWConfig().inner, groups["gw.inner."], "gw.inner.")
    gw = _set_fields(GWConfig(inner=gw_inner), groups["gw."], "gw.")
    ot = _set_fields(SinkhornConfig(), groups["ot."], "ot.")
    bary = _set_fields(BarycenterConfig(seed=seed), groups["bary."], "bary.")
    pipe_fields = {}
    for name in ("outer_iters", "pivot_index", "mass_model", "warm_start", "early_stop"):
        if name in top:
            pipe_fields[name] = top.pop(name)
    pipeline = _set_fields(PipelineConfig(gw=gw, bary=bary, ot=ot), pipe_fields, "")
    mass_model = pipeline.mass_model
    if mass_model not in ("uniform", "zipf"):
        raise ConfigError(f"mass_model must be uniform or zipf, got {mass_model!r}")

    def ints(raw):
        return [int(x) for x in raw.split(",") if x.strip()]

    try:
        kwargs = dict(
            vocab_size=as_int("vocab_size", "5000"),
            mass_model=mass_model,
            seed=seed,
            out=base / top.pop("out", "run"),
            dictionaries=(base / top.pop("dictionaries")) if "dictionaries" in top else None,
            tree=top.pop("tree", None),
            support_sizes=ints(top.pop("ablate.support_sizes", "")),
            subsets=[[t.strip() for t in grp.split(",") if t.strip()]
                     for grp in top.pop("ablate.subsets", "").split(";") if grp.strip()],
            pivots=ints(top.pop("ablate.pivots", "")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if top:
        raise ConfigError(f"unknown keys: {sorted(top)}")
    return RunConfig(langs, pipeline=pipeline, **kwargs)


def load_config(path, overrides=()) -> RunConfig:
    """Read a config file; ``overrides`` are extra ``key=value`` lines applied last."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if overrides:
        text = _apply_overrides(text, overrides)
    cfg = parse_config_text(text, path.parent)
    cfg.source = path
    return cfg


def _apply_overrides(text: str, overrides) -> str:
    keys = {}
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        k, v = (s.strip() for s in ov.split("=", 1))
        keys[k] = v
    lines = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        k = body.split("=", 1)[0].strip() if "=" in body else None
        if k in keys:
            continue
        lines.append(line)
    lines += [f"{k} = {v}" for k, v in keys.items()]
    return "\n".join(lines) + "\n"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
