import json
from pathlib import Path

import numpy as np
import pytest

from baryalign.align import load_checkpoint
from baryalign.cli import EXIT_INPUT, EXIT_USAGE, main
from baryalign.config import ConfigError, load_config, parse_config_text

BASE = "languages.en = en.vec\nlanguages.de = de.vec\n"


def test_parse_defaults_and_prefixes(tmp_path):
    cfg = parse_config_text(
        BASE + "gw.epsilon = 1e-4\ngw.inner.max_iters = 77\not.epsilon = 0.02\n"
        "bary.lam = 0.25,0.75\nbary.optimize_weights = false\nouter_iters = 3\n"
        "ablate.subsets = en,de;de,en\nablate.support_sizes = 5, 10\nseed = 9  # trailing comment\n",
        tmp_path,
    )
    assert cfg.tags == ["en", "de"]
    assert cfg.languages[0][1] == tmp_path / "en.vec"
    p = cfg.pipeline
    assert p.gw.epsilon == 1e-4 and p.gw.inner.max_iters == 77
    assert p.ot.epsilon == 0.02 and p.bary.lam == (0.25, 0.75) and p.bary.optimize_weights is False
    assert p.outer_iters == 3 and p.bary.seed == 9 and cfg.seed == 9
    assert cfg.subsets == [["en", "de"], ["de", "en"]] and cfg.support_sizes == [5, 10]
    d = parse_config_text(BASE, tmp_path)
    assert d.vocab_size == 5000 and d.mass_model == "uniform" and d.pipeline.outer_iters == 10
    assert d.pipeline.gw.epsilon == 5e-5 and d.pipeline.bary.optimize_weights is True
    json.dumps(d.resolved())


@pytest.mark.parametrize("text, match", [
    (BASE + "colour = red\n", "unknown"),
    (BASE + "gw.nonsense = 1\n", "unknown key gw.nonsense"),
    (BASE + "vocab_size = lots\n", "vocab_size"),
    (BASE + "mass_model = pareto\n", "mass_model"),
    (BASE + "seed = 1\nseed = 2\n", "repeated"),
    (BASE + "just words\n", "key = value"),
    ("languages.en = a.vec\n", "two languages"),
    (BASE + "languages.en = c.vec\n", "repeated language"),
    ("languages.en = a.vec\nlanguages.de = a.vec\n", "distinct"),
    (BASE + "gw.epsilon = -1\n", "gw"),
])
def test_config_errors(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text, tmp_path)


def test_overrides_replace_entries(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(BASE + "outer_iters = 4\n")
    cfg = load_config(path, ["outer_iters=2", "ot.epsilon = 0.5"])
    assert cfg.pipeline.outer_iters == 2 and cfg.pipeline.ot.epsilon == 0.5 and cfg.source == path
    with pytest.raises(ConfigError):
        load_config(path, ["outer_iters"])


# ---------------------------------------------------------------- CLI smoke


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth-gen", "--out", str(out), "--n", "60", "--d", "5", "--seed", "2"]) == 0
    with open(out / "run.cfg", "a") as fh:
        fh.write("outer_iters = 3\n")
    return out


@pytest.fixture(scope="module")
def aligned(synth_dir):
    out = synth_dir / "run"
    assert main(["align", str(synth_dir / "run.cfg")]) == 0
    return out


def test_align_outputs(aligned):
    state, meta, tree = load_checkpoint(aligned / "alignment.ckpt")
    assert state.languages == ["l0", "l1", "l2"] and tree is None
    rows = (aligned / "convergence.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:3] == ["round", "objective", "entropic_objective"]
    assert len(rows) - 1 == len(state.history) >= 1
    for row in rows[1:]:
        assert row.split("\t")[1] != ""
    manifest = json.loads((aligned / "manifest.json").read_text())
    assert manifest["config"]["pipeline"]["outer_iters"] == 3
    assert set(manifest["outputs"]) == {"alignment.ckpt", "convergence.tsv"}


def test_align_rerun_is_byte_identical(synth_dir, aligned, tmp_path):
    again = tmp_path / "again"
    assert main(["align", str(synth_dir / "run.cfg"), "--out", str(again)]) == 0
    a = json.loads((aligned / "manifest.json").read_text())
    b = json.loads((again / "manifest.json").read_text())
    assert a["outputs"] == b["outputs"] and a["config"] == b["config"]
    assert (aligned / "alignment.ckpt").read_bytes() == (again / "alignment.ckpt").read_bytes()
    # same output directory twice: the manifest itself is identical
    before = (aligned / "manifest.json").read_bytes()
    assert main(["align", str(synth_dir / "run.cfg")]) == 0
    assert (aligned / "manifest.json").read_bytes() == before


def test_translate_and_evaluate(synth_dir, aligned, tmp_path):
    ckpt = str(aligned / "alignment.ckpt")
    lex = tmp_path / "l0-l0.tsv"
    assert main(["translate", ckpt, "--src", "l0", "--tgt", "l0", "--topk", "1", "--out", str(lex)]) == 0
    rows = [line.split("\t") for line in lex.read_text().splitlines()]
    assert np.mean([r[0] == r[1] for r in rows]) >= 0.99
    lex = tmp_path / "l0-l1.tsv"
    words = tmp_path / "words.txt"
    words.write_text("w0 w1 w2 notaword\n")
    assert main(["translate", ckpt, "--src", "l0", "--tgt", "l1", "--topk", "3",
                 "--words", str(words), "--out", str(lex)]) == 0
    rows = [line.split("\t") for line in lex.read_text().splitlines()]
    assert {r[0] for r in rows} == {"w0", "w1", "w2"}
    assert main(["translate", ckpt, "--src", "l0", "--tgt", "xx"]) == EXIT_INPUT

    report = tmp_path / "report.tsv"
    assert main(["evaluate", ckpt, "--dictionaries", str(synth_dir / "dictionaries"), "--out", str(report)]) == 0
    p1 = [line.split("\t") for line in report.read_text().splitlines()
          if "\tP@k\t1\t" in line and not line.startswith("average")]
    assert len(p1) == 6 and all(float(r[3]) >= 0.95 for r in p1)


def test_evaluate_with_baseline(synth_dir, aligned, tmp_path):
    base = tmp_path / "gw"
    assert main(["align", str(synth_dir / "run.cfg"), "--init-only", "--out", str(base)]) == 0
    report = tmp_path / "report.tsv"
    assert main(["evaluate", str(aligned / "alignment.ckpt"), "--dictionaries", str(synth_dir / "dictionaries"),
                 "--baseline", str(base / "alignment.ckpt"), "--out", str(report)]) == 0
    rows = [line.split("\t") for line in report.read_text().splitlines() if "\tmcnemar_p\t" in line]
    assert len(rows) == 6 and all(0.0 <= float(r[3]) <= 1.0 for r in rows)
    empty = tmp_path / "nodicts"
    empty.mkdir()
    assert main(["evaluate", str(aligned / "alignment.ckpt"), "--dictionaries", str(empty)]) == EXIT_INPUT


def test_pivot_robustness_and_subsets(synth_dir, tmp_path):
    cfg = str(synth_dir / "run.cfg")
    out = tmp_path / "piv"
    assert main(["ablate", cfg, "--mode", "pivot-robustness", "--out", str(out)]) == 0
    text = (out / "ablation.tsv").read_text()
    spread = float(text.split("spread across pivots: ")[1].split()[0])
    assert spread <= 2.0
    out = tmp_path / "sub"
    assert main(["ablate", cfg, "--mode", "language-subset", "--set", "ablate.subsets=l0,l1,l2;l0,l1",
                 "--out", str(out)]) == 0
    settings = {line.split("\t")[0] for line in (out / "ablation.tsv").read_text().splitlines()[1:]}
    assert settings == {"subset=l0,l1,l2", "subset=l0,l1"}
    assert main(["ablate", cfg, "--mode", "language-subset", "--set", "ablate.subsets=l0"]) == EXIT_USAGE


def test_support_size_and_hierarchical(synth_dir, tmp_path):
    cfg = str(synth_dir / "run.cfg")
    out = tmp_path / "sizes"
    assert main(["ablate", cfg, "--mode", "support-size", "--set", "ablate.support_sizes=30,60",
                 "--set", "outer_iters=1", "--out", str(out)]) == 0
    text = (out / "ablation.tsv").read_text()
    assert "in support size" in text and "support=30\t" in text and "support=60\t" in text
    out = tmp_path / "tree"
    assert main(["hierarchical", cfg, "--tree", "((l0,l1),l2)", "--set", "outer_iters=1", "--out", str(out)]) == 0
    rows = (out / "hierarchical.tsv").read_text().splitlines()
    assert rows[1] == "pair\tflat_P@1\ttree_P@1\tdelta" and len(rows) == 2 + 6
    assert main(["hierarchical", cfg, "--tree", "((l0,l1),l9)", "--out", str(out)]) != 0
    assert main(["hierarchical", cfg, "--out", str(out)]) == EXIT_USAGE


def test_exit_codes(tmp_path):
    assert main(["align", str(tmp_path / "missing.cfg")]) == EXIT_INPUT
    bad = tmp_path / "bad.cfg"
    bad.write_text(BASE + "colour = red\n")
    assert main(["align", str(bad)]) == EXIT_INPUT
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert main(["translate", str(tmp_path / "none.ckpt"), "--src", "a", "--tgt", "b"]) == EXIT_INPUT


def test_phase_tag_in_diagnostics(tmp_path, capsys):
    path = tmp_path / "run.cfg"
    (tmp_path / "en.vec").write_text("2 3\nx 1 2 3\ny 4 5\n")
    (tmp_path / "de.vec").write_text("1 3\nx 1 2 3\n")
    path.write_text(BASE)
    assert main(["align", str(path)]) == EXIT_INPUT
    assert "[load en]" in capsys.readouterr().err

