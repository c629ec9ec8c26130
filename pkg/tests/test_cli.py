import json
from pathlib import Path

import pytest

from conftest import write_jsonl
from golden_cleaning import GOLDEN
from xstance.cli import main

SMALL = ["--set", "synth.train_size=60", "--set", "synth.unlabeled_size=30", "--set", "synth.test_size=30",
         "--set", "synth.source_test_size=30"]
TINY_MODEL = ["--set", "encoder.d_model=8", "--set", "encoder.n_layers=1", "--set", "encoder.d_ff=16",
              "--set", "encoder.max_len=32", "--set", "train.epochs=1"]


def files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "bundle"
    assert main(["synth", "--seed", "3", "--out", str(out), *SMALL]) == 0
    return out


@pytest.fixture(scope="module")
def model(bundle):
    out = bundle.parent / "model"
    assert main(["train", "--seed", "3", "--out", str(out), "--train", str(bundle / "source.jsonl"),
                 "--vocab-extra", str(bundle / "x1_unlabeled.jsonl"), "--model", "mtab_no_tl", *TINY_MODEL]) == 0
    return out


def test_prep_golden(tmp_path, capsys):
    rows = [{"id": str(i), "text": raw, "lang": "en", "label": "favor"} for i, (raw, _) in enumerate(GOLDEN)]
    src = write_jsonl(tmp_path / "raw.jsonl", rows)
    out = tmp_path / "clean.jsonl"
    assert main(["prep", "--in", str(src), "--out", str(out)]) == 0
    got = [json.loads(line)["text"] for line in out.read_text().splitlines()]
    # records that clean to nothing are dropped
    assert got == [clean for _, clean in GOLDEN if clean]
    assert (tmp_path / "clean.stats.csv").exists() and (tmp_path / "clean.jsonl.manifest.json").exists()
    assert "positive" in capsys.readouterr().out


def test_prep_empty(tmp_path):
    src = tmp_path / "empty.jsonl"
    src.write_text("")
    out = tmp_path / "o.jsonl"
    assert main(["prep", "--in", str(src), "--out", str(out)]) == 0
    assert out.read_text() == ""


@pytest.mark.parametrize("content", ["{not json\n", json.dumps({"id": "1", "text": "a", "lang": "en",
                                                                "label": "maybe"}) + "\n"])
def test_prep_bad_input(tmp_path, content, capsys):
    src = tmp_path / "bad.jsonl"
    src.write_text(content)
    assert main(["prep", "--in", str(src), "--out", str(tmp_path / "o" / "o.jsonl")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_augment_and_warm_cache(tmp_path, bundle, capsys):
    rows = [{"id": f"e{i}", "text": t, "lang": "x0", "label": "favor"}
            for i, t in enumerate(["w001 pos0", "neg1 w002", "neu2 w003"])]
    src = write_jsonl(tmp_path / "three.jsonl", rows)
    args = ["augment", "--in", str(src), "--targets", "x1,x2,x3", "--translator",
            f"pseudo:{bundle / 'synth_spec.json'}", "--cache", str(tmp_path / "cache.jsonl")]
    assert main([*args, "--out", str(tmp_path / "a.jsonl")]) == 0
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 12
    capsys.readouterr()
    assert main([*args, "--out", str(tmp_path / "b.jsonl")]) == 0
    assert "translator calls: 0" in capsys.readouterr().out
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_missing_checkpoint(tmp_path, bundle):
    out = tmp_path / "eval"
    code = main(["evaluate", "--model-dir", str(tmp_path / "nothing"), "--test",
                 f"x1={bundle / 'x1_test.jsonl'}", "--out", str(out)])
    assert code == 3 and not out.exists()


def test_missing_input_file(tmp_path):
    assert main(["prep", "--in", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o.jsonl")]) == 3


def test_bad_flag_values(tmp_path, bundle):
    assert main(["synth", "--out", str(tmp_path / "s"), "--set", "synth.train_size=0"]) == 2
    assert main(["synth", "--out", str(tmp_path / "s"), "--set", "nonsense"]) == 2
    assert main(["evaluate", "--model-dir", "m", "--test", "x1", "--out", str(tmp_path / "e")]) == 2


def test_train_rerun_byte_identical(model, tmp_path):
    before = files(model)
    assert {"model.npz", "tokenizer.json", "history.json", "manifest.json"} <= set(before)
    assert main(["rerun", str(model / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    assert files(tmp_path / "again") == before
    manifest = json.loads(before["manifest.json"])
    assert manifest["seed"] == 3 and manifest["config"]["train"]["seed"] == 3
    assert set(manifest["outputs"]) == {"model.npz", "tokenizer.json", "history.json"}


def test_rerun_in_place(model):
    before = files(model)
    assert main(["rerun", str(model / "manifest.json")]) == 0
    assert files(model) == before


def test_adapt_evaluate_report(model, bundle, tmp_path):
    adapted = tmp_path / "adapted"
    assert main(["adapt", "--model-dir", str(model), "--source", str(bundle / "source.jsonl"),
                 "--unlabeled", f"x1={bundle / 'x1_unlabeled.jsonl'}", "--probe", f"x1={bundle / 'x1_test.jsonl'}",
                 "--probe-source", str(bundle / "source_test.jsonl"), "--set", "adapt.epochs=1",
                 "--seed", "3", "--out", str(adapted)]) == 0
    state = json.loads((adapted / "adaptation_x1.json").read_text())
    assert len(state["epochs"]) == 1 and state["initial_probe_accuracy"] is not None
    ev = tmp_path / "eval"
    assert main(["evaluate", "--model-dir", str(model), "--adapted-dir", str(adapted), "--variant",
                 "mtab_no_tl+adv", "--test", f"x1={bundle / 'x1_test.jsonl'}", "--out", str(ev)]) == 0
    rep = tmp_path / "report"
    assert main(["report", "--metrics", str(ev / "metrics.json"), "--out", str(rep)]) == 0
    assert (rep / "results.csv").read_text().startswith("variant,x1,Average\nmtab_no_tl+adv,")
    before = files(rep)
    assert main(["rerun", str(rep / "manifest.json")]) == 0
    assert files(rep) == before


def test_rerun_detects_changed_input(tmp_path):
    src = write_jsonl(tmp_path / "in.jsonl", [{"id": "1", "text": "hi", "lang": "en", "label": "favor"}])
    out = tmp_path / "o.jsonl"
    assert main(["prep", "--in", str(src), "--out", str(out)]) == 0
    write_jsonl(src, [{"id": "1", "text": "changed", "lang": "en", "label": "favor"}])
    assert main(["rerun", str(tmp_path / "o.jsonl.manifest.json")]) == 2
    assert main(["rerun", str(tmp_path / "none.json")]) == 3


def test_divergence_exit_code(bundle, tmp_path):
    out = tmp_path / "blown"
    code = main(["train", "--train", str(bundle / "source.jsonl"), "--out", str(out), *TINY_MODEL,
                 "--set", "train.learning_rate=1e30", "--set", "train.epochs=3"])
    assert code == 4 and not out.exists()
