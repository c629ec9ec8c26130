import json
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from conftest import rec
from xstance.augment import (PseudoLanguageSpec, PseudoTranslator, TranslationCache, augment_with_translations,
                             make_translator, pseudo_translate, register_translator, translate_records, TRANSLATORS)
from xstance.corpus import Dataset, Origin, StanceLabel, clean_dataset
from xstance.errors import AugmentationError, ConfigError


class CountingTranslator:
    def __init__(self, fail_on_batch=None):
        self.calls = 0
        self.seen: list[str] = []
        self.fail_on_batch = fail_on_batch

    def translate(self, texts, source, target):
        if self.fail_on_batch is not None and self.calls == self.fail_on_batch:
            self.calls += 1
            raise RuntimeError("service down")
        self.calls += 1
        self.seen.extend(texts)
        return [f"<{target}> {t}" for t in texts]


def _english(n=3):
    labels = [StanceLabel.POSITIVE, StanceLabel.NEGATIVE, StanceLabel.NEUTRAL]
    return Dataset("en", tuple(rec(f"e{i}", f"tweet {chr(97 + i)}", labels[i % 3]) for i in range(n)))


# ---------------------------------------------------------------- pseudo-translation

def test_pseudo_identity():
    spec = PseudoLanguageSpec({"a": "a", "b": "b"})
    assert pseudo_translate("a b x", spec) == "a b x"


def test_pseudo_map_then_reverse():
    spec = PseudoLanguageSpec({"cat": "gato", "runs": "corre"}, "reverse")
    assert pseudo_translate("cat runs", spec) == "corre gato"


def test_pseudo_rotate_one():
    assert pseudo_translate("a b c", PseudoLanguageSpec({}, "rotate", 1)) == "c a b"


def test_pseudo_rejects_non_injective():
    with pytest.raises(ConfigError):
        PseudoLanguageSpec({"a": "z", "b": "z"})
    with pytest.raises(ConfigError):
        PseudoLanguageSpec({}, "shuffle")


_tokens = st.sampled_from(["a", "b", "c", "d", "e"])


@given(st.lists(_tokens, max_size=12), st.sampled_from(["identity", "reverse", "rotate"]), st.integers(-7, 7))
def test_pseudo_round_trip(tokens, order, k):
    spec = PseudoLanguageSpec({t: t.upper() + "_" for t in "abcde"}, order, k)
    text = " ".join(tokens)
    assert pseudo_translate(pseudo_translate(text, spec), spec.inverse()) == text


def test_spec_json_round_trip():
    spec = PseudoLanguageSpec({"a": "b"}, "rotate", 3)
    assert PseudoLanguageSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


# ---------------------------------------------------------------- translate_records

def test_translate_empty():
    assert translate_records([], CountingTranslator(), "fr", TranslationCache()) == []


def test_translate_dedups_identical_text():
    d = clean_dataset(Dataset("d", (rec("a", "same text"), rec("b", "same text"), rec("c", "other"))))
    tr = CountingTranslator()
    out = translate_records(d.records, tr, "fr", TranslationCache())
    assert tr.seen == ["same text", "other"]
    assert [r.text for r in out] == ["<fr> same text", "<fr> same text", "<fr> other"]
    assert [r.source_id for r in out] == ["a", "b", "c"]


def test_warm_cache_means_no_calls(tmp_path):
    d = clean_dataset(_english())
    path = tmp_path / "cache.jsonl"
    first = translate_records(d.records, CountingTranslator(), "de", TranslationCache(path))
    tr = CountingTranslator()
    second = translate_records(d.records, tr, "de", TranslationCache(path))
    assert tr.calls == 0
    assert first == second
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == 3 and set(lines[0]) == {"src", "tgt", "hash", "text_out"}


def test_failure_names_batch_and_leaves_cache_untouched(tmp_path):
    d = clean_dataset(Dataset("d", tuple(rec(f"r{i}", f"text {chr(97 + i)}") for i in range(5))))
    cache = TranslationCache(tmp_path / "c.jsonl")
    with pytest.raises(AugmentationError, match="batch 1"):
        translate_records(d.records, CountingTranslator(fail_on_batch=1), "fr", cache, batch_size=2)
    assert len(cache) == 0 and not (tmp_path / "c.jsonl").exists()


def test_empty_translation_is_an_error():
    class Blank:
        def translate(self, texts, source, target):
            return ["" for _ in texts]
    d = clean_dataset(_english(1))
    with pytest.raises(AugmentationError, match="empty"):
        translate_records(d.records, Blank(), "fr", TranslationCache())


def test_wrong_length_is_an_error():
    class Short:
        def translate(self, texts, source, target):
            return texts[:-1]
    with pytest.raises(AugmentationError):
        translate_records(clean_dataset(_english(2)).records, Short(), "fr", TranslationCache())


# ---------------------------------------------------------------- augment_with_translations

def test_three_records_three_targets():
    out = augment_with_translations(_english(), ["fr", "de", "it"], CountingTranslator())
    assert len(out) == 12
    for r in out.records:
        if r.origin is Origin.TRANSLATED:
            assert r.label is out.find(r.source_id).label
            assert r.lang != "en"
    assert [r.lang for r in out.records[:3]] == ["en"] * 3


def test_training_size_scales_by_four():
    labels = [StanceLabel.POSITIVE] * 2276 + [StanceLabel.NEGATIVE] * 1141 + [StanceLabel.NEUTRAL] * 1076
    d = Dataset("train", tuple(rec(f"t{i}", f"w{i}", lab) for i, lab in enumerate(labels)))
    spec = {lang: PseudoLanguageSpec({}, "reverse") for lang in ("fr", "de", "it")}
    out = augment_with_translations(d, ["fr", "de", "it"], PseudoTranslator(spec))
    assert len(out) == 17972
    assert Counter(out.labels()) == {StanceLabel.POSITIVE: 4 * 2276, StanceLabel.NEGATIVE: 4 * 1141,
                                     StanceLabel.NEUTRAL: 4 * 1076}


@pytest.mark.parametrize("targets", [[], ["fr", "fr"], ["en"]])
def test_bad_targets(targets):
    with pytest.raises(ValueError):
        augment_with_translations(_english(), targets, CountingTranslator())


def test_requires_labeled_originals():
    d = Dataset("d", (rec("a", "x", None),))
    with pytest.raises(ValueError):
        augment_with_translations(d, ["fr"], CountingTranslator())


def test_augment_deterministic():
    cache = TranslationCache()
    a = augment_with_translations(_english(), ["fr"], CountingTranslator(), cache)
    b = augment_with_translations(_english(), ["fr"], CountingTranslator(), cache)
    assert a == b


def test_translator_sees_cleaned_text():
    d = Dataset("d", (rec("a", "RT @x: hello :) https://t.co/1"),))
    tr = CountingTranslator()
    augment_with_translations(d, ["fr"], tr)
    assert tr.seen == ["hello"]


# ---------------------------------------------------------------- registry

def test_make_translator_from_spec_file(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps({"languages": {"x1": PseudoLanguageSpec({"a": "q"}, "reverse").to_json()}}))
    tr = make_translator(f"pseudo:{p}")
    assert tr.translate(["a b"], "x0", "x1") == ["b q"]


def test_registered_adapter():
    @register_translator("echo-test")
    def _make():
        return CountingTranslator()
    try:
        assert isinstance(make_translator("echo-test"), CountingTranslator)
    finally:
        TRANSLATORS.pop("echo-test")
    with pytest.raises(ConfigError):
        make_translator("no-such-adapter")
