import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import rec, write_jsonl
from golden_cleaning import GOLDEN
from xstance.corpus import (Dataset, LabelMap, Origin, StanceLabel, TweetRecord, clean_dataset, clean_text,
                            dataset_stats, filter_classes, harmonize_label, load_corpus, split, validate_lang,
                            write_corpus)
from xstance.errors import DuplicateId, ParseError, StratificationError, UnknownLabel


# ---------------------------------------------------------------- labels

def test_label_codes_round_trip():
    assert [int(l) for l in StanceLabel] == [0, 1, 2]
    for lab in StanceLabel:
        assert StanceLabel.from_text(lab.text) is lab
        assert StanceLabel(int(lab)) is lab


@pytest.mark.parametrize("raw, expected", [
    ("FAVOR", StanceLabel.POSITIVE),
    ("negative", StanceLabel.NEGATIVE),
    ("  None ", StanceLabel.NEUTRAL),
    ("Anti", StanceLabel.NEGATIVE),
])
def test_harmonize_default_map(raw, expected):
    assert harmonize_label(raw, LabelMap.default()) is expected


def test_harmonize_unmapped_policies():
    assert harmonize_label("out of context", LabelMap.default(unmapped="drop")) is None
    with pytest.raises(UnknownLabel, match="out of context"):
        harmonize_label("out of context", LabelMap.default())


def test_label_map_rejects_conflicting_keys():
    with pytest.raises(ValueError):
        LabelMap({"Pro": StanceLabel.POSITIVE, "pro": StanceLabel.NEGATIVE})


@given(st.sampled_from(["favor", "against", "none", "support", "neither", "pro"]))
def test_harmonize_case_insensitive(raw):
    m = LabelMap.default()
    assert harmonize_label(raw, m) is harmonize_label(raw.upper(), m)


def test_label_map_from_file(tmp_path):
    p = tmp_path / "map.json"
    p.write_text(json.dumps({"mapping": {"yes": "positive", "no": "negative"}, "unmapped": "drop"}))
    m = LabelMap.from_file(p)
    assert harmonize_label("YES", m) is StanceLabel.POSITIVE
    assert harmonize_label("maybe", m) is None


# ---------------------------------------------------------------- records

@pytest.mark.parametrize("code", ["en", "fr", "x0", "x9"])
def test_valid_lang(code):
    assert validate_lang(code) == code


@pytest.mark.parametrize("code", ["EN", "eng", "x10", "y1", ""])
def test_invalid_lang(code):
    with pytest.raises(ValueError):
        validate_lang(code)


def test_record_invariants():
    with pytest.raises(ValueError):
        TweetRecord(id="", raw_text="x", lang="en")
    with pytest.raises(ValueError):
        TweetRecord(id="t", raw_text="x", lang="fr", origin=Origin.TRANSLATED)
    with pytest.raises(ValueError):
        TweetRecord(id="o", raw_text="x", lang="en", source_id="a")


def test_dataset_invariants():
    a = rec("a", "hi")
    with pytest.raises(ValueError, match="duplicate"):
        Dataset("d", (a, rec("a", "again")))
    with pytest.raises(ValueError, match="unknown source"):
        Dataset("d", (rec("t", "salut", lang="fr", origin=Origin.TRANSLATED, source_id="zzz"),))
    with pytest.raises(ValueError, match="language of its source"):
        Dataset("d", (a, rec("t", "hi", lang="en", origin=Origin.TRANSLATED, source_id="a")))
    parent = Dataset("p", (a,))
    child = Dataset("c", (rec("t", "salut", lang="fr", origin=Origin.TRANSLATED, source_id="a"),), parent=parent)
    assert child.find("a") is a


def test_subsets_keep_provenance():
    a = rec("a", "hi")
    t = rec("t", "salut", lang="fr", origin=Origin.TRANSLATED, source_id="a")
    d = Dataset("d", (a, t))
    fr = d.by_lang("fr")
    assert fr.ids() == ["t"] and fr.find("a") is a


# ---------------------------------------------------------------- io

def test_load_empty(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert len(load_corpus(p)) == 0


def test_load_preserves_order(tmp_path):
    p = write_jsonl(tmp_path / "c.jsonl", [
        {"id": "3", "text": "c", "lang": "en", "label": "favor"},
        {"id": "1", "text": "a", "lang": "en", "label": "against"},
        {"id": "2", "text": "b", "lang": "en", "label": None},
    ])
    d = load_corpus(p)
    assert d.ids() == ["3", "1", "2"]
    assert d.labels() == [StanceLabel.POSITIVE, StanceLabel.NEGATIVE, None]
    assert all(r.clean_text is None for r in d.records)


def test_load_duplicate_id_line(tmp_path):
    p = write_jsonl(tmp_path / "c.jsonl", [
        {"id": "1", "text": "a", "lang": "en"},
        {"id": "1", "text": "b", "lang": "en"},
    ])
    with pytest.raises(DuplicateId) as exc:
        load_corpus(p)
    assert exc.value.line == 2


@pytest.mark.parametrize("line, msg", [
    ("{not json", "invalid JSON"),
    ('{"id": "1", "lang": "en"}', "text"),
    ('{"id": "1", "text": "a", "lang": "english"}', "language"),
    ('[1, 2]', "object"),
    ('{"id": "1", "text": "a", "lang": "en", "label": 3}', "label"),
])
def test_load_parse_errors(tmp_path, line, msg):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": "0", "text": "ok", "lang": "en"}\n' + line + "\n")
    with pytest.raises(ParseError, match=msg) as exc:
        load_corpus(p)
    assert exc.value.line == 2


def test_unmapped_label_keeps_raw_string(tmp_path):
    p = write_jsonl(tmp_path / "c.jsonl", [{"id": "1", "text": "a", "lang": "en", "label": "Out of Context"}])
    r = load_corpus(p).records[0]
    assert r.label is None and r.raw_label == "Out of Context"


def test_write_load_round_trip(tmp_path, tiny_dataset):
    p = tmp_path / "out.jsonl"
    write_corpus(tiny_dataset, p)
    back = load_corpus(p)
    assert [(r.id, r.text, r.lang, r.label) for r in back] == [(r.id, r.text, r.lang, r.label) for r in tiny_dataset]


# ---------------------------------------------------------------- filtering and stats

def test_filter_fourth_class(tmp_path):
    p = write_jsonl(tmp_path / "c.jsonl", [
        {"id": str(i), "text": "t", "lang": "fr", "label": lab}
        for i, lab in enumerate(["favor", "Out of Context", "against", "out of context", "none"])
    ])
    d = load_corpus(p)
    kept = filter_classes(d)
    assert kept.ids() == ["0", "2", "4"]
    assert filter_classes(kept).ids() == kept.ids()
    assert len(filter_classes(d, [])) == 0
    assert filter_classes(d, ["out of context"]).ids() == ["1", "3"]


def _counts_dataset(lang, pos, neg, neu, unlabeled=0):
    labels = [StanceLabel.POSITIVE] * pos + [StanceLabel.NEGATIVE] * neg + [StanceLabel.NEUTRAL] * neu
    labels += [None] * unlabeled
    return Dataset(lang, tuple(rec(f"{lang}{i}", "t", lab, lang=lang) for i, lab in enumerate(labels)))


def test_stats_training_totals():
    t = dataset_stats(_counts_dataset("en", 2276, 1141, 1076))
    assert t.rows["en"] == {"positive": 2276, "negative": 1141, "neutral": 1076, "unlabeled": 0, "total": 4493}


def test_stats_french_row_and_unlabeled():
    d = Dataset.concat("mix", [_counts_dataset("fr", 419, 135, 279), _counts_dataset("de", 1, 0, 0, unlabeled=2)])
    t = dataset_stats(d)
    assert t.rows["fr"]["total"] == 833
    assert t.rows["de"]["unlabeled"] == 2
    assert t.total["total"] == len(d)
    for row in t.rows.values():
        assert row["total"] == sum(v for k, v in row.items() if k != "total")
    for col in ("positive", "negative", "neutral", "unlabeled"):
        assert t.total[col] == sum(r[col] for lang, r in t.rows.items() if lang != "total")
    assert "fr" in t.to_csv() and t.to_json()["rows"]["fr"]["positive"] == 419


def test_stats_empty():
    t = dataset_stats(Dataset("empty"))
    assert t.total == {"positive": 0, "negative": 0, "neutral": 0, "unlabeled": 0, "total": 0}


# ---------------------------------------------------------------- split

def test_split_zero_fraction():
    d = _counts_dataset("en", 3, 3, 3)
    train, dev = split(d, 0.0, seed=1)
    assert train.ids() == d.ids() and len(dev) == 0


def test_split_stratified_counts():
    d = _counts_dataset("en", 100, 100, 100)
    train, dev = split(d, 0.2, seed=3)
    for lab in StanceLabel:
        assert sum(r.label is lab for r in dev) == 20
        assert sum(r.label is lab for r in train) == 80
    assert split(d, 0.2, seed=3) == (train, dev)


def test_split_small_class():
    with pytest.raises(StratificationError):
        split(_counts_dataset("en", 5, 1, 5), 0.2, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.integers(0, 30),
       st.floats(0.05, 0.9), st.integers(0, 2**31 - 1))
def test_split_is_partition(pos, neg, neu, frac, seed):
    d = _counts_dataset("en", pos, neg, neu if neu != 1 else 2)
    train, dev = split(d, frac, seed)
    assert len(train) + len(dev) == len(d)
    assert not set(train.ids()) & set(dev.ids())
    assert sorted(train.ids() + dev.ids()) == sorted(d.ids())


# ---------------------------------------------------------------- cleaning

def test_golden_suite_size():
    assert len(GOLDEN) >= 30


@pytest.mark.parametrize("raw, expected", GOLDEN)
def test_clean_golden(raw, expected):
    assert clean_text(raw) == expected


@pytest.mark.parametrize("raw, expected", GOLDEN)
def test_clean_idempotent_on_golden(raw, expected):
    assert clean_text(clean_text(raw)) == clean_text(raw)


_tweet_alphabet = st.sampled_from(list("abcXYZ019 .,:;-+/#@()!?\t") + ["RT ", "http://", "www.", ":)", ":-(",
                                                                       ":D", "😀", "🇫🇷", "❤️", "é"])


@settings(max_examples=300)
@given(st.lists(_tweet_alphabet, max_size=40).map("".join))
def test_clean_properties(raw):
    out = clean_text(raw)
    assert clean_text(out) == out
    assert len(out) <= len(raw)
    # only deletions, plus whitespace runs collapsing to a single space
    assert set(out) <= set(raw) | {" "}
    assert out == out.strip() and "  " not in out


def test_clean_dataset_drops_empty_and_keeps_translations():
    d = Dataset("d", (
        rec("a", "Great :) https://x.y"),
        rec("b", "@only_mention"),
        rec("t", "  raw  :)  ", lang="fr", origin=Origin.TRANSLATED, source_id="a"),
    ))
    out = clean_dataset(d)
    assert out.ids() == ["a", "t"]
    assert out.records[0].clean_text == "Great"
    assert out.records[1].clean_text == "  raw  :)  "
    assert len(clean_dataset(d, drop_empty=False)) == 3
