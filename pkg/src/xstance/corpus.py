"""Tweet records, label harmonization, text cleaning and corpus statistics."""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DuplicateId, ParseError, StratificationError, UnknownLabel

log = logging.getLogger(__name__)


class StanceLabel(enum.IntEnum):
    POSITIVE = 0
    NEGATIVE = 1
    NEUTRAL = 2

    @property
    def text(self) -> str:
        return self.name.lower()

    @classmethod
    def from_text(cls, value: str) -> "StanceLabel":
        return cls[value.strip().upper()]


class Origin(str, enum.Enum):
    ORIGINAL = "original"
    TRANSLATED = "translated"
    SYNTHETIC = "synthetic"


_LANG_RE = re.compile(r"^(?:[a-z]{2}|x[0-9])$")


def validate_lang(code: str) -> str:
    if not isinstance(code, str) or not _LANG_RE.match(code):
        raise ValueError(f"invalid language tag {code!r}")
    return code


@dataclass(frozen=True)
class TweetRecord:
    id: str
    raw_text: str
    lang: str
    label: StanceLabel | None = None
    origin: Origin = Origin.ORIGINAL
    source_id: str | None = None
    clean_text: str | None = None
    raw_label: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        validate_lang(self.lang)
        if self.origin is Origin.TRANSLATED and not self.source_id:
            raise ValueError(f"translated record {self.id!r} needs a source_id")
        if self.origin is Origin.ORIGINAL and self.source_id is not None:
            raise ValueError(f"original record {self.id!r} cannot carry a source_id")

    @property
    def text(self) -> str:
        """Text fed to models: the cleaned text when available."""
        return self.raw_text if self.clean_text is None else self.clean_text

    def to_json(self) -> dict:
        obj = {
            "id": self.id,
            "text": self.text,
            "lang": self.lang,
            "label": self.label.text if self.label is not None else self.raw_label,
            "origin": self.origin.value,
        }
        if self.source_id is not None:
            obj["source_id"] = self.source_id
        return obj


@dataclass(frozen=True)
class Dataset:
    name: str
    records: tuple[TweetRecord, ...] = ()
    provenance: str = ""
    parent: "Dataset | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = set()
        for rec in self.records:
            if rec.id in ids:
                raise ValueError(f"duplicate record id {rec.id!r} in dataset {self.name!r}")
            ids.add(rec.id)
        local = {rec.id: rec for rec in self.records}
        for rec in self.records:
            if rec.source_id is None:
                continue
            src = local.get(rec.source_id) or (self.parent.find(rec.source_id) if self.parent else None)
            if src is None:
                raise ValueError(f"record {rec.id!r} references unknown source {rec.source_id!r}")
            if rec.origin is Origin.TRANSLATED and src.lang == rec.lang:
                raise ValueError(f"translation {rec.id!r} has the language of its source ({rec.lang})")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def find(self, record_id: str) -> TweetRecord | None:
        """Look a record up here, then along the parent chain."""
        d: Dataset | None = self
        while d is not None:
            hit = d._index.get(record_id)
            if hit is not None:
                return hit
            d = d.parent
        return None

    @cached_property
    def _index(self) -> dict[str, TweetRecord]:
        return {r.id: r for r in self.records}

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def labels(self) -> list[StanceLabel | None]:
        return [r.label for r in self.records]

    def texts(self) -> list[str]:
        return [r.text for r in self.records]

    def langs(self) -> list[str]:
        return sorted({r.lang for r in self.records})

    def with_records(self, records: Iterable[TweetRecord], name: str | None = None,
                     provenance: str | None = None) -> "Dataset":
        """Derived dataset; its parent is this one, so subsets keep their provenance."""
        return Dataset(name or self.name, tuple(records),
                       self.provenance if provenance is None else provenance, self)

    def by_lang(self, lang: str) -> "Dataset":
        return self.with_records([r for r in self.records if r.lang == lang], f"{self.name}[{lang}]")

    @classmethod
    def concat(cls, name: str, parts: Iterable["Dataset"]) -> "Dataset":
        records = [r for part in parts for r in part.records]
        return cls(name, tuple(records), "concatenation")


# --------------------------------------------------------------------------
# labels

DEFAULT_LABEL_KEYS = {
    StanceLabel.POSITIVE: ("favor", "positive", "support", "pro"),
    StanceLabel.NEGATIVE: ("against", "negative", "anti"),
    StanceLabel.NEUTRAL: ("none", "neutral", "neither"),
}


@dataclass(frozen=True)
class LabelMap:
    mapping: Mapping[str, StanceLabel]
    unmapped: str = "error"

    def __post_init__(self):
        if self.unmapped not in ("error", "drop"):
            raise ValueError(f"unmapped policy must be 'error' or 'drop', got {self.unmapped!r}")
        folded: dict[str, StanceLabel] = {}
        for key, label in self.mapping.items():
            k = key.strip().casefold()
            label = StanceLabel(label)
            if k in folded and folded[k] is not label:
                raise ValueError(f"label key {key!r} maps to two labels")
            folded[k] = label
        object.__setattr__(self, "mapping", folded)

    @classmethod
    def default(cls, unmapped: str = "error") -> "LabelMap":
        return cls({k: lab for lab, keys in DEFAULT_LABEL_KEYS.items() for k in keys}, unmapped)

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelMap":
        """Read ``{"mapping": {raw: label}, "unmapped": "drop"}`` JSON."""
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        mapping = {k: StanceLabel.from_text(v) for k, v in obj["mapping"].items()}
        return cls(mapping, obj.get("unmapped", "error"))


def harmonize_label(raw: str, label_map: LabelMap) -> StanceLabel | None:
    """Map a raw label string; ``None`` means the record is dropped."""
    label = label_map.mapping.get(raw.strip().casefold())
    if label is not None:
        return label
    if label_map.unmapped == "drop":
        return None
    raise UnknownLabel(raw)


# --------------------------------------------------------------------------
# cleaning

_RT_PREFIX = re.compile(r"^\s*RT\s+@\w+:?")
_URL = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION = re.compile(r"(?<!\w)@\w+")
_EMOJI = re.compile(
    "["
    "\U0001F000-\U0001FAFF"  # mahjong..symbols & pictographs ext-A, flags, skin tones
    "\U00002600-\U000027BF"  # misc symbols, dingbats
    "\U00002B00-\U00002BFF"  # arrows/stars used as emoji
    "\U0000231A\U0000231B\U00002328\U000023CF\U000023E9-\U000023FA"
    "\U00003030\U0000303D\U00003297\U00003299"
    "\U0000200D\U0000FE0E\U0000FE0F\U000020E3"
    "\U000E0020-\U000E007F"
    "]"
)
_SMILEY = re.compile(r"(?::-?\)|:-?\(|:D|;\)|:P)(?!\w)")
_HASHTAG = re.compile(r"#(?=\w)")
_NUMBER = re.compile(r"(?<!\S)[+\-]?[\d.,:/+\-]*\d[\d.,:/+\-]*(?!\S)")
_SPACE = re.compile(r"\s+")


def _clean_once(text: str) -> str:
    text = _RT_PREFIX.sub("", text, count=1)
    text = _URL.sub("", text)
    text = _MENTION.sub("", text)
    text = _EMOJI.sub("", text)
    text = _SMILEY.sub("", text)
    text = _HASHTAG.sub("", text)
    text = _NUMBER.sub("", text)
    return _SPACE.sub(" ", text).strip()


def clean_text(raw: str) -> str:
    """Strip retweet prefix, URLs, mentions, emoji, smileys and bare numbers.

    Hashtags keep their keyword. Removals can expose new matches (``::))``),
    so passes repeat until the text stops changing; every pass shrinks the
    text, which bounds the loop and makes the function idempotent.
    """
    prev, text = None, raw
    while text != prev:
        prev, text = text, _clean_once(text)
    return text


def clean_dataset(d: Dataset, drop_empty: bool = True) -> Dataset:
    """Fill ``clean_text``; translated copies are taken verbatim."""
    out = []
    dropped = 0
    for rec in d.records:
        if rec.clean_text is None:
            cleaned = rec.raw_text if rec.origin is Origin.TRANSLATED else clean_text(rec.raw_text)
            rec = replace(rec, clean_text=cleaned)
        if drop_empty and not rec.clean_text:
            dropped += 1
            continue
        out.append(rec)
    if dropped:
        log.info("dropped %d records with empty text after cleaning from %s", dropped, d.name)
    return d.with_records(out)


# --------------------------------------------------------------------------
# IO

def load_corpus(path: str | Path, fmt: str = "jsonl", label_map: LabelMap | None = None,
                name: str | None = None, parent: Dataset | None = None) -> Dataset:
    """Read a JSONL corpus. Labels outside ``label_map`` keep only their raw string."""
    if fmt != "jsonl":
        raise ValueError(f"unsupported corpus format {fmt!r}")
    path = Path(path)
    label_map = label_map or LabelMap.default(unmapped="drop")
    records: list[TweetRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None
            rec = _record_from_json(obj, lineno, label_map)
            if rec.id in seen:
                raise DuplicateId(lineno, rec.id)
            seen.add(rec.id)
            records.append(rec)
    try:
        return Dataset(name or path.stem, tuple(records), f"loaded from {path.name}", parent)
    except ValueError as exc:
        raise ParseError(0, str(exc)) from None


def _record_from_json(obj, lineno, label_map) -> TweetRecord:
    if not isinstance(obj, dict):
        raise ParseError(lineno, "record is not a JSON object")
    for key in ("id", "text", "lang"):
        if not isinstance(obj.get(key), str):
            raise ParseError(lineno, f"missing or non-string field {key!r}")
    raw_label = obj.get("label")
    if raw_label is not None and not isinstance(raw_label, str):
        raise ParseError(lineno, "label must be a string or null")
    try:
        origin = Origin(obj.get("origin", "original"))
        label = harmonize_label(raw_label, label_map) if raw_label is not None else None
        return TweetRecord(
            id=obj["id"], raw_text=obj["text"], lang=obj["lang"], label=label,
            origin=origin, source_id=obj.get("source_id"), raw_label=raw_label,
        )
    except UnknownLabel as exc:
        raise UnknownLabel(exc.raw, lineno) from None
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from None


def write_corpus(d: Dataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in d.records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# filtering, stats, split

def filter_classes(d: Dataset, allowed: Iterable[StanceLabel | str] = tuple(StanceLabel)) -> Dataset:
    labels = {a for a in allowed if isinstance(a, StanceLabel)}
    raws = {a.strip().casefold() for a in allowed if isinstance(a, str) and not isinstance(a, StanceLabel)}
    keep = []
    for rec in d.records:
        if rec.label is not None and rec.label in labels:
            keep.append(rec)
        elif rec.raw_label is not None and rec.raw_label.strip().casefold() in raws:
            keep.append(rec)
    return d.with_records(keep)


STATS_COLUMNS = ("positive", "negative", "neutral", "unlabeled", "total")


@dataclass(frozen=True)
class StatsTable:
    rows: dict[str, dict[str, int]]

    @property
    def total(self) -> dict[str, int]:
        return self.rows["total"]

    def to_json(self) -> dict:
        return {"columns": list(STATS_COLUMNS), "rows": self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lang", *STATS_COLUMNS])
        for lang, cells in self.rows.items():
            w.writerow([lang, *(cells[c] for c in STATS_COLUMNS)])
        return buf.getvalue()

    def format(self) -> str:
        lines = [f"{'lang':<8}" + "".join(f"{c:>11}" for c in STATS_COLUMNS)]
        for lang, cells in self.rows.items():
            lines.append(f"{lang:<8}" + "".join(f"{cells[c]:>11}" for c in STATS_COLUMNS))
        return "\n".join(lines)


def dataset_stats(d: Dataset) -> StatsTable:
    counts: dict[str, Counter] = {}
    for rec in d.records:
        key = rec.label.text if rec.label is not None else "unlabeled"
        counts.setdefault(rec.lang, Counter())[key] += 1
    rows = {}
    total = Counter()
    for lang in sorted(counts):
        c = counts[lang]
        rows[lang] = {col: c[col] for col in STATS_COLUMNS[:-1]}
        rows[lang]["total"] = sum(c.values())
        total.update(c)
    rows["total"] = {col: total[col] for col in STATS_COLUMNS[:-1]}
    rows["total"]["total"] = sum(total.values())
    return StatsTable(rows)


def split(d: Dataset, dev_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/dev split; both halves keep the input order."""
    if not 0 <= dev_fraction < 1:
        raise ValueError("dev_fraction must lie in [0, 1)")
    if any(r.label is None for r in d.records):
        raise ValueError("split requires a fully labeled dataset")
    if dev_fraction == 0:
        return d.with_records(d.records, f"{d.name}-train"), d.with_records((), f"{d.name}-dev")
    rng = np.random.default_rng(seed)
    dev_idx: set[int] = set()
    for label in StanceLabel:
        idx = [i for i, r in enumerate(d.records) if r.label is label]
        if not idx:
            continue
        if len(idx) < 2:
            raise StratificationError(f"class {label.text} has {len(idx)} record(s); cannot stratify")
        n_dev = int(round(dev_fraction * len(idx)))
        n_dev = min(max(n_dev, 1), len(idx) - 1)
        dev_idx.update(rng.permutation(idx)[:n_dev].tolist())
    train = [r for i, r in enumerate(d.records) if i not in dev_idx]
    dev = [r for i, r in enumerate(d.records) if i in dev_idx]
    return d.with_records(train, f"{d.name}-train"), d.with_records(dev, f"{d.name}-dev")
