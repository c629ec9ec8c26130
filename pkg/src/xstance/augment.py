"""Translation augmentation with a content-addressed cache and a pseudo-translator."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .corpus import Dataset, Origin, TweetRecord, clean_text, validate_lang
from .errors import AugmentationError, ConfigError

log = logging.getLogger(__name__)


class Translator(Protocol):
    def translate(self, texts: list[str], source: str, target: str) -> list[str]: ...


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class TranslationCache:
    """Append-only (source, target, text hash) -> translation store.

    With a ``path`` the cache is loaded from and appended to a JSONL sidecar.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str, str], str] = {}
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        e = json.loads(line)
                        self._entries[(e["src"], e["tgt"], e["hash"])] = e["text_out"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, src: str, tgt: str, text: str) -> str | None:
        return self._entries.get((src, tgt, text_hash(text)))

    def put_many(self, src: str, tgt: str, pairs: Sequence[tuple[str, str]]) -> None:
        new = []
        for text_in, text_out in pairs:
            key = (src, tgt, text_hash(text_in))
            if key in self._entries:
                continue
            self._entries[key] = text_out
            new.append({"src": src, "tgt": tgt, "hash": key[2], "text_out": text_out})
        if new and self.path is not None:
            with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                for e in new:
                    fh.write(json.dumps(e, ensure_ascii=False, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# pseudo-languages

@dataclass(frozen=True)
class PseudoLanguageSpec:
    mapping: Mapping[str, str]
    order: str = "identity"
    k: int = 0

    def __post_init__(self):
        if self.order not in ("identity", "reverse", "rotate"):
            raise ConfigError(f"unknown order rule {self.order!r}")
        if len(set(self.mapping.values())) != len(self.mapping):
            raise ConfigError("pseudo-language token map is not injective")

    def inverse(self) -> "PseudoLanguageSpec":
        inv = {v: k for k, v in self.mapping.items()}
        return PseudoLanguageSpec(inv, self.order, -self.k if self.order == "rotate" else self.k)

    def to_json(self) -> dict:
        return {"order": self.order, "k": self.k, "mapping": dict(self.mapping)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "PseudoLanguageSpec":
        return cls(dict(obj["mapping"]), obj.get("order", "identity"), int(obj.get("k", 0)))


def pseudo_translate(text: str, spec: PseudoLanguageSpec) -> str:
    tokens = [spec.mapping.get(tok, tok) for tok in text.split()]
    if spec.order == "reverse":
        tokens.reverse()
    elif spec.order == "rotate" and tokens:
        k = spec.k % len(tokens)
        tokens = tokens[-k:] + tokens[:-k] if k else tokens
    return " ".join(tokens)


class PseudoTranslator:
    """Deterministic translator backed by one spec per target language."""

    def __init__(self, specs: Mapping[str, PseudoLanguageSpec]):
        self.specs = dict(specs)
        self.calls = 0

    def translate(self, texts: list[str], source: str, target: str) -> list[str]:
        self.calls += 1
        if target not in self.specs:
            raise KeyError(f"no pseudo-language spec for target {target!r}")
        spec = self.specs[target]
        return [pseudo_translate(t, spec) for t in texts]

    @classmethod
    def from_file(cls, path: str | Path) -> "PseudoTranslator":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({lang: PseudoLanguageSpec.from_json(s) for lang, s in obj["languages"].items()})


TRANSLATORS: dict[str, Callable[[], Translator]] = {}


def register_translator(name: str):
    def deco(factory):
        TRANSLATORS[name] = factory
        return factory
    return deco


def make_translator(key: str) -> Translator:
    """Resolve ``pseudo:<spec.json>`` or a registered adapter name."""
    if key.startswith("pseudo:"):
        return PseudoTranslator.from_file(key[len("pseudo:"):])
    if key in TRANSLATORS:
        return TRANSLATORS[key]()
    raise ConfigError(f"unknown translator {key!r}; registered: {sorted(TRANSLATORS)}")


# --------------------------------------------------------------------------
# augmentation

def translate_records(records: Sequence[TweetRecord], translator: Translator, target: str,
                      cache: TranslationCache, batch_size: int = 64) -> list[TweetRecord]:
    """One translated copy per record; the cache is consulted first and
    only updated once every batch succeeded."""
    validate_lang(target)
    if not records:
        return []
    outputs: dict[tuple[str, str], str] = {}
    missing: dict[str, dict[str, None]] = {}
    for rec in records:
        if rec.clean_text is None:
            raise ValueError(f"record {rec.id!r} must be cleaned before translation")
        hit = cache.get(rec.lang, target, rec.clean_text)
        if hit is not None:
            outputs[(rec.lang, rec.clean_text)] = hit
        else:
            missing.setdefault(rec.lang, {})[rec.clean_text] = None

    pending: dict[str, list[tuple[str, str]]] = {}
    for src, unique in missing.items():
        texts = list(unique)
        for b, start in enumerate(range(0, len(texts), batch_size)):
            batch = texts[start:start + batch_size]
            try:
                out = translator.translate(list(batch), src, target)
            except Exception as exc:
                raise AugmentationError(f"translator failed on batch {b} ({src}->{target}): {exc}") from exc
            if len(out) != len(batch):
                raise AugmentationError(f"batch {b} ({src}->{target}): got {len(out)} outputs for {len(batch)} inputs")
            for text_in, text_out in zip(batch, out):
                if text_in and not text_out:
                    raise AugmentationError(f"batch {b} ({src}->{target}): empty translation")
                outputs[(src, text_in)] = text_out
            pending.setdefault(src, []).extend(zip(batch, out))
    for src, pairs in pending.items():
        cache.put_many(src, target, pairs)

    result = []
    for rec in records:
        text_out = outputs[(rec.lang, rec.clean_text)]
        result.append(TweetRecord(
            id=f"{rec.id}__{target}", raw_text=text_out, clean_text=text_out, lang=target,
            label=rec.label, origin=Origin.TRANSLATED, source_id=rec.id, raw_label=rec.raw_label,
        ))
    return result


def augment_with_translations(d: Dataset, targets: Sequence[str], translator: Translator,
                              cache: TranslationCache | None = None) -> Dataset:
    """Originals followed by one translated block per target language."""
    targets = list(targets)
    if not targets:
        raise ValueError("augmentation needs at least one target language")
    if len(set(targets)) != len(targets):
        raise ValueError("duplicate target languages")
    cache = cache if cache is not None else TranslationCache()
    for rec in d.records:
        if rec.origin is not Origin.ORIGINAL or rec.label is None:
            raise ValueError(f"record {rec.id!r} must be a labeled original")
        if rec.lang in targets:
            raise ValueError(f"target languages must exclude the source language {rec.lang!r}")
    records = [r if r.clean_text is not None else replace(r, clean_text=clean_text(r.raw_text)) for r in d.records]
    out = list(records)
    for tgt in targets:
        out.extend(translate_records(records, translator, tgt, cache))
    return Dataset(f"{d.name}+mt", tuple(out), f"{d.name} augmented with {','.join(targets)}")
