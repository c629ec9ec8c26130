"""Seeded pseudo-language stance corpora with an analytic labeling oracle.

Source sentences (language ``x0``) are filler tokens with injected cue
tokens; the label follows from cue counts alone. Each target language is a
token bijection onto a disjoint surface vocabulary plus a word-order rule,
so target texts are exact pseudo-translations of freshly sampled source
sentences.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augment import PseudoLanguageSpec, pseudo_translate
from .corpus import Dataset, Origin, StanceLabel, TweetRecord, load_corpus, write_corpus
from .errors import ConfigError

SOURCE_LANG = "x0"

# per-language label counts of the real test sets, used for --imbalance table1b
REAL_TEST_COUNTS = {
    "fr": (419, 135, 279),
    "de": (547, 108, 169),
    "it": (314, 151, 458),
}
_REAL_TEST_ORDER = ("fr", "de", "it")


@dataclass
class SynthConfig:
    vocab_size: int = 200
    cues_per_class: int = 6
    min_len: int = 8
    max_len: int = 20
    train_size: int = 2000
    unlabeled_size: int = 1000
    test_size: int = 500
    source_test_size: int = 500
    target_langs: tuple[str, ...] = ("x1", "x2", "x3")
    orders: dict[str, str] = field(default_factory=lambda: {"x1": "reverse", "x2": "rotate-3", "x3": "identity"})
    imbalance: str = "uniform"
    seed: int = 7
    filler_tokens: tuple[str, ...] | None = None
    cue_tokens: dict[str, tuple[str, ...]] | None = None

    def validate(self) -> None:
        for name in ("vocab_size", "cues_per_class", "min_len", "max_len", "train_size",
                     "unlabeled_size", "test_size", "source_test_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.min_len > self.max_len:
            raise ConfigError("min_len exceeds max_len")
        if self.max_len < 4:
            raise ConfigError("max_len must leave room for cue tokens")
        if self.imbalance not in ("uniform", "table1b"):
            raise ConfigError(f"unknown imbalance mode {self.imbalance!r}")
        if SOURCE_LANG in self.target_langs or len(set(self.target_langs)) != len(self.target_langs):
            raise ConfigError("target languages must be distinct and differ from x0")
        for lang in self.target_langs:
            _parse_order(self.orders.get(lang, "identity"))

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SynthConfig":
        obj = dict(obj)
        if "target_langs" in obj:
            obj["target_langs"] = tuple(obj["target_langs"])
        if obj.get("filler_tokens") is not None:
            obj["filler_tokens"] = tuple(obj["filler_tokens"])
        if obj.get("cue_tokens") is not None:
            obj["cue_tokens"] = {k: tuple(v) for k, v in obj["cue_tokens"].items()}
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_langs"] = list(self.target_langs)
        return d


def _parse_order(rule: str) -> tuple[str, int]:
    if rule in ("identity", "reverse"):
        return rule, 0
    if rule.startswith("rotate-"):
        try:
            return "rotate", int(rule[len("rotate-"):])
        except ValueError:
            pass
    raise ConfigError(f"invalid order rule {rule!r}")


CueSets = Mapping[StanceLabel, frozenset]


def oracle_label(text: str, cue_sets: CueSets, spec: PseudoLanguageSpec | None = None) -> StanceLabel:
    """Class with strictly the most cue tokens; ties (including none) are neutral.

    ``spec`` undoes a pseudo-translation before counting; word order does
    not affect counts so only the token map is inverted.
    """
    tokens = text.split()
    if spec is not None:
        inv = spec.inverse().mapping
        tokens = [inv.get(t, t) for t in tokens]
    counts = {lab: sum(t in cues for t in tokens) for lab, cues in cue_sets.items()}
    best = max(counts.values(), default=0)
    winners = [lab for lab, c in counts.items() if c == best]
    if best == 0 or len(winners) != 1:
        return StanceLabel.NEUTRAL
    return winners[0]


@dataclass
class SynthBundle:
    config: SynthConfig
    cue_sets: dict[StanceLabel, frozenset]
    filler: tuple[str, ...]
    source: Dataset
    source_test: Dataset
    unlabeled: dict[str, Dataset]
    tests: dict[str, Dataset]
    specs: dict[str, PseudoLanguageSpec]

    def spec_json(self) -> dict:
        return {
            "source_lang": SOURCE_LANG,
            "config": self.config.to_dict(),
            "cue_sets": {lab.text: sorted(cues) for lab, cues in self.cue_sets.items()},
            "filler": list(self.filler),
            "languages": {lang: s.to_json() for lang, s in self.specs.items()},
        }

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"source": out / "source.jsonl", "source_test": out / "source_test.jsonl",
                 "spec": out / "synth_spec.json"}
        write_corpus(self.source, paths["source"])
        write_corpus(self.source_test, paths["source_test"])
        for lang in self.specs:
            paths[f"{lang}_unlabeled"] = out / f"{lang}_unlabeled.jsonl"
            paths[f"{lang}_test"] = out / f"{lang}_test.jsonl"
            write_corpus(self.unlabeled[lang], paths[f"{lang}_unlabeled"])
            write_corpus(self.tests[lang], paths[f"{lang}_test"])
        paths["spec"].write_text(json.dumps(self.spec_json(), indent=1, sort_keys=True) + "\n",
                                 encoding="utf-8")
        return paths

    @classmethod
    def load(cls, out_dir: str | Path) -> "SynthBundle":
        out = Path(out_dir)
        obj = json.loads((out / "synth_spec.json").read_text(encoding="utf-8"))
        specs = {lang: PseudoLanguageSpec.from_json(s) for lang, s in obj["languages"].items()}
        return cls(
            config=SynthConfig.from_dict(obj["config"]),
            cue_sets={StanceLabel.from_text(k): frozenset(v) for k, v in obj["cue_sets"].items()},
            filler=tuple(obj["filler"]),
            source=load_corpus(out / "source.jsonl", name="source"),
            source_test=load_corpus(out / "source_test.jsonl", name="source_test"),
            unlabeled={lang: load_corpus(out / f"{lang}_unlabeled.jsonl", name=f"{lang}_unlabeled")
                       for lang in specs},
            tests={lang: load_corpus(out / f"{lang}_test.jsonl", name=f"{lang}_test") for lang in specs},
            specs=specs,
        )


def _balanced_labels(n: int, rng: np.random.Generator, weights: Sequence[float] | None = None) -> list[StanceLabel]:
    if weights is None:
        counts = [n // 3 + (1 if i < n % 3 else 0) for i in range(3)]
    else:
        w = np.asarray(weights, dtype=float) / sum(weights)
        raw = w * n
        counts = np.floor(raw).astype(int)
        for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
            counts[i] += 1
        counts = counts.tolist()
    labels = [StanceLabel(c) for c in range(3) for _ in range(counts[c])]
    return [labels[i] for i in rng.permutation(n)]


class _SentenceSampler:
    def __init__(self, cfg: SynthConfig, filler, cues: dict[StanceLabel, tuple[str, ...]], rng):
        self.cfg, self.filler, self.cues, self.rng = cfg, filler, cues, rng

    def _cue_plan(self, label: StanceLabel) -> dict[StanceLabel, int]:
        r = self.rng
        if label is not StanceLabel.NEUTRAL:
            main = int(r.integers(1, 4))
            plan = {label: main}
            n_distract = int(r.integers(0, main))
            for _ in range(n_distract):
                other = StanceLabel(int(r.choice([c for c in range(3) if c != label])))
                plan[other] = plan.get(other, 0) + 1
            # distractors never reach the main count, so the oracle is unambiguous
            return plan
        mode = int(r.integers(0, 3))
        if mode == 0:
            return {}
        if mode == 1:
            main = int(r.integers(1, 4))
            return {StanceLabel.NEUTRAL: main, StanceLabel.POSITIVE: int(r.integers(0, main))}
        tie = int(r.integers(1, 3))
        return {StanceLabel.POSITIVE: tie, StanceLabel.NEGATIVE: tie}

    def sentence(self, label: StanceLabel) -> str:
        r = self.rng
        plan = self._cue_plan(label)
        cue_tokens = [self.cues[lab][int(r.integers(len(self.cues[lab])))]
                      for lab, n in plan.items() for _ in range(n)]
        length = max(int(r.integers(self.cfg.min_len, self.cfg.max_len + 1)), len(cue_tokens))
        fill = [self.filler[int(i)] for i in r.integers(len(self.filler), size=length - len(cue_tokens))]
        tokens = fill + cue_tokens
        return " ".join(tokens[i] for i in r.permutation(length))


def _vocabulary(cfg: SynthConfig):
    filler = cfg.filler_tokens or tuple(f"w{i:03d}" for i in range(cfg.vocab_size))
    if cfg.cue_tokens is not None:
        cues = {StanceLabel.from_text(k): tuple(v) for k, v in cfg.cue_tokens.items()}
        if set(cues) != set(StanceLabel):
            raise ConfigError("cue_tokens must define all three classes")
    else:
        cues = {lab: tuple(f"{prefix}{j}" for j in range(cfg.cues_per_class))
                for lab, prefix in zip(StanceLabel, ("pos", "neg", "neu"))}
    seen: dict[str, str] = {t: "filler" for t in filler}
    if len(seen) != len(filler):
        raise ConfigError("duplicate filler tokens")
    for lab, toks in cues.items():
        for t in toks:
            if t in seen:
                raise ConfigError(f"cue token {t!r} ({lab.text}) collides with {seen[t]} vocabulary")
            seen[t] = f"{lab.text} cue"
    return filler, cues


def generate_synthetic_corpus(cfg: SynthConfig) -> SynthBundle:
    cfg.validate()
    filler, cues = _vocabulary(cfg)
    cue_sets = {lab: frozenset(toks) for lab, toks in cues.items()}
    rng = np.random.default_rng(cfg.seed)
    sampler = _SentenceSampler(cfg, filler, cues, rng)
    base_tokens = list(filler) + [t for lab in StanceLabel for t in cues[lab]]

    def labeled(prefix: str, lang: str, n: int, spec=None, weights=None, keep_label=True):
        records = []
        for i, label in enumerate(_balanced_labels(n, rng, weights)):
            text = sampler.sentence(label)
            if spec is not None:
                text = pseudo_translate(text, spec)
            records.append(TweetRecord(id=f"{prefix}{i:05d}", raw_text=text, lang=lang,
                                       label=label if keep_label else None, origin=Origin.SYNTHETIC))
        return records

    source = Dataset("source", labeled("x0-", SOURCE_LANG, cfg.train_size), "synthetic source")
    source_test = Dataset("source_test", labeled("x0-t", SOURCE_LANG, cfg.source_test_size),
                          "synthetic source test")
    specs, unlabeled, tests = {}, {}, {}
    for n, lang in enumerate(cfg.target_langs):
        order, k = _parse_order(cfg.orders.get(lang, "identity"))
        spec = PseudoLanguageSpec({t: f"{lang}{t}" for t in base_tokens}, order, k)
        specs[lang] = spec
        weights = None
        if cfg.imbalance == "table1b":
            weights = REAL_TEST_COUNTS[_REAL_TEST_ORDER[n % len(_REAL_TEST_ORDER)]]
        unlabeled[lang] = Dataset(f"{lang}_unlabeled",
                                  labeled(f"{lang}-u", lang, cfg.unlabeled_size, spec, weights, keep_label=False),
                                  f"synthetic unlabeled {lang}")
        tests[lang] = Dataset(f"{lang}_test", labeled(f"{lang}-t", lang, cfg.test_size, spec, weights),
                              f"synthetic test {lang}")
    return SynthBundle(cfg, cue_sets, tuple(filler), source, source_test, unlabeled, tests, specs)
