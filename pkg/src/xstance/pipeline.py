"""Glue between the modules: experiment assembly and the six-variant matrix."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .adversarial import (AdaptationConfig, ExperimentData, VariantResult, VariantSpec, all_variants,
                          run_step1, run_variant)
from .augment import PseudoTranslator, Translator, TranslationCache, augment_with_translations
from .corpus import Dataset, Origin, clean_dataset
from .encoder import Classifier, Encoder, EncoderConfig, TrainConfig, TrainResult, build_vocab
from .synth import SynthBundle

log = logging.getLogger(__name__)


def as_originals(d: Dataset) -> Dataset:
    """Relabel synthetic source records as originals so they can be augmented."""
    from dataclasses import replace
    return d.with_records([replace(r, origin=Origin.ORIGINAL) if r.origin is Origin.SYNTHETIC else r
                           for r in d.records])


def experiment_from_parts(source: Dataset, unlabeled: Mapping[str, Dataset], tests: Mapping[str, Dataset],
                          translator: Translator | None = None, cache: TranslationCache | None = None,
                          max_len: int = 128) -> ExperimentData:
    """Clean everything, augment the source if a translator is given, and
    build one vocabulary over all training-visible text (never the tests)."""
    source = clean_dataset(as_originals(source))
    unlabeled = {lang: clean_dataset(d) for lang, d in unlabeled.items()}
    tests = {lang: clean_dataset(d) for lang, d in tests.items()}
    augmented = None
    if translator is not None:
        augmented = augment_with_translations(source, list(tests), translator, cache)
    visible = [augmented if augmented is not None else source, *unlabeled.values()]
    tokenizer = build_vocab(Dataset.concat("vocab", visible), max_len=max_len)
    return ExperimentData(tokenizer, source, unlabeled, tests, augmented)


def experiment_from_bundle(bundle: SynthBundle, max_len: int = 128) -> ExperimentData:
    return experiment_from_parts(bundle.source, bundle.unlabeled, bundle.tests,
                                 PseudoTranslator(bundle.specs), max_len=max_len)


def encoder_factory(tokenizer, enc_cfg: EncoderConfig | None, seed: int):
    cfg = enc_cfg or EncoderConfig(vocab_size=tokenizer.vocab_size, max_len=tokenizer.max_len)
    if cfg.vocab_size != tokenizer.vocab_size:
        from dataclasses import replace
        cfg = replace(cfg, vocab_size=tokenizer.vocab_size)

    def make():
        return Encoder(cfg, seed=seed), Classifier(cfg.d_model, seed=seed + 1)
    return make


@dataclass
class MatrixResult:
    langs: tuple[str, ...]
    variants: list[VariantResult]

    def rows(self) -> list[tuple[str, list[float], float]]:
        return [(v.spec.id, [v.reports[l].macro_f1 for l in self.langs], v.average) for v in self.variants]

    def reports(self):
        return [v.reports[l] for v in self.variants for l in self.langs]


def run_matrix(data: ExperimentData, langs: Sequence[str], train_cfg: TrainConfig,
               adapt_cfg: AdaptationConfig, enc_cfg: EncoderConfig | None = None, seed: int = 0,
               jobs: int = 1, variants: Sequence[VariantSpec] | None = None) -> MatrixResult:
    """All six variants; the plain and adversarial rows of a model share Step 1."""
    langs = tuple(langs)
    factory = encoder_factory(data.tokenizer, enc_cfg, seed)
    specs = list(variants) if variants is not None else all_variants(langs)
    step1: dict[str, TrainResult] = {}
    out = []
    for spec in specs:
        if spec.model not in step1:
            log.info("step 1 for %s", spec.model)
            step1[spec.model] = run_step1(spec, data, train_cfg, factory)
        log.info("running %s", spec.id)
        out.append(run_variant(spec, data, train_cfg, adapt_cfg, step1=step1[spec.model], jobs=jobs))
    return MatrixResult(langs, out)
