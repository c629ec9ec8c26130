"""Adversarial language adaptation with distillation, and the variant matrix.

A target-language encoder starts as a copy of the trained source encoder and
plays a two-player game against a language discriminator, while a
distillation term keeps its stance predictions close to those of the frozen
source model.
"""
from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Dataset, Origin
from .encoder import (Classifier, Encoder, Tokenizer, TrainConfig, TrainResult, make_optimizer,
                      pooled_embeddings, predict, train_supervised, trim)
from .errors import ConfigError, DivergenceError, EmptyPool, ShapeError
from .evaluation import MetricsReport, average_macro_f1

log = logging.getLogger(__name__)

EPS = 1e-7


class Discriminator(nn.Module):
    """MLP d_model -> h -> h -> 1; outputs P(embedding is source language)."""

    def __init__(self, d_model: int, hidden: int | None = None, seed: int = 0):
        super().__init__()
        hidden = hidden or 2 * d_model
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        self.d_model, self.hidden = d_model, hidden
        self.net = nn.Sequential(
            nn.Linear(d_model, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in self.net:
                if isinstance(m, nn.Linear):
                    bound = 1.0 / math.sqrt(m.in_features)
                    m.weight.uniform_(-bound, bound, generator=g)
                    m.bias.uniform_(-bound, bound, generator=g)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(pooled)).squeeze(-1)


def discriminator_forward(D: Discriminator, pooled) -> torch.Tensor:
    pooled = torch.as_tensor(pooled)
    if pooled.shape[-1] != D.d_model:
        raise ShapeError(f"expected embeddings of size {D.d_model}, got {pooled.shape[-1]}")
    return D(pooled)


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(EPS, 1 - EPS)


def discriminator_loss(D: Discriminator, src_pooled, tgt_pooled) -> torch.Tensor:
    """-1/2 [mean log D(src) + mean log(1 - D(tgt))]."""
    p_src = _clamp(discriminator_forward(D, src_pooled))
    p_tgt = _clamp(discriminator_forward(D, tgt_pooled))
    return -0.5 * (torch.log(p_src).mean() + torch.log(1 - p_tgt).mean())


def generator_adv_loss(D: Discriminator, tgt_pooled) -> torch.Tensor:
    """Non-saturating inverted-label loss: -mean log D(tgt)."""
    return -torch.log(_clamp(discriminator_forward(D, tgt_pooled))).mean()


def distillation_loss(teacher_probs, student_logits, temperature: float) -> torch.Tensor:
    """T^2 * KL(softened teacher || softmax(student / T)), averaged over the batch."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    teacher = torch.as_tensor(teacher_probs)
    student_logits = torch.as_tensor(student_logits)
    if teacher.dim() == 1:
        teacher, student_logits = teacher[None], student_logits[None]
    soft = teacher.clamp_min(EPS) ** (1.0 / temperature)
    soft = soft / soft.sum(dim=-1, keepdim=True)
    log_student = F.log_softmax(student_logits / temperature, dim=-1)
    kl = (soft * (torch.log(soft.clamp_min(EPS)) - log_student)).sum(dim=-1)
    return temperature ** 2 * kl.mean()


# --------------------------------------------------------------------------
# adaptation

@dataclass
class AdaptationConfig:
    epochs: int = 5
    lr_discriminator: float = 1e-5
    lr_generator: float = 1e-5
    batch_size: int = 32
    distill_weight: float = 1.0
    distill_temperature: float = 2.0
    d_steps_per_batch: int = 1
    g_steps_per_batch: int = 1
    update_scope: str = "target_encoder_only"
    seed: int = 0
    weight_decay: float = 0.01
    discriminator_hidden: int | None = None
    distill_on: str = "target"
    beta1: float = 0.9

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size positive")
        if self.lr_discriminator <= 0 or self.lr_generator <= 0:
            raise ConfigError("learning rates must be positive")
        if self.distill_weight < 0 or not math.isfinite(self.distill_weight):
            raise ConfigError("distill_weight must be finite and >= 0")
        if self.distill_temperature <= 0:
            raise ConfigError("distill_temperature must be positive")
        if self.d_steps_per_batch < 0 or self.g_steps_per_batch < 0:
            raise ConfigError("step counts must be >= 0")
        if self.distill_on not in ("target", "source"):
            raise ConfigError(f"distill_on must be 'target' or 'source', got {self.distill_on!r}")
        if self.update_scope not in ("target_encoder_only", "encoder_and_classifier"):
            raise ConfigError(f"unknown update_scope {self.update_scope!r}")


@dataclass
class AdaptationEpoch:
    epoch: int
    discriminator_loss: float
    generator_adv_loss: float
    distillation_loss: float
    probe_accuracy: float | None = None


@dataclass
class AdaptationState:
    epochs: list[AdaptationEpoch] = field(default_factory=list)
    initial_probe_accuracy: float | None = None

    def to_json(self) -> dict:
        return {"initial_probe_accuracy": self.initial_probe_accuracy,
                "epochs": [asdict(e) for e in self.epochs]}


@dataclass
class AdaptationResult:
    target_encoder: Encoder
    classifier: Classifier
    discriminator: Discriminator
    state: AdaptationState


def _cycled(n: int, count: int, g: torch.Generator) -> torch.Tensor:
    """``count`` indices from fresh permutations of range(n), concatenated."""
    reps = -(-count // n)
    return torch.cat([torch.randperm(n, generator=g) for _ in range(reps)])[:count]


def adapt_target_encoder(src_enc: Encoder, cls: Classifier, tokenizer: Tokenizer, tgt_texts: Dataset,
                         src_texts: Dataset, cfg: AdaptationConfig | None = None,
                         probe: tuple[Dataset, Dataset] | None = None) -> AdaptationResult:
    """Alternate discriminator and target-encoder updates.

    The teacher for distillation is the frozen source model applied to the
    same target-language batch, so no target labels are used. With
    ``target_encoder_only`` the returned classifier is ``cls`` itself.
    ``probe`` = (held-out source, held-out target) enables per-epoch probes.
    """
    cfg = cfg or AdaptationConfig()
    if len(tgt_texts) == 0 or len(src_texts) == 0:
        raise EmptyPool("adaptation needs non-empty source and target pools")

    src_enc.eval()
    tgt_enc = copy.deepcopy(src_enc)
    tgt_enc.eval()  # dropout off: its noise alone would be a language signal
    teacher_cls = copy.deepcopy(cls).eval()
    if cfg.update_scope == "encoder_and_classifier":
        student_cls = copy.deepcopy(cls).eval()
    else:
        student_cls = copy.deepcopy(cls).eval().requires_grad_(False)
    D = Discriminator(src_enc.cfg.d_model, cfg.discriminator_hidden, seed=cfg.seed)

    state = AdaptationState()
    if probe is not None:
        state.initial_probe_accuracy = discriminator_probe(src_enc, tgt_enc, tokenizer, *probe, seed=cfg.seed)
    returned_cls = student_cls if cfg.update_scope == "encoder_and_classifier" else cls
    if cfg.epochs == 0:
        return AdaptationResult(tgt_enc, returned_cls, D, state)

    src_ids, src_mask = tokenizer.encode_batch(src_texts.texts())
    tgt_ids, tgt_mask = tokenizer.encode_batch(tgt_texts.texts())
    with torch.no_grad():
        src_pooled = pooled_embeddings(src_enc, tokenizer, src_texts.texts())
        kd_texts = tgt_texts if cfg.distill_on == "target" else src_texts
        teacher_probs = torch.softmax(teacher_cls(pooled_embeddings(src_enc, tokenizer, kd_texts.texts())), -1)

    g_params = list(tgt_enc.parameters())
    if cfg.update_scope == "encoder_and_classifier":
        g_params += list(student_cls.parameters())
    opt_d = make_optimizer(D.parameters(), "adamw", cfg.lr_discriminator, cfg.weight_decay,
                           (cfg.beta1, 0.999))
    opt_g = make_optimizer(g_params, "adamw", cfg.lr_generator, cfg.weight_decay, (cfg.beta1, 0.999))
    gen = torch.Generator().manual_seed(cfg.seed)
    n_src, n_tgt = len(src_texts), len(tgt_texts)
    n_batches = -(-max(n_src, n_tgt) // cfg.batch_size)
    lam, T = cfg.distill_weight, cfg.distill_temperature

    for epoch in range(cfg.epochs):
        src_order = _cycled(n_src, n_batches * cfg.batch_size, gen)
        tgt_order = _cycled(n_tgt, n_batches * cfg.batch_size, gen)
        sums = np.zeros(3)
        counts = np.zeros(3)
        for b in range(n_batches):
            s_idx = src_order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            t_idx = tgt_order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            t_ids, t_mask = trim(tgt_ids[t_idx], tgt_mask[t_idx])
            for _ in range(cfg.d_steps_per_batch):
                with torch.no_grad():
                    t_pooled = tgt_enc(t_ids, t_mask)[1]
                loss_d = discriminator_loss(D, src_pooled[s_idx], t_pooled)
                if not torch.isfinite(loss_d):
                    raise DivergenceError("non-finite discriminator loss", epoch, b)
                opt_d.zero_grad()
                loss_d.backward()
                opt_d.step()
                sums[0] += loss_d.item()
                counts[0] += 1
            D.requires_grad_(False)
            for _ in range(cfg.g_steps_per_batch):
                t_pooled = tgt_enc(t_ids, t_mask)[1]
                loss_adv = generator_adv_loss(D, t_pooled)
                if cfg.distill_on == "target":
                    loss_kd = distillation_loss(teacher_probs[t_idx], student_cls(t_pooled), T)
                else:
                    s_pooled = tgt_enc(*trim(src_ids[s_idx], src_mask[s_idx]))[1]
                    loss_kd = distillation_loss(teacher_probs[s_idx], student_cls(s_pooled), T)
                loss_g = loss_adv + lam * loss_kd
                if not torch.isfinite(loss_g):
                    raise DivergenceError("non-finite generator loss", epoch, b)
                opt_g.zero_grad()
                loss_g.backward()
                opt_g.step()
                sums[1] += loss_adv.item()
                sums[2] += loss_kd.item()
                counts[1:] += 1
            D.requires_grad_(True)
        means = np.divide(sums, counts, out=np.full(3, np.nan), where=counts > 0)
        entry = AdaptationEpoch(epoch + 1, *map(float, means))
        if probe is not None:
            entry.probe_accuracy = discriminator_probe(src_enc, tgt_enc, tokenizer, *probe, seed=cfg.seed)
        state.epochs.append(entry)
        log.info("adapt epoch %d L_D %.4f L_adv %.4f L_KD %.4f probe %s", entry.epoch,
                 entry.discriminator_loss, entry.generator_adv_loss, entry.distillation_loss,
                 entry.probe_accuracy)
    return AdaptationResult(tgt_enc, returned_cls, D, state)


# --------------------------------------------------------------------------
# probe

def probe_embeddings(src_emb: torch.Tensor, tgt_emb: torch.Tensor, seed: int = 0,
                     steps: int = 200, lr: float = 1e-2) -> float:
    """Balanced held-out accuracy of a fresh discriminator; 0.5 means aligned.

    Each pool is split in half (train / held-out) by ``seed``.
    """
    if len(src_emb) < 2 or len(tgt_emb) < 2:
        raise EmptyPool("probe pools need at least two items each")
    g = torch.Generator().manual_seed(seed)
    src_perm = torch.randperm(len(src_emb), generator=g)
    tgt_perm = torch.randperm(len(tgt_emb), generator=g)
    src_tr, src_te = src_emb[src_perm[: len(src_emb) // 2]], src_emb[src_perm[len(src_emb) // 2:]]
    tgt_tr, tgt_te = tgt_emb[tgt_perm[: len(tgt_emb) // 2]], tgt_emb[tgt_perm[len(tgt_emb) // 2:]]
    both = torch.cat([src_tr, tgt_tr]).float()
    mu, sd = both.mean(0), both.std(0) + 1e-6
    norm = lambda x: (x.float() - mu) / sd  # noqa: E731
    D = Discriminator(src_emb.shape[1], seed=seed)
    opt = torch.optim.Adam(D.parameters(), lr=lr)
    src_tr, tgt_tr = norm(src_tr), norm(tgt_tr)
    for _ in range(steps):
        loss = discriminator_loss(D, src_tr, tgt_tr)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        acc_src = (D(norm(src_te)) > 0.5).float().mean()
        acc_tgt = (D(norm(tgt_te)) <= 0.5).float().mean()
    return float(0.5 * (acc_src + acc_tgt))


def discriminator_probe(enc_src: Encoder, enc_tgt: Encoder, tokenizer: Tokenizer, held_out_src: Dataset,
                        held_out_tgt: Dataset, seed: int = 0, steps: int = 200) -> float:
    src_emb = pooled_embeddings(enc_src, tokenizer, held_out_src.texts())
    tgt_emb = pooled_embeddings(enc_tgt, tokenizer, held_out_tgt.texts())
    return probe_embeddings(src_emb, tgt_emb, seed=seed, steps=steps)


# --------------------------------------------------------------------------
# variants

MODELS = ("baseline", "mtab_no_tl", "mtab")


@dataclass(frozen=True)
class VariantSpec:
    model: str
    adversarial: bool
    target_langs: tuple[str, ...]

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        object.__setattr__(self, "target_langs", tuple(self.target_langs))
        if not self.target_langs:
            raise ConfigError("a variant needs at least one target language")

    @property
    def id(self) -> str:
        return self.model + ("+adv" if self.adversarial else "")

    @property
    def train_mode(self) -> str:
        return "joint" if self.model == "baseline" else "split"

    @property
    def uses_translations(self) -> bool:
        return self.model == "mtab"


def all_variants(target_langs: Sequence[str]) -> list[VariantSpec]:
    return [VariantSpec(m, adv, tuple(target_langs)) for m in MODELS for adv in (False, True)]


@dataclass
class ExperimentData:
    """Everything a variant run reads. ``source`` holds labeled source-language
    originals; ``augmented`` adds their translations."""

    tokenizer: Tokenizer
    source: Dataset
    unlabeled: Mapping[str, Dataset]
    tests: Mapping[str, Dataset]
    augmented: Dataset | None = None
    dev: Dataset | None = None


@dataclass
class VariantResult:
    spec: VariantSpec
    reports: dict[str, MetricsReport]
    average: float
    step1: TrainResult
    adapted: dict[str, AdaptationResult] = field(default_factory=dict)


def source_pool(d: Dataset) -> Dataset:
    """Source-language originals only; translated copies never feed the discriminator."""
    langs = {r.lang for r in d.records if r.origin is not Origin.TRANSLATED}
    if len(langs) != 1:
        raise ConfigError(f"expected one source language, found {sorted(langs)}")
    return d.with_records([r for r in d.records if r.origin is not Origin.TRANSLATED])


def run_step1(spec: VariantSpec, data: ExperimentData, train_cfg: TrainConfig, encoder_factory) -> TrainResult:
    train = data.augmented if spec.uses_translations else data.source
    if train is None:
        raise ConfigError("model 'mtab' needs translation-augmented training data")
    enc, cls = encoder_factory()
    return train_supervised(enc, cls, data.tokenizer, train, data.dev, train_cfg, spec.train_mode)


def _evaluate(spec: VariantSpec, enc, cls, tokenizer, test: Dataset, lang: str) -> MetricsReport:
    preds = predict(enc, cls, tokenizer, test.records)
    return MetricsReport.from_predictions(spec.id, lang, [int(r.label) for r in test.records],
                                          [int(p) for p, _ in preds])


def run_variant(spec: VariantSpec, data: ExperimentData, train_cfg: TrainConfig, adapt_cfg: AdaptationConfig,
                encoder_factory=None, step1: TrainResult | None = None, jobs: int = 1) -> VariantResult:
    """Step 1 (supervised), optional Step 2 (adaptation), Step 3 (per-language evaluation).

    ``step1`` may be passed to share a trained model between the plain and
    adversarial versions of the same model.
    """
    if step1 is None:
        if encoder_factory is None:
            raise ConfigError("run_variant needs either encoder_factory or a trained step1")
        step1 = run_step1(spec, data, train_cfg, encoder_factory)
    missing = [l for l in spec.target_langs if l not in data.tests]
    if missing:
        raise ConfigError(f"no test set for {missing}")
    enc, cls = step1.encoder, step1.classifier
    reports: dict[str, MetricsReport] = {}
    adapted: dict[str, AdaptationResult] = {}
    if not spec.adversarial:
        for lang in spec.target_langs:
            reports[lang] = _evaluate(spec, enc, cls, data.tokenizer, data.tests[lang], lang)
    elif spec.model == "baseline":
        # one shared encoder and classifier adapted on all target pools together
        pool = Dataset.concat("targets", [data.unlabeled[l] for l in spec.target_langs])
        cfg = _with(adapt_cfg, update_scope="encoder_and_classifier")
        res = adapt_target_encoder(enc, cls, data.tokenizer, pool, source_pool(data.source), cfg)
        adapted["shared"] = res
        for lang in spec.target_langs:
            reports[lang] = _evaluate(spec, res.target_encoder, res.classifier, data.tokenizer,
                                      data.tests[lang], lang)
    else:
        cfg = _with(adapt_cfg, update_scope="target_encoder_only")
        src = source_pool(data.source)

        def one(lang):
            return adapt_target_encoder(enc, cls, data.tokenizer, data.unlabeled[lang], src, cfg)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                results = list(ex.map(one, spec.target_langs))
        else:
            results = [one(lang) for lang in spec.target_langs]
        for lang, res in zip(spec.target_langs, results):
            adapted[lang] = res
            reports[lang] = _evaluate(spec, res.target_encoder, res.classifier, data.tokenizer,
                                      data.tests[lang], lang)
    return VariantResult(spec, reports, average_macro_f1(list(reports.values())), step1, adapted)


def _with(cfg, **changes):
    new = copy.copy(cfg)
    for k, v in changes.items():
        setattr(new, k, v)
    return new
