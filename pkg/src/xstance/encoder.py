"""Word-level tokenizer, small transformer encoder, stance head and Step-1 training."""
from __future__ import annotations

import copy
import io
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Dataset, StanceLabel, TweetRecord
from .errors import DivergenceError, EmptyCorpus, MissingArtifact, ShapeError

log = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
N_CLASSES = len(StanceLabel)


# --------------------------------------------------------------------------
# tokenizer

class Tokenizer:
    def __init__(self, vocab: dict[str, int], max_len: int = 128, lowercase: bool = True):
        if max_len < 2:
            raise ValueError("max_len must hold at least [CLS] and [SEP]")
        ids = sorted(vocab.values())
        if ids != list(range(len(SPECIAL_TOKENS), len(SPECIAL_TOKENS) + len(ids))):
            raise ValueError("vocabulary ids must be contiguous from 4")
        self.vocab = dict(vocab)
        self.max_len = max_len
        self.lowercase = lowercase

    @property
    def vocab_size(self) -> int:
        return len(SPECIAL_TOKENS) + len(self.vocab)

    def tokens(self, text: str) -> list[str]:
        return (text.lower() if self.lowercase else text).split()

    def encode(self, text: str) -> tuple[list[int], list[int]]:
        body = [self.vocab.get(t, UNK) for t in self.tokens(text)][: self.max_len - 2]
        ids = [CLS, *body, SEP]
        n = len(ids)
        return ids + [PAD] * (self.max_len - n), [1] * n + [0] * (self.max_len - n)

    def encode_batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        if not texts:
            return (torch.zeros((0, self.max_len), dtype=torch.long),) * 2
        pairs = [self.encode(t) for t in texts]
        ids = torch.tensor([p[0] for p in pairs], dtype=torch.long)
        mask = torch.tensor([p[1] for p in pairs], dtype=torch.long)
        return ids, mask

    def to_json(self) -> dict:
        return {"format_version": 1, "max_len": self.max_len, "lowercase": self.lowercase,
                "vocab": self.vocab}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        path = Path(path)
        if not path.exists():
            raise MissingArtifact(f"tokenizer not found: {path}")
        obj = json.loads(path.read_text(encoding="utf-8"))
        return cls(obj["vocab"], obj["max_len"], obj["lowercase"])


def build_vocab(d: Dataset | Iterable[TweetRecord], min_freq: int = 1, max_len: int = 128,
                lowercase: bool = True) -> Tokenizer:
    """Whitespace tokens with frequency >= ``min_freq``, ordered by (-freq, token)."""
    records = list(d)
    if not records:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for rec in records:
        text = rec.text.lower() if lowercase else rec.text
        counts.update(text.split())
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    vocab = {t: i for i, t in enumerate(kept, start=len(SPECIAL_TOKENS))}
    return Tokenizer(vocab, max_len, lowercase)


def encode(tokenizer: Tokenizer, text: str) -> tuple[list[int], list[int]]:
    return tokenizer.encode(text)


# --------------------------------------------------------------------------
# networks

@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    max_len: int = 128
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask):
        b, L, d = x.shape
        dh = d // self.n_heads
        q, k, v = self.qkv(x).view(b, L, 3, self.n_heads, dh).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        return self.out((attn @ v).transpose(1, 2).reshape(b, L, d))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attn = SelfAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(nn.Linear(cfg.d_model, cfg.d_ff), nn.GELU(), nn.Linear(cfg.d_ff, cfg.d_model))
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        x = self.norm1(x + self.drop(self.attn(x, key_mask)))
        return self.norm2(x + self.drop(self.ff(x)))


def _init_linear_and_embeddings(module: nn.Module, std: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Linear, nn.Embedding)):
                nn.init.normal_(m.weight, 0.0, std, generator=generator)
                if getattr(m, "bias", None) is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.LayerNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()


class Encoder(nn.Module):
    """Post-LN transformer encoder; the pooled output is the [CLS] state."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.d_model)
        self.emb_norm = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        _init_linear_and_embeddings(self, cfg.init_std, torch.Generator().manual_seed(seed))

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if ids.shape != mask.shape or ids.dim() != 2:
            raise ShapeError(f"ids {tuple(ids.shape)} and mask {tuple(mask.shape)} must be equal 2-D shapes")
        if ids.shape[1] > self.cfg.max_len:
            raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.drop(self.emb_norm(self.tok_emb(ids) + self.pos_emb(pos)[None]))
        key_mask = mask.bool()
        for layer in self.layers:
            x = layer(x, key_mask)
        return x, x[:, 0]


class Classifier(nn.Module):
    def __init__(self, d_model: int, seed: int = 0, std: float = 0.02):
        super().__init__()
        self.linear = nn.Linear(d_model, N_CLASSES)
        _init_linear_and_embeddings(self, std, torch.Generator().manual_seed(seed))

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.linear(pooled)


def encoder_forward(enc: Encoder, ids, mask) -> tuple[torch.Tensor, torch.Tensor]:
    """Accepts a single sequence or a batch; returns (states, pooled)."""
    ids, mask = torch.as_tensor(ids), torch.as_tensor(mask)
    if ids.dim() == 1 and mask.dim() == 1:
        states, pooled = enc(ids[None], mask[None])
        return states[0], pooled[0]
    return enc(ids, mask)


def classify(cls: Classifier, pooled) -> tuple[torch.Tensor, torch.Tensor]:
    logits = cls(torch.as_tensor(pooled))
    return logits, torch.softmax(logits, dim=-1)


def trim(ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Drop padding columns past the longest sequence. Exact under key masking."""
    if ids.shape[0] == 0:
        return ids, mask
    n = int(mask.sum(dim=1).max())
    return ids[:, :n], mask[:, :n]


@torch.no_grad()
def pooled_embeddings(enc: Encoder, tokenizer: Tokenizer, texts: Sequence[str],
                      batch_size: int = 256) -> torch.Tensor:
    was_training = enc.training
    enc.eval()
    ids, mask = tokenizer.encode_batch(list(texts))
    out = [enc(*trim(ids[i:i + batch_size], mask[i:i + batch_size]))[1]
           for i in range(0, len(texts), batch_size)]
    enc.train(was_training)
    dtype = next(enc.parameters()).dtype
    return torch.cat(out) if out else torch.zeros((0, enc.cfg.d_model), dtype=dtype)


# --------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    epochs: int = 9
    batch_size: int = 32
    learning_rate: float = 5e-5
    seed: int = 0
    optimizer: str = "adamw"
    weight_decay: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0; batch_size and learning_rate positive")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_decay is None:
            self.weight_decay = 0.01 if self.optimizer == "adamw" else 0.0


def make_optimizer(params, name: str, lr: float, weight_decay: float,
                   betas: tuple[float, float] = (0.9, 0.999)) -> torch.optim.Optimizer:
    params = [p for p in params if p.requires_grad]
    if name == "adamw":
        return torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay, betas=betas)
    return torch.optim.Adam(params, lr=lr, weight_decay=weight_decay, betas=betas)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    dev_macro_f1: float | None = None


@dataclass
class TrainResult:
    encoder: Encoder
    classifier: Classifier
    history: list[EpochLog]


def _labels_tensor(d: Dataset) -> torch.Tensor:
    if any(r.label is None for r in d.records):
        raise ValueError(f"dataset {d.name!r} contains unlabeled records")
    return torch.tensor([int(r.label) for r in d.records], dtype=torch.long)


def train_supervised(enc: Encoder, cls: Classifier, tokenizer: Tokenizer, train: Dataset,
                     dev: Dataset | None = None, cfg: TrainConfig | None = None,
                     mode: str = "split") -> TrainResult:
    """Mini-batch cross-entropy training of encoder + classifier.

    ``joint`` optimizes both as one model, ``split`` keeps one optimizer per
    bundle. The inputs are not modified; trained copies are returned.
    """
    from .evaluation import macro_f1_score

    cfg = cfg or TrainConfig()
    if mode not in ("joint", "split"):
        raise ValueError(f"unknown training mode {mode!r}")
    if len(train) == 0:
        raise EmptyCorpus("training set is empty")
    enc, cls = copy.deepcopy(enc), copy.deepcopy(cls)
    y = _labels_tensor(train)
    ids, mask = tokenizer.encode_batch(train.texts())
    if mode == "joint":
        opts = [make_optimizer([*enc.parameters(), *cls.parameters()], cfg.optimizer,
                               cfg.learning_rate, cfg.weight_decay)]
    else:
        opts = [make_optimizer(m.parameters(), cfg.optimizer, cfg.learning_rate, cfg.weight_decay)
                for m in (enc, cls)]
    shuffle = torch.Generator().manual_seed(cfg.seed)
    history: list[EpochLog] = []
    n = len(train)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        for epoch in range(cfg.epochs):
            enc.train()
            cls.train()
            perm = torch.randperm(n, generator=shuffle)
            total, batches = 0.0, 0
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = perm[start:start + cfg.batch_size]
                _, pooled = enc(*trim(ids[idx], mask[idx]))
                loss = F.cross_entropy(cls(pooled), y[idx])
                if not torch.isfinite(loss):
                    raise DivergenceError("non-finite training loss", epoch, b)
                for opt in opts:
                    opt.zero_grad()
                loss.backward()
                for opt in opts:
                    opt.step()
                total += loss.item()
                batches += 1
            entry = EpochLog(epoch + 1, total / batches)
            if dev is not None and len(dev):
                preds = [int(p) for p, _ in predict(enc, cls, tokenizer, dev.records)]
                entry.dev_macro_f1 = macro_f1_score([int(r.label) for r in dev.records], preds)
            history.append(entry)
            log.info("epoch %d loss %.4f dev_f1 %s", entry.epoch, entry.loss, entry.dev_macro_f1)
    enc.eval()
    cls.eval()
    return TrainResult(enc, cls, history)


@torch.no_grad()
def predict_probs(enc: Encoder, cls: Classifier, tokenizer: Tokenizer, texts: Sequence[str],
                  batch_size: int = 256) -> np.ndarray:
    was = enc.training, cls.training
    enc.eval()
    cls.eval()
    ids, mask = tokenizer.encode_batch(list(texts))
    out = []
    for i in range(0, len(texts), batch_size):
        _, pooled = enc(*trim(ids[i:i + batch_size], mask[i:i + batch_size]))
        out.append(torch.softmax(cls(pooled), dim=-1).double().numpy())
    enc.train(was[0])
    cls.train(was[1])
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


def argmax_label(probs: Sequence[float]) -> StanceLabel:
    """Highest probability; ties go to the lowest label code."""
    return StanceLabel(int(np.argmax(np.asarray(probs))))


def predict(enc: Encoder, cls: Classifier, tokenizer: Tokenizer,
            records: Sequence[TweetRecord]) -> list[tuple[StanceLabel, np.ndarray]]:
    probs = predict_probs(enc, cls, tokenizer, [r.text for r in records])
    return [(argmax_label(p), p) for p in probs]


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, **modules: nn.Module) -> None:
    """Store named modules in one ``.npz``; metadata rides along as JSON."""
    meta: dict = {"format_version": CHECKPOINT_VERSION, "modules": {}}
    arrays = {}
    for name, module in modules.items():
        if module is None:
            continue
        info: dict = {"kind": type(module).__name__}
        if isinstance(module, Encoder):
            info["config"] = asdict(module.cfg)
        elif isinstance(module, Classifier):
            info["d_model"] = module.linear.in_features
        else:
            info["d_model"] = module.d_model
            info["hidden"] = module.hidden
        meta["modules"][name] = info
        for key, tensor in module.state_dict().items():
            arrays[f"{name}.{key}"] = tensor.detach().cpu().numpy()
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> dict[str, nn.Module]:
    from .adversarial import Discriminator

    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"checkpoint not found: {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ShapeError(f"unsupported checkpoint version {meta.get('format_version')}")
        out = {}
        for name, info in meta["modules"].items():
            if info["kind"] == "Encoder":
                module = Encoder(EncoderConfig(**info["config"]))
            elif info["kind"] == "Classifier":
                module = Classifier(info["d_model"])
            elif info["kind"] == "Discriminator":
                module = Discriminator(info["d_model"], info["hidden"])
            else:
                raise ShapeError(f"unknown module kind {info['kind']!r}")
            state = module.state_dict()
            for key, ref in state.items():
                arr = data.get(f"{name}.{key}")
                if arr is None or tuple(arr.shape) != tuple(ref.shape):
                    got = None if arr is None else tuple(arr.shape)
                    raise ShapeError(f"{path}: {name}.{key} has shape {got}, expected {tuple(ref.shape)}")
                state[key] = torch.from_numpy(arr.copy())
            module.load_state_dict(state)
            module.eval()
            out[name] = module
    return out
