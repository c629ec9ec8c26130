"""Layered run configuration: file < XSTANCE_* environment < command-line flags."""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .adversarial import AdaptationConfig
from .encoder import TrainConfig
from .errors import ConfigError
from .synth import SynthConfig

ENV_PREFIX = "XSTANCE_"
SECTIONS = ("train", "adapt", "encoder", "synth")
ENCODER_KEYS = ("d_model", "n_layers", "n_heads", "d_ff", "dropout", "max_len", "init_std")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (2e-4)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?"
               r"|[0-9][0-9_]*[eE][-+]?[0-9]+|\.inf|\.nan)$", re.IGNORECASE),
    list("-+0123456789."),
)


def load_yaml(text: str) -> Any:
    return yaml.load(text, Loader=_Loader)


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    adapt: AdaptationConfig = field(default_factory=AdaptationConfig)
    encoder: dict[str, Any] = field(default_factory=dict)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "jobs": self.jobs,
            "train": asdict(self.train),
            "adapt": asdict(self.adapt),
            "encoder": dict(sorted(self.encoder.items())),
            "synth": self.synth.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        """Inverse of ``to_dict`` (section seeds included), used for reruns."""
        try:
            synth = SynthConfig.from_dict(d["synth"])
            synth.validate()
            return cls(seed=int(d["seed"]), jobs=int(d.get("jobs", 1)), train=TrainConfig(**d["train"]),
                       adapt=AdaptationConfig(**d["adapt"]), encoder=dict(d.get("encoder", {})), synth=synth)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed stored config: {exc}") from None

    def hash(self) -> str:
        """Digest of everything that can change results (``jobs`` cannot)."""
        d = self.to_dict()
        d.pop("jobs")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


def _scalar(text: str) -> Any:
    """Parse a flag or environment value as a YAML scalar."""
    return load_yaml(text) if text.strip() else ""


def _set(tree: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted!r}: {p!r} is not a section")
    node[parts[-1]] = value


def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, Mapping) and isinstance(out.get(k), dict) else v
    return out


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        obj = json.loads(text) if path.suffix == ".json" else load_yaml(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return obj


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """``XSTANCE_SEED=3``, ``XSTANCE_TRAIN__LEARNING_RATE=2e-4`` and so on."""
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for key, value in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        dotted = key[len(ENV_PREFIX):].lower().replace("__", ".")
        _set(tree, dotted, _scalar(value))
    return tree


def _build(cls, section: str, values: Mapping, extra: Mapping | None = None):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if "seed" in values:
        raise ConfigError(f"set the top-level seed instead of {section}.seed")
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    try:
        if cls is SynthConfig:
            obj = SynthConfig.from_dict({**values, **(extra or {})})
            obj.validate()
            return obj
        return cls(**{**values, **(extra or {})})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} config: {exc}") from None


def resolve(file: str | Path | None = None, flags: Mapping[str, Any] | None = None,
            environ: Mapping[str, str] | None = None) -> RunConfig:
    """Merge the layers and validate. ``flags`` holds dotted keys such as
    ``seed`` or ``train.epochs``. The top-level seed drives every section."""
    tree = read_config_file(file) if file is not None else {}
    tree = _merge(tree, env_overrides(environ))
    flat: dict = {}
    for k, v in (flags or {}).items():
        if v is not None:
            _set(flat, k, v)
    tree = _merge(tree, flat)

    unknown = set(tree) - {"seed", "jobs", *SECTIONS}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        seed = int(tree.get("seed", 0))
        jobs = int(tree.get("jobs", 1))
    except (TypeError, ValueError):
        raise ConfigError("seed and jobs must be integers") from None
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    encoder = dict(tree.get("encoder") or {})
    bad = set(encoder) - set(ENCODER_KEYS)
    if bad:
        raise ConfigError(f"unknown encoder keys: {sorted(bad)}")
    for name in SECTIONS:
        if name in tree and name != "encoder" and not isinstance(tree[name], Mapping):
            raise ConfigError(f"section {name!r} must be a mapping")
    return RunConfig(
        seed=seed,
        jobs=jobs,
        train=_build(TrainConfig, "train", tree.get("train", {}), {"seed": seed}),
        adapt=_build(AdaptationConfig, "adapt", tree.get("adapt", {}), {"seed": seed}),
        encoder=encoder,
        synth=_build(SynthConfig, "synth", tree.get("synth", {}), {"seed": seed}),
    )
