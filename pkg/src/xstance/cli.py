"""Command-line entry point.

Every command writes a manifest next to its outputs recording the resolved
configuration, its hash, input digests and the artifact version; ``rerun``
replays a manifest. Exit codes: 0 ok, 2 input error, 3 missing artifact,
4 divergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import shutil
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import torch

from . import __version__
from .adversarial import (MODELS, AdaptationConfig, VariantSpec, adapt_target_encoder, source_pool)
from .augment import TranslationCache, augment_with_translations, make_translator
from .config import RunConfig, resolve
from .corpus import (Dataset, LabelMap, StanceLabel, clean_dataset, dataset_stats, filter_classes, load_corpus,
                     validate_lang, write_corpus)
from .encoder import (EncoderConfig, Tokenizer, build_vocab, load_checkpoint, predict, save_checkpoint,
                      train_supervised)
from .errors import ConfigError, InputError, MissingArtifact, XStanceError
from .evaluation import MetricsReport
from .pipeline import as_originals, encoder_factory, experiment_from_bundle, run_matrix
from .report import load_metrics, metrics_json, render_report
from .synth import SynthBundle, generate_synthetic_corpus

log = logging.getLogger("xstance")

MANIFEST = "manifest.json"


# --------------------------------------------------------------------------
# output bookkeeping

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


class Run:
    """Collects inputs and outputs of one command; on failure the outputs
    written so far (and a directory this run created) are removed."""

    def __init__(self, command: str, args: dict, cfg: RunConfig, out: Path, out_is_dir: bool):
        self.command, self.args, self.cfg = command, args, cfg
        self.out, self.out_is_dir = out, out_is_dir
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self._created_dir: Path | None = None

    def __enter__(self):
        target = self.out if self.out_is_dir else self.out.parent
        if not target.exists():
            first_missing = target
            while not first_missing.parent.exists():
                first_missing = first_missing.parent
            self._created_dir = first_missing
            target.mkdir(parents=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            return False
        for p in self.outputs:
            p.unlink(missing_ok=True)
        if self._created_dir is not None:
            shutil.rmtree(self._created_dir, ignore_errors=True)
        return False

    def input(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise MissingArtifact(f"input not found: {path}")
        self.inputs[str(path)] = sha256_file(path) if path.is_file() else _dir_digest(path)
        return path

    def output(self, name: str) -> Path:
        p = self.out / name if self.out_is_dir else self.out.with_name(name)
        self.outputs.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.output(name)
        p.write_text(text, encoding="utf-8", newline="")
        return p

    def manifest_path(self) -> Path:
        return self.out / MANIFEST if self.out_is_dir else self.out.with_name(self.out.name + ".manifest.json")

    def finish(self) -> Path:
        outputs = {}
        for p in self.outputs:
            if p.exists():
                outputs[p.name] = sha256_file(p)
        manifest = {
            "artifact_version": __version__,
            "command": self.command,
            "args": self.args,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(outputs.items())),
        }
        path = self.manifest_path()
        self.outputs.append(path)
        path.write_text(_dump(manifest), encoding="utf-8")
        return path


def _dir_digest(path: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            h.update(str(p.relative_to(path)).encode("utf-8"))
            h.update(sha256_file(p).encode("ascii"))
    return h.hexdigest()


def _lang_files(items: Sequence[str] | None, flag: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or []:
        lang, sep, path = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"{flag} expects LANG=PATH, got {item!r}")
        validate_lang(lang)
        if lang in out:
            raise ConfigError(f"{flag}: language {lang!r} given twice")
        out[lang] = path
    return out


def _encoder_cfg(cfg: RunConfig, tokenizer: Tokenizer) -> EncoderConfig:
    return EncoderConfig(vocab_size=tokenizer.vocab_size, **{"max_len": tokenizer.max_len, **cfg.encoder})


def _model_files(model_dir: Path) -> tuple[Path, Path]:
    ckpt, tok = model_dir / "model.npz", model_dir / "tokenizer.json"
    for p in (ckpt, tok):
        if not p.exists():
            raise MissingArtifact(f"missing model artifact: {p}")
    return ckpt, tok


def _load_model(run: Run, model_dir: str):
    ckpt, tok = _model_files(Path(model_dir))
    run.input(ckpt)
    run.input(tok)
    modules = load_checkpoint(ckpt)
    if "encoder" not in modules or "classifier" not in modules:
        raise MissingArtifact(f"{ckpt} lacks an encoder or classifier")
    return modules["encoder"], modules["classifier"], Tokenizer.load(tok)


def _load(run: Run, path: str, name: str | None = None) -> Dataset:
    return load_corpus(run.input(path), name=name)


# --------------------------------------------------------------------------
# commands

def cmd_prep(run: Run, a) -> None:
    label_map = LabelMap.from_file(run.input(a.label_map)) if a.label_map else LabelMap.default()
    d = load_corpus(run.input(a.input), label_map=label_map)
    if a.keep:
        d = filter_classes(d, [StanceLabel.from_text(k) for k in a.keep])
    d = clean_dataset(d)
    out = run.output(run.out.name)
    write_corpus(d, out)
    stats = dataset_stats(d)
    run.write_text(run.out.stem + ".stats.csv", stats.to_csv())
    print(stats.format())


def cmd_augment(run: Run, a) -> None:
    targets = [t for t in a.targets.split(",") if t]
    for t in targets:
        validate_lang(t)
    translator = make_translator(a.translator)
    if a.translator.startswith("pseudo:"):
        run.input(a.translator[len("pseudo:"):])
    cache = TranslationCache(a.cache)
    # generated source records are the untranslated originals of the benchmark
    d = as_originals(load_corpus(run.input(a.input)))
    try:
        aug = augment_with_translations(d, targets, translator, cache)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_corpus(aug, run.output(run.out.name))
    calls = getattr(translator, "calls", None)
    print(f"{len(d)} records -> {len(aug)} records; translator calls: {calls}")


def cmd_synth(run: Run, a) -> None:
    cfg = run.cfg.synth
    bundle = generate_synthetic_corpus(cfg)
    for name in ("source.jsonl", "source_test.jsonl", "synth_spec.json",
                 *[f"{l}_{kind}.jsonl" for l in cfg.target_langs for kind in ("unlabeled", "test")]):
        run.output(name)
    bundle.write(run.out)
    print(f"wrote synthetic bundle for {', '.join(cfg.target_langs)} to {run.out}")


def cmd_train(run: Run, a) -> None:
    train = clean_dataset(_load(run, a.train, "train"))
    dev = clean_dataset(_load(run, a.dev, "dev")) if a.dev else None
    extra = [clean_dataset(_load(run, p)) for p in a.vocab_extra or []]
    vocab_src = Dataset.concat("vocab", [train, *extra])
    max_len = int(run.cfg.encoder.get("max_len", 128))
    tokenizer = build_vocab(vocab_src, max_len=max_len)
    make = encoder_factory(tokenizer, _encoder_cfg(run.cfg, tokenizer), run.cfg.seed)
    enc, cls = make()
    mode = "joint" if a.model == "baseline" else "split"
    res = train_supervised(enc, cls, tokenizer, train, dev, run.cfg.train, mode)
    save_checkpoint(run.output("model.npz"), encoder=res.encoder, classifier=res.classifier)
    tokenizer.save(run.output("tokenizer.json"))
    run.write_text("history.json", _dump({"model": a.model, "mode": mode,
                                          "epochs": [asdict(e) for e in res.history]}))
    last = res.history[-1] if res.history else None
    print(f"trained {a.model} ({mode}); final loss {last.loss if last else float('nan'):.4f}")


def _state_csv(state) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "discriminator_loss", "generator_adv_loss", "distillation_loss", "probe_accuracy"])
    for e in state.epochs:
        w.writerow([e.epoch, repr(e.discriminator_loss), repr(e.generator_adv_loss), repr(e.distillation_loss),
                    "" if e.probe_accuracy is None else repr(e.probe_accuracy)])
    return buf.getvalue()


def cmd_adapt(run: Run, a) -> None:
    enc, cls, tokenizer = _load_model(run, a.model_dir)
    pools = {lang: clean_dataset(_load(run, p, f"{lang}_unlabeled"))
             for lang, p in _lang_files(a.unlabeled, "--unlabeled").items()}
    if not pools:
        raise ConfigError("adapt needs at least one --unlabeled LANG=PATH")
    src = source_pool(clean_dataset(_load(run, a.source, "source")))
    probes = _lang_files(a.probe, "--probe")
    probe_src = clean_dataset(_load(run, a.probe_source, "probe_source")) if a.probe_source else None
    if probes and probe_src is None:
        raise ConfigError("--probe needs --probe-source")
    cfg = replace(run.cfg.adapt, update_scope=a.scope) if a.scope else run.cfg.adapt

    jobs: list[tuple[str, Dataset, Dataset | None]] = []
    if a.shared:
        pool = Dataset.concat("targets", list(pools.values()))
        jobs.append(("shared", pool, None))
    else:
        for lang, pool in pools.items():
            probe = clean_dataset(_load(run, probes[lang], f"{lang}_probe")) if lang in probes else None
            jobs.append((lang, pool, probe))
    for name, pool, probe in jobs:
        res = adapt_target_encoder(enc, cls, tokenizer, pool, src, cfg,
                                   probe=(probe_src, probe) if probe is not None else None)
        modules = {"encoder": res.target_encoder, "discriminator": res.discriminator}
        if cfg.update_scope == "encoder_and_classifier":
            modules["classifier"] = res.classifier
        save_checkpoint(run.output(f"adapted_{name}.npz"), **modules)
        run.write_text(f"adaptation_{name}.json", _dump(res.state.to_json()))
        run.write_text(f"adaptation_{name}.csv", _state_csv(res.state))
        last = res.state.epochs[-1] if res.state.epochs else None
        print(f"adapted {name}: " + (f"L_D {last.discriminator_loss:.4f}" if last else "no epochs"))


def cmd_evaluate(run: Run, a) -> None:
    tests = _lang_files(a.test, "--test")
    if not tests:
        raise ConfigError("evaluate needs at least one --test LANG=PATH")
    enc, cls, tokenizer = _load_model(run, a.model_dir)
    variant = a.variant or "model"
    reports = []
    for lang, path in tests.items():
        test = clean_dataset(_load(run, path, f"{lang}_test"))
        if any(r.label is None for r in test.records):
            raise InputError(f"{path}: test records must be labeled")
        e, c = enc, cls
        if a.adapted_dir:
            adir = Path(a.adapted_dir)
            ckpt = adir / f"adapted_{lang}.npz"
            if not ckpt.exists():
                ckpt = adir / "adapted_shared.npz"
            if not ckpt.exists():
                raise MissingArtifact(f"no adapted encoder for {lang} in {adir}")
            modules = load_checkpoint(run.input(ckpt))
            e = modules["encoder"]
            c = modules.get("classifier", cls)
        preds = predict(e, c, tokenizer, test.records)
        reports.append(MetricsReport.from_predictions(variant, lang, [int(r.label) for r in test.records],
                                                      [int(p) for p, _ in preds]))
    run.write_text("metrics.json", _dump(metrics_json(reports)))
    for r in reports:
        print(f"{variant} {r.lang}: macro F1 {r.macro_f1:.4f}")


def cmd_report(run: Run, a) -> None:
    reports = []
    for path in a.metrics:
        try:
            reports.extend(load_metrics(run.input(path)))
        except (ValueError, KeyError) as exc:
            raise InputError(f"{path}: {exc}") from None
    paths = render_report(reports, run.out)
    run.outputs.extend(p for p in paths.values() if p not in run.outputs)
    print(Path(paths["results"]).read_text(encoding="utf-8"), end="")


def cmd_run_matrix(run: Run, a) -> None:
    bundle_dir = run.input(a.bundle)
    if not (bundle_dir / "synth_spec.json").exists():
        raise MissingArtifact(f"{bundle_dir} is not a synthetic bundle (no synth_spec.json)")
    bundle = SynthBundle.load(bundle_dir)
    langs = tuple(a.langs.split(",")) if a.langs else tuple(bundle.tests)
    data = experiment_from_bundle(bundle, max_len=int(run.cfg.encoder.get("max_len", 128)))
    enc_cfg = _encoder_cfg(run.cfg, data.tokenizer)
    variants = None
    if a.models:
        variants = [VariantSpec(m, adv, langs) for m in a.models.split(",") for adv in (False, True)]
    m = run_matrix(data, langs, run.cfg.train, run.cfg.adapt, enc_cfg, run.cfg.seed, run.cfg.jobs, variants)
    paths = render_report(m.reports(), run.out)
    run.outputs.extend(paths.values())
    for v in m.variants:
        for name, res in v.adapted.items():
            run.write_text(f"adaptation_{v.spec.id.replace('+', '_plus_')}_{name}.json",
                           _dump(res.state.to_json()))
    print(paths["results"].read_text(encoding="utf-8"), end="")


COMMANDS: dict[str, tuple[Callable, bool]] = {
    # name -> (handler, --out names a directory)
    "prep": (cmd_prep, False),
    "augment": (cmd_augment, False),
    "synth": (cmd_synth, True),
    "train": (cmd_train, True),
    "adapt": (cmd_adapt, True),
    "evaluate": (cmd_evaluate, True),
    "report": (cmd_report, True),
    "run-matrix": (cmd_run_matrix, True),
}


# --------------------------------------------------------------------------
# argument parsing

def _parse_set(items: Sequence[str] | None) -> dict[str, Any]:
    from .config import _scalar
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _scalar(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config and environment)")
    common.add_argument("--out", required=True, help="output file (prep, augment) or directory")
    common.add_argument("--jobs", type=int, help="parallel per-language adaptations")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. train.learning_rate=2e-4")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="xstance", description="Zero-shot cross-lingual stance detection pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prep", parents=[common], help="harmonize labels, filter and clean a corpus")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--label-map")
    s.add_argument("--keep", nargs="+", choices=[lab.text for lab in StanceLabel],
                   help="classes to keep (default: all three)")

    s = sub.add_parser("augment", parents=[common], help="append translations of every record")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--targets", required=True, help="comma-separated language tags")
    s.add_argument("--translator", required=True, help="pseudo:<spec.json> or a registered adapter")
    s.add_argument("--cache", help="JSONL translation cache (created if missing)")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic pseudo-language bundle")
    s.add_argument("--imbalance", choices=["uniform", "table1b"])

    s = sub.add_parser("train", parents=[common], help="Step 1: supervised training")
    s.add_argument("--train", required=True)
    s.add_argument("--dev")
    s.add_argument("--vocab-extra", action="append", help="extra corpora for the vocabulary (repeatable)")
    s.add_argument("--model", choices=MODELS, default="mtab")

    s = sub.add_parser("adapt", parents=[common], help="Step 2: adversarial language adaptation")
    s.add_argument("--model-dir", required=True)
    s.add_argument("--source", required=True, help="labeled or unlabeled source-language corpus")
    s.add_argument("--unlabeled", action="append", metavar="LANG=PATH", required=True)
    s.add_argument("--scope", choices=["target_encoder_only", "encoder_and_classifier"])
    s.add_argument("--shared", action="store_true", help="adapt one encoder on the union of all pools")
    s.add_argument("--probe", action="append", metavar="LANG=PATH", help="held-out target texts for the probe")
    s.add_argument("--probe-source", help="held-out source texts for the probe")

    s = sub.add_parser("evaluate", parents=[common], help="Step 3: predict and score test sets")
    s.add_argument("--model-dir", required=True)
    s.add_argument("--adapted-dir")
    s.add_argument("--test", action="append", metavar="LANG=PATH", required=True)
    s.add_argument("--variant")

    s = sub.add_parser("report", parents=[common], help="render tables and figures from metrics files")
    s.add_argument("--metrics", action="append", required=True)

    s = sub.add_parser("run-matrix", parents=[common], help="all six variants on a synthetic bundle")
    s.add_argument("--bundle", required=True)
    s.add_argument("--langs")
    s.add_argument("--models", help="comma-separated subset of " + ",".join(MODELS))

    s = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    s.add_argument("manifest")
    s.add_argument("--out", help="write somewhere else instead of the recorded location")
    s.add_argument("-v", "--verbose", action="store_true")
    return p


_RUN_KEYS = ("config", "seed", "jobs", "set", "verbose", "command", "out")


def _recorded_args(a: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in _RUN_KEYS}


def _execute(command: str, args: dict, cfg: RunConfig, out: str) -> int:
    handler, out_is_dir = COMMANDS[command]
    ns = argparse.Namespace(**args)
    with Run(command, args, cfg, Path(out), out_is_dir) as run:
        handler(run, ns)
        run.finish()
    return 0


def _rerun(a) -> int:
    path = Path(a.manifest)
    if not path.exists():
        raise MissingArtifact(f"manifest not found: {path}")
    m = json.loads(path.read_text(encoding="utf-8"))
    if m.get("command") not in COMMANDS:
        raise InputError(f"{path}: unknown command {m.get('command')!r}")
    if m.get("artifact_version") != __version__:
        log.warning("manifest was written by version %s, this is %s", m.get("artifact_version"), __version__)
    for inp, digest in m.get("inputs", {}).items():
        p = Path(inp)
        if not p.exists():
            raise MissingArtifact(f"recorded input missing: {inp}")
        now = sha256_file(p) if p.is_file() else _dir_digest(p)
        if now != digest:
            raise InputError(f"recorded input changed since the run: {inp}")
    cfg = RunConfig.from_dict(m["config"])
    _, out_is_dir = COMMANDS[m["command"]]
    if a.out:
        out = a.out
    elif out_is_dir:
        out = str(path.parent)
    else:
        out = str(path.with_name(path.name[: -len(".manifest.json")]))
    return _execute(m["command"], m["args"], cfg, out)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    torch.set_num_threads(1)
    try:
        if a.command == "rerun":
            return _rerun(a)
        flags = _parse_set(a.set)
        flags.update({"seed": a.seed, "jobs": a.jobs})
        if a.command == "synth" and a.imbalance:
            flags["synth.imbalance"] = a.imbalance
        cfg = resolve(a.config, flags)
        return _execute(a.command, _recorded_args(a), cfg, a.out)
    except XStanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return MissingArtifact.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
