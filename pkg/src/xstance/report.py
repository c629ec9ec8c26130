"""Metrics JSON, the results table, and vector-graphics figures."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .corpus import StanceLabel  # noqa: E402
from .evaluation import METRICS_SCHEMA_VERSION, MetricsReport, average_macro_f1  # noqa: E402

LANG_NAMES = {"fr": "French", "de": "German", "it": "Italian", "en": "English"}
_LANG_ORDER = ("fr", "de", "it")
VARIANT_ORDER = ("baseline", "baseline+adv", "mtab_no_tl", "mtab_no_tl+adv", "mtab", "mtab+adv")

# fixed hash salt and no date stamp keep the SVG output byte-stable
plt.rcParams["svg.hashsalt"] = "xstance"
plt.rcParams["svg.fonttype"] = "path"


def _lang_key(lang: str):
    return (0, _LANG_ORDER.index(lang)) if lang in _LANG_ORDER else (1, lang)


def _variant_key(vid: str):
    return (0, VARIANT_ORDER.index(vid)) if vid in VARIANT_ORDER else (1, vid)


def ordered(reports: Sequence[MetricsReport]) -> tuple[list[str], list[str]]:
    langs = sorted({r.lang for r in reports}, key=_lang_key)
    variants = sorted({r.variant for r in reports}, key=_variant_key)
    return variants, langs


def metrics_json(reports: Sequence[MetricsReport]) -> dict:
    variants, langs = ordered(reports)
    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "languages": langs,
        "variants": variants,
        "reports": [r.to_json() for r in sorted(reports, key=lambda r: (_variant_key(r.variant), _lang_key(r.lang)))],
    }


def load_metrics(path: str | Path) -> list[MetricsReport]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("schema_version") != METRICS_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported metrics schema {obj.get('schema_version')!r}")
    return [MetricsReport.from_json(r) for r in obj["reports"]]


def results_csv(reports: Sequence[MetricsReport]) -> str:
    """Rows are variants, columns the languages then the unweighted Average."""
    variants, langs = ordered(reports)
    table = {(r.variant, r.lang): r for r in reports}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", *[LANG_NAMES.get(l, l) for l in langs], "Average"])
    for v in variants:
        row = [table.get((v, l)) for l in langs]
        present = [r for r in row if r is not None]
        w.writerow([v, *["" if r is None else f"{r.macro_f1:.4f}" for r in row],
                    f"{average_macro_f1(present):.4f}"])
    return buf.getvalue()


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def class_f1_chart(reports: Sequence[MetricsReport], lang: str, path: Path) -> None:
    variants = [r for r in reports if r.lang == lang]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(variants), 1)
    x = np.arange(len(StanceLabel))
    for i, r in enumerate(variants):
        ax.bar(x + i * width, r.f1, width, label=r.variant)
    ax.set_xticks(x + width * (len(variants) - 1) / 2, [lab.text for lab in StanceLabel])
    ax.set_ylim(0, 1)
    ax.set_ylabel("F1")
    ax.set_title(f"Class-wise F1 ({LANG_NAMES.get(lang, lang)})")
    if variants:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def incorrect_heatmap(report: MetricsReport, path: Path) -> None:
    m = np.asarray(report.incorrect)
    names = [lab.text for lab in StanceLabel]
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.imshow(m, vmin=0, vmax=1, cmap="Blues")
    for (i, j), v in np.ndenumerate(m):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=8)
    ax.set_xticks(range(3), names)
    ax.set_yticks(range(3), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    ax.set_title(f"Errors: {report.variant} / {report.lang}")
    fig.tight_layout()
    _save(fig, path)


def _safe(name: str) -> str:
    return name.replace("+", "_plus_").replace("/", "_")


def render_report(reports: Sequence[MetricsReport], out_dir: str | Path) -> dict[str, Path]:
    """Write metrics.json, results.csv and per-language SVG figures."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"metrics": out / "metrics.json", "results": out / "results.csv"}
        paths["metrics"].write_text(json.dumps(metrics_json(reports), indent=1, sort_keys=True) + "\n",
                                    encoding="utf-8")
        paths["results"].write_text(results_csv(reports), encoding="utf-8", newline="")
        _, langs = ordered(reports)
        for lang in langs:
            p = out / f"class_f1_{_safe(lang)}.svg"
            class_f1_chart(reports, lang, p)
            paths[p.stem] = p
        for r in reports:
            p = out / f"errors_{_safe(r.variant)}_{_safe(r.lang)}.svg"
            incorrect_heatmap(r, p)
            paths[p.stem] = p
    except OSError as exc:
        raise OSError(f"could not write report to {exc.filename or out}: {exc.strerror}") from exc
    return paths
