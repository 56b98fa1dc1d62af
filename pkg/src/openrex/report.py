"""Report emission: structured JSON, a flat summary for sweep scripts, and
rendered figures alongside the delimited output."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport
from .probe import ProbeRow

_COLUMNS = [
    ("b3_precision", "B3 Prec."),
    ("b3_recall", "B3 Rec."),
    ("b3_f1", "B3 F1"),
    ("v_homogeneity", "V Hom."),
    ("v_completeness", "V Comp."),
    ("v_f1", "V F1"),
    ("ari", "ARI"),
    ("cls_precision", "Cls Prec."),
    ("cls_recall", "Cls Rec."),
    ("cls_f1", "Cls F1"),
    ("accuracy", "Accuracy"),
]


def write_report_json(report: EvalReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def write_report_tsv(report: EvalReport, path: str | Path) -> None:
    """Two lines: a header and the values, one column per metric."""
    keys = [key for key, _ in _COLUMNS] + ["pass_at_k"]
    values = [f"{getattr(report, key):.6f}" for key, _ in _COLUMNS]
    values.append("" if report.pass_at_k is None else f"{report.pass_at_k:.6f}")
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\t".join(keys) + "\n")
        fh.write("\t".join(values) + "\n")


def render_report_figure(report: EvalReport, path: str | Path) -> None:
    labels = [label for _, label in _COLUMNS]
    values = [getattr(report, key) for key, _ in _COLUMNS]
    if report.pass_at_k is not None:
        labels.append("Pass@K")
        values.append(report.pass_at_k)
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(labels)), 4))
    bars = ax.bar(range(len(values)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(min(0.0, min(values)), 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"{report.instances} instances, {report.gold_classes} gold classes")
    for bar, value in zip(bars, values):
        ax.annotate(
            f"{value:.3f}",
            (bar.get_x() + bar.get_width() / 2, value),
            ha="center",
            va="bottom",
            fontsize=7,
        )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_probe_json(rows: Sequence[ProbeRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in rows], fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def write_probe_tsv(rows: Sequence[ProbeRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("setting\tdemo_count\tinstances\thits\taccuracy\n")
        for r in rows:
            fh.write(f"{r.setting}\t{r.demo_count}\t{r.instances}\t{r.hits}\t{r.accuracy:.6f}\n")


def render_probe_figure(rows: Sequence[ProbeRow], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    styles = {
        "no_demos": ("red", "--", "s"),
        "demos_without_target": ("#c8a000", "-", "*"),
        "demos_with_target": ("green", "-", "*"),
    }
    for setting in sorted({r.setting for r in rows}):
        points = sorted((r.demo_count, r.accuracy) for r in rows if r.setting == setting)
        color, linestyle, marker = styles.get(setting, ("gray", "-", "o"))
        ax.plot(
            [p[0] for p in points],
            [p[1] for p in points],
            label=setting.replace("_", " "),
            color=color,
            linestyle=linestyle,
            marker=marker,
        )
    ax.set_xlabel("demonstrations")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
