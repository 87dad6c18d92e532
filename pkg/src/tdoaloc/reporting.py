"""Aggregation of frame-level results into tables and figures.

The frame-level CSV is the source of truth: everything here recomputes from it
so any report can be regenerated (or independently checked) from that file
alone. Output is a wide CSV shaped like the summary table (one row per
condition and metric, one column per method), a markdown rendering, and bar
charts per metric saved as PNG files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt

METRIC_LABELS = {
    "sigma_ms": "mean TDOA error [ms]",
    "eps_cm": "mean position error [cm]",
    "acc_pct": "position accuracy at 10 cm [%]",
}
CONDITION_ORDER = ("anechoic", "low", "med", "high")

FIGURE_STYLE = {
    "figure.figsize": (7.0, 3.2),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.axisbelow": True,
    "legend.fontsize": 8,
}


def aggregate(results_csv) -> pd.DataFrame:
    """Per (condition, method) metrics recomputed from the frame-level CSV."""
    df = pd.read_csv(results_csv)
    if df.empty:
        raise ValueError(f"{results_csv} holds no frame rows")
    grouped = df.groupby(["condition", "method"], sort=False)
    out = grouped.apply(
        lambda g: pd.Series({
            "sigma_ms": g["sigma_frame_ms"].mean(),
            "eps_cm": g["pos_err_cm"].mean(),
            "acc_pct": 100.0 * (g["pos_err_cm"] <= 10.0).mean(),
            "snapshots": len(g),
        }),
        include_groups=False,
    ).reset_index()
    out["snapshots"] = out["snapshots"].astype(int)
    return out


def _ordered(values, canonical):
    seen = [v for v in canonical if v in values]
    return seen + [v for v in values if v not in seen]


def wide_table(agg: pd.DataFrame, methods=None) -> pd.DataFrame:
    """Rows (condition, metric), one column per method."""
    methods = _ordered(set(agg["method"]), methods or ())
    conditions = _ordered(set(agg["condition"]), CONDITION_ORDER)
    rows = []
    for cond in conditions:
        sub = agg[agg["condition"] == cond].set_index("method")
        for metric in METRIC_LABELS:
            row = {"condition": cond, "metric": metric}
            for m in methods:
                row[m] = sub.loc[m, metric] if m in sub.index else np.nan
            rows.append(row)
    return pd.DataFrame(rows)


def write_markdown(agg: pd.DataFrame, table: pd.DataFrame, path) -> None:
    methods = [c for c in table.columns if c not in ("condition", "metric")]
    lines = [
        "# TDOA estimation and localization results",
        "",
        "Snapshot selection uses the clean reference signal when available",
        "(oracle voice activity); all metrics average over snapshot frames only.",
        "",
    ]
    for cond in _ordered(set(table["condition"]), CONDITION_ORDER):
        sub = table[table["condition"] == cond]
        count = agg[agg["condition"] == cond]["snapshots"].max()
        lines.append(f"## Condition: {cond} ({count} snapshots per method)")
        lines.append("")
        lines.append("| metric | " + " | ".join(methods) + " |")
        lines.append("|---" * (len(methods) + 1) + "|")
        for _, row in sub.iterrows():
            cells = " | ".join(
                "" if np.isnan(row[m]) else f"{row[m]:.3g}" for m in methods
            )
            lines.append(f"| {METRIC_LABELS[row['metric']]} | {cells} |")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def render_figures(agg: pd.DataFrame, out_dir, methods=None) -> list[Path]:
    """One grouped bar chart per metric, written as PNG next to the tables."""
    out_dir = Path(out_dir)
    methods = _ordered(set(agg["method"]), methods or ())
    conditions = _ordered(set(agg["condition"]), CONDITION_ORDER)
    paths = []
    with plt.rc_context(FIGURE_STYLE):
        for metric, label in METRIC_LABELS.items():
            fig, ax = plt.subplots()
            x = np.arange(len(conditions))
            width = 0.8 / max(len(methods), 1)
            for k, m in enumerate(methods):
                vals = [
                    agg[(agg["condition"] == c) & (agg["method"] == m)][metric].mean()
                    for c in conditions
                ]
                ax.bar(x + (k - (len(methods) - 1) / 2) * width, vals, width, label=m)
            ax.set_xticks(x)
            ax.set_xticklabels(conditions)
            ax.set_xlabel("reverberation condition")
            ax.set_ylabel(label)
            ax.legend(ncols=min(len(methods), 6))
            fig.tight_layout()
            path = out_dir / f"report_{metric}.png"
            fig.savefig(path)
            plt.close(fig)
            paths.append(path)
    return paths


def write_report(results_csv, out_dir, methods=None) -> pd.DataFrame:
    """Recompute all metrics from the frame CSV; write report.csv, report.md,
    and the metric figures. Returns the long-format aggregate."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(results_csv)
    table = wide_table(agg, methods)
    float_cols = [c for c in table.columns if c not in ("condition", "metric")]
    formatted = table.copy()
    formatted[float_cols] = formatted[float_cols].map(
        lambda v: "" if np.isnan(v) else f"{v:.9g}"
    )
    formatted.to_csv(out_dir / "report.csv", index=False)
    write_markdown(agg, table, out_dir / "report.md")
    render_figures(agg, out_dir, methods)
    return agg
