"""Summaries of raw study results: selection-rate tables and RMSE quartiles."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .study import SELECTING

MODEL_ORDER = ("lmm", "ltsc", "ltscb", "ttsc", "null", "perfect")
LABELS = {"lmm": "LMM", "ltsc": "LTSC", "ltscb": "LTSCB", "ttsc": "TTSC", "null": "Null", "perfect": "Perfect"}


def _model_key(m: pd.Index) -> pd.Index:
    return m.map(lambda v: MODEL_ORDER.index(v) if v in MODEL_ORDER else len(MODEL_ORDER))


def selection_rates(raw: pd.DataFrame) -> pd.DataFrame:
    """Mean TPR and FPR per scenario, setting and selecting model."""
    sel = raw[raw["model"].isin(SELECTING)]
    out = sel.groupby(["scenario", "setting", "model"], sort=True)[["tpr", "fpr"]].mean().reset_index()
    return out.sort_values(["scenario", "setting", "model"], key=lambda c: _model_key(c) if c.name == "model" else c)


def rmse_quartiles(raw: pd.DataFrame) -> pd.DataFrame:
    """First quartile, median and third quartile of both RMSEs (boxplot data)."""
    rows = []
    for (sc, st, model), g in raw.groupby(["scenario", "setting", "model"], sort=True):
        for metric in ("rmse_x", "rmse_i"):
            v = g[metric].to_numpy(dtype=float)
            q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
            rows.append(
                {"scenario": sc, "setting": st, "model": model, "metric": metric,
                 "n": len(v), "q1": q1, "median": med, "q3": q3, "min": v.min(), "max": v.max()}
            )
    out = pd.DataFrame(rows)
    if out.empty:
        return out
    return out.sort_values(["scenario", "metric", "setting", "model"], key=lambda c: _model_key(c) if c.name == "model" else c)


def _markdown(df: pd.DataFrame, floatfmt: str = "{:.3f}") -> str:
    cols = [str(c) for c in df.columns]
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for _, row in df.iterrows():
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append("" if np.isnan(v) else floatfmt.format(v))
            else:
                cells.append(str(v))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def _wide(df: pd.DataFrame, value: str) -> pd.DataFrame:
    wide = df.pivot(index="model", columns="setting", values=value)
    wide = wide.loc[sorted(wide.index, key=lambda m: MODEL_ORDER.index(m) if m in MODEL_ORDER else 99)]
    wide.columns = [f"setting {c}" for c in wide.columns]
    wide.insert(0, "model", [LABELS.get(m, m) for m in wide.index])
    return wide.reset_index(drop=True)


def render_markdown(raw: pd.DataFrame) -> str:
    """One section per scenario: TPR and FPR means, then RMSE medians [Q1, Q3]."""
    if raw.empty:
        raise ValueError("no results to summarize")
    rates = selection_rates(raw)
    quart = rmse_quartiles(raw)
    out = ["# Simulation summary", ""]
    reps = raw.groupby(["scenario", "setting", "model"]).size()
    out.append(f"Replications per cell: {reps.min()}-{reps.max()}." if reps.min() != reps.max() else f"Replications per cell: {reps.min()}.")
    out.append("")
    for sc in sorted(raw["scenario"].unique()):
        out += [f"## Scenario {sc}", ""]
        r = rates[rates["scenario"] == sc]
        if not r.empty:
            for name in ("tpr", "fpr"):
                out += [f"Mean {name.upper()}", "", _markdown(_wide(r, name)), ""]
        q = quart[quart["scenario"] == sc].copy()
        for metric, title in (("rmse_x", "RMSE_X"), ("rmse_i", "RMSE_I")):
            m = q[q["metric"] == metric].copy()
            m["cell"] = [f"{a:.3f} [{b:.3f}, {c:.3f}]" for a, b, c in zip(m["median"], m["q1"], m["q3"])]
            out += [f"Median {title} [Q1, Q3]", "", _markdown(_wide(m, "cell")), ""]
    return "\n".join(out)


def read_results(path: str | Path) -> pd.DataFrame:
    """Read a raw results CSV; the model name ``null`` must not become NaN."""
    return pd.read_csv(path, keep_default_na=False, na_values=["", "NaN", "nan"], dtype={"model": str})


def write_report(raw: pd.DataFrame, out: str | Path) -> tuple[Path, Path]:
    """Write the Markdown summary and a sibling ``*_rmse_quartiles.csv``."""
    out = Path(out)
    out.write_text(render_markdown(raw), encoding="utf-8")
    qpath = out.with_name(out.stem + "_rmse_quartiles.csv")
    rmse_quartiles(raw).to_csv(qpath, index=False, float_format="%.17g")
    return out, qpath
