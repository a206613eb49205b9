"""Metric CSVs, grouped tables and plot-ready series."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from ..room.geometry import ANGLE_BIN_EDGES_DEG
from .evaluate import DRR_BINS

COLUMNS = ("system", "condition", "scene_id", "num_speakers", "angle_bin", "drr_db", "drr_bin",
           "si_snr", "si_snri", "estoi")
METRICS = ("si_snr", "si_snri", "estoi")
EMPTY = "—"
PESQ_NOTE = "PESQ: unavailable (not implemented)"

ANGLE_BINS = tuple(f"{lo:g}-{hi:g}" for lo, hi in zip(ANGLE_BIN_EDGES_DEG[:-1], ANGLE_BIN_EDGES_DEG[1:]))
GROUPINGS = {"angle_bin": ANGLE_BINS, "num_speakers": None, "drr_bin": DRR_BINS}


def _cell(v) -> str:
    # repr round-trips floats exactly
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics_csv(rows, path=None) -> str:
    """Serialize rows in a canonical order; returns the CSV text (and writes it when ``path`` is given)."""
    ordered = sorted(rows, key=lambda r: (r["system"], r.get("condition", ""), r["scene_id"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in ordered:
        w.writerow([_cell(r.get(c, "")) for c in COLUMNS])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("drr_db", *METRICS):
            r[k] = float(r[k])
        r["num_speakers"] = int(r["num_speakers"])
    return rows


def mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def system_key(r) -> str:
    return r["system"] if not r.get("condition") else f"{r['system']}@{r['condition']}"


def summarize(rows, metric: str = "si_snri", by: str | None = None) -> dict:
    """``{system: {bin: mean}}``; ``by=None`` gives the overall mean under key ``"all"``."""
    groups: dict = {}
    for r in rows:
        key = "all" if by is None else str(r[by])
        groups.setdefault(system_key(r), {}).setdefault(key, []).append(r[metric])
    return {s: {k: mean(v) for k, v in sorted(g.items())} for s, g in groups.items()}


def _bins_for(rows, by: str) -> list[str]:
    fixed = GROUPINGS.get(by)
    if fixed:
        return list(fixed)
    return sorted({str(r[by]) for r in rows}, key=lambda s: (len(s), s))


def _fmt(v) -> str:
    return EMPTY if v is None else f"{v:.2f}"


def markdown_table(rows, metric: str = "si_snri", by: str = "angle_bin") -> str:
    """Systems as rows, bins of ``by`` as columns, plus the overall average."""
    bins = _bins_for(rows, by)
    per = summarize(rows, metric, by)
    overall = summarize(rows, metric)
    lines = [f"| system | {' | '.join(bins)} | average |",
             "|" + "---|" * (len(bins) + 2)]
    for s in _systems(rows):
        cells = [_fmt(per[s].get(b)) for b in bins]
        lines.append(f"| {s} | {' | '.join(cells)} | {_fmt(overall[s]['all'])} |")
    return "\n".join(lines)


def _systems(rows) -> list[str]:
    seen = []
    for r in rows:
        k = system_key(r)
        if k not in seen:
            seen.append(k)
    # unprocessed first, the rest alphabetically
    return sorted(seen, key=lambda s: (s != "unprocessed", s))


def markdown_report(rows, title: str = "Evaluation") -> str:
    parts = [f"# {title}", "", PESQ_NOTE, ""]
    for by in GROUPINGS:
        for metric in METRICS:
            parts += [f"## {metric} by {by}", "", markdown_table(rows, metric, by), ""]
    return "\n".join(parts)


def lambda_table(entries) -> str:
    """``entries``: iterable of ``(lam, rows)``; one line per lambda, sorted ascending."""
    lines = ["| lambda | si_snr | si_snri | estoi |", "|---|---|---|---|"]
    for lam, rows in sorted(entries, key=lambda e: e[0]):
        cells = [_fmt(mean(r[m] for r in rows)) if rows else EMPTY for m in METRICS]
        lines.append(f"| {lam:g} | {' | '.join(cells)} |")
    return "\n".join(lines)


def plot_series(rows) -> dict:
    """Bin-ordered series per grouping, metric and system (no plotting done here)."""
    out = {}
    for by in GROUPINGS:
        bins = _bins_for(rows, by)
        out[by] = {"bins": bins}
        for metric in METRICS:
            per = summarize(rows, metric, by)
            out[by][metric] = {s: [per[s].get(b) for b in bins] for s in _systems(rows)}
    return out


def write_report(rows, out_dir, title: str = "Evaluation") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "metrics.csv", "markdown": out / "report.md", "series": out / "series.json"}
    write_metrics_csv(rows, paths["csv"])
    paths["markdown"].write_text(markdown_report(rows, title))
    paths["series"].write_text(json.dumps(plot_series(rows), indent=2, sort_keys=True))
    return {k: str(v) for k, v in paths.items()}
