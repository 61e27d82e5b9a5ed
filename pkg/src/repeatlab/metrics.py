"""Evaluation, seed aggregation, CSV/JSON writers and a small SVG line plotter."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from repeatlab.errors import ConfigurationError, OutputError, PlottingError
from repeatlab.model import predict, signs
from repeatlab.stats import median_iqr

SCHEMA_VERSION = "1"
BASE_COLUMNS = ["run_id", "seed", "phase", "step", "compute", "train_acc", "test_acc",
                "train_loss", "test_loss", "norm_ratio"]
BUCKET_RATIO = 1.1


@dataclass
class MetricsRow:
    run_id: str
    seed: int
    phase: int
    step: int
    compute: int
    train_acc: Optional[float]
    test_acc: Optional[float]
    train_loss: float
    test_loss: float
    norm_ratio: float
    layer_norms: List[float] = field(default_factory=list)


@dataclass
class AggregateRow:
    group: str
    bucket: float
    mean: float
    median: float
    iqr: float
    success_prob: float
    n_seeds: int
    n_failed: int


def evaluate(params, test_ds, loss_kind: str = "mse"):
    """Full-pass ``(acc, loss)``; ``acc`` is None for real-valued (sim) labels."""
    if test_ds is None or test_ds.N == 0:
        raise ConfigurationError("evaluation needs a non-empty test set")
    preds = predict(params, test_ds.X)
    y = test_ds.y
    if loss_kind == "mse":
        loss = float(np.mean((preds - y) ** 2))
    elif loss_kind == "correlation":
        loss = -float(np.mean(y * preds))
    else:
        raise ConfigurationError(f"unknown loss kind {loss_kind!r}")
    acc = float(np.mean(signs(preds) == y)) if test_ds.task.kind == "parity" else None
    return acc, loss


# ---------------------------------------------------------------- aggregation

def compute_bucket(c: float, ratio: float = BUCKET_RATIO) -> float:
    """Lower edge of the geometric bucket holding ``c`` (buckets ``ratio**j``)."""
    if c <= 0:
        return 0.0
    j = math.floor(math.log(c) / math.log(ratio) + 1e-12)
    return float(ratio ** j)


def _metric(row: MetricsRow, name: str):
    v = getattr(row, name)
    return None if v is None else float(v)


def aggregate(rows: Iterable[MetricsRow], key: Callable[[MetricsRow], str] = lambda r: r.run_id.split("/")[0],
              threshold: float = 0.99, metric: str = "test_acc", bucket: str = "step") -> List[AggregateRow]:
    """Per-(group, bucket) statistics over seeds.

    ``bucket`` is ``"step"`` or ``"compute"`` (geometric buckets, ratio 1.1).
    Within a bucket each seed contributes its last row. A seed "succeeds" in a
    bucket when its metric is at or above ``threshold``; ``n_failed`` counts the
    seeds whose value is missing or non-finite (diverged runs).
    """
    cells = defaultdict(dict)
    for r in rows:
        b = float(r.step) if bucket == "step" else compute_bucket(r.compute)
        prev = cells[(key(r), b)].get(r.seed)
        if prev is None or (r.step, r.compute) >= (prev.step, prev.compute):
            cells[(key(r), b)][r.seed] = r
    out = []
    for (g, b) in sorted(cells):
        per_seed = cells[(g, b)]
        vals = [_metric(per_seed[s], metric) for s in sorted(per_seed)]
        good = [v for v in vals if v is not None and math.isfinite(v)]
        n_failed = len(vals) - len(good)
        med, iqr = median_iqr(good)
        mean = float(np.mean(good)) if good else math.nan
        succ = sum(v >= threshold for v in good) / len(vals) if vals else 0.0
        out.append(AggregateRow(g, b, mean, med, iqr, succ, len(vals), n_failed))
    return out


def steps_summary(values: Sequence[float]):
    """Median / IQR over successful seeds plus failure count; inf marks failure."""
    vals = [float(v) for v in values]
    ok = [v for v in vals if math.isfinite(v)]
    med, iqr = median_iqr(ok)
    return {"median": med, "iqr": iqr if len(ok) > 1 else (0.0 if ok else math.nan),
            "n_seeds": len(vals), "n_failed": len(vals) - len(ok),
            "success_prob": len(ok) / len(vals) if vals else 0.0}


# ---------------------------------------------------------------- writers

def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def parse_cell(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def metrics_header(n_layers: int) -> List[str]:
    return BASE_COLUMNS + [f"layer_norm_{i + 1}" for i in range(n_layers)]


def _write_text(path, text: str) -> None:
    path = os.fspath(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_csv(rows: Sequence[MetricsRow], path, n_layers: Optional[int] = None) -> None:
    """Write metrics rows with the fixed column order; floats at 17 significant digits."""
    if n_layers is None:
        n_layers = max((len(r.layer_norms) for r in rows), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(metrics_header(n_layers))
    for r in rows:
        norms = list(r.layer_norms) + [None] * (n_layers - len(r.layer_norms))
        w.writerow([fmt(getattr(r, c)) for c in BASE_COLUMNS] + [fmt(v) for v in norms])
    _write_text(path, buf.getvalue())


def read_csv(path) -> List[MetricsRow]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            body = list(reader)
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if header is None or header[:len(BASE_COLUMNS)] != BASE_COLUMNS:
        raise ConfigurationError(f"{path} is not a metrics CSV")
    rows = []
    for line in body:
        vals = [parse_cell(c) for c in line]
        base = dict(zip(BASE_COLUMNS, vals))
        base["run_id"] = str(base["run_id"])
        norms = [v for v in vals[len(BASE_COLUMNS):] if v is not None]
        rows.append(MetricsRow(**base, layer_norms=norms))
    return rows


def write_table(records: Sequence[dict], path, columns: Optional[Sequence[str]] = None) -> None:
    """CSV for summary-style records; column order is ``columns`` or first-seen key order."""
    if columns is None:
        columns = []
        for rec in records:
            columns.extend(k for k in rec if k not in columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([fmt(rec.get(c)) for c in columns])
    _write_text(path, buf.getvalue())


def read_table(path) -> List[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [{k: parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def write_json(report: dict, path) -> None:
    """Single JSON object with ``schema_version`` first; keys sorted, non-finite floats as strings."""
    body = {"schema_version": SCHEMA_VERSION}
    body.update({k: v for k, v in _jsonable(report).items() if k != "schema_version"})
    _write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- SVG plots

@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


@dataclass
class AxesSpec:
    xlabel: str = "step"
    ylabel: str = ""
    title: str = ""
    logx: bool = False
    logy: bool = False
    width: int = 640
    height: int = 400


PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _nice_ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def plot_series(series: Sequence[Series], axes: AxesSpec, path) -> None:
    """Render line series to a standalone SVG (one polyline per series, legend in input order)."""
    if not series:
        raise PlottingError("no series to plot")
    tx = (lambda v: math.log10(v)) if axes.logx else float
    ty = (lambda v: math.log10(v)) if axes.logy else float
    pts_all = []
    for s in series:
        if len(s.x) == 0 or len(s.x) != len(s.y):
            raise PlottingError(f"series {s.label!r} is empty or has mismatched x/y lengths")
        xs = [float(v) for v in s.x]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise PlottingError(f"series {s.label!r}: x values must be strictly increasing")
        if axes.logx and min(xs) <= 0:
            raise PlottingError(f"series {s.label!r}: log-x axis needs positive x values")
        ys = [float(v) for v in s.y]
        if axes.logy and any(v <= 0 for v in ys if math.isfinite(v)):
            raise PlottingError(f"series {s.label!r}: log-y axis needs positive y values")
        pts_all.append([(tx(a), ty(b)) for a, b in zip(xs, ys) if math.isfinite(b)])

    flat = [p for pts in pts_all for p in pts]
    if not flat:
        raise PlottingError("all y values are non-finite")
    x0, x1 = min(p[0] for p in flat), max(p[0] for p in flat)
    y0, y1 = min(p[1] for p in flat), max(p[1] for p in flat)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    W, H = axes.width, axes.height
    L, R, T, B = 70, 160, 40, 50
    pw, ph = W - L - R, H - T - B

    def sx(v):
        return L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return T + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _nice_ticks(x0, x1):
        lab = f"{10 ** t:.3g}" if axes.logx else f"{t:.4g}"
        out.append(f'<line x1="{sx(t):.2f}" y1="{T + ph}" x2="{sx(t):.2f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{T + ph + 18}" font-size="11" text-anchor="middle">{lab}</text>')
    for t in _nice_ticks(y0, y1):
        lab = f"{10 ** t:.3g}" if axes.logy else f"{t:.4g}"
        out.append(f'<line x1="{L - 5}" y1="{sy(t):.2f}" x2="{L}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{sy(t) + 4:.2f}" font-size="11" text-anchor="end">{lab}</text>')
    if axes.title:
        out.append(f'<text x="{L + pw / 2}" y="22" font-size="14" text-anchor="middle">{_esc(axes.title)}</text>')
    out.append(f'<text x="{L + pw / 2}" y="{H - 10}" font-size="12" text-anchor="middle">{_esc(axes.xlabel)}</text>')
    out.append(f'<text x="16" y="{T + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {T + ph / 2})">{_esc(axes.ylabel)}</text>')
    for i, (s, pts) in enumerate(zip(series, pts_all)):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = T + 14 + 18 * i
        out.append(f'<line class="legend" x1="{L + pw + 12}" y1="{ly}" x2="{L + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{L + pw + 38}" y="{ly + 4}" font-size="11">{_esc(s.label)}</text>')
    out.append("</svg>")
    _write_text(path, "\n".join(out) + "\n")
