"""Per-subgroup metric reports for one or two models.

Rendering formats are ``csv``, ``markdown``, ``json`` and ``svg-heatmap``.
The first three print every metric with ``repr`` precision, so no value is
lost.  Absent metrics are empty cells.

Heatmap colours use fixed anchors so reports are comparable side by side:

* AUCs (subgroup, BPSN, BNSP): 0.5 red ``#b2182b``, 0.75 yellow ``#fee08b``,
  1.0 green ``#1a9850``; values below 0.5 clamp to red.
* AEGs (negative, positive): -0.5 blue ``#2166ac``, 0 near-white
  ``#f7f7f7``, +0.5 red ``#b2182b``.

Colours between anchors are linear in RGB.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from array import array
from datetime import datetime, timezone
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from .datasets import SliceFilter, apply_slice
from .errors import MissingScore, NoQualifyingSubgroups, ScoreCoverageGap, UnsupportedFormat
from .metrics import METRIC_NAMES, BiasMetricsRow, LabeledExample, bias_rows, partition

FIELDS = ("subgroup", "n_bg_neg", "n_bg_pos", "n_sg_neg", "n_sg_pos") + METRIC_NAMES
FORMATS = ("csv", "markdown", "json", "svg-heatmap")
AUC_METRICS = METRIC_NAMES[:3]
AEG_METRICS = METRIC_NAMES[3:]


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.replace(microsecond=0).isoformat()


@dataclass(frozen=True)
class EvalReport:
    models: tuple[str, ...]
    rows: Mapping[str, tuple[BiasMetricsRow, ...]]
    max_chars: Optional[int] = None
    min_subgroup_count: int = 0
    dataset_id: str = ""
    sort_by: str = "subgroup_auc"
    generated_at: str = field(default_factory=_timestamp)

    def __post_init__(self) -> None:
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "rows", {m: tuple(self.rows[m]) for m in self.models})
        if not 1 <= len(self.models) <= 2:
            raise ValueError("a report covers one or two models")
        ids = [tuple(r.subgroup_id for r in self.rows[m]) for m in self.models]
        if len(ids) == 2 and ids[0] != ids[1]:
            raise ValueError("paired model rows must cover the same subgroups in the same order")

    @property
    def subgroups(self) -> list[str]:
        return [r.subgroup_id for r in self.rows[self.models[0]]]

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "slice": {
                "max_chars": self.max_chars,
                "min_subgroup_count": self.min_subgroup_count,
                "dataset_id": self.dataset_id,
            },
            "sort_by": self.sort_by,
            "generated_at": self.generated_at,
            "rows": {m: [r.to_dict() for r in self.rows[m]] for m in self.models},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        sl = d.get("slice", {})
        return cls(
            models=tuple(d["models"]),
            rows={m: tuple(BiasMetricsRow.from_dict(r) for r in d["rows"][m]) for m in d["models"]},
            max_chars=sl.get("max_chars"),
            min_subgroup_count=sl.get("min_subgroup_count", 0),
            dataset_id=sl.get("dataset_id", ""),
            sort_by=d.get("sort_by", "subgroup_auc"),
            generated_at=d.get("generated_at", ""),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "EvalReport":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# building


class _Columns:
    """Compact columnar copy of the in-slice examples."""

    def __init__(self, models: Sequence[str]):
        self.labels = bytearray()
        self.scores = {m: array("d") for m in models}
        self.members: dict[str, array] = {}
        self.n = 0

    def add(self, ex: LabeledExample, scores: Mapping[str, float]) -> None:
        for m, s in scores.items():
            self.scores[m].append(s)
        self.labels.append(int(ex.label))
        for tag in ex.subgroups:
            idx = self.members.get(tag)
            if idx is None:
                idx = self.members[tag] = array("q")
            idx.append(self.n)
        self.n += 1


def _sort_key(metric: str):
    def key(row: BiasMetricsRow):
        v = row.metric(metric)
        return (v is None, v if v is not None else 0.0, row.subgroup_id)

    return key


def build_report(
    dataset: Iterable[LabeledExample],
    subgroups: Optional[Sequence[str]] = None,
    filter: SliceFilter = SliceFilter(),
    models: Optional[Mapping[str, Mapping[str, float]]] = None,
    *,
    model_name: str = "model",
    sort_by: str = "subgroup_auc",
    threads: Optional[int] = None,
    dataset_id: str = "",
    generated_at: Optional[str] = None,
) -> EvalReport:
    """Compute the metric suite per qualifying subgroup and model.

    ``models`` maps a model name to an ``{example id: score}`` mapping; when
    omitted, the examples' own scores are used under ``model_name``.  A
    subgroup qualifies when it has at least ``filter.min_subgroup_count``
    (and at least one) in-slice examples.  Rows are sorted ascending by
    ``sort_by`` so the worst subgroups lead, absent values last; a second
    model's rows follow the first model's order.
    """
    if sort_by not in METRIC_NAMES:
        raise ValueError(f"sort_by must be one of {METRIC_NAMES}")
    names = [model_name] if models is None else list(models)
    if not 1 <= len(names) <= 2:
        raise ValueError("build_report compares one or two models")

    cols = _Columns(names)
    gaps: dict[str, list[str]] = {m: [] for m in names}
    for ex in apply_slice(dataset, filter):
        if models is None:
            if ex.score is None:
                raise MissingScore(f"example {ex.id!r} has no score")
            scores = {model_name: ex.score}
        else:
            scores = {}
            for m in names:
                s = models[m].get(ex.id)
                if s is None:
                    gaps[m].append(ex.id)
                    s = 0.0
                scores[m] = s
        cols.add(ex, scores)
    for m in names:
        if gaps[m]:
            raise ScoreCoverageGap(m, gaps[m])

    candidates = sorted(cols.members) if subgroups is None else list(dict.fromkeys(subgroups))
    floor = max(filter.min_subgroup_count, 1)
    qualifying = [g for g in candidates if g in cols.members and len(cols.members[g]) >= floor]
    if not qualifying:
        raise NoQualifyingSubgroups(
            f"no subgroup has at least {floor} in-slice example(s) ({cols.n} example(s) in slice)"
        )

    labels = np.frombuffer(bytes(cols.labels), dtype=np.uint8).astype(bool)
    members = {g: np.frombuffer(cols.members[g], dtype=np.int64) for g in qualifying}
    rows: dict[str, list[BiasMetricsRow]] = {}
    pool = ThreadPoolExecutor(threads) if threads and threads > 1 else None
    try:
        for m in names:
            scores = np.frombuffer(cols.scores[m], dtype=np.float64)
            rows[m] = bias_rows(scores, labels, members, subgroups=qualifying, executor=pool)
    finally:
        if pool is not None:
            pool.shutdown()

    first = sorted(rows[names[0]], key=_sort_key(sort_by))
    order = {r.subgroup_id: i for i, r in enumerate(first)}
    ordered = {m: sorted(rows[m], key=lambda r: order[r.subgroup_id]) for m in names}
    return EvalReport(
        models=tuple(names),
        rows=ordered,
        max_chars=filter.max_chars,
        min_subgroup_count=filter.min_subgroup_count,
        dataset_id=dataset_id,
        sort_by=sort_by,
        generated_at=generated_at or _timestamp(),
    )


# ---------------------------------------------------------------------------
# rendering


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _table_rows(report: EvalReport):
    for m in report.models:
        for r in report.rows[m]:
            d = r.to_dict()
            yield m, [d[f] for f in FIELDS]


def render_csv(report: EvalReport) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model",) + FIELDS)
    for m, values in _table_rows(report):
        w.writerow([m] + [_cell(v) for v in values])
    return buf.getvalue().encode("utf-8")


def render_markdown(report: EvalReport) -> bytes:
    out = []
    meta = [f"dataset: {report.dataset_id or '(unnamed)'}"]
    if report.max_chars is not None:
        meta.append(f"comments shorter than {report.max_chars} characters")
    meta.append(f"min subgroup count: {report.min_subgroup_count}")
    meta.append(f"sorted by {report.sort_by}")
    out += ["# Unintended bias metrics", "", "; ".join(meta)]
    for m in report.models:
        out += ["", f"## {m}", ""]
        out.append("| " + " | ".join(FIELDS) + " |")
        out.append("|" + "|".join("---" for _ in FIELDS) + "|")
        for r in report.rows[m]:
            d = r.to_dict()
            out.append("| " + " | ".join(_cell(d[f]).replace("|", "\\|") for f in FIELDS) + " |")
    return ("\n".join(out) + "\n").encode("utf-8")


def render_json(report: EvalReport) -> bytes:
    return (json.dumps(report.to_dict(), indent=2) + "\n").encode("utf-8")


def _lerp_hex(stops: Sequence[tuple[float, str]], v: float) -> str:
    v = min(max(v, stops[0][0]), stops[-1][0])
    for (x0, c0), (x1, c1) in zip(stops, stops[1:]):
        if v <= x1:
            t = (v - x0) / (x1 - x0)
            rgb0 = [int(c0[i : i + 2], 16) for i in (1, 3, 5)]
            rgb1 = [int(c1[i : i + 2], 16) for i in (1, 3, 5)]
            return "#" + "".join(f"{round(a + (b - a) * t):02x}" for a, b in zip(rgb0, rgb1))
    return stops[-1][1]


AUC_SCALE = ((0.5, "#b2182b"), (0.75, "#fee08b"), (1.0, "#1a9850"))
AEG_SCALE = ((-0.5, "#2166ac"), (0.0, "#f7f7f7"), (0.5, "#b2182b"))


def metric_color(metric: str, value: Optional[float]) -> Optional[str]:
    """Fill colour of one heatmap cell; ``None`` for an absent metric."""
    if value is None:
        return None
    return _lerp_hex(AUC_SCALE if metric in AUC_METRICS else AEG_SCALE, value)


SHORT_NAMES = {
    "subgroup_auc": "Subgroup AUC",
    "bpsn_auc": "BPSN AUC",
    "bnsp_auc": "BNSP AUC",
    "negative_aeg": "Neg. AEG",
    "positive_aeg": "Pos. AEG",
}


def render_svg_heatmap(report: EvalReport) -> bytes:
    cell_w, cell_h, label_w, head_h, gap = 78, 22, 240, 64, 24
    n_rows = len(report.subgroups)
    block_w = cell_w * len(METRIC_NAMES)
    width = label_w + len(report.models) * (block_w + gap) + 10
    legend_y = head_h + n_rows * cell_h + 24
    height = legend_y + 60
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    title = "Unintended bias metrics" + (f": {report.dataset_id}" if report.dataset_id else "")
    parts.append(f'<text x="8" y="18" font-size="14" font-weight="bold">{escape(title)}</text>')
    for k, m in enumerate(report.models):
        x0 = label_w + k * (block_w + gap)
        parts.append(f'<text x="{x0 + block_w / 2}" y="36" text-anchor="middle" font-weight="bold">{escape(m)}</text>')
        for j, name in enumerate(METRIC_NAMES):
            parts.append(
                f'<text x="{x0 + j * cell_w + cell_w / 2}" y="{head_h - 8}" text-anchor="middle">'
                f"{SHORT_NAMES[name]}</text>"
            )
        for i, row in enumerate(report.rows[m]):
            y = head_h + i * cell_h
            for j, name in enumerate(METRIC_NAMES):
                v = row.metric(name)
                x = x0 + j * cell_w
                fill = metric_color(name, v)
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" '
                    f'fill="{fill or "none"}" stroke="#cccccc" data-metric="{name}"'
                    + ("" if v is None else f' data-value="{v!r}"')
                    + "/>"
                )
                if v is not None:
                    parts.append(
                        f'<text x="{x + cell_w / 2}" y="{y + cell_h / 2 + 4}" text-anchor="middle">{v:.2f}</text>'
                    )
    for i, g in enumerate(report.subgroups):
        y = head_h + i * cell_h + cell_h / 2 + 4
        parts.append(f'<text x="{label_w - 6}" y="{y}" text-anchor="end">{escape(g)}</text>')

    def legend(x, label, scale, lo, hi):
        steps = 20
        w = 160 / steps
        out = [f'<text x="{x}" y="{legend_y}">{label}</text>']
        for s in range(steps):
            v = lo + (hi - lo) * (s + 0.5) / steps
            out.append(
                f'<rect x="{x + s * w:.1f}" y="{legend_y + 6}" width="{w:.1f}" height="12" '
                f'fill="{_lerp_hex(scale, v)}"/>'
            )
        out.append(f'<text x="{x}" y="{legend_y + 32}">{lo:g}</text>')
        out.append(f'<text x="{x + 160}" y="{legend_y + 32}" text-anchor="end">{hi:+g}</text>')
        return out

    parts += legend(8, "AUC", AUC_SCALE, 0.5, 1.0)
    parts += legend(200, "AEG", AEG_SCALE, -0.5, 0.5)
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")


def render(report: EvalReport, format: str) -> bytes:
    if not report.subgroups:
        raise NoQualifyingSubgroups("report has no rows to render")
    renderers = {
        "csv": render_csv,
        "markdown": render_markdown,
        "json": render_json,
        "svg-heatmap": render_svg_heatmap,
    }
    try:
        fn = renderers[format]
    except KeyError:
        raise UnsupportedFormat(f"unsupported format {format!r}; choose one of {', '.join(FORMATS)}") from None
    return fn(report)


# ---------------------------------------------------------------------------
# score distribution sketches

SKETCH_CELLS = ("bg_neg", "bg_pos", "sg_neg", "sg_pos")
BANDWIDTH_FLOOR = 0.01
_EXACT_KDE_LIMIT = 20_000


@dataclass(frozen=True)
class CellSketch:
    size: int
    counts: tuple[int, ...]
    density_x: tuple[float, ...]
    density: tuple[float, ...]
    bandwidth: float

    @property
    def histogram_mean(self) -> float:
        """Mean score implied by the histogram (bin centres)."""
        n = len(self.counts)
        centres = (np.arange(n) + 0.5) / n
        return float(np.dot(centres, self.counts) / self.size)


@dataclass(frozen=True)
class DistributionSketch:
    """Histograms and kernel densities of the four cells of one subgroup.

    Histograms use ``bins`` equal bins on [0, 1]; scores outside [0, 1] are
    counted in the edge bins.  Densities are Gaussian kernel estimates with
    Silverman's bandwidth ``0.9 * min(sd, IQR / 1.34) * n ** -0.2``, floored
    at 0.01, evaluated at 101 points on [0, 1].  Empty cells are ``None``.
    """

    subgroup_id: str
    bin_edges: tuple[float, ...]
    cells: Mapping[str, Optional[CellSketch]]

    def to_dict(self) -> dict:
        return {
            "subgroup": self.subgroup_id,
            "bin_edges": list(self.bin_edges),
            "cells": {
                k: None
                if c is None
                else {
                    "size": c.size,
                    "counts": list(c.counts),
                    "density_x": list(c.density_x),
                    "density": list(c.density),
                    "bandwidth": c.bandwidth,
                }
                for k, c in self.cells.items()
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DistributionSketch":
        cells = {}
        for k, c in d["cells"].items():
            cells[k] = None if c is None else CellSketch(
                int(c["size"]),
                tuple(int(x) for x in c["counts"]),
                tuple(float(x) for x in c["density_x"]),
                tuple(float(x) for x in c["density"]),
                float(c["bandwidth"]),
            )
        return cls(d["subgroup"], tuple(d["bin_edges"]), cells)


def silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    if n < 2:
        return BANDWIDTH_FLOOR
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return max(0.9 * spread * n ** -0.2, BANDWIDTH_FLOOR)


def _kde(x: np.ndarray, grid: np.ndarray, h: float) -> np.ndarray:
    if x.size > _EXACT_KDE_LIMIT:
        # bin to 2048 points first; error is bounded by half a fine bin
        lo, hi = float(x.min()), float(x.max())
        counts, edges = np.histogram(x, bins=2048, range=(lo, hi if hi > lo else lo + 1e-9))
        centres = (edges[:-1] + edges[1:]) / 2
        keep = counts > 0
        pts, w = centres[keep], counts[keep].astype(float)
    else:
        pts, w = x, np.ones_like(x)
    z = (grid[:, None] - pts[None, :]) / h
    return (np.exp(-0.5 * z * z) @ w) / (w.sum() * h * np.sqrt(2 * np.pi))


def _sketch_cell(x: np.ndarray, bins: int) -> Optional[CellSketch]:
    if x.size == 0:
        return None
    idx = np.clip((np.clip(x, 0.0, 1.0) * bins).astype(np.int64), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    grid = np.linspace(0.0, 1.0, 101)
    h = silverman_bandwidth(x)
    dens = _kde(x, grid, h)
    return CellSketch(int(x.size), tuple(int(c) for c in counts), tuple(grid.tolist()), tuple(dens.tolist()), h)


def sketch_distributions(
    dataset: Iterable[LabeledExample],
    subgroup_id: str,
    model_scores: Optional[Mapping[str, float]] = None,
    bins: int = 20,
) -> DistributionSketch:
    if bins < 1:
        raise ValueError("bins must be positive")
    if model_scores is not None:
        dataset = (
            LabeledExample(e.id, model_scores[e.id], e.label, e.subgroups, e.char_length, e.text) for e in dataset
        )
    p = partition(dataset, subgroup_id)
    samples = dict(zip(SKETCH_CELLS, (p.d_neg, p.d_pos, p.dg_neg, p.dg_pos)))
    return DistributionSketch(
        subgroup_id,
        tuple(np.linspace(0.0, 1.0, bins + 1).tolist()),
        {k: _sketch_cell(v, bins) for k, v in samples.items()},
    )


def render_sketch_svg(sketch: DistributionSketch) -> bytes:
    """Two panels, background and subgroup, each overlaying both classes."""
    pw, ph, pad = 360, 160, 36
    width, height = 2 * pw + 3 * pad, ph + 2 * pad + 20
    colors = {"neg": "#4daf4a", "pos": "#e7298a"}
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="Helvetica, Arial, sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    present = [c for c in sketch.cells.values() if c is not None]
    nbins = len(sketch.bin_edges) - 1
    peak = max(
        [max(c.density) for c in present] + [max(c.counts) / c.size * nbins for c in present] + [1e-9]
    )
    for k, (group, title) in enumerate((("bg", "Background"), ("sg", escape(sketch.subgroup_id)))):
        x0 = pad + k * (pw + pad)
        y0 = pad
        parts.append(f'<text x="{x0}" y="{y0 - 8}" font-weight="bold">{title}</text>')
        parts.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#999999"/>')
        for cls in ("neg", "pos"):
            c = sketch.cells.get(f"{group}_{cls}")
            if c is None:
                continue
            bw = pw / nbins
            for i, n in enumerate(c.counts):
                if n:
                    h = n / c.size * nbins / peak * ph
                    parts.append(
                        f'<rect x="{x0 + i * bw:.2f}" y="{y0 + ph - h:.2f}" width="{bw:.2f}" height="{h:.2f}" '
                        f'fill="{colors[cls]}" fill-opacity="0.35"/>'
                    )
            pts = " ".join(
                f"{x0 + x * pw:.2f},{y0 + ph - d / peak * ph:.2f}" for x, d in zip(c.density_x, c.density)
            )
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{colors[cls]}" stroke-width="1.5"/>')
        parts.append(f'<text x="{x0}" y="{y0 + ph + 14}">0</text>')
        parts.append(f'<text x="{x0 + pw}" y="{y0 + ph + 14}" text-anchor="end">1</text>')
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")
