"""CSV and SVG writers.

CSV files may start with ``# key: value`` comment lines carrying metadata
(the resolved configuration), followed by a mandatory header row. Floats are
written with 17 significant digits so they parse back to the same double.

SVG output is hand-assembled, deterministic text: same input, same bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import InvalidInputError

METRIC_SCHEMA = (
    ("experiment_id", str), ("seed", int), ("k_p", float), ("k_i", float), ("k_d", float),
    ("gamma", float), ("metric_name", str), ("cluster_id", int), ("value", float),
)


def trajectory_schema(d: int):
    return (("step", int), ("particle_id", int)) + tuple((f"x{j}", float) for j in range(d))


def format_value(v, kind=None) -> str:
    if kind is str or isinstance(v, str):
        return str(v)
    if kind is int or isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)) and kind is not float:
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return "nan"
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return format(f, ".17g")


def _parse(text: str, kind):
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def write_csv(rows: Iterable[Sequence], schema: Sequence[tuple[str, type]], path: str | os.PathLike,
              metadata: Mapping[str, object] | None = None) -> Path:
    """Write ``rows`` under ``schema``; ``metadata`` entries become leading comment lines."""
    path = Path(path)
    names = [n for n, _ in schema]
    kinds = [k for _, k in schema]
    buf = io.StringIO()
    if metadata:
        for key, val in metadata.items():
            text = val if isinstance(val, str) else json.dumps(val, sort_keys=True, separators=(",", ":"))
            if "\n" in text:
                raise InvalidInputError(f"metadata value for {key!r} spans several lines")
            buf.write(f"# {key}: {text}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        if len(row) != len(schema):
            raise InvalidInputError(f"row has {len(row)} fields, schema has {len(schema)}")
        w.writerow([format_value(v, k) for v, k in zip(row, kinds)])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    return path


@dataclass
class CsvTable:
    header: list[str]
    rows: list[list]
    metadata: dict[str, str]

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


def read_csv(path: str | os.PathLike, schema: Sequence[tuple[str, type]] | None = None) -> CsvTable:
    """Parse a file written by :func:`write_csv`.

    Without a schema, columns whose every value parses as a float are
    converted; the rest stay strings.
    """
    meta: dict[str, str] = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if not body and line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                meta[key.strip()] = val.strip()
            else:
                body.append(line)
    reader = list(csv.reader(body))
    if not reader:
        raise InvalidInputError(f"{path}: missing header row")
    header, raw = reader[0], reader[1:]
    if schema is not None:
        if [n for n, _ in schema] != header:
            raise InvalidInputError(f"{path}: header {header} does not match the schema")
        kinds = [k for _, k in schema]
    else:
        kinds = []
        for j in range(len(header)):
            try:
                for r in raw:
                    float(r[j])
                kinds.append(float)
            except ValueError:
                kinds.append(str)
    rows = [[_parse(v, k) for v, k in zip(r, kinds)] for r in raw]
    return CsvTable(header, rows, meta)


# SVG

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


@dataclass
class PlotStyle:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    log_y: bool = False
    width: int = 640
    height: int = 420


def _fmt(v: float) -> str:
    """Short, deterministic coordinate text."""
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    a = abs(v)
    if a >= 1e4 or a < 1e-3:
        return f"{v:.0e}"
    return f"{v:.6g}"


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round-number ticks covering ``[lo, hi]``."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise InvalidInputError("tick range must be finite")
    if hi <= lo:
        hi = lo + (abs(lo) if lo else 1.0)
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        if v >= lo - 1e-9 * step:
            ticks.append(round(v / step) * step)
        v += step
    return ticks


class _Frame:
    def __init__(self, style: PlotStyle, xr, yr, right_pad: int = 20):
        self.style = style
        self.left, self.right, self.top, self.bottom = 70, right_pad, 40 if style.title else 20, 50
        self.w = style.width - self.left - self.right
        self.h = style.height - self.top - self.bottom
        self.x0, self.x1 = xr
        self.y0, self.y1 = yr

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return self.top + self.h - (y - self.y0) / (self.y1 - self.y0) * self.h


def _axes(fr: _Frame, xticks, yticks, ylabels=None) -> list[str]:
    st = fr.style
    out = [f'<rect x="{fr.left}" y="{fr.top}" width="{fr.w}" height="{fr.h}" fill="none" stroke="#000"/>']
    for t in xticks:
        x = _fmt(fr.px(t))
        yb = fr.top + fr.h
        out.append(f'<line x1="{x}" y1="{yb}" x2="{x}" y2="{yb + 5}" stroke="#000"/>')
        out.append(f'<text x="{x}" y="{yb + 18}" text-anchor="middle">{escape(_tick_label(t))}</text>')
    for t, lab in zip(yticks, ylabels or [_tick_label(t) for t in yticks]):
        y = _fmt(fr.py(t))
        out.append(f'<line x1="{fr.left - 5}" y1="{y}" x2="{fr.left}" y2="{y}" stroke="#000"/>')
        out.append(f'<text x="{fr.left - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">'
                   f'{escape(lab)}</text>')
    if st.title:
        out.append(f'<text x="{st.width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(st.title)}</text>')
    if st.xlabel:
        out.append(f'<text x="{fr.left + fr.w / 2:.1f}" y="{st.height - 10}" text-anchor="middle">'
                   f'{escape(st.xlabel)}</text>')
    if st.ylabel:
        cy = fr.top + fr.h / 2
        out.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 16 {cy:.1f})">'
                   f'{escape(st.ylabel)}</text>')
    return out


def _document(style: PlotStyle, body: list[str]) -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" height="{style.height}" '
            f'viewBox="0 0 {style.width} {style.height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="100%" height="100%" fill="#fff"/>\n')
    return head + "\n".join(body) + "\n</svg>\n"


def line_chart_svg(series: Sequence[tuple[str, Sequence[float], Sequence[float]]], style: PlotStyle) -> str:
    """Multi-series line chart; ``series`` items are ``(label, xs, ys)``."""
    if not series:
        raise InvalidInputError("nothing to plot")
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series])
    ok = np.isfinite(xs_all) & np.isfinite(ys_all)
    if style.log_y:
        ok &= ys_all > 0
    if not ok.any():
        raise InvalidInputError("no finite points to plot")
    tf = np.log10 if style.log_y else (lambda a: a)
    xt = nice_ticks(float(xs_all[ok].min()), float(xs_all[ok].max()))
    if style.log_y:
        lo, hi = math.floor(float(tf(ys_all[ok]).min())), math.ceil(float(tf(ys_all[ok]).max()))
        if hi == lo:
            hi = lo + 1
        yt = [float(e) for e in range(lo, hi + 1)]
        ylab = [f"1e{int(e)}" for e in yt]
    else:
        yt = nice_ticks(float(ys_all[ok].min()), float(ys_all[ok].max()))
        ylab = None
    fr = _Frame(style, (xt[0], xt[-1]), (yt[0], yt[-1]), right_pad=150)
    body = _axes(fr, xt, yt, ylab)
    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        good = np.isfinite(xs) & np.isfinite(ys) & ((ys > 0) if style.log_y else True)
        # split at gaps so missing values do not draw spurious segments
        runs, cur = [], []
        for x, y, g in zip(xs, ys, good):
            if g:
                cur.append(f"{_fmt(fr.px(x))},{_fmt(fr.py(float(tf(y))))}")
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for r in runs:
            body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(r)}"/>')
        ly = fr.top + 10 + 18 * k
        lx = fr.left + fr.w + 12
        body.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{escape(str(label))}</text>')
    return _document(style, body)


def _ramp(t: float) -> str:
    """Blue-to-yellow color for ``t`` in [0, 1]."""
    t = min(max(t, 0.0), 1.0)
    r = int(round(40 + 215 * t))
    g = int(round(60 + 170 * t))
    b = int(round(160 - 120 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(xs: Sequence[float], ys: Sequence[float], values: np.ndarray, style: PlotStyle,
                overlays: Sequence[tuple[str, Sequence[float], Sequence[float]]] = (),
                value_label: str = "") -> str:
    """Cell heat map of ``values[i, j]`` at ``(xs[i], ys[j])``, with optional line overlays."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    v = np.asarray(values, float)
    if v.shape != (len(xs), len(ys)) or len(xs) < 1 or len(ys) < 1:
        raise InvalidInputError("values must have shape (len(xs), len(ys))")
    dx = (xs[-1] - xs[0]) / max(len(xs) - 1, 1) or 1.0
    dy = (ys[-1] - ys[0]) / max(len(ys) - 1, 1) or 1.0
    xr = (xs[0] - dx / 2, xs[-1] + dx / 2)
    yr = (ys[0] - dy / 2, ys[-1] + dy / 2)
    fr = _Frame(style, xr, yr, right_pad=150)
    finite = v[np.isfinite(v)]
    vlo, vhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    span = vhi - vlo or 1.0
    body = []
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            color = _ramp((v[i, j] - vlo) / span) if np.isfinite(v[i, j]) else "#ffffff"
            x0, x1 = fr.px(x - dx / 2), fr.px(x + dx / 2)
            y0, y1 = fr.py(y + dy / 2), fr.py(y - dy / 2)
            body.append(f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" height="{_fmt(y1 - y0)}" '
                        f'fill="{color}"/>')
    xt = [t for t in nice_ticks(*xr) if xr[0] <= t <= xr[1]]
    yt = [t for t in nice_ticks(*yr) if yr[0] <= t <= yr[1]]
    body += _axes(fr, xt, yt)
    for k, (label, ox, oy) in enumerate(overlays):
        pts = [f"{_fmt(fr.px(a))},{_fmt(fr.py(b))}" for a, b in zip(ox, oy)
               if xr[0] <= a <= xr[1] and yr[0] <= b <= yr[1]]
        color = ("#000000", "#d62728", "#ffffff")[k % 3]
        if pts:
            body.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{" ".join(pts)}"/>')
        ly = fr.top + 10 + 18 * k
        lx = fr.left + fr.w + 12
        body.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{escape(label)}</text>')
    # color key
    ky = fr.top + 10 + 18 * len(overlays) + 10
    lx = fr.left + fr.w + 12
    for q in range(5):
        t = q / 4
        body.append(f'<rect x="{lx}" y="{ky + 16 * q}" width="14" height="14" fill="{_ramp(t)}"/>')
        body.append(f'<text x="{lx + 20}" y="{ky + 16 * q + 7}" dominant-baseline="middle">'
                    f'{escape(_tick_label(vlo + t * span))}</text>')
    if value_label:
        body.append(f'<text x="{lx}" y="{ky + 92}">{escape(value_label)}</text>')
    return _document(style, body)


def write_text(text: str, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def render_svg(series, style: PlotStyle, path: str | os.PathLike) -> Path:
    return write_text(line_chart_svg(series, style), path)
