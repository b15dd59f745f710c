"""Timeline export: machine-readable spans and a standalone SVG.

One horizontal lane per component. Compute iterations draw as wide bars
(blue for simulation, orange for training), staging transfers as red marks,
init spans in gray.
"""

from __future__ import annotations

import html
import json
from dataclasses import asdict, dataclass

from .metrics import EventRecord

LANE_HEIGHT = 44
LANE_GAP = 10
LEFT_MARGIN = 140
RIGHT_MARGIN = 30
TOP_MARGIN = 34
BOTTOM_MARGIN = 40
PLOT_WIDTH = 900

_COMPUTE_COLORS = {"sim_iter": "#3c6fc4", "ai_iter": "#e08a2e"}
_TRANSFER_COLORS = {"write": "#c03a2b", "read": "#8f1d12"}
_INIT_COLOR = "#8a8a8a"
_POLL_COLOR = "#d8d2b8"


@dataclass
class Span:
    component: str
    rank: int
    kind: str
    t0: float
    t1: float
    bytes: int
    key: str | None


def build_spans(
    events: list[EventRecord], window: tuple[float, float] | None = None
) -> list[Span]:
    """Events as [t0, t1] spans, optionally clipped to a time window."""
    spans = []
    for ev in events:
        if window is not None and (ev.t_end < window[0] or ev.t_start > window[1]):
            continue
        spans.append(
            Span(
                component=ev.component,
                rank=ev.rank,
                kind=ev.kind,
                t0=ev.t_start,
                t1=ev.t_end,
                bytes=ev.bytes,
                key=ev.key,
            )
        )
    spans.sort(key=lambda s: (s.component, s.rank, s.t0, s.kind))
    return spans


def spans_to_json(spans: list[Span]) -> str:
    return json.dumps({"spans": [asdict(s) for s in spans]}, indent=2)


def _color_for(kind: str) -> str:
    if kind in _COMPUTE_COLORS:
        return _COMPUTE_COLORS[kind]
    if kind in _TRANSFER_COLORS:
        return _TRANSFER_COLORS[kind]
    if kind == "init":
        return _INIT_COLOR
    return _POLL_COLOR


def render_svg(spans: list[Span]) -> str:
    """Self-contained SVG timeline; no external assets."""
    if not spans:
        raise ValueError("no spans to render")
    lanes = sorted({(s.component, s.rank) for s in spans})
    lane_index = {lane: i for i, lane in enumerate(lanes)}
    t_min = min(s.t0 for s in spans)
    t_max = max(s.t1 for s in spans)
    if t_max <= t_min:
        t_max = t_min + 1e-6
    scale = PLOT_WIDTH / (t_max - t_min)
    height = TOP_MARGIN + len(lanes) * (LANE_HEIGHT + LANE_GAP) + BOTTOM_MARGIN
    width = LEFT_MARGIN + PLOT_WIDTH + RIGHT_MARGIN

    def x(t: float) -> float:
        return LEFT_MARGIN + (t - t_min) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{LEFT_MARGIN}" y="20" font-family="sans-serif" '
        f'font-size="14" fill="#222">component timeline (s since run epoch)</text>',
    ]
    for (component, rank), i in lane_index.items():
        y0 = TOP_MARGIN + i * (LANE_HEIGHT + LANE_GAP)
        label = html.escape(f"{component}.r{rank}")
        parts.append(
            f'<text x="8" y="{y0 + LANE_HEIGHT * 0.65:.1f}" '
            f'font-family="sans-serif" font-size="12" fill="#222">{label}</text>'
        )
        parts.append(
            f'<line x1="{LEFT_MARGIN}" y1="{y0 + LANE_HEIGHT}" '
            f'x2="{LEFT_MARGIN + PLOT_WIDTH}" y2="{y0 + LANE_HEIGHT}" '
            f'stroke="#cccccc" stroke-width="1"/>'
        )
    for s in spans:
        i = lane_index[(s.component, s.rank)]
        y0 = TOP_MARGIN + i * (LANE_HEIGHT + LANE_GAP)
        x0 = x(s.t0)
        w = max((s.t1 - s.t0) * scale, 0.75)
        color = _color_for(s.kind)
        if s.kind in _TRANSFER_COLORS:
            y, h = y0 + 2, LANE_HEIGHT - 4
        elif s.kind == "init":
            y, h = y0 + 6, LANE_HEIGHT - 12
        elif s.kind == "poll":
            y, h = y0 + LANE_HEIGHT - 10, 8
        else:
            y, h = y0 + 10, LANE_HEIGHT - 20
        title = html.escape(
            f"{s.component}.r{s.rank} {s.kind} [{s.t0:.6f}, {s.t1:.6f}]"
            + (f" {s.bytes}B" if s.bytes else "")
            + (f" {s.key}" if s.key else "")
        )
        parts.append(
            f'<rect x="{x0:.2f}" y="{y:.1f}" width="{w:.2f}" height="{h:.1f}" '
            f'fill="{color}" fill-opacity="0.85"><title>{title}</title></rect>'
        )
    axis_y = TOP_MARGIN + len(lanes) * (LANE_HEIGHT + LANE_GAP) + 12
    for j in range(6):
        t = t_min + (t_max - t_min) * j / 5
        parts.append(
            f'<line x1="{x(t):.1f}" y1="{axis_y - 8}" x2="{x(t):.1f}" '
            f'y2="{axis_y - 2}" stroke="#666" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x(t):.1f}" y="{axis_y + 12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11" fill="#444">{t:.3f}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
