"""SVG drawings of power diagrams and Brenier potentials."""

from __future__ import annotations

import colorsys
import json
from typing import List

import numpy as np

from .potential import TransportModel

PANEL = 400.0
MARGIN = 12.0
GOLDEN = 0.6180339887498949

# a few stops of a perceptually ordered ramp (dark blue -> yellow)
_RAMP = np.array([
    [0.267, 0.005, 0.329],
    [0.230, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
])


def site_color(i: int) -> str:
    r, g, b = colorsys.hsv_to_rgb((i * GOLDEN) % 1.0, 0.55, 0.92)
    return "#%02x%02x%02x" % (round(r * 255), round(g * 255), round(b * 255))


def _ramp(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_RAMP) - 1)
    k = min(int(t), len(_RAMP) - 2)
    c = _RAMP[k] + (t - k) * (_RAMP[k + 1] - _RAMP[k])
    return "#%02x%02x%02x" % tuple(int(round(v * 255)) for v in c)


class _Panel:
    """Maps a world-space box onto a square SVG panel (y axis up)."""

    def __init__(self, lo, hi, x0: float):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        span = float(max(hi - lo))
        if span <= 0:
            span = 1.0
        pad = 0.05 * span
        self.lo = (lo + hi) / 2 - span / 2 - pad
        self.scale = (PANEL - 2 * MARGIN) / (span + 2 * pad)
        self.x0 = x0

    def xy(self, p):
        x = self.x0 + MARGIN + (p[0] - self.lo[0]) * self.scale
        y = PANEL - MARGIN - (p[1] - self.lo[1]) * self.scale
        return x, y

    def points(self, verts) -> str:
        return " ".join("%.3f,%.3f" % self.xy(p) for p in verts)


def _header(width: float, meta: dict) -> List[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{PANEL:.0f}" '
        f'viewBox="0 0 {width:.0f} {PANEL:.0f}">',
        "<metadata>" + json.dumps(meta, sort_keys=True) + "</metadata>",
        f'<rect x="0" y="0" width="{width:.0f}" height="{PANEL:.0f}" fill="#ffffff"/>',
    ]


def render_diagram(model: TransportModel) -> str:
    """Cells on the left, sites on the right; cell ``i`` and site ``i`` share a color."""
    D = model.diagram
    dom = model.density.domain.vertices
    Y = model.points
    empty = [c.site_index for c in D.cells if c.empty]
    meta = {
        "mode": "diagram",
        "cells": len(D.cells) - len(empty),
        "sites": len(Y),
        "empty_cells": empty,
        "measures": [c.measure for c in D.cells],
    }
    out = _header(2 * PANEL, meta)
    left = _Panel(dom.min(axis=0), dom.max(axis=0), 0.0)
    out.append(f'<polygon class="domain" points="{left.points(dom)}" fill="none" '
               'stroke="#000000" stroke-width="1.5"/>')
    for c in D.cells:
        if c.empty:
            continue
        out.append(f'<polygon class="cell" data-index="{c.site_index}" '
                   f'points="{left.points(c.polygon.vertices)}" fill="{site_color(c.site_index)}" '
                   'stroke="#333333" stroke-width="0.5"/>')
    right = _Panel(Y.min(axis=0), Y.max(axis=0), PANEL)
    radius = max(1.5, min(4.0, 60.0 / np.sqrt(len(Y))))
    for i, p in enumerate(Y):
        x, y = right.xy(p)
        out.append(f'<circle class="site" data-index="{i}" cx="{x:.3f}" cy="{y:.3f}" '
                   f'r="{radius:.2f}" fill="{site_color(i)}" stroke="#333333" stroke-width="0.4"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_potential(model: TransportModel, grid: int = 64) -> str:
    """Heat map of ``u_h`` sampled at grid-square centers inside the domain."""
    dom = model.density.domain
    lo = dom.vertices.min(axis=0)
    hi = dom.vertices.max(axis=0)
    xs = lo[0] + (np.arange(grid) + 0.5) * (hi[0] - lo[0]) / grid
    ys = lo[1] + (np.arange(grid) + 0.5) * (hi[1] - lo[1]) / grid
    gx, gy = np.meshgrid(xs, ys)
    P = np.column_stack([gx.ravel(), gy.ravel()])
    inside = dom.contains(P)
    vals = (P @ model.points.T + model.heights).max(axis=1)
    vmin = float(vals[inside].min())
    vmax = float(vals[inside].max())
    meta = {"mode": "potential", "grid": grid, "u_min": vmin, "u_max": vmax}
    out = _header(PANEL, meta)
    panel = _Panel(lo, hi, 0.0)
    dx = (hi[0] - lo[0]) / grid * panel.scale
    dy = (hi[1] - lo[1]) / grid * panel.scale
    span = vmax - vmin if vmax > vmin else 1.0
    for p, v, ok in zip(P, vals, inside):
        if not ok:
            continue
        x, y = panel.xy(p)
        out.append(f'<rect class="px" x="{x - dx / 2:.3f}" y="{y - dy / 2:.3f}" '
                   f'width="{dx:.3f}" height="{dy:.3f}" fill="{_ramp((v - vmin) / span)}"/>')
    out.append(f'<polygon class="domain" points="{panel.points(dom.vertices)}" fill="none" '
               'stroke="#000000" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
