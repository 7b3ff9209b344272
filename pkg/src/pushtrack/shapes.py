"""Catalog of pushed-object shapes and support surfaces used by the scenarios.

Dimensions and masses follow the steel test objects: a 90 mm square, a
105 x 130.9 mm ellipse (fine polygonal approximation), and a two-lobed
rounded shape inside a 95.3 x 156 mm box.  Surface entries carry the dynamic
friction coefficient of the support material.
"""

from __future__ import annotations

import math

import numpy as np

from .geom2d import Polygon

__all__ = ["make_polygon", "shape_catalog", "surface_catalog", "SHAPE_MASSES"]

SHAPE_MASSES = {"rect1": 0.837, "ellip2": 1.110, "butter": 1.197}

# dynamic coefficient of friction per support surface material
surface_catalog = {"abs": 0.16, "delrin": 0.15, "plywood": 0.28, "pu": 0.35}


def _rect1() -> Polygon:
    h = 0.045
    return Polygon([[-h, -h], [h, -h], [h, h], [-h, h]])


def _ellip2() -> Polygon:
    a, b = 0.105 / 2.0, 0.1309 / 2.0
    th = np.linspace(0.0, 2.0 * math.pi, 129)[:-1]
    return Polygon(np.stack([a * np.cos(th), b * np.sin(th)], axis=1))


def _butter() -> Polygon:
    """Two-lobed convex outline: hull of two circles matching the box dims."""
    c1, r1 = np.array([0.0, 0.030]), 0.04765
    c2, r2 = np.array([0.0, -0.051]), 0.02735
    th = np.linspace(0.0, 2.0 * math.pi, 73)[:-1]
    pts = np.vstack(
        [
            c1 + r1 * np.stack([np.cos(th), np.sin(th)], axis=1),
            c2 + r2 * np.stack([np.cos(th), np.sin(th)], axis=1),
        ]
    )
    hull = _convex_hull(pts)
    return Polygon(hull).recentered()


def _cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain, CCW output."""
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross2(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def make_polygon(spec) -> Polygon:
    """Polygon from a catalog name or an explicit [[x, y], ...] vertex list."""
    if isinstance(spec, str):
        try:
            return {"rect1": _rect1, "ellip2": _ellip2, "butter": _butter}[spec]()
        except KeyError:
            raise ValueError(f"unknown shape {spec!r}; use rect1/ellip2/butter or a vertex list") from None
    return Polygon(spec)


def shape_catalog():
    return {name: make_polygon(name) for name in SHAPE_MASSES}
