"""Rasterization of continuous shapes onto the pixel grid, plus region algebra.

A pixel (row i, col j) is foreground iff its center (j + 0.5, i + 0.5)
satisfies the shape's inclusion test (boundary counts as inside).
"""

import logging
import math

import numpy as np

from .errors import DimMismatch
from .geometry import (
    Circle,
    Point2,
    Quadrilateral,
    RecistPair,
    ellipse_from_recist,
    min_enclosing_circle,
    quad_from_recist,
)

log = logging.getLogger(__name__)


def _pixel_centers(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(width, dtype=float) + 0.5
    ys = np.arange(height, dtype=float) + 0.5
    return np.meshgrid(xs, ys)  # X, Y each (H, W)


def fill_polygon(poly: Quadrilateral | np.ndarray, width: int, height: int) -> np.ndarray:
    """Rasterize a simple polygon with the even-odd rule; boundary is inside."""
    verts = poly.as_array() if isinstance(poly, Quadrilateral) else np.asarray(poly, float)
    X, Y = _pixel_centers(width, height)
    inside = np.zeros((height, width), dtype=bool)
    on_edge = np.zeros((height, width), dtype=bool)
    n = len(verts)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        # even-odd crossing count against the horizontal ray to +x
        crosses = (y1 > Y) != (y2 > Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (X < xint)
        # exact on-segment test
        cross = (x2 - x1) * (Y - y1) - (y2 - y1) * (X - x1)
        dot = (X - x1) * (x2 - x1) + (Y - y1) * (y2 - y1)
        seglen2 = (x2 - x1) ** 2 + (y2 - y1) ** 2
        on_edge |= (cross == 0) & (dot >= 0) & (dot <= seglen2)
    return (inside | on_edge).astype(np.uint8)


def fill_disc(c: Circle, width: int, height: int) -> np.ndarray:
    """Rasterize a disc: pixel centers within `radius` of the center.

    Inclusion carries the same 1e-9 slack as the enclosing-circle
    containment guarantee, so points certified on the circle rasterize
    as foreground.
    """
    X, Y = _pixel_centers(width, height)
    d2 = (X - c.center.x) ** 2 + (Y - c.center.y) ** 2
    return (d2 <= (c.radius + 1e-9) ** 2).astype(np.uint8)


def fill_ellipse(
    center: Point2,
    axes: tuple[float, float],
    angle: float,
    width: int,
    height: int,
) -> np.ndarray:
    """Rasterize a rotated ellipse with semi-axes `axes` and rotation `angle`
    (radians, axis 0 direction). Degenerate axes give an all-zero mask."""
    a, b = axes
    if a <= 0 or b <= 0:
        return np.zeros((height, width), dtype=np.uint8)
    X, Y = _pixel_centers(width, height)
    dx, dy = X - center[0], Y - center[1]
    ca, sa = math.cos(angle), math.sin(angle)
    xr = dx * ca + dy * sa
    yr = -dx * sa + dy * ca
    return ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0).astype(np.uint8)


def region_algebra(q: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the slice into the ambiguous region (inside the circle mask but
    outside the quad mask) and its complement, the agreement region.

    Quad pixels escaping the circle mask are clamped to background and the
    count is logged; the two outputs always partition the slice.
    """
    q = np.asarray(q).astype(bool)
    c = np.asarray(c).astype(bool)
    if q.shape != c.shape:
        raise DimMismatch(f"mask dims differ: {q.shape} vs {c.shape}")
    violations = int(np.count_nonzero(q & ~c))
    if violations:
        log.warning("region_algebra: clamped %d quad pixels outside the circle mask",
                    violations)
        q = q & c
    ambiguous = c & ~q
    agreement = q | ~c
    return ambiguous.astype(np.uint8), agreement.astype(np.uint8)


def dual_masks(r: RecistPair, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Under-/over-segmenting supervision masks for one lesion annotation."""
    quad = quad_from_recist(r)
    circ = min_enclosing_circle(r.endpoints())
    return fill_polygon(quad, width, height), fill_disc(circ, width, height)


def ellipse_mask_from_recist(r: RecistPair, width: int, height: int) -> np.ndarray:
    """Baseline mask: ellipse fitted to the diameters, rasterized."""
    center, axes, angle = ellipse_from_recist(r)
    return fill_ellipse(center, axes, angle, width, height)


def build_supervision(
    recists: list[RecistPair], width: int, height: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-slice supervision: unions of the per-lesion quad and circle masks,
    plus the ambiguous region of the unions."""
    q_union = np.zeros((height, width), dtype=np.uint8)
    c_union = np.zeros((height, width), dtype=np.uint8)
    for r in recists:
        q, c = dual_masks(r, width, height)
        q_union |= q
        c_union |= c
    ambiguous, _ = region_algebra(q_union, c_union)
    return q_union, c_union, ambiguous
