"""Continuous geometry of RECIST diameters: dual-shape construction and extraction.

Coordinates are continuous pixel coordinates (x right, y down); the center of
pixel (row i, col j) is (j + 0.5, i + 0.5). All operations here are pure.
"""

import math
import random
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateAnnotation, EmptyInput, EmptyMask, TooSmall

ANGLE_TOL_DEG = 2.0      # allowed deviation of the diameter angle from 90 degrees
INTERSECT_GAP_PX = 0.5   # allowed gap between the two diameter segments
MEC_EPS = 1e-9           # containment slack for the minimum enclosing circle


class Point2(NamedTuple):
    x: float
    y: float


class Circle(NamedTuple):
    center: Point2
    radius: float


@dataclass(frozen=True)
class RecistPair:
    """Endpoints of the major and minor diameters of one lesion."""

    major_a: Point2
    major_b: Point2
    minor_a: Point2
    minor_b: Point2

    def endpoints(self) -> list[Point2]:
        return [self.major_a, self.major_b, self.minor_a, self.minor_b]

    @property
    def major_length(self) -> float:
        return math.dist(self.major_a, self.major_b)

    @property
    def minor_length(self) -> float:
        return math.dist(self.minor_a, self.minor_b)


@dataclass(frozen=True)
class Quadrilateral:
    """Simple polygon given by 4 vertices in cyclic order."""

    vertices: tuple[Point2, Point2, Point2, Point2]

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float)


def _segment_intersection(p1: Point2, p2: Point2, p3: Point2, p4: Point2):
    """Intersection point of lines p1p2 and p3p4, or None if parallel.

    Returns (point, t, s) with t, s the line parameters on each segment
    (values in [0, 1] mean the point lies on the segment).
    """
    d1x, d1y = p2.x - p1.x, p2.y - p1.y
    d2x, d2y = p4.x - p3.x, p4.y - p3.y
    denom = d1x * d2y - d1y * d2x
    if abs(denom) < 1e-12:
        return None
    ex, ey = p3.x - p1.x, p3.y - p1.y
    t = (ex * d2y - ey * d2x) / denom
    s = (ex * d1y - ey * d1x) / denom
    return Point2(p1.x + t * d1x, p1.y + t * d1y), t, s


def _segment_gap(p1: Point2, p2: Point2, p3: Point2, p4: Point2) -> float:
    """Minimum distance between two segments (0 if they intersect)."""
    hit = _segment_intersection(p1, p2, p3, p4)
    if hit is not None:
        _, t, s = hit
        if 0.0 <= t <= 1.0 and 0.0 <= s <= 1.0:
            return 0.0

    def point_seg(p: Point2, a: Point2, b: Point2) -> float:
        abx, aby = b.x - a.x, b.y - a.y
        denom = abx * abx + aby * aby
        if denom == 0.0:
            return math.dist(p, a)
        t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / denom
        t = min(1.0, max(0.0, t))
        return math.dist(p, Point2(a.x + t * abx, a.y + t * aby))

    return min(
        point_seg(p1, p3, p4),
        point_seg(p2, p3, p4),
        point_seg(p3, p1, p2),
        point_seg(p4, p1, p2),
    )


def diameter_angle_deg(r: RecistPair) -> float:
    """Angle between the two diameters in degrees, in [0, 90]."""
    ux, uy = r.major_b.x - r.major_a.x, r.major_b.y - r.major_a.y
    vx, vy = r.minor_b.x - r.minor_a.x, r.minor_b.y - r.minor_a.y
    nu, nv = math.hypot(ux, uy), math.hypot(vx, vy)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateAnnotation("zero-length diameter")
    cosang = abs(ux * vx + uy * vy) / (nu * nv)
    return math.degrees(math.acos(min(1.0, cosang)))


def validate_recist(
    r: RecistPair,
    angle_tol_deg: float = ANGLE_TOL_DEG,
    gap_tol: float = INTERSECT_GAP_PX,
) -> None:
    """Raise DegenerateAnnotation if `r` violates the RECIST-pair invariants."""
    for p in r.endpoints():
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise DegenerateAnnotation("non-finite endpoint coordinate")
    if r.major_length < 2.0 or r.minor_length < 2.0:
        raise DegenerateAnnotation(
            f"diameter shorter than 2 px (major {r.major_length:.3f}, "
            f"minor {r.minor_length:.3f})"
        )
    if r.major_length < r.minor_length:
        raise DegenerateAnnotation("major diameter shorter than minor")
    ang = diameter_angle_deg(r)
    if abs(ang - 90.0) > angle_tol_deg:
        raise DegenerateAnnotation(f"diameters at {ang:.2f} deg, not near 90")
    gap = _segment_gap(r.major_a, r.major_b, r.minor_a, r.minor_b)
    if gap > gap_tol:
        raise DegenerateAnnotation(f"diameters miss each other by {gap:.3f} px")


def quad_from_recist(r: RecistPair) -> Quadrilateral:
    """Quadrilateral joining the four diameter endpoints.

    Vertices are ordered major_a, minor_a, major_b, minor_b so the two
    diameters are the diagonals and the polygon is simple whenever the
    diameters cross.
    """
    if r.major_length < 2.0 or r.minor_length < 2.0:
        raise DegenerateAnnotation("diameter shorter than 2 px")
    pts = np.array(r.endpoints(), dtype=float)
    # collinearity test: area of every triangle among the 4 points vanishes
    v = pts[1:] - pts[0]
    w = np.roll(v, -1, axis=0)
    cross = v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]
    if np.all(np.abs(cross) < 1e-9):
        raise DegenerateAnnotation("all four endpoints collinear")
    return Quadrilateral((r.major_a, r.minor_a, r.major_b, r.minor_b))


def ellipse_from_recist(r: RecistPair) -> tuple[Point2, tuple[float, float], float]:
    """Ellipse fitted to the diameters: centered at their intersection,
    semi-axes half the diameter lengths, rotated to align with the major.
    """
    if r.major_length < 2.0 or r.minor_length < 2.0:
        raise DegenerateAnnotation("diameter shorter than 2 px")
    hit = _segment_intersection(r.major_a, r.major_b, r.minor_a, r.minor_b)
    if hit is None:
        raise DegenerateAnnotation("parallel diameters")
    center, _, _ = hit
    angle = math.atan2(r.major_b.y - r.major_a.y, r.major_b.x - r.major_a.x)
    return center, (r.major_length / 2.0, r.minor_length / 2.0), angle


# ---------------------------------------------------------------------------
# Minimum enclosing circle (incremental Welzl-style construction)
# ---------------------------------------------------------------------------

def _circle_two(p: Point2, q: Point2) -> Circle:
    cx, cy = (p.x + q.x) / 2.0, (p.y + q.y) / 2.0
    r = max(math.dist((cx, cy), p), math.dist((cx, cy), q))
    return Circle(Point2(cx, cy), r)


def _circumcircle(a: Point2, b: Point2, c: Point2) -> Optional[Circle]:
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        return None
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
          + (cx * cx + cy * cy) * (ay - by)) / d
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
          + (cx * cx + cy * cy) * (bx - ax)) / d
    center = Point2(ux, uy)
    r = max(math.dist(center, a), math.dist(center, b), math.dist(center, c))
    return Circle(center, r)


def _in_circle(c: Circle, p: Point2) -> bool:
    return math.dist(c.center, p) <= c.radius + MEC_EPS


def min_enclosing_circle(points: Sequence[Point2]) -> Circle:
    """Smallest circle containing all points (unique; <=3 boundary points)."""
    if len(points) == 0:
        raise EmptyInput("min_enclosing_circle needs at least one point")
    pts = [Point2(float(p[0]), float(p[1])) for p in points]
    for p in pts:
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise EmptyInput("non-finite point")
    # deterministic shuffle: keeps expected O(n) without run-to-run variance
    random.Random(0x5EED).shuffle(pts)

    c: Optional[Circle] = None
    for i, p in enumerate(pts):
        if c is None or not _in_circle(c, p):
            c = _mec_one_point(pts[: i + 1], p)
    assert c is not None
    return c


def _mec_one_point(pts: list[Point2], p: Point2) -> Circle:
    c = Circle(p, 0.0)
    for i, q in enumerate(pts):
        if not _in_circle(c, q):
            if c.radius == 0.0:
                c = _circle_two(p, q)
            else:
                c = _mec_two_points(pts[: i + 1], p, q)
    return c


def _mec_two_points(pts: list[Point2], p: Point2, q: Point2) -> Circle:
    circ = _circle_two(p, q)
    left: Optional[Circle] = None
    right: Optional[Circle] = None
    px, py = p
    qx, qy = q
    for r in pts:
        if _in_circle(circ, r):
            continue
        cross = (qx - px) * (r.y - py) - (qy - py) * (r.x - px)
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        ccross = (qx - px) * (c.center.y - py) - (qy - py) * (c.center.x - px)
        if cross > 0.0 and (left is None or ccross >
                            (qx - px) * (left.center.y - py) - (qy - py) * (left.center.x - px)):
            left = c
        elif cross < 0.0 and (right is None or ccross <
                              (qx - px) * (right.center.y - py) - (qy - py) * (right.center.x - px)):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right  # type: ignore[return-value]
    if right is None:
        return left
    return left if left.radius <= right.radius else right


# ---------------------------------------------------------------------------
# RECIST extraction from a reference mask
# ---------------------------------------------------------------------------

def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Boolean grid marking foreground pixels with a 4-neighbor background
    or lying on the image border."""
    m = np.asarray(mask, dtype=bool)
    interior = np.zeros_like(m)
    interior[1:-1, 1:-1] = (
        m[1:-1, 1:-1]
        & m[:-2, 1:-1] & m[2:, 1:-1]
        & m[1:-1, :-2] & m[1:-1, 2:]
    )
    return m & ~interior


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask)
    if n == 0:
        raise EmptyMask("mask has no foreground pixels")
    if n == 1:
        return labels == 1
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
    return labels == (int(np.argmax(sizes)) + 1)


def _pair_key(p: Point2, q: Point2):
    a, b = sorted([(p.x, p.y), (q.x, q.y)])
    return (a, b)


def extract_recist_from_mask(
    mask: np.ndarray,
    angle_tol_deg: float = ANGLE_TOL_DEG,
) -> RecistPair:
    """Measure RECIST diameters on the largest connected component.

    Major: boundary-pixel pair of maximal distance (convex-hull pair search).
    Minor: longest boundary-pixel chord perpendicular to the major (within
    the angular tolerance) that stays inside the mask up to 1 px slack.
    Ties break to the lexicographically smallest endpoint pair.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise EmptyMask("mask must be 2-D")
    comp = _largest_component(m.astype(bool))
    bnd = boundary_pixels(comp)
    rows, cols = np.nonzero(bnd)
    if rows.size < 4:
        raise TooSmall(f"component has only {rows.size} boundary pixels")
    pts = np.stack([cols + 0.5, rows + 0.5], axis=1)  # (N, 2) as (x, y)

    hull_pts = _convex_hull_points(pts)
    major_a, major_b = _max_distance_pair(hull_pts)
    ux, uy = major_b.x - major_a.x, major_b.y - major_a.y
    major_len = math.hypot(ux, uy)
    if major_len < 2.0:
        raise TooSmall("component diameter shorter than 2 px")
    ux, uy = ux / major_len, uy / major_len

    minor = _longest_perpendicular_chord(
        pts, comp, major_a, (ux, uy), major_len, angle_tol_deg
    )
    if minor is None:
        raise DegenerateAnnotation("no valid perpendicular chord found")
    minor_a, minor_b = minor
    return RecistPair(major_a, major_b, minor_a, minor_b)


def _convex_hull_points(pts: np.ndarray) -> np.ndarray:
    """Convex hull vertices (monotone chain); falls back to all points for
    degenerate (collinear) input."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    p = pts[order]

    def half(points):
        out: list[np.ndarray] = []
        for q in points:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (q[1] - o[1]) - (a[1] - o[1]) * (q[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:
        return p
    return np.array(hull)


def _max_distance_pair(pts: np.ndarray) -> tuple[Point2, Point2]:
    """Exhaustive search for the farthest pair; lexicographic tie-break."""
    d = pts[:, None, :] - pts[None, :, :]
    d2 = (d ** 2).sum(axis=2)
    best = d2.max()
    ii, jj = np.nonzero(d2 == best)
    cand = [(i, j) for i, j in zip(ii, jj) if i < j]
    best_pair = min(
        cand,
        key=lambda ij: _pair_key(Point2(*pts[ij[0]]), Point2(*pts[ij[1]])),
    )
    a, b = Point2(*pts[best_pair[0]]), Point2(*pts[best_pair[1]])
    (ax, ay), (bx, by) = sorted([(a.x, a.y), (b.x, b.y)])
    return Point2(ax, ay), Point2(bx, by)


def _longest_perpendicular_chord(
    pts: np.ndarray,
    comp: np.ndarray,
    major_a: Point2,
    major_dir: tuple[float, float],
    major_len: float,
    angle_tol_deg: float,
) -> Optional[tuple[Point2, Point2]]:
    ux, uy = major_dir
    n = pts.shape[0]
    # signed distance of each boundary pixel to the major line
    s = (pts[:, 0] - major_a.x) * (-uy) + (pts[:, 1] - major_a.y) * ux
    # projection onto the major direction
    t = (pts[:, 0] - major_a.x) * ux + (pts[:, 1] - major_a.y) * uy

    ii, jj = np.triu_indices(n, k=1)
    vx = pts[jj, 0] - pts[ii, 0]
    vy = pts[jj, 1] - pts[ii, 1]
    length = np.hypot(vx, vy)
    ok = length >= 2.0
    # near-perpendicular: |cos(angle to major)| <= sin(tolerance)
    cos_tol = math.sin(math.radians(angle_tol_deg))
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.abs(vx * ux + vy * uy) / np.where(length > 0, length, 1.0)
    ok &= cosang <= cos_tol
    # chord must cross (or nearly cross) the major segment
    ok &= (s[ii] * s[jj] <= 0) | (np.minimum(np.abs(s[ii]), np.abs(s[jj])) <= INTERSECT_GAP_PX)
    tm = (t[ii] + t[jj]) / 2.0
    ok &= (tm >= -INTERSECT_GAP_PX) & (tm <= major_len + INTERSECT_GAP_PX)
    if not ok.any():
        return None

    # distance from any point to the nearest foreground pixel center (1 px slack)
    dist_to_fg = ndimage.distance_transform_edt(~comp.astype(bool))

    cand = np.nonzero(ok)[0]
    h, w = comp.shape
    # walk distinct chord lengths from longest to shortest; within one length
    # group pick the lexicographically smallest chord that stays in the mask
    for val in np.unique(length[cand])[::-1]:
        group = cand[length[cand] == val]
        valid = [
            (_pair_key(Point2(*pts[ii[k]]), Point2(*pts[jj[k]])), k)
            for k in group
            if _chord_in_mask(pts[ii[k]], pts[jj[k]], length[k], dist_to_fg, h, w)
        ]
        if valid:
            _, k = min(valid)
            (ax, ay), (bx, by) = sorted([tuple(pts[ii[k]]), tuple(pts[jj[k]])])
            return Point2(ax, ay), Point2(bx, by)
    return None


def _chord_in_mask(p, q, length, dist_to_fg, h, w) -> bool:
    n_samples = max(2, int(math.ceil(length * 2)) + 1)
    ts = np.linspace(0.0, 1.0, n_samples)
    xs = p[0] + ts * (q[0] - p[0])
    ys = p[1] + ts * (q[1] - p[1])
    ci = np.clip(np.round(ys - 0.5).astype(int), 0, h - 1)
    cj = np.clip(np.round(xs - 0.5).astype(int), 0, w - 1)
    return bool(np.all(dist_to_fg[ci, cj] <= 1.0 + 1e-9))
