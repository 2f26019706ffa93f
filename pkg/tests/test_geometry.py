import math

import numpy as np
import pytest

from recistseg.errors import DegenerateAnnotation, EmptyInput, EmptyMask, TooSmall
from recistseg.geometry import (
    Circle,
    Point2,
    RecistPair,
    boundary_pixels,
    diameter_angle_deg,
    ellipse_from_recist,
    extract_recist_from_mask,
    min_enclosing_circle,
    quad_from_recist,
    validate_recist,
)
from recistseg.raster import fill_ellipse, fill_polygon


def shoelace(vertices) -> float:
    v = np.array(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def make_pair(maj_a, maj_b, min_a, min_b):
    return RecistPair(Point2(*maj_a), Point2(*maj_b), Point2(*min_a), Point2(*min_b))


# ---------------------------------------------------------------------------
# quad_from_recist
# ---------------------------------------------------------------------------

class TestQuadFromRecist:
    def test_rhombus(self):
        r = make_pair((0, 0), (4, 0), (2, -2), (2, 2))
        q = quad_from_recist(r)
        assert q.vertices == (Point2(0, 0), Point2(2, -2), Point2(4, 0), Point2(2, 2))
        assert shoelace(q.vertices) == pytest.approx(8.0, abs=1e-9)

    def test_kite(self):
        r = make_pair((0, 0), (10, 0), (5, -3), (5, 4))
        q = quad_from_recist(r)
        assert q.vertices == (Point2(0, 0), Point2(5, -3), Point2(10, 0), Point2(5, 4))
        assert shoelace(q.vertices) == pytest.approx(35.0, abs=1e-9)

    def test_zero_length_minor_rejected(self):
        r = make_pair((0, 0), (1, 0), (0.5, 0), (0.5, 0))
        with pytest.raises(DegenerateAnnotation):
            quad_from_recist(r)

    def test_collinear_rejected(self):
        r = make_pair((0, 0), (10, 0), (2, 0), (6, 0))
        with pytest.raises(DegenerateAnnotation):
            quad_from_recist(r)

    def test_diagonal_area_identity(self):
        # area = |d1||d2|/2 for perpendicular crossing diagonals
        rng = np.random.default_rng(11)
        for _ in range(50):
            cx, cy = rng.uniform(-5, 5, 2)
            ang = rng.uniform(0, math.pi)
            l1 = rng.uniform(4, 12)
            l2 = rng.uniform(2, l1)
            ux, uy = math.cos(ang), math.sin(ang)
            # minor shifted along the major but still crossing it
            off = rng.uniform(-0.4, 0.4) * l1
            r = make_pair(
                (cx - ux * l1 / 2, cy - uy * l1 / 2),
                (cx + ux * l1 / 2, cy + uy * l1 / 2),
                (cx + ux * off + uy * l2 / 2, cy + uy * off - ux * l2 / 2),
                (cx + ux * off - uy * l2 / 2, cy + uy * off + ux * l2 / 2),
            )
            q = quad_from_recist(r)
            assert shoelace(q.vertices) == pytest.approx(l1 * l2 / 2.0, abs=1e-9)


# ---------------------------------------------------------------------------
# min_enclosing_circle
# ---------------------------------------------------------------------------

def brute_force_mec(points) -> Circle:
    """Oracle: try every pair (as diameter) and triple (circumcircle), keep
    the smallest circle covering all points."""
    pts = [Point2(float(x), float(y)) for x, y in points]

    def covers(c: Circle) -> bool:
        return all(math.dist(c.center, p) <= c.radius + 1e-9 for p in pts)

    best = None
    n = len(pts)
    for i in range(n):
        cand = Circle(pts[i], 0.0)
        if covers(cand) and (best is None or cand.radius < best.radius):
            best = cand
    for i in range(n):
        for j in range(i + 1, n):
            cx = (pts[i].x + pts[j].x) / 2
            cy = (pts[i].y + pts[j].y) / 2
            rad = max(math.dist((cx, cy), pts[i]), math.dist((cx, cy), pts[j]))
            cand = Circle(Point2(cx, cy), rad)
            if covers(cand) and (best is None or cand.radius < best.radius):
                best = cand
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b, c = pts[i], pts[j], pts[k]
                d = 2 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y))
                if abs(d) < 1e-14:
                    continue
                ux = ((a.x**2 + a.y**2) * (b.y - c.y) + (b.x**2 + b.y**2) * (c.y - a.y)
                      + (c.x**2 + c.y**2) * (a.y - b.y)) / d
                uy = ((a.x**2 + a.y**2) * (c.x - b.x) + (b.x**2 + b.y**2) * (a.x - c.x)
                      + (c.x**2 + c.y**2) * (b.x - a.x)) / d
                rad = max(math.dist((ux, uy), p) for p in (a, b, c))
                cand = Circle(Point2(ux, uy), rad)
                if covers(cand) and (best is None or cand.radius < best.radius):
                    best = cand
    assert best is not None
    return best


class TestMinEnclosingCircle:
    def test_two_point_diameter(self):
        c = min_enclosing_circle([Point2(0, 0), Point2(2, 0)])
        assert c.center == Point2(1.0, 0.0)
        assert c.radius == pytest.approx(1.0, abs=1e-12)

    def test_square_symmetry(self):
        c = min_enclosing_circle([Point2(1, 1), Point2(1, -1), Point2(-1, 1), Point2(-1, -1)])
        assert c.center.x == pytest.approx(0.0, abs=1e-12)
        assert c.center.y == pytest.approx(0.0, abs=1e-12)
        assert c.radius == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_kite_matches_oracle(self):
        pts = [Point2(0, 0), Point2(10, 0), Point2(5, -3), Point2(5, 4)]
        got = min_enclosing_circle(pts)
        want = brute_force_mec(pts)
        assert got.radius == pytest.approx(want.radius, abs=1e-9)
        assert math.dist(got.center, want.center) < 1e-9

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            min_enclosing_circle([])

    def test_random_sets_match_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            pts = [Point2(*p) for p in rng.uniform(-10, 10, size=(4, 2))]
            got = min_enclosing_circle(pts)
            want = brute_force_mec(pts)
            assert abs(got.radius - want.radius) < 1e-9
            assert math.dist(got.center, want.center) < 1e-9

    def test_endpoints_inside_circle_property(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            pts = [Point2(*p) for p in rng.uniform(-20, 20, size=(6, 2))]
            c = min_enclosing_circle(pts)
            for p in pts:
                assert math.dist(c.center, p) <= c.radius + 1e-9


# ---------------------------------------------------------------------------
# extract_recist_from_mask
# ---------------------------------------------------------------------------

def oracle_extract(mask, angle_tol_deg=2.0):
    """Independent exhaustive oracle: max-distance boundary pair, then all
    near-perpendicular in-mask chords, same tie rules."""
    from scipy import ndimage

    rows, cols = np.nonzero(boundary_pixels(mask))
    pts = np.stack([cols + 0.5, rows + 0.5], axis=1)
    n = len(pts)
    best_d2, best = -1.0, None
    for i in range(n):
        for j in range(i + 1, n):
            d2 = float(((pts[i] - pts[j]) ** 2).sum())
            key = tuple(sorted([tuple(pts[i]), tuple(pts[j])]))
            if d2 > best_d2 + 1e-12 or (abs(d2 - best_d2) <= 1e-12 and key < best):
                best_d2, best = d2, key
    (ax, ay), (bx, by) = best
    ux, uy = bx - ax, by - ay
    L = math.hypot(ux, uy)
    ux, uy = ux / L, uy / L
    dist_to_fg = ndimage.distance_transform_edt(~mask.astype(bool))
    h, w = mask.shape

    def chord_ok(p, q):
        npts = max(2, int(math.ceil(math.dist(p, q) * 2)) + 1)
        for t in np.linspace(0, 1, npts):
            x, y = p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])
            ci = min(max(int(round(y - 0.5)), 0), h - 1)
            cj = min(max(int(round(x - 0.5)), 0), w - 1)
            if dist_to_fg[ci, cj] > 1.0 + 1e-9:
                return False
        return True

    cos_tol = math.sin(math.radians(angle_tol_deg))
    best_len, best_minor = -1.0, None
    for i in range(n):
        for j in range(i + 1, n):
            vx, vy = pts[j] - pts[i]
            ln = math.hypot(vx, vy)
            if ln < 2.0 or abs(vx * ux + vy * uy) / ln > cos_tol:
                continue
            si = (pts[i][0] - ax) * (-uy) + (pts[i][1] - ay) * ux
            sj = (pts[j][0] - ax) * (-uy) + (pts[j][1] - ay) * ux
            if si * sj > 0 and min(abs(si), abs(sj)) > 0.5:
                continue
            tm = ((pts[i][0] + pts[j][0]) / 2 - ax) * ux + ((pts[i][1] + pts[j][1]) / 2 - ay) * uy
            if tm < -0.5 or tm > L + 0.5:
                continue
            key = tuple(sorted([tuple(pts[i]), tuple(pts[j])]))
            if ln > best_len + 1e-12 or (abs(ln - best_len) <= 1e-12
                                         and (best_minor is None or key < best_minor)):
                if chord_ok(pts[i], pts[j]):
                    best_len, best_minor = ln, key
    return best, best_minor


class TestExtractRecist:
    def test_ellipse_matches_exhaustive_oracle(self):
        mask = fill_ellipse(Point2(32, 32), (10, 5), 0.0, 64, 64)
        r = extract_recist_from_mask(mask)
        major, minor = oracle_extract(mask)
        assert ((r.major_a.x, r.major_a.y), (r.major_b.x, r.major_b.y)) == major
        assert ((r.minor_a.x, r.minor_a.y), (r.minor_b.x, r.minor_b.y)) == minor
        # close to the analytic axes of the generating ellipse
        assert r.major_length == pytest.approx(20.0, abs=1.0)
        assert r.minor_length <= r.major_length
        for p in (r.major_a, r.major_b):
            assert min(math.dist(p, (22, 32)), math.dist(p, (42, 32))) < 2.0

    def test_disc_near_equal_axes(self):
        mask = fill_disc_like(8.0)
        r = extract_recist_from_mask(mask)
        assert 15.0 <= r.major_length <= 17.0
        assert 0.9 <= r.minor_length / r.major_length <= 1.1

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            extract_recist_from_mask(np.zeros((16, 16), dtype=np.uint8))

    def test_tiny_component(self):
        m = np.zeros((16, 16), dtype=np.uint8)
        m[5, 5] = 1
        with pytest.raises(TooSmall):
            extract_recist_from_mask(m)

    def test_major_equals_hull_diameter(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            a = rng.uniform(5, 12)
            b = rng.uniform(3, a)
            ang = rng.uniform(0, math.pi)
            mask = fill_ellipse(Point2(32, 32), (a, b), ang, 64, 64)
            r = extract_recist_from_mask(mask)
            rows, cols = np.nonzero(boundary_pixels(mask))
            pts = np.stack([cols + 0.5, rows + 0.5], axis=1)
            d = pts[:, None, :] - pts[None, :, :]
            want = math.sqrt(float((d ** 2).sum(axis=2).max()))
            assert r.major_length == want

    def test_round_trip_quad_inside_mask(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            a = rng.uniform(6, 12)
            b = rng.uniform(4, a)
            ang = rng.uniform(0, math.pi)
            mask = fill_ellipse(Point2(32, 32), (a, b), ang, 64, 64)
            r = extract_recist_from_mask(mask)
            quad_mask = fill_polygon(quad_from_recist(r), 64, 64)
            violations = int(np.count_nonzero(quad_mask & ~mask.astype(bool)))
            assert violations <= 0.005 * quad_mask.sum()

    def test_result_satisfies_invariants(self):
        mask = fill_ellipse(Point2(20, 24), (9, 6), 0.7, 48, 48)
        r = extract_recist_from_mask(mask)
        validate_recist(r)

    def test_multi_component_uses_largest(self):
        m = fill_ellipse(Point2(16, 16), (8, 6), 0.0, 64, 64)
        m |= fill_ellipse(Point2(48, 48), (4, 3), 0.0, 64, 64)
        r = extract_recist_from_mask(m)
        # endpoints must come from the big lesion around (16, 16)
        for p in r.endpoints():
            assert math.dist(p, (16, 16)) < 12


def fill_disc_like(radius):
    from recistseg.geometry import Circle as C
    from recistseg.raster import fill_disc
    return fill_disc(C(Point2(16, 16), radius), 32, 32)


# ---------------------------------------------------------------------------
# ellipse_from_recist
# ---------------------------------------------------------------------------

class TestEllipseFromRecist:
    def test_symmetric_cross(self):
        r = make_pair((0, 0), (4, 0), (2, -2), (2, 2))
        center, axes, angle = ellipse_from_recist(r)
        assert center == Point2(2.0, 0.0)
        assert axes == (2.0, 2.0)
        assert angle == pytest.approx(0.0, abs=1e-12)

    def test_kite_center_is_segment_intersection(self):
        r = make_pair((0, 0), (10, 0), (5, -3), (5, 4))
        center, axes, angle = ellipse_from_recist(r)
        assert center == Point2(5.0, 0.0)
        assert axes == (5.0, 3.5)
        assert angle == pytest.approx(0.0, abs=1e-12)

    def test_zero_minor_rejected(self):
        r = make_pair((0, 0), (4, 0), (2, 0), (2, 0))
        with pytest.raises(DegenerateAnnotation):
            ellipse_from_recist(r)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

class TestInvariants:
    def test_quad_vertices_inside_circle(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            cx, cy = rng.uniform(10, 50, 2)
            ang = rng.uniform(0, math.pi)
            l1 = rng.uniform(6, 16)
            l2 = rng.uniform(4, l1)
            ux, uy = math.cos(ang), math.sin(ang)
            r = make_pair(
                (cx - ux * l1 / 2, cy - uy * l1 / 2),
                (cx + ux * l1 / 2, cy + uy * l1 / 2),
                (cx + uy * l2 / 2, cy - ux * l2 / 2),
                (cx - uy * l2 / 2, cy + ux * l2 / 2),
            )
            circ = min_enclosing_circle(r.endpoints())
            for v in quad_from_recist(r).vertices:
                assert math.dist(circ.center, v) <= circ.radius + 1e-9

    def test_validate_rejects_skewed_angle(self):
        r = make_pair((0, 0), (10, 0), (5, -3), (8, 3))  # ~64 degrees
        assert diameter_angle_deg(r) < 88.0
        with pytest.raises(DegenerateAnnotation):
            validate_recist(r)

    def test_validate_rejects_distant_segments(self):
        r = make_pair((0, 0), (10, 0), (5, 2), (5, 8))
        with pytest.raises(DegenerateAnnotation):
            validate_recist(r)

    def test_validate_accepts_crossing(self):
        validate_recist(make_pair((0, 0), (10, 0), (5, -3), (5, 4)))
