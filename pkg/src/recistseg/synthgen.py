"""Synthetic convex-lesion slices with ground truth and derived annotations.

Lesions are filled ellipses or random convex polygons (hulls of points
sampled on an ellipse), placed without overlap on a textured background.
Annotations come from measuring the diameters on the generated masks, so
the corpus exercises the same extraction path as real data.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataio import SliceSample
from .errors import DegenerateAnnotation, InfeasiblePlacement, TooSmall
from .geometry import Point2, extract_recist_from_mask
from .raster import fill_ellipse, fill_polygon

PLACEMENT_ATTEMPTS = 100


@dataclass
class SynthSpec:
    image_size: int = 64
    lesions_per_slice: tuple[int, int] = (1, 1)
    radius_range: tuple[float, float] = (6.0, 14.0)
    convexity: str = "ellipse"  # "ellipse" or "polygon"
    intensity_contrast: float = 0.35
    noise_sigma: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.convexity not in ("ellipse", "polygon"):
            raise ValueError(f"unknown convexity mode '{self.convexity}'")
        if self.intensity_contrast <= 0:
            raise ValueError("intensity_contrast must be > 0")
        if self.radius_range[1] * 2 + 4 > self.image_size:
            raise ValueError("radius_range does not fit in the image")


def _lesion_mask(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    """One random convex lesion mask on the full canvas."""
    size = spec.image_size
    r_lo, r_hi = spec.radius_range
    a = rng.uniform(r_lo, r_hi)
    # elongated lesions keep the circumscribed circle a genuine over-
    # segmentation; aspect ratio in [1.4, 2.4]
    b = max(a / rng.uniform(1.4, 2.4), 2.0)
    angle = rng.uniform(0.0, math.pi)
    margin = a + 2.0
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    if spec.convexity == "ellipse":
        return fill_ellipse(Point2(cx, cy), (a, b), angle, size, size)
    # convex polygon: hull of points on the ellipse (monotone angles keep
    # the vertex ring in cyclic order, so the polygon is simple and convex
    # by construction of the hull below)
    n_pts = rng.integers(8, 15)
    thetas = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=n_pts))
    ex = a * np.cos(thetas)
    ey = b * np.sin(thetas)
    ca, sa = math.cos(angle), math.sin(angle)
    verts = np.stack([cx + ex * ca - ey * sa, cy + ex * sa + ey * ca], axis=1)
    return fill_polygon(verts, size, size)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Base level plus a low-frequency ramp so plain thresholding fails."""
    ys, xs = np.mgrid[0:size, 0:size] / size
    gx, gy = rng.uniform(-0.12, 0.12, size=2)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = 0.05 * np.sin(2.0 * math.pi * (xs + ys) + phase)
    return 0.35 + gx * xs + gy * ys + wave


def generate(spec: SynthSpec, n_slices: int) -> list[SliceSample]:
    """Deterministic synthetic dataset of `n_slices` annotated slices."""
    children = np.random.SeedSequence(spec.seed).spawn(n_slices)
    samples = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        samples.append(_generate_slice(rng, spec, f"s{i:04d}"))
    return samples


def _generate_slice(rng: np.random.Generator, spec: SynthSpec, slice_id: str) -> SliceSample:
    size = spec.image_size
    n_lesions = int(rng.integers(spec.lesions_per_slice[0],
                                 spec.lesions_per_slice[1] + 1))
    gt = np.zeros((size, size), dtype=np.uint8)
    recists = []
    for _ in range(n_lesions):
        for attempt in range(PLACEMENT_ATTEMPTS):
            cand = _lesion_mask(rng, spec)
            # keep components separated so extraction sees them individually
            dilated = ndimage.binary_dilation(cand, iterations=2)
            if (dilated & gt.astype(bool)).any():
                continue
            try:
                r = extract_recist_from_mask(cand)
            except (TooSmall, DegenerateAnnotation):
                continue  # rasterized too thin to measure; redraw
            gt |= cand
            recists.append(r)
            break
        else:
            raise InfeasiblePlacement(
                f"could not place lesion after {PLACEMENT_ATTEMPTS} attempts"
            )

    image = _background(rng, size)
    image += spec.intensity_contrast * gt
    image += rng.normal(0.0, spec.noise_sigma, size=(size, size))
    image = np.clip(image, 0.0, 1.0)

    return SliceSample(slice_id=slice_id, image=image, recists=recists,
                       gt=gt, source_id=slice_id)
