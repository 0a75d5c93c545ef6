"""Candidate validation: sonar gating, patch segmentation, shape and context checks.

A speckle candidate survives only if the valid blob in its depth patch is
round enough (circularity of the traced outer contour) and if the image
context immediately around the blob is empty, measured with an integral image
over the validity mask.  The sonar gate runs before detection and removes
returns from beyond the nearest surface, so background clutter cannot
masquerade as structure around a speckle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    BoundsError,
    DepthFrame,
    ParameterError,
    Rect,
    SonarReading,
    SpeckleMapError,
)

EIGHT_CONN = np.ones((3, 3), dtype=bool)


def sonar_gate(frame: DepthFrame, sonar: SonarReading, margin_m: float = 0.2) -> DepthFrame:
    """Invalidate every pixel deeper than the sonar range plus ``margin_m``.

    The ultrasonic pulse reflects off the nearest surface, glass included, so
    anything measured beyond it is background seen around (or through) that
    surface.  Idempotent; never touches pixels at or inside the gate.
    """
    if margin_m < 0:
        raise ParameterError("sonar margin must be non-negative")
    limit = sonar.range_m + margin_m
    over = frame.depth > limit
    if not over.any():
        return frame
    depth = frame.depth.copy()
    depth[over] = 0.0
    return DepthFrame(frame.intrinsics, frame.timestamp, depth)


def binarize_patch(patch: np.ndarray, separation_min: float = 0.75) -> np.ndarray:
    """Foreground mask of a depth patch via between-class variance maximization.

    Invalid pixels are always background.  The valid depths are histogrammed
    into 64 bins over their own range and split at the threshold maximizing
    the between-class variance; the nearer class is the foreground (a speckle
    sits on the glass, in front of any residual clutter).

    The split is only trusted when it explains at least ``separation_min`` of
    the total variance.  A single noisy surface always admits *some* maximizing
    split (near its mean, explaining about 64% of the variance for gaussian
    noise), and cutting a speckle in half there would shred its shape; such
    unimodal patches map to all-valid foreground, as do degenerate patches
    with fewer than two distinct valid values.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.size == 0:
        raise ParameterError("patch must be non-empty")
    if not (0.0 < separation_min <= 1.0):
        raise ParameterError("separation_min must lie in (0, 1]")
    valid = patch > 0.0
    vals = patch[valid]
    if vals.size == 0:
        return np.zeros_like(valid)
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi or np.unique(vals).size < 2:
        return valid
    hist, edges = np.histogram(vals, bins=64, range=(lo, hi))
    p = hist / hist.sum()
    omega = np.cumsum(p)
    mids = (edges[:-1] + edges[1:]) / 2.0
    mu = np.cumsum(p * mids)
    mu_total = mu[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        between = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between[:-1]))
    # Binned total variance keeps the explained fraction in [0, 1] exactly.
    total = float(p @ (mids - mu_total) ** 2)
    if total <= 0.0 or between[k] / total < separation_min:
        return valid
    threshold = edges[k + 1]
    return valid & (patch <= threshold)


def largest_component(binary: np.ndarray) -> tuple[np.ndarray, Rect]:
    """Largest 8-connected foreground component and its bounding box."""
    binary = np.asarray(binary, dtype=bool)
    if not binary.any():
        raise SpeckleMapError("binary patch has no foreground")
    labels, _ = ndimage.label(binary, structure=EIGHT_CONN)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    best = int(np.argmax(counts))
    comp = labels == best
    ys, xs = np.nonzero(comp)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    return comp, Rect(x0, y0, x1 - x0, y1 - y0)


# Clockwise Moore neighborhood in (dy, dx), starting from the west neighbor.
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def trace_outer_contour(component: np.ndarray) -> list[tuple[int, int]]:
    """Closed outer boundary walk of a connected component, pixel by pixel.

    Moore-neighbor tracing from the topmost-leftmost pixel.  The walk state is
    (pixel, direction of the background we scan from); once a state repeats,
    the pixels visited between its two occurrences form exactly one closed
    boundary cycle, which is returned with matching first and last entries.
    Filament-like shapes revisit pixels, so a 1-px line is walked out and
    back, counting both of its sides.
    """
    ys, xs = np.nonzero(component)
    if ys.size == 0:
        raise SpeckleMapError("cannot trace an empty component")
    order = np.lexsort((xs, ys))
    start = (int(ys[order[0]]), int(xs[order[0]]))
    h, w = component.shape

    def fg(y: int, x: int) -> bool:
        return 0 <= y < h and 0 <= x < w and bool(component[y, x])

    nodes = [start]
    state = (start, 0)  # west of the start pixel is background by scan order
    seen: dict[tuple[tuple[int, int], int], int] = {}
    limit = 8 * ys.size + 8
    while state not in seen:
        seen[state] = len(nodes) - 1
        p, entry = state
        nxt = None
        for k in range(1, 9):
            idx = (entry + k) % 8
            dy, dx = _MOORE[idx]
            q = (p[0] + dy, p[1] + dx)
            if fg(*q):
                bgy, bgx = _MOORE[(idx - 1) % 8]
                bg = (p[0] + bgy, p[1] + bgx)
                nxt = (q, _neighbor_index(q, bg))
                break
        if nxt is None:
            return nodes  # isolated pixel
        nodes.append(nxt[0])
        state = nxt
        if len(nodes) > limit:
            raise SpeckleMapError("contour tracing failed to close")
    return nodes[seen[state] :]


def _neighbor_index(p: tuple[int, int], q: tuple[int, int]) -> int:
    d = (q[0] - p[0], q[1] - p[1])
    return _MOORE.index(d)


@dataclass(frozen=True)
class CircularityResult:
    c: float
    area: int
    perimeter: float
    passed: bool


def circularity(binary: np.ndarray, threshold: float = 0.5) -> CircularityResult:
    """Isoperimetric roundness of the largest 8-connected foreground component.

    c = 4*pi*area / perimeter^2, with area the component's pixel count and
    perimeter the length of its traced outer contour (diagonal steps weigh
    sqrt(2)).  Degenerate single-pixel components have no contour length and
    score 0.
    """
    comp, _ = largest_component(binary)
    area = int(comp.sum())
    chain = trace_outer_contour(comp)
    perimeter = 0.0
    for (y0, x0), (y1, x1) in zip(chain, chain[1:]):
        perimeter += math.sqrt(2.0) if (y0 != y1 and x0 != x1) else 1.0
    c = 4.0 * math.pi * area / (perimeter * perimeter) if perimeter > 0 else 0.0
    return CircularityResult(c=c, area=area, perimeter=perimeter, passed=c >= threshold)


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Summed-area table with a zero border: table[y+1, x+1] = sum of grid[:y+1, :x+1]."""

    table: np.ndarray
    width: int
    height: int


def integral_image(grid: np.ndarray) -> IntegralImage:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ParameterError("integral image requires a 2-D grid")
    h, w = grid.shape
    if grid.dtype == np.bool_ or np.issubdtype(grid.dtype, np.integer):
        acc: type = np.int64
    else:
        acc = np.float64
    table = np.zeros((h + 1, w + 1), dtype=acc)
    np.cumsum(grid.astype(acc, copy=False), axis=0, out=table[1:, 1:])
    np.cumsum(table[1:, 1:], axis=1, out=table[1:, 1:])
    return IntegralImage(table=table, width=w, height=h)


def box_sum(ii: IntegralImage, rect: Rect) -> float:
    """Sum of grid values inside ``rect``, clipped to the image bounds."""
    r = rect.clip(ii.width, ii.height)
    if r.area == 0:
        return 0.0
    t = ii.table
    return float(t[r.y1, r.x1] - t[r.y0, r.x1] - t[r.y1, r.x0] + t[r.y0, r.x0])


def surround_regions(bbox: Rect, band: int) -> list[Rect]:
    """Eight band rectangles tiling the frame around a bounding box.

    Four edge bands share the bbox's width or height; four corner squares of
    ``band`` pixels complete the ring with no gaps or overlaps.
    """
    if band < 1:
        raise ParameterError("surround band must be >= 1 pixel")
    b = band
    return [
        Rect(bbox.x0, bbox.y0 - b, bbox.w, b),  # N
        Rect(bbox.x0, bbox.y1, bbox.w, b),  # S
        Rect(bbox.x0 - b, bbox.y0, b, bbox.h),  # W
        Rect(bbox.x1, bbox.y0, b, bbox.h),  # E
        Rect(bbox.x0 - b, bbox.y0 - b, b, b),  # NW
        Rect(bbox.x1, bbox.y0 - b, b, b),  # NE
        Rect(bbox.x0 - b, bbox.y1, b, b),  # SW
        Rect(bbox.x1, bbox.y1, b, b),  # SE
    ]


def verify_empty_surround(
    ii: IntegralImage, bbox: Rect, ratio_max: float, band: int
) -> bool:
    """True when every surround region is nearly empty of valid pixels.

    Each of the eight bands around ``bbox`` is clipped to the image; regions
    clipped away entirely are skipped.  A region fails when its valid-pixel
    fill ratio reaches ``ratio_max``.
    """
    if not (0.0 < ratio_max <= 1.0):
        raise ParameterError("ratio_max must lie in (0, 1]")
    for region in surround_regions(bbox, band):
        clipped = region.clip(ii.width, ii.height)
        if clipped.area == 0:
            continue
        if box_sum(ii, clipped) / clipped.area >= ratio_max:
            return False
    return True
