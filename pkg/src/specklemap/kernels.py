"""Speckle detection kernels and response-map machinery.

Two complementary convolution kernels run over a binarized-validity image
(valid pixel -> 1, invalid -> 0, after sonar gating):

* the bright-disk kernel, an indicator of sqrt(x^2 + y^2) <= r_b, responds to
  a compact island of valid returns;
* the dark-ring kernel, an indicator of r_in < sqrt(x^2 + y^2) <= r_out,
  responds to valid data in an annulus around the probe pixel.

Both are normalized to unit sum, so responses are occupancy fractions in
[0, 1].  A glass speckle produces a mid-band response on both maps: the disk
sees the valid island, the ring sees the island's fringe inside otherwise
empty glass.  Saturated areas (solid walls -> 1.0, open space -> 0.0) fall
outside the acceptance band and are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoundsError, DepthFrame, ParameterError, Rect

Chord = tuple[int, int, int]  # (dy, dx_lo, dx_hi) inclusive run of equal weights


def _uniform_chords(weights: np.ndarray, radius: int) -> tuple[Chord, ...] | None:
    """Decompose an indicator kernel into per-row runs of its nonzero cells.

    Returns None when the nonzero weights are not all equal, in which case
    the caller must fall back to direct correlation.
    """
    nz = weights != 0.0
    if not nz.any():
        return None
    vals = weights[nz]
    if not np.allclose(vals, vals[0], rtol=0, atol=1e-15):
        return None
    chords: list[Chord] = []
    size = 2 * radius + 1
    for row in range(size):
        cols = np.flatnonzero(nz[row])
        if cols.size == 0:
            continue
        start = cols[0]
        for k in range(1, cols.size + 1):
            if k == cols.size or cols[k] != cols[k - 1] + 1:
                chords.append((row - radius, int(start) - radius, int(cols[k - 1]) - radius))
                if k < cols.size:
                    start = cols[k]
    return tuple(chords)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Normalized convolution kernel on a (2*radius+1)^2 grid."""

    weights: np.ndarray
    radius: int
    kind: str
    chords: tuple[Chord, ...] | None = field(repr=False, default=None)

    @property
    def support(self) -> int:
        """Number of nonzero cells."""
        return int(np.count_nonzero(self.weights))


def build_bright_kernel(r_b: int) -> Kernel:
    """Indicator of the closed disk of radius ``r_b`` pixels, unit-sum normalized."""
    if r_b < 1:
        raise ParameterError(f"bright-kernel radius must be >= 1, got {r_b}")
    coords = np.arange(-r_b, r_b + 1)
    dist2 = coords[None, :] ** 2 + coords[:, None] ** 2
    inside = dist2 <= r_b * r_b
    weights = inside / inside.sum()
    return Kernel(weights, r_b, "bright_disk", _uniform_chords(weights, r_b))


def build_dark_ring_kernel(r_in: int, r_out: int) -> Kernel:
    """Indicator of the annulus r_in < sqrt(x^2+y^2) <= r_out, unit-sum normalized."""
    if not (1 <= r_in < r_out):
        raise ParameterError(f"ring radii must satisfy 1 <= r_in < r_out, got {r_in}, {r_out}")
    coords = np.arange(-r_out, r_out + 1)
    dist2 = coords[None, :] ** 2 + coords[:, None] ** 2
    inside = (dist2 > r_in * r_in) & (dist2 <= r_out * r_out)
    weights = inside / inside.sum()
    return Kernel(weights, r_out, "dark_ring", _uniform_chords(weights, r_out))


@dataclass(frozen=True, eq=False)
class ResponseMap:
    """Scores aligned with the source grid; defined only inside ``roi``."""

    scores: np.ndarray
    roi: Rect


@dataclass(frozen=True)
class Peak:
    u: int
    v: int
    score: float


@dataclass(frozen=True, eq=False)
class SpeckleCandidate:
    """A paired bright/ring response peak with its local depth evidence."""

    bright_peak: Peak
    ring_peak: Peak
    center: tuple[int, int]
    depth_m: float
    patch: np.ndarray
    patch_origin: tuple[int, int]

    @property
    def score(self) -> float:
        return self.bright_peak.score + self.ring_peak.score


def _check_roi(image: np.ndarray, roi: Rect) -> None:
    h, w = image.shape
    if roi.w <= 0 or roi.h <= 0:
        raise BoundsError("roi must be non-empty")
    if roi.x0 < 0 or roi.y0 < 0 or roi.x1 > w or roi.y1 > h:
        raise BoundsError(f"roi {roi} outside {w}x{h} image")


def _row_cumsum(image: np.ndarray) -> np.ndarray:
    """Per-row prefix sums with a leading zero column.

    Integer inputs (the usual binarized-validity case) stay integral so chord
    sums are exact; everything else is accumulated in float64.
    """
    if image.dtype == np.bool_ or np.issubdtype(image.dtype, np.integer):
        acc_dtype: type = np.int64
    else:
        acc_dtype = np.float64
    h, w = image.shape
    out = np.zeros((h, w + 1), dtype=acc_dtype)
    np.cumsum(image, axis=1, out=out[:, 1:])
    return out


def _chord_sums(
    csum: np.ndarray, chords: tuple[Chord, ...], roi: Rect
) -> np.ndarray:
    """Sum of image values under an indicator footprint at every roi pixel.

    Out-of-image samples contribute zero, which the prefix-sum clipping below
    reproduces exactly.
    """
    h, w = csum.shape[0], csum.shape[1] - 1
    acc = np.zeros((roi.h, roi.w), dtype=csum.dtype)
    for dy, dx_lo, dx_hi in chords:
        ya = max(roi.y0, -dy)
        yb = min(roi.y1, h - dy)
        if ya >= yb:
            continue
        rows_out = slice(ya - roi.y0, yb - roi.y0)
        rows_src = slice(ya + dy, yb + dy)
        lo0 = roi.x0 + dx_lo
        hi0 = roi.x0 + dx_hi + 1
        if lo0 >= 0 and hi0 + roi.w - 1 <= w:
            acc[rows_out] += csum[rows_src, hi0 : hi0 + roi.w]
            acc[rows_out] -= csum[rows_src, lo0 : lo0 + roi.w]
        else:
            cols = np.arange(roi.x0, roi.x1)
            hi = np.clip(cols + dx_hi + 1, 0, w)
            lo = np.clip(cols + dx_lo, 0, w)
            acc[rows_out] += csum[rows_src][:, hi]
            acc[rows_out] -= csum[rows_src][:, lo]
    return acc


def convolve_roi(image: np.ndarray, kernel: Kernel, roi: Rect) -> ResponseMap:
    """Correlate ``kernel`` with ``image`` at every pixel of ``roi``.

    response(p) = sum_o kernel(o) * image(p + o), with samples outside the
    image treated as zero.  Indicator kernels take a prefix-sum fast path;
    arbitrary kernels fall back to direct accumulation over nonzero offsets.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("image must be 2-D")
    _check_roi(image, roi)
    scores = np.zeros(image.shape, dtype=np.float64)
    if kernel.chords is not None:
        sums = _chord_sums(_row_cumsum(image), kernel.chords, roi)
        weight = float(kernel.weights[kernel.weights != 0.0][0])
        scores[roi.y0 : roi.y1, roi.x0 : roi.x1] = sums * weight
        return ResponseMap(scores, roi)
    h, w = image.shape
    acc = np.zeros((roi.h, roi.w), dtype=np.float64)
    work = image.astype(np.float64, copy=False)
    offs = np.argwhere(kernel.weights != 0.0)
    for oy, ox in offs:
        dy, dx = int(oy) - kernel.radius, int(ox) - kernel.radius
        wgt = kernel.weights[oy, ox]
        ya, yb = max(roi.y0, -dy), min(roi.y1, h - dy)
        if ya >= yb:
            continue
        cols = np.arange(roi.x0, roi.x1) + dx
        good = (cols >= 0) & (cols < w)
        acc[ya - roi.y0 : yb - roi.y0, good] += (
            wgt * work[ya + dy : yb + dy][:, cols[good]]
        )
    scores[roi.y0 : roi.y1, roi.x0 : roi.x1] = acc
    return ResponseMap(scores, roi)


def dual_response_maps(
    validity: np.ndarray, bright: Kernel, ring: Kernel, roi: Rect
) -> tuple[ResponseMap, ResponseMap]:
    """Both kernel responses over one validity image, sharing the prefix sums.

    Produces results identical to two ``convolve_roi`` calls; when the ring's
    outer radius equals the bright radius the annulus sums are derived by
    subtracting the inner-disk sums from the already-computed disk sums.
    """
    validity = np.asarray(validity)
    _check_roi(validity, roi)
    if bright.chords is None or ring.chords is None:
        return convolve_roi(validity, bright, roi), convolve_roi(validity, ring, roi)
    csum = _row_cumsum(validity)
    disk_sums = _chord_sums(csum, bright.chords, roi)
    if ring.kind == "dark_ring" and ring.radius == bright.radius:
        r_in = _infer_inner_radius(ring)
        inner = build_bright_kernel(r_in)
        ring_sums = disk_sums - _chord_sums(csum, inner.chords, roi)
    else:
        ring_sums = _chord_sums(csum, ring.chords, roi)
    out_b = np.zeros(validity.shape, dtype=np.float64)
    out_r = np.zeros(validity.shape, dtype=np.float64)
    sl = (slice(roi.y0, roi.y1), slice(roi.x0, roi.x1))
    out_b[sl] = disk_sums / bright.support
    out_r[sl] = ring_sums / ring.support
    return ResponseMap(out_b, roi), ResponseMap(out_r, roi)


def _infer_inner_radius(ring: Kernel) -> int:
    # Largest radius whose whole disk is zero-weighted: the annulus hole.
    center = ring.radius
    row = ring.weights[center]
    inner = 0
    for dx in range(1, ring.radius + 1):
        if row[center + dx] != 0.0:
            break
        inner = dx
    return inner


def detect_peaks(response: ResponseMap, lo: float, hi: float) -> list[Peak]:
    """Strict 8-neighbor local maxima of the response with lo <= score <= hi.

    Ties and plateaus yield no peak, keeping the result deterministic and free
    of duplicate candidates on flat responses.  Sorted by descending score,
    then scan order.
    """
    if not (0.0 <= lo < hi <= 1.0):
        raise ParameterError(f"score band must satisfy 0 <= lo < hi <= 1, got {lo}, {hi}")
    roi = response.roi
    r = response.scores[roi.y0 : roi.y1, roi.x0 : roi.x1]
    padded = np.full((roi.h + 2, roi.w + 2), -np.inf)
    padded[1:-1, 1:-1] = r
    strict = np.ones((roi.h, roi.w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            strict &= r > padded[1 + dy : 1 + dy + roi.h, 1 + dx : 1 + dx + roi.w]
    strict &= (r >= lo) & (r <= hi)
    vs, us = np.nonzero(strict)
    peaks = [Peak(int(u + roi.x0), int(v + roi.y0), float(r[v, u])) for v, u in zip(vs, us)]
    peaks.sort(key=lambda p: (-p.score, p.v, p.u))
    return peaks


def pair_peaks(
    bright: list[Peak],
    ring: list[Peak],
    max_dist: float,
    frame: DepthFrame,
    *,
    depth_radius: int = 11,
    patch_px: int = 64,
) -> list[SpeckleCandidate]:
    """Greedy one-to-one pairing of bright and ring peaks.

    Candidate pairs closer than ``max_dist`` pixels are taken in descending
    combined-score order; each peak joins at most one candidate.  The
    candidate's depth is the median valid depth within ``depth_radius`` of the
    bright peak; pairs with no valid depth there are dropped.  ``patch`` is a
    square crop of the frame's depth values around the bright peak (clipped at
    the image border).
    """
    if max_dist <= 0:
        raise ParameterError("max_dist must be positive")
    pairs: list[tuple[float, float, int, int]] = []
    for i, b in enumerate(bright):
        for j, r in enumerate(ring):
            d = float(np.hypot(b.u - r.u, b.v - r.v))
            if d < max_dist:
                pairs.append((-(b.score + r.score), d, i, j))
    pairs.sort()
    used_b: set[int] = set()
    used_r: set[int] = set()
    out: list[SpeckleCandidate] = []
    h, w = frame.depth.shape
    for _, _, i, j in pairs:
        if i in used_b or j in used_r:
            continue
        b = bright[i]
        depth = _median_valid_depth(frame.depth, b.u, b.v, depth_radius)
        if depth is None:
            # Peak pairing without depth evidence cannot seed a candidate, but
            # the peaks stay available for other pairings.
            continue
        used_b.add(i)
        used_r.add(j)
        half = patch_px // 2
        x0, y0 = max(0, b.u - half), max(0, b.v - half)
        x1, y1 = min(w, b.u - half + patch_px), min(h, b.v - half + patch_px)
        out.append(
            SpeckleCandidate(
                bright_peak=b,
                ring_peak=ring[j],
                center=(b.u, b.v),
                depth_m=depth,
                patch=frame.depth[y0:y1, x0:x1].copy(),
                patch_origin=(x0, y0),
            )
        )
    return out


def _median_valid_depth(depth: np.ndarray, u: int, v: int, radius: int) -> float | None:
    h, w = depth.shape
    x0, x1 = max(0, u - radius), min(w, u + radius + 1)
    y0, y1 = max(0, v - radius), min(h, v + radius + 1)
    win = depth[y0:y1, x0:x1]
    xs = np.arange(x0, x1) - u
    ys = np.arange(y0, y1) - v
    mask = (xs[None, :] ** 2 + ys[:, None] ** 2 <= radius * radius) & (win > 0)
    if not mask.any():
        return None
    return float(np.median(win[mask]))
