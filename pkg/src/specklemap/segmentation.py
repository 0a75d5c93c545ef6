"""Empty-region segmentation for the sonar-gated depth image.

Glass shows up as a hole in the validity mask.  This module extracts the
8-connected components of the invalid-pixel mask, merges overlapping detections
of the same hole, and matches a confirmed speckle to the hole that contains it
(the speckle itself is a small valid island inside the hole, so the match uses
a dilated mask).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DepthFrame, ParameterError, Rect
from .filters import EIGHT_CONN
from .tracker import ConfirmedSpeckle


@dataclass(eq=False)
class Region:
    """One empty region: bbox in image coordinates, mask local to the bbox."""

    region_id: int
    bbox: Rect
    mask: np.ndarray
    area: int
    touches_border: bool


def segment_empty_regions(
    frame: DepthFrame,
    min_area_px: int = 400,
    border_tolerance_px: int | None = None,
    exclusion: Rect | None = None,
) -> list[Region]:
    """8-connected components of the invalid-pixel mask, largest first.

    Components touching the image border are kept but flagged (glass often
    exceeds the field of view); set ``border_tolerance_px`` to drop components
    whose border contact exceeds that many pixels.  ``exclusion`` marks a
    rectangle to ignore entirely, for sensor self-occlusion (a sonar housing
    protruding into a corner of the frame).  Components smaller than
    ``min_area_px`` are discarded.
    """
    if min_area_px < 1:
        raise ParameterError("min_area_px must be >= 1")
    empty = ~frame.valid_mask
    if exclusion is not None:
        r = exclusion.clip(frame.intrinsics.width, frame.intrinsics.height)
        empty = empty.copy()
        empty[r.y0 : r.y1, r.x0 : r.x1] = False
    labels, n = ndimage.label(empty, structure=EIGHT_CONN)
    if n == 0:
        return []
    h, w = empty.shape
    regions: list[Region] = []
    slices = ndimage.find_objects(labels)
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    for lab in range(1, n + 1):
        area = int(counts[lab])
        if area < min_area_px:
            continue
        sl = slices[lab - 1]
        y0, y1 = sl[0].start, sl[0].stop
        x0, x1 = sl[1].start, sl[1].stop
        mask = labels[sl] == lab
        border = 0
        if y0 == 0:
            border += int(mask[0].sum())
        if y1 == h:
            border += int(mask[-1].sum())
        if x0 == 0:
            border += int(mask[:, 0].sum())
        if x1 == w:
            border += int(mask[:, -1].sum())
        if border_tolerance_px is not None and border > border_tolerance_px:
            continue
        regions.append(
            Region(
                region_id=0,
                bbox=Rect(x0, y0, x1 - x0, y1 - y0),
                mask=mask,
                area=area,
                touches_border=border > 0,
            )
        )
    regions.sort(key=lambda r: (-r.area, r.bbox.y0, r.bbox.x0))
    for i, region in enumerate(regions):
        region.region_id = i + 1
    return regions


def nms_merge(regions: list[Region], iou_max: float = 0.3) -> list[Region]:
    """Merge regions whose bounding boxes overlap more than ``iou_max``.

    Greedy by descending area: a region is folded into the first kept region
    whose bbox IoU exceeds the threshold (mask union, bbox union).  Merging
    can grow a kept bbox, so passes repeat until stable; the result is
    idempotent and output bboxes overlap pairwise at most ``iou_max``.
    """
    if not (0.0 <= iou_max < 1.0):
        raise ParameterError("iou_max must lie in [0, 1)")
    work = list(regions)
    changed = True
    while changed:
        changed = False
        work.sort(key=lambda r: (-r.area, r.region_id))
        kept: list[Region] = []
        for region in work:
            target = None
            for k in kept:
                if k.bbox.iou(region.bbox) > iou_max:
                    target = k
                    break
            if target is None:
                kept.append(region)
            else:
                merged = _merge(target, region)
                kept[kept.index(target)] = merged
                changed = True
        work = kept
    return work


def _merge(a: Region, b: Region) -> Region:
    bbox = a.bbox.union_bbox(b.bbox)
    mask = np.zeros((bbox.h, bbox.w), dtype=bool)
    for part in (a, b):
        oy, ox = part.bbox.y0 - bbox.y0, part.bbox.x0 - bbox.x0
        mask[oy : oy + part.bbox.h, ox : ox + part.bbox.w] |= part.mask
    return Region(
        region_id=min(a.region_id, b.region_id),
        bbox=bbox,
        mask=mask,
        area=int(mask.sum()),
        touches_border=a.touches_border or b.touches_border,
    )


def region_for_speckle(
    regions: list[Region], speckle: ConfirmedSpeckle, dilation_px: int
) -> Region | None:
    """The region whose mask, dilated by ``dilation_px``, contains the speckle.

    The speckle blob is valid data inside the hole, so the hole's mask never
    contains the speckle center itself; dilation by the ring kernel's outer
    radius bridges that gap.  Ties go to the largest region; None when no
    region reaches the speckle.
    """
    if dilation_px < 0:
        raise ParameterError("dilation_px must be non-negative")
    u, v = speckle.center
    best: Region | None = None
    for region in regions:
        if _within_distance(region, u, v, dilation_px):
            if best is None or region.area > best.area:
                best = region
    return best


def _within_distance(region: Region, u: int, v: int, radius: int) -> bool:
    probe = Rect(u - radius, v - radius, 2 * radius + 1, 2 * radius + 1)
    window = probe.intersect(region.bbox)
    if window.area == 0:
        return False
    local = region.mask[
        window.y0 - region.bbox.y0 : window.y1 - region.bbox.y0,
        window.x0 - region.bbox.x0 : window.x1 - region.bbox.x0,
    ]
    ys, xs = np.nonzero(local)
    if ys.size == 0:
        return False
    dy = ys + window.y0 - v
    dx = xs + window.x0 - u
    return bool(np.any(dy * dy + dx * dx <= radius * radius))
