"""Tests for empty-region segmentation, merge, and speckle matching."""

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from specklemap.core import CameraIntrinsics, DepthFrame, ParameterError, Rect
from specklemap.kernels import Peak, SpeckleCandidate
from specklemap.segmentation import (
    Region,
    nms_merge,
    region_for_speckle,
    segment_empty_regions,
)
from specklemap.tracker import ConfirmedSpeckle


INTR = CameraIntrinsics.default()


def frame_from_valid(valid: np.ndarray) -> DepthFrame:
    depth = np.where(valid, 3.0, 0.0)
    return DepthFrame(intrinsics=INTR, timestamp=0.0, depth=depth.astype(np.float64))


def flood_components(empty: np.ndarray) -> list[set[tuple[int, int]]]:
    """BFS flood fill with 8-connectivity, independent of scipy."""
    h, w = empty.shape
    seen = np.zeros_like(empty, dtype=bool)
    comps = []
    for sy in range(h):
        for sx in range(w):
            if not empty[sy, sx] or seen[sy, sx]:
                continue
            comp = set()
            queue = deque([(sy, sx)])
            seen[sy, sx] = True
            while queue:
                y, x = queue.popleft()
                comp.add((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w:
                            if empty[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                queue.append((ny, nx))
            comps.append(comp)
    return comps


def region_pixels(region: Region) -> set[tuple[int, int]]:
    ys, xs = np.nonzero(region.mask)
    return {(y + region.bbox.y0, x + region.bbox.x0) for y, x in zip(ys, xs)}


def speckle_at(u: int, v: int) -> ConfirmedSpeckle:
    peak = Peak(u=u, v=v, score=0.5)
    cand = SpeckleCandidate(
        bright_peak=peak,
        ring_peak=peak,
        center=(u, v),
        depth_m=2.0,
        patch=np.full((5, 5), 2.0),
        patch_origin=(u - 2, v - 2),
    )
    return ConfirmedSpeckle(
        track_id=1, center=(u, v), depth_m=2.0, hit_count=3, last_seen=0.0, candidate=cand
    )


class TestSegmentEmptyRegions:
    def test_fully_valid_frame_has_no_regions(self):
        valid = np.ones((480, 640), dtype=bool)
        assert segment_empty_regions(frame_from_valid(valid)) == []

    def test_single_hole_area_and_bbox(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[100:140, 200:240] = False
        regions = segment_empty_regions(frame_from_valid(valid))
        assert len(regions) == 1
        region = regions[0]
        assert region.area == 1600
        assert region.bbox == Rect(200, 100, 40, 40)
        assert not region.touches_border
        assert region.mask.shape == (40, 40)
        assert region.mask.all()

    def test_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(11)
        valid = np.ones((80, 120), dtype=bool)
        for _ in range(6):
            y = int(rng.integers(0, 50))
            x = int(rng.integers(0, 80))
            hh = int(rng.integers(10, 30))
            ww = int(rng.integers(10, 30))
            valid[y : y + hh, x : x + ww] = False
        regions = segment_empty_regions(frame_from_valid(valid), min_area_px=1)
        oracle = flood_components(~valid)
        got = sorted((frozenset(region_pixels(r)) for r in regions), key=len)
        want = sorted((frozenset(c) for c in oracle), key=len)
        assert got == want

    def test_corridor_joins_two_holes(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[100:140, 100:140] = False
        valid[100:140, 200:240] = False
        # Diagonal contact counts as connected, so a 1 px corridor merges them.
        valid[120, 140:200] = False
        regions = segment_empty_regions(frame_from_valid(valid), min_area_px=1)
        assert len(regions) == 1
        assert regions[0].area == 2 * 1600 + 60

    def test_min_area_filters_small_holes(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[10:15, 10:15] = False
        valid[100:140, 200:240] = False
        regions = segment_empty_regions(frame_from_valid(valid), min_area_px=400)
        assert [r.area for r in regions] == [1600]

    def test_border_touching_flagged_and_kept(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[0:40, 300:340] = False
        regions = segment_empty_regions(frame_from_valid(valid))
        assert len(regions) == 1
        assert regions[0].touches_border

    def test_border_tolerance_drops_wide_contact(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[0:40, 300:340] = False
        kept = segment_empty_regions(
            frame_from_valid(valid), border_tolerance_px=39
        )
        assert kept == []
        kept = segment_empty_regions(
            frame_from_valid(valid), border_tolerance_px=40
        )
        assert len(kept) == 1

    def test_exclusion_rect_removes_pixels(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[100:140, 200:240] = False
        regions = segment_empty_regions(
            frame_from_valid(valid), exclusion=Rect(190, 90, 60, 60)
        )
        assert regions == []

    def test_sorted_by_descending_area_with_stable_ids(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[10:60, 10:60] = False
        valid[200:240, 200:260] = False
        regions = segment_empty_regions(frame_from_valid(valid))
        assert [r.area for r in regions] == [2500, 2400]
        assert [r.region_id for r in regions] == [1, 2]

    def test_bad_min_area_raises(self):
        valid = np.ones((10, 10), dtype=bool)
        with pytest.raises(ParameterError):
            segment_empty_regions(frame_from_valid(valid), min_area_px=0)


class TestNmsMerge:
    def make(self, rid: int, bbox: Rect) -> Region:
        return Region(
            region_id=rid,
            bbox=bbox,
            mask=np.ones((bbox.h, bbox.w), dtype=bool),
            area=bbox.area,
            touches_border=False,
        )

    def test_disjoint_regions_untouched(self):
        a = self.make(1, Rect(0, 0, 20, 20))
        b = self.make(2, Rect(100, 100, 20, 20))
        merged = nms_merge([a, b], iou_max=0.3)
        assert len(merged) == 2

    def test_duplicates_collapse(self):
        a = self.make(1, Rect(10, 10, 30, 30))
        b = self.make(2, Rect(10, 10, 30, 30))
        merged = nms_merge([a, b], iou_max=0.3)
        assert len(merged) == 1
        assert merged[0].bbox == Rect(10, 10, 30, 30)
        assert merged[0].area == 900

    def test_half_overlap_merges_above_threshold(self):
        # 10x10 squares offset by 5 columns: intersection 50, union 150.
        a = self.make(1, Rect(0, 0, 10, 10))
        b = self.make(2, Rect(5, 0, 10, 10))
        assert a.bbox.iou(b.bbox) == pytest.approx(50 / 150)
        merged = nms_merge([a, b], iou_max=0.3)
        assert len(merged) == 1
        assert merged[0].bbox == Rect(0, 0, 15, 10)
        assert merged[0].area == 150
        kept = nms_merge([a, b], iou_max=0.34)
        assert len(kept) == 2

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        regions = []
        for i in range(12):
            x = int(rng.integers(0, 200))
            y = int(rng.integers(0, 200))
            w = int(rng.integers(5, 50))
            h = int(rng.integers(5, 50))
            regions.append(self.make(i + 1, Rect(x, y, w, h)))
        once = nms_merge(regions, iou_max=0.3)
        twice = nms_merge(once, iou_max=0.3)
        assert [r.bbox for r in twice] == [r.bbox for r in once]
        assert [r.area for r in twice] == [r.area for r in once]

    def test_output_pairwise_iou_bounded(self):
        rng = np.random.default_rng(7)
        regions = []
        for i in range(20):
            x = int(rng.integers(0, 100))
            y = int(rng.integers(0, 100))
            w = int(rng.integers(5, 40))
            h = int(rng.integers(5, 40))
            regions.append(self.make(i + 1, Rect(x, y, w, h)))
        merged = nms_merge(regions, iou_max=0.3)
        for i, a in enumerate(merged):
            for b in merged[i + 1 :]:
                assert a.bbox.iou(b.bbox) <= 0.3

    def test_bad_threshold_raises(self):
        with pytest.raises(ParameterError):
            nms_merge([], iou_max=1.0)


class TestRegionForSpeckle:
    def test_speckle_inside_hole_matches_after_dilation(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[100:200, 200:300] = False
        # The speckle blob itself is valid: a disk of radius 16 at the center.
        yy, xx = np.mgrid[0:480, 0:640]
        blob = (yy - 150) ** 2 + (xx - 250) ** 2 <= 16 * 16
        valid[blob] = True
        regions = segment_empty_regions(frame_from_valid(valid), min_area_px=1)
        match = region_for_speckle(regions, speckle_at(250, 150), dilation_px=21)
        assert match is not None
        assert match.bbox == Rect(200, 100, 100, 100)

    def test_no_match_when_too_far(self):
        valid = np.ones((480, 640), dtype=bool)
        valid[100:140, 200:240] = False
        regions = segment_empty_regions(frame_from_valid(valid))
        assert region_for_speckle(regions, speckle_at(500, 400), dilation_px=21) is None

    def test_tie_prefers_larger_region(self):
        small = Region(
            region_id=1,
            bbox=Rect(90, 100, 10, 20),
            mask=np.ones((20, 10), dtype=bool),
            area=200,
            touches_border=False,
        )
        large = Region(
            region_id=2,
            bbox=Rect(104, 90, 40, 40),
            mask=np.ones((40, 40), dtype=bool),
            area=1600,
            touches_border=False,
        )
        match = region_for_speckle([small, large], speckle_at(102, 110), dilation_px=5)
        assert match is large

    def test_zero_dilation_requires_containment(self):
        region = Region(
            region_id=1,
            bbox=Rect(100, 100, 20, 20),
            mask=np.ones((20, 20), dtype=bool),
            area=400,
            touches_border=False,
        )
        assert region_for_speckle([region], speckle_at(110, 110), dilation_px=0) is region
        assert region_for_speckle([region], speckle_at(121, 110), dilation_px=0) is None

    def test_negative_dilation_raises(self):
        with pytest.raises(ParameterError):
            region_for_speckle([], speckle_at(0, 0), dilation_px=-1)
