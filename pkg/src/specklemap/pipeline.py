"""Composition root wiring every detection stage under one configuration.

A frame passes through: domain validation, the sonar depth gate, the two
kernel responses over the binarized validity image, peak detection and
pairing, per-candidate shape filters (patch binarization, circularity,
empty surround), temporal tracking, empty-region segmentation with overlap
merging, and finally plane reprojection into a fused depth frame.  The fused
output is built from the original frame, so gating never erases measured
background; it only steers detection.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

from .core import (
    CameraIntrinsics,
    DepthFrame,
    ParameterError,
    Rect,
    SonarReading,
    SpeckleMapError,
    validate_frame,
)
from .filters import (
    binarize_patch,
    circularity,
    integral_image,
    largest_component,
    sonar_gate,
    verify_empty_surround,
)
from .kernels import (
    Kernel,
    SpeckleCandidate,
    build_bright_kernel,
    build_dark_ring_kernel,
    detect_peaks,
    dual_response_maps,
    pair_peaks,
)
from .reprojection import (
    FusedDepthFrame,
    estimate_plane,
    linear_gradient_fill,
    plane_intersection_fill,
)
from .segmentation import nms_merge, region_for_speckle, segment_empty_regions
from .tracker import ConfirmedSpeckle, SpeckleTracker, TrackerConfig

# Gradient gain fitted by calibrate_alpha against the exact-plane fill on a
# noise-free 2 m pane tilted 10 degrees (the calibrate-alpha CLI subcommand
# reproduces this number).
DEFAULT_ALPHA = -2.838876033112528e-06

FILL_MODES = ("linear", "exact")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the detection pipeline, overridable via JSON."""

    r_b: int = 21
    r_in: int = 11
    r_out: int = 21
    bright_band: tuple[float, float] = (0.3, 0.9)
    ring_band: tuple[float, float] = (0.3, 0.9)
    circularity_min: float = 0.5
    empty_ratio_max: float = 0.07
    sonar_enabled: bool = True
    sonar_margin_m: float = 0.2
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    min_area_px: int = 400
    iou_max: float = 0.3
    fill_mode: str = "linear"
    alpha: float = DEFAULT_ALPHA
    roi_fraction: float = 0.8
    patch_px: int = 64
    separation_min: float = 0.75
    surround_band_max_px: int = 24
    min_fill_depth_m: float = 0.05

    def __post_init__(self) -> None:
        build_bright_kernel(self.r_b)
        build_dark_ring_kernel(self.r_in, self.r_out)
        for name, (lo, hi) in (("bright", self.bright_band), ("ring", self.ring_band)):
            if not (0.0 <= lo < hi <= 1.0):
                raise ParameterError(
                    f"{name} band must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
                )
        if self.circularity_min <= 0.0:
            raise ParameterError("circularity_min must be positive")
        if not (0.0 < self.empty_ratio_max <= 1.0):
            raise ParameterError("empty_ratio_max must lie in (0, 1]")
        if self.sonar_margin_m < 0.0:
            raise ParameterError("sonar_margin_m must be non-negative")
        if self.min_area_px < 1:
            raise ParameterError("min_area_px must be >= 1")
        if not (0.0 <= self.iou_max < 1.0):
            raise ParameterError("iou_max must lie in [0, 1)")
        if self.fill_mode not in FILL_MODES:
            raise ParameterError(
                f"fill_mode must be one of {FILL_MODES}, got {self.fill_mode!r}"
            )
        if not (0.0 < self.roi_fraction <= 1.0):
            raise ParameterError("roi_fraction must lie in (0, 1]")
        if self.patch_px < 8:
            raise ParameterError("patch_px must be >= 8")
        if not (0.0 < self.separation_min <= 1.0):
            raise ParameterError("separation_min must lie in (0, 1]")
        if self.surround_band_max_px < 1:
            raise ParameterError("surround_band_max_px must be >= 1")
        if self.min_fill_depth_m <= 0.0:
            raise ParameterError("min_fill_depth_m must be positive")


def preset(preset_id: int) -> PipelineConfig:
    """Named operating points.

    Preset 1 runs without the sonar gate; preset 2 tightens the circularity
    threshold to 0.56 with a strict 0.07 emptiness ratio; preset 3 keeps the
    0.5 circularity threshold, relaxes the emptiness ratio to 0.3, and gates
    with sonar.
    """
    if preset_id == 1:
        return PipelineConfig(sonar_enabled=False, circularity_min=0.5, empty_ratio_max=0.07)
    if preset_id == 2:
        return PipelineConfig(sonar_enabled=True, circularity_min=0.56, empty_ratio_max=0.07)
    if preset_id == 3:
        return PipelineConfig(sonar_enabled=True, circularity_min=0.5, empty_ratio_max=0.3)
    raise ParameterError(f"preset must be 1, 2, or 3, got {preset_id}")


def config_from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    """Build a config from a JSON object: optional preset plus flat overrides.

    Keys must name PipelineConfig fields exactly; `tracker` takes a nested
    object with TrackerConfig field names.  Unknown keys are rejected.
    """
    if not isinstance(data, Mapping):
        raise ParameterError("config must be a JSON object")
    items = dict(data)
    base = preset(int(items.pop("preset"))) if "preset" in items else PipelineConfig()
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(items) - known)
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
    overrides: dict[str, Any] = {}
    for key, value in items.items():
        if key == "tracker":
            if not isinstance(value, Mapping):
                raise ParameterError("tracker override must be an object")
            tracker_known = {f.name for f in fields(TrackerConfig)}
            bad = sorted(set(value) - tracker_known)
            if bad:
                raise ParameterError(f"unknown tracker keys: {', '.join(bad)}")
            overrides[key] = TrackerConfig(**value)
        elif key in ("bright_band", "ring_band"):
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ParameterError(f"{key} must be a [lo, hi] pair")
            overrides[key] = (float(value[0]), float(value[1]))
        else:
            overrides[key] = value
    try:
        return replace(base, **overrides)
    except TypeError as exc:
        raise ParameterError(f"invalid config value: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Read a JSON config file; parse failures raise ParseError."""
    from .frameio import read_json

    return config_from_dict(read_json(path))


@dataclass(frozen=True, eq=False)
class StageTiming:
    """Wall-clock seconds per stage, in execution order."""

    stages: tuple[tuple[str, float], ...]
    total: float

    def as_dict(self) -> dict[str, float]:
        d = {name: seconds for name, seconds in self.stages}
        d["total"] = self.total
        return d


@dataclass(frozen=True, eq=False)
class CandidateRecord:
    """One paired peak and the verdict of the shape filters on it."""

    center: tuple[int, int]
    depth_m: float
    score: float
    circularity: float | None
    rejection: str | None


@dataclass(frozen=True, eq=False)
class RegionRecord:
    region_id: int
    bbox: Rect
    area: int
    touches_border: bool
    filled_by_track: int | None


@dataclass(frozen=True, eq=False)
class FrameDiagnostics:
    candidates: tuple[CandidateRecord, ...]
    confirmed: tuple[ConfirmedSpeckle, ...]
    regions: tuple[RegionRecord, ...]
    timing: StageTiming


def diagnostics_to_dict(diag: FrameDiagnostics) -> dict[str, Any]:
    """JSON-ready view of one frame's diagnostics."""
    return {
        "candidates": [
            {
                "center": list(c.center),
                "depth_m": c.depth_m,
                "score": c.score,
                "circularity": c.circularity,
                "rejection": c.rejection,
            }
            for c in diag.candidates
        ],
        "confirmed": [
            {
                "track_id": s.track_id,
                "center": list(s.center),
                "depth_m": s.depth_m,
                "hit_count": s.hit_count,
            }
            for s in diag.confirmed
        ],
        "regions": [
            {
                "region_id": r.region_id,
                "bbox": [r.bbox.x0, r.bbox.y0, r.bbox.w, r.bbox.h],
                "area": r.area,
                "touches_border": r.touches_border,
                "filled_by_track": r.filled_by_track,
            }
            for r in diag.regions
        ],
        "timing": diag.timing.as_dict(),
    }


@dataclass
class PipelineState:
    """Mutable cross-frame state: the tracker plus prebuilt kernels."""

    tracker: SpeckleTracker
    bright: Kernel
    ring: Kernel


def init_state(cfg: PipelineConfig) -> PipelineState:
    return PipelineState(
        tracker=SpeckleTracker(cfg.tracker),
        bright=build_bright_kernel(cfg.r_b),
        ring=build_dark_ring_kernel(cfg.r_in, cfg.r_out),
    )


def _central_roi(intr: CameraIntrinsics, fraction: float) -> Rect:
    w_roi = max(1, round(intr.width * fraction))
    h_roi = max(1, round(intr.height * fraction))
    return Rect((intr.width - w_roi) // 2, (intr.height - h_roi) // 2, w_roi, h_roi)


def _vet_candidate(
    cfg: PipelineConfig, cand: SpeckleCandidate, validity_ii
) -> tuple[str | None, float | None]:
    """Shape-filter verdict: (rejection reason or None, circularity score)."""
    try:
        binary = binarize_patch(cand.patch, cfg.separation_min)
        component, bbox_local = largest_component(binary)
        circ = circularity(component, cfg.circularity_min)
    except SpeckleMapError:
        return "no_foreground", None
    if not circ.passed:
        return "circularity", circ.c
    bbox = Rect(
        cand.patch_origin[0] + bbox_local.x0,
        cand.patch_origin[1] + bbox_local.y0,
        bbox_local.w,
        bbox_local.h,
    )
    band = min(cfg.surround_band_max_px, max(bbox.w, bbox.h))
    if not verify_empty_surround(validity_ii, bbox, cfg.empty_ratio_max, band):
        return "surround", circ.c
    return None, circ.c


def process_frame(
    cfg: PipelineConfig,
    state: PipelineState,
    frame: DepthFrame,
    sonar: SonarReading | None = None,
) -> tuple[PipelineState, FusedDepthFrame, FrameDiagnostics]:
    """Run every stage on one frame.

    Frames must arrive in strictly increasing timestamp order.  Without a
    sonar reading the depth gate is skipped even when enabled.  Per-candidate
    filter failures become diagnostics entries, never exceptions; the fused
    frame is always produced and equals the input when nothing is confirmed.
    """
    timings: list[tuple[str, float]] = []
    t_start = time.perf_counter()

    def clock(name: str, t0: float) -> float:
        t1 = time.perf_counter()
        timings.append((name, t1 - t0))
        return t1

    t = t_start
    frame = validate_frame(frame)
    t = clock("validate", t)

    if cfg.sonar_enabled and sonar is not None:
        gated = sonar_gate(frame, sonar, cfg.sonar_margin_m)
    else:
        gated = frame
    t = clock("gate", t)

    validity = gated.valid_mask
    roi = _central_roi(frame.intrinsics, cfg.roi_fraction)
    bright_map, ring_map = dual_response_maps(validity, state.bright, state.ring, roi)
    t = clock("respond", t)

    bright_peaks = detect_peaks(bright_map, *cfg.bright_band)
    ring_peaks = detect_peaks(ring_map, *cfg.ring_band)
    t = clock("peaks", t)

    candidates = pair_peaks(
        bright_peaks,
        ring_peaks,
        float(cfg.r_out),
        gated,
        depth_radius=cfg.r_in,
        patch_px=cfg.patch_px,
    )
    t = clock("pair", t)

    validity_ii = integral_image(validity)
    records: list[CandidateRecord] = []
    accepted: list[SpeckleCandidate] = []
    for cand in candidates:
        rejection, circ_c = _vet_candidate(cfg, cand, validity_ii)
        records.append(
            CandidateRecord(cand.center, cand.depth_m, cand.score, circ_c, rejection)
        )
        if rejection is None:
            accepted.append(cand)
    t = clock("filter", t)

    confirmed = state.tracker.update(accepted, frame.timestamp)
    t = clock("track", t)

    regions = nms_merge(
        segment_empty_regions(gated, cfg.min_area_px), cfg.iou_max
    )
    t = clock("segment", t)

    fused = FusedDepthFrame.from_frame(frame)
    filled_by: dict[int, int] = {}
    for speckle in confirmed:
        region = region_for_speckle(regions, speckle, dilation_px=cfg.r_out)
        if region is None or region.region_id in filled_by:
            continue
        try:
            if cfg.fill_mode == "exact":
                plane = estimate_plane(speckle, frame.intrinsics)
                plane_intersection_fill(frame, region, plane, frame.intrinsics, output=fused)
            else:
                linear_gradient_fill(
                    frame,
                    region,
                    speckle,
                    frame.intrinsics,
                    cfg.alpha,
                    output=fused,
                    min_depth_m=cfg.min_fill_depth_m,
                )
        except SpeckleMapError:
            continue
        filled_by[region.region_id] = speckle.track_id
    t = clock("fill", t)

    region_records = tuple(
        RegionRecord(r.region_id, r.bbox, r.area, r.touches_border, filled_by.get(r.region_id))
        for r in regions
    )
    timing = StageTiming(tuple(timings), time.perf_counter() - t_start)
    diag = FrameDiagnostics(tuple(records), tuple(confirmed), region_records, timing)
    return state, fused, diag
