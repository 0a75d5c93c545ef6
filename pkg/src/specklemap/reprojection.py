"""Filling a matched empty region with synthesized glass depth.

A confirmed speckle pins the glass in two ways: its measured depth locates the
pane along the ray, and the ray itself estimates the pane normal (the speckle
only appears where the sensor ray meets the glass head-on).  The fill writes
that plane back into the empty region, either with the cheap linear
horizontal-gradient model or by exact ray-plane intersection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CameraIntrinsics,
    DepthFrame,
    ParameterError,
    Rect,
    StructuralError,
    ray_direction,
)
from .segmentation import Region
from .tracker import ConfirmedSpeckle

log = logging.getLogger(__name__)

# Unit rays closer than this to the plane are treated as parallel.
PARALLEL_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class GlassPlane:
    """A glass pane as an infinite plane in camera coordinates (meters)."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self) -> None:
        point = np.asarray(self.point, dtype=np.float64).reshape(3)
        normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(normal))
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise ParameterError("plane normal must be a unit vector")
        if float(point @ normal) <= 0.0:
            raise ParameterError("plane must face the camera (normal . point > 0)")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "normal", normal)


@dataclass(frozen=True, eq=False)
class FusedDepthFrame:
    """Depth frame whose pixels carry provenance: measured or synthesized."""

    intrinsics: CameraIntrinsics
    timestamp: float
    depth: np.ndarray
    synthesized: np.ndarray

    @classmethod
    def from_frame(cls, frame: DepthFrame) -> "FusedDepthFrame":
        return cls(
            intrinsics=frame.intrinsics,
            timestamp=frame.timestamp,
            depth=frame.depth.copy(),
            synthesized=np.zeros(frame.depth.shape, dtype=bool),
        )

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0.0


def estimate_plane(speckle: ConfirmedSpeckle, intr: CameraIntrinsics) -> GlassPlane:
    """Plane through the speckle's 3D point, normal along the speckle ray."""
    if speckle.depth_m <= 0.0:
        raise ParameterError("speckle depth must be positive")
    u, v = speckle.center
    ray = ray_direction(intr, float(u), float(v))
    direction = ray.direction
    point = direction * (speckle.depth_m / direction[2])
    return GlassPlane(point=point, normal=direction)


def _prepare_output(
    frame: DepthFrame, output: FusedDepthFrame | None
) -> FusedDepthFrame:
    if output is None:
        return FusedDepthFrame.from_frame(frame)
    if output.depth.shape != frame.depth.shape:
        raise StructuralError("output frame dimensions do not match the input")
    return output


def _region_grids(region: Region, intr: CameraIntrinsics) -> tuple[slice, slice]:
    bbox = region.bbox
    clipped = bbox.clip(intr.width, intr.height)
    if clipped != bbox:
        raise ParameterError("region bbox extends outside the image")
    return slice(bbox.y0, bbox.y1), slice(bbox.x0, bbox.x1)


def linear_gradient_fill(
    frame: DepthFrame,
    region: Region,
    speckle: ConfirmedSpeckle,
    intr: CameraIntrinsics,
    alpha: float,
    output: FusedDepthFrame | None = None,
    min_depth_m: float = 0.05,
) -> FusedDepthFrame:
    """Fill the region with the speckle depth plus a horizontal gradient.

    depth(u, v) = d_s + slope * (u - u_s) with slope = alpha * d_s * (u_s - cx):
    the farther the speckle sits from the image center, the more the pane is
    tilted, and the steeper the applied gradient.  Depths that would go
    non-positive are clamped to ``min_depth_m`` and logged.
    """
    if min_depth_m <= 0.0:
        raise ParameterError("min_depth_m must be positive")
    fused = _prepare_output(frame, output)
    rows, cols = _region_grids(region, intr)
    d_s = speckle.depth_m
    u_s = speckle.center[0]
    slope = alpha * d_s * (u_s - intr.cx)
    u = np.arange(region.bbox.x0, region.bbox.x1, dtype=np.float64)
    line = d_s + slope * (u - u_s)
    clamped = line < min_depth_m
    if clamped.any():
        log.warning(
            "linear fill clamped %d columns to %.3f m (region %d)",
            int(clamped.sum()),
            min_depth_m,
            region.region_id,
        )
        line = np.maximum(line, min_depth_m)
    grid = np.broadcast_to(line, region.mask.shape)
    patch = fused.depth[rows, cols]
    patch[region.mask] = grid[region.mask]
    fused.synthesized[rows, cols] |= region.mask
    return fused


def plane_intersection_fill(
    frame: DepthFrame,
    region: Region,
    plane: GlassPlane,
    intr: CameraIntrinsics,
    output: FusedDepthFrame | None = None,
) -> FusedDepthFrame:
    """Fill the region with exact ray-plane intersection depths.

    Region pixels whose ray is parallel to the plane or meets it behind the
    camera keep their measured value and are not marked synthesized.
    """
    fused = _prepare_output(frame, output)
    rows, cols = _region_grids(region, intr)
    u = np.arange(region.bbox.x0, region.bbox.x1, dtype=np.float64)
    v = np.arange(region.bbox.y0, region.bbox.y1, dtype=np.float64)
    x = (u[np.newaxis, :] - intr.cx) / intr.fx
    y = (v[:, np.newaxis] - intr.cy) / intr.fy
    n0, n1, n2 = plane.normal
    dot = x * n0 + y * n1 + n2
    norm = np.sqrt(x * x + y * y + 1.0)
    hits = np.abs(dot) >= PARALLEL_EPS * norm
    t = np.full(dot.shape, np.nan)
    np.divide(float(plane.point @ plane.normal), dot, out=t, where=hits)
    hits &= t > 0.0
    write = region.mask & hits
    patch = fused.depth[rows, cols]
    patch[write] = t[write]
    fused.synthesized[rows, cols] |= write
    return fused


def calibrate_alpha(
    frame: DepthFrame,
    region: Region,
    speckle: ConfirmedSpeckle,
    intr: CameraIntrinsics,
    plane: GlassPlane | None = None,
) -> float:
    """Least-squares fit of the gradient gain against the exact plane fill.

    The linear model predicts depth - d_s = alpha * d_s * (u_s - cx) * (u - u_s)
    over the region; alpha minimizing the squared residual against the exact
    intersection depths is sum(x*y) / sum(x*x) in the lumped regressor
    x = d_s * (u_s - cx) * (u - u_s).  Degenerate when the speckle sits on the
    image center column (no gradient observable) or the region has no
    horizontal extent.
    """
    if plane is None:
        plane = estimate_plane(speckle, intr)
    exact = plane_intersection_fill(frame, region, plane, intr)
    rows, cols = _region_grids(region, intr)
    support = exact.synthesized[rows, cols] & region.mask
    if not support.any():
        raise ParameterError("region produced no exact-fill samples")
    d_s = speckle.depth_m
    u_s = speckle.center[0]
    scale = d_s * (u_s - intr.cx)
    if abs(scale) < 1e-12:
        raise ParameterError("speckle on the center column cannot calibrate alpha")
    u = np.arange(region.bbox.x0, region.bbox.x1, dtype=np.float64)
    x = np.broadcast_to(scale * (u - u_s), region.mask.shape)[support]
    y = exact.depth[rows, cols][support] - d_s
    sxx = float(x @ x)
    if sxx == 0.0:
        raise ParameterError("region has no horizontal extent at the speckle row")
    return float(x @ y) / sxx
