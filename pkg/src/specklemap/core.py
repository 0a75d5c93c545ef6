"""Shared domain types and pinhole-camera geometry.

Depth frames use z-depth (distance along the optical axis, not radial range)
in meters, stored row-major with the origin at the top-left pixel.  Invalid
pixels carry exactly 0.0.  The ultrasonic rangefinder contributes a single
scalar range per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# ToF returns beyond this are indistinguishable from dropouts.
MAX_DEPTH_M = 10.0
INVALID_DEPTH = 0.0
# Ultrasonic rangefinders of this class saturate at 5 m.
SONAR_MAX_RANGE_M = 5.0


class SpeckleMapError(Exception):
    """Base class for all package errors."""


class ParameterError(SpeckleMapError):
    """A configuration or argument value is outside its legal domain."""


class BoundsError(SpeckleMapError):
    """A pixel coordinate or rectangle falls outside the image."""


class StructuralError(SpeckleMapError):
    """Array shapes or grid dimensions do not agree."""


class ContractError(SpeckleMapError):
    """A stateful call sequence violated its protocol (e.g. time going backwards)."""


class ParseError(SpeckleMapError):
    """A file could not be decoded.  ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte {offset})")
        self.offset = offset


class DepthRangeError(SpeckleMapError):
    """A depth value cannot be represented by the on-disk encoding."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model of the depth camera.

    ``fx, fy`` are focal lengths in pixels, ``cx, cy`` the principal point.
    The stated fields of view are informational and must agree with the focal
    lengths via fx = (width/2) / tan(hfov/2).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    hfov_deg: float
    vfov_deg: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ParameterError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")

    @classmethod
    def from_fov(
        cls, width: int, height: int, hfov_deg: float, vfov_deg: float
    ) -> "CameraIntrinsics":
        if not (0 < hfov_deg < 180 and 0 < vfov_deg < 180):
            raise ParameterError("fields of view must lie in (0, 180) degrees")
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
        return cls(width, height, fx, fy, width / 2.0, height / 2.0, hfov_deg, vfov_deg)

    @classmethod
    def default(cls) -> "CameraIntrinsics":
        """640x480 sensor with a 56 x 44 degree field of view."""
        return cls.from_fov(640, 480, 56.0, 44.0)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, half-open: x in [x0, x0+w), y in [y0, y0+h)."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise ParameterError("rectangle extents must be non-negative")

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def clip(self, width: int, height: int) -> "Rect":
        x0 = min(max(self.x0, 0), width)
        y0 = min(max(self.y0, 0), height)
        x1 = min(max(self.x1, 0), width)
        y1 = min(max(self.y1, 0), height)
        return Rect(x0, y0, max(0, x1 - x0), max(0, y1 - y0))

    def intersect(self, other: "Rect") -> "Rect":
        x0 = max(self.x0, other.x0)
        y0 = max(self.y0, other.y0)
        x1 = min(self.x1, other.x1)
        y1 = min(self.y1, other.y1)
        return Rect(x0, y0, max(0, x1 - x0), max(0, y1 - y0))

    def union_bbox(self, other: "Rect") -> "Rect":
        x0 = min(self.x0, other.x0)
        y0 = min(self.y0, other.y0)
        x1 = max(self.x1, other.x1)
        y1 = max(self.y1, other.y1)
        return Rect(x0, y0, x1 - x0, y1 - y0)

    def iou(self, other: "Rect") -> float:
        inter = self.intersect(other).area
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0

    def contains(self, u: float, v: float) -> bool:
        return self.x0 <= u < self.x1 and self.y0 <= v < self.y1


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """One ToF depth image.  ``depth`` is (height, width) float64 z-depth in meters."""

    intrinsics: CameraIntrinsics
    timestamp: float
    depth: np.ndarray

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > INVALID_DEPTH


@dataclass(frozen=True)
class SonarReading:
    """Single ultrasonic range measurement along the camera's optical axis."""

    range_m: float
    timestamp: float
    max_range_m: float = SONAR_MAX_RANGE_M

    def __post_init__(self) -> None:
        if not (0.0 < self.range_m <= self.max_range_m):
            raise ParameterError(
                f"sonar range {self.range_m} outside (0, {self.max_range_m}]"
            )


@dataclass(frozen=True, eq=False)
class Ray:
    """Unit-norm viewing ray in the camera frame; positive z looks out of the lens."""

    direction: np.ndarray


def ray_direction(intrinsics: CameraIntrinsics, u: float, v: float) -> Ray:
    """Viewing ray through pixel (u, v).

    The unnormalized direction is ((u - cx)/fx, (v - cy)/fy, 1); the result is
    scaled to unit norm.  Raises BoundsError for pixels outside the image.
    """
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise BoundsError(f"pixel ({u}, {v}) outside {intrinsics.width}x{intrinsics.height}")
    d = np.array(
        [(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0]
    )
    return Ray(d / np.linalg.norm(d))


def validate_frame(frame: DepthFrame) -> DepthFrame:
    """Normalize a frame to the datatype contract.

    Negative, non-finite, or beyond-max-range depths are coerced to the
    invalid marker.  Grid shape must match the intrinsics.  Idempotent.
    """
    h, w = frame.depth.shape
    if (w, h) != (frame.intrinsics.width, frame.intrinsics.height):
        raise StructuralError(
            f"depth grid {w}x{h} does not match intrinsics "
            f"{frame.intrinsics.width}x{frame.intrinsics.height}"
        )
    depth = np.asarray(frame.depth, dtype=np.float64)
    bad = ~np.isfinite(depth) | (depth < 0.0) | (depth > MAX_DEPTH_M)
    if not bad.any() and depth is frame.depth:
        return frame
    depth = depth.copy()
    depth[bad] = INVALID_DEPTH
    return DepthFrame(frame.intrinsics, frame.timestamp, depth)
