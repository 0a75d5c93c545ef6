"""On-disk formats: 16-bit PGM depth frames, 8-bit masks, manifests, PNGs.

Depth is stored as binary PGM (P5), 16-bit big-endian, value = millimeters,
0 = invalid, maxval 65535.  A JSON sidecar with the same stem carries
intrinsics, timestamp, sonar range, and provenance.  All writes go through a
temp file plus rename so an interrupted run never leaves a torn frame.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .core import (
    CameraIntrinsics,
    DepthFrame,
    DepthRangeError,
    ParseError,
    SonarReading,
    StructuralError,
)

# Largest depth a 16-bit millimeter field can carry.
MAX_ENCODABLE_M = 65.535

SIDECAR_FORMAT = "specklemap-frame"
MANIFEST_FORMAT = "specklemap-manifest"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _TokenReader:
    """Whitespace/comment-aware scanner over a PGM header."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _skip_separators(self) -> None:
        while self.pos < len(self.data):
            c = self.data[self.pos : self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                nl = self.data.find(b"\n", self.pos)
                self.pos = len(self.data) if nl < 0 else nl + 1
            else:
                return

    def token(self) -> tuple[bytes, int]:
        self._skip_separators()
        start = self.pos
        if start >= len(self.data):
            raise ParseError("unexpected end of header", offset=start)
        end = start
        while end < len(self.data) and not self.data[end : end + 1].isspace():
            end += 1
        self.pos = end
        return self.data[start:end], start

    def integer(self, name: str) -> tuple[int, int]:
        tok, off = self.token()
        if not tok.isdigit():
            raise ParseError(f"{name} is not a decimal integer", offset=off)
        return int(tok), off

    def binary_body(self) -> int:
        """Position the reader on the raster; exactly one separator byte."""
        if self.pos >= len(self.data) or not self.data[self.pos : self.pos + 1].isspace():
            raise ParseError("expected whitespace before raster", offset=self.pos)
        self.pos += 1
        return self.pos


def _parse_pgm(data: bytes, expect_maxval: int) -> tuple[np.ndarray, int, int]:
    reader = _TokenReader(data)
    magic, off = reader.token()
    if magic != b"P5":
        raise ParseError("not a binary PGM (P5) file", offset=off)
    width, _ = reader.integer("width")
    height, _ = reader.integer("height")
    maxval, maxval_off = reader.integer("maxval")
    if maxval != expect_maxval:
        raise ParseError(f"maxval must be {expect_maxval}", offset=maxval_off)
    if width < 1 or height < 1:
        raise ParseError("image dimensions must be positive", offset=0)
    body = reader.binary_body()
    bytes_per_px = 2 if expect_maxval > 255 else 1
    need = width * height * bytes_per_px
    if len(data) - body < need:
        raise ParseError("raster truncated", offset=len(data))
    dtype = ">u2" if bytes_per_px == 2 else np.uint8
    raster = np.frombuffer(data[body : body + need], dtype=dtype)
    return raster.reshape(height, width), width, body


def write_depth(
    frame: DepthFrame,
    path: str | Path,
    sonar: SonarReading | None = None,
    kind: str = "raw",
) -> None:
    """Write a depth PGM plus its JSON sidecar (same stem, `.json`)."""
    path = Path(path)
    depth = frame.depth
    if float(depth.max(initial=0.0)) > MAX_ENCODABLE_M:
        raise DepthRangeError(
            f"depth {depth.max():.3f} m exceeds the 16-bit millimeter encoding"
        )
    mm = np.round(depth * 1000.0).astype(np.uint16)
    header = f"P5\n{frame.intrinsics.width} {frame.intrinsics.height}\n65535\n"
    atomic_write_bytes(path, header.encode("ascii") + mm.astype(">u2").tobytes())
    sidecar = {
        "format": SIDECAR_FORMAT,
        "version": 1,
        "kind": kind,
        "timestamp": frame.timestamp,
        "intrinsics": intrinsics_to_dict(frame.intrinsics),
        "sonar": None
        if sonar is None
        else {"range_m": sonar.range_m, "max_range_m": sonar.max_range_m},
    }
    write_json(path.with_suffix(".json"), sidecar)


def read_depth(path: str | Path) -> tuple[DepthFrame, SonarReading | None, dict]:
    """Read a depth PGM and its sidecar back into domain objects."""
    path = Path(path)
    raster, width, _ = _parse_pgm(path.read_bytes(), expect_maxval=65535)
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise ParseError(f"missing metadata sidecar {sidecar_path}")
    meta = read_json(sidecar_path)
    try:
        intr = intrinsics_from_dict(meta["intrinsics"])
        timestamp = float(meta["timestamp"])
        sonar_meta = meta.get("sonar")
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed sidecar {sidecar_path}: {exc}") from exc
    if (intr.height, intr.width) != raster.shape:
        raise StructuralError(
            f"sidecar dimensions {intr.width}x{intr.height} do not match "
            f"PGM raster {raster.shape[1]}x{raster.shape[0]}"
        )
    # Values are kept exactly as stored; domain normalization (capping at the
    # sensor's 10 m range) is the pipeline's validate stage, not the reader's.
    depth = raster.astype(np.float64) / 1000.0
    frame = DepthFrame(intrinsics=intr, timestamp=timestamp, depth=depth)
    sonar = None
    if sonar_meta is not None:
        sonar = SonarReading(
            range_m=float(sonar_meta["range_m"]),
            timestamp=timestamp,
            max_range_m=float(sonar_meta.get("max_range_m", 5.0)),
        )
    return frame, sonar, meta


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    """Write a boolean mask as 8-bit PGM, 255 = glass."""
    if mask.ndim != 2 or mask.dtype != bool:
        raise StructuralError("mask must be a 2D boolean array")
    h, w = mask.shape
    body = np.where(mask, 255, 0).astype(np.uint8)
    header = f"P5\n{w} {h}\n255\n"
    atomic_write_bytes(Path(path), header.encode("ascii") + body.tobytes())


def read_mask(path: str | Path) -> np.ndarray:
    raster, _, body = _parse_pgm(Path(path).read_bytes(), expect_maxval=255)
    bad = (raster != 0) & (raster != 255)
    if bad.any():
        flat = int(np.flatnonzero(bad)[0])
        raise ParseError("mask value is neither 0 nor 255", offset=body + flat)
    return raster == 255


def write_json(path: str | Path, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    atomic_write_bytes(Path(path), text.encode("utf-8"))


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", offset=exc.pos) from exc


def intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    return {
        "width": intr.width,
        "height": intr.height,
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "hfov_deg": intr.hfov_deg,
        "vfov_deg": intr.vfov_deg,
    }


def intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        width=int(d["width"]),
        height=int(d["height"]),
        fx=float(d["fx"]),
        fy=float(d["fy"]),
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        hfov_deg=float(d["hfov_deg"]),
        vfov_deg=float(d["vfov_deg"]),
    )


def write_manifest(path: str | Path, manifest: dict) -> None:
    if manifest.get("format") != MANIFEST_FORMAT:
        raise StructuralError("manifest payload missing its format tag")
    write_json(path, manifest)


def read_manifest(path: str | Path) -> dict:
    manifest = read_json(path)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ParseError(f"{path} is not a corpus manifest")
    return manifest


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def render_png(
    depth: np.ndarray,
    path: str | Path,
    synthesized: np.ndarray | None = None,
    max_depth_m: float = 10.0,
) -> None:
    """Grayscale PNG of a depth map; synthesized pixels tinted red if given.

    Valid depth maps linearly to 255 (near) .. 32 (far); invalid stays black.
    """
    scaled = np.clip(depth / max_depth_m, 0.0, 1.0)
    gray = np.where(depth > 0.0, (255.0 - 223.0 * scaled), 0.0).astype(np.uint8)
    if synthesized is None:
        Image.fromarray(gray, mode="L").save(Path(path))
        return
    if synthesized.shape != depth.shape:
        raise StructuralError("overlay mask dimensions do not match the depth map")
    rgb = np.stack([gray, gray, gray], axis=-1)
    rgb[synthesized, 0] = 255
    rgb[synthesized, 1] = rgb[synthesized, 1] // 3
    rgb[synthesized, 2] = rgb[synthesized, 2] // 3
    Image.fromarray(rgb, mode="RGB").save(Path(path))
