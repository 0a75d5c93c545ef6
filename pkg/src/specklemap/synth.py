"""Deterministic synthetic depth scenes with ground truth.

Every scene is a set of planar rectangles in front of the camera: glass panes
(invisible to the ToF sensor except for a specular speckle and any opaque
stickers), opaque walls, and clutter boxes behind the glass.  Rendering casts
one ray per pixel, takes the first surface hit, and applies per-pane speckle
rendering, gaussian depth noise, and dropout.  The randomness contract is
pinned: a scene's rng draws, in order, one uniform per pane (speckle
visibility), one gaussian grid, and one uniform grid (dropout), so a fixed
seed renders bit-identical frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    MAX_DEPTH_M,
    SONAR_MAX_RANGE_M,
    CameraIntrinsics,
    DepthFrame,
    ParameterError,
    SonarReading,
)
from .frameio import (
    MANIFEST_FORMAT,
    intrinsics_to_dict,
    write_depth,
    write_manifest,
    write_mask,
)
from .reprojection import GlassPlane

# (u_min, u_max, v_min, v_max) in surface-local meters; v grows downward.
Extent = tuple[float, float, float, float]


def _check_extent(extent: Extent, what: str) -> tuple[float, float, float, float]:
    if len(extent) != 4:
        raise ParameterError(f"{what} extent must have 4 entries")
    u0, u1, v0, v1 = (float(x) for x in extent)
    if not (u0 < u1 and v0 < v1):
        raise ParameterError(f"{what} extent must satisfy u_min < u_max, v_min < v_max")
    return u0, u1, v0, v1


@dataclass(frozen=True)
class PaneSpec:
    """Glass pane: anchored on the optical axis, yawed about the vertical."""

    distance_m: float
    tilt_deg: float = 0.0
    extent_m: Extent = (-0.6, 0.6, -0.5, 0.5)
    stickers: tuple[Extent, ...] = ()

    def __post_init__(self) -> None:
        if self.distance_m <= 0.0:
            raise ParameterError("pane distance must be positive")
        if not (-90.0 < self.tilt_deg < 90.0):
            raise ParameterError("pane tilt must lie in (-90, 90) degrees")
        object.__setattr__(self, "extent_m", _check_extent(self.extent_m, "pane"))
        object.__setattr__(
            self,
            "stickers",
            tuple(_check_extent(s, "sticker") for s in self.stickers),
        )


@dataclass(frozen=True)
class WallSpec:
    """Opaque planar rectangle, same parameterization as a pane."""

    distance_m: float
    extent_m: Extent
    tilt_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.distance_m <= 0.0:
            raise ParameterError("wall distance must be positive")
        if not (-90.0 < self.tilt_deg < 90.0):
            raise ParameterError("wall tilt must lie in (-90, 90) degrees")
        object.__setattr__(self, "extent_m", _check_extent(self.extent_m, "wall"))


@dataclass(frozen=True)
class ClutterSpec:
    """Fronto-parallel opaque box face behind the first pane."""

    offset_m: float
    extent_m: Extent

    def __post_init__(self) -> None:
        if self.offset_m <= 0.0:
            raise ParameterError("clutter offset must be positive")
        object.__setattr__(self, "extent_m", _check_extent(self.extent_m, "clutter"))


@dataclass(frozen=True)
class NoiseSpec:
    sigma_m: float = 0.0
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma_m < 0.0:
            raise ParameterError("noise sigma must be non-negative")
        if not (0.0 <= self.dropout < 1.0):
            raise ParameterError("dropout probability must lie in [0, 1)")


@dataclass(frozen=True)
class SpeckleSpec:
    radius_px: float = 11.0
    render_prob: float = 1.0
    max_angle_deg: float = 20.0

    def __post_init__(self) -> None:
        if self.radius_px < 1:
            raise ParameterError("speckle radius must be >= 1 pixel")
        if not (0.0 <= self.render_prob <= 1.0):
            raise ParameterError("render probability must lie in [0, 1]")
        if not (0.0 < self.max_angle_deg <= 90.0):
            raise ParameterError("speckle angle gate must lie in (0, 90] degrees")


@dataclass(frozen=True)
class SensorPose:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_deg: float = 0.0

    def __post_init__(self) -> None:
        if len(self.position) != 3:
            raise ParameterError("sensor position must have 3 entries")
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))


@dataclass(frozen=True)
class SceneSpec:
    panes: tuple[PaneSpec, ...]
    walls: tuple[WallSpec, ...] = ()
    clutter: tuple[ClutterSpec, ...] = ()
    pose: SensorPose = SensorPose()
    noise: NoiseSpec = NoiseSpec()
    speckle: SpeckleSpec = SpeckleSpec()
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "panes", tuple(self.panes))
        object.__setattr__(self, "walls", tuple(self.walls))
        object.__setattr__(self, "clutter", tuple(self.clutter))
        if self.clutter and not self.panes:
            raise ParameterError("clutter offsets are relative to the first pane")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    glass_mask: np.ndarray
    true_planes: tuple[GlassPlane, ...]
    true_depth: np.ndarray


@dataclass(frozen=True, eq=False)
class _Surface:
    """Planar rectangle in camera coordinates.

    ``normal`` faces the camera (negative z for surfaces ahead); ``e_u`` and
    ``e_v`` span the plane, with the extent measured from ``anchor``.
    """

    anchor: np.ndarray
    normal: np.ndarray
    e_u: np.ndarray
    e_v: np.ndarray
    extent: Extent
    opaque: bool
    pane_index: int | None = None


def _yaw_matrix(yaw_deg: float) -> np.ndarray:
    a = math.radians(yaw_deg)
    return np.array(
        [[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]]
    )


def _planar_surface(
    distance: float, tilt_deg: float, extent: Extent, opaque: bool, pane_index=None
) -> _Surface:
    t = math.radians(tilt_deg)
    return _Surface(
        anchor=np.array([0.0, 0.0, distance]),
        normal=np.array([-math.sin(t), 0.0, -math.cos(t)]),
        e_u=np.array([math.cos(t), 0.0, -math.sin(t)]),
        e_v=np.array([0.0, 1.0, 0.0]),
        extent=extent,
        opaque=opaque,
        pane_index=pane_index,
    )


def _build_surfaces(spec: SceneSpec) -> list[_Surface]:
    """World-frame surfaces, opaque first so equal-depth ties favor opaque."""
    opaque: list[_Surface] = []
    panes: list[_Surface] = []
    for wall in spec.walls:
        opaque.append(_planar_surface(wall.distance_m, wall.tilt_deg, wall.extent_m, True))
    for i, pane in enumerate(spec.panes):
        for sticker in pane.stickers:
            opaque.append(_planar_surface(pane.distance_m, pane.tilt_deg, sticker, True))
        panes.append(
            _planar_surface(pane.distance_m, pane.tilt_deg, pane.extent_m, False, i)
        )
    if spec.clutter:
        base = spec.panes[0].distance_m
        for c in spec.clutter:
            opaque.append(
                _Surface(
                    anchor=np.array([0.0, 0.0, base + c.offset_m]),
                    normal=np.array([0.0, 0.0, -1.0]),
                    e_u=np.array([1.0, 0.0, 0.0]),
                    e_v=np.array([0.0, 1.0, 0.0]),
                    extent=c.extent_m,
                    opaque=True,
                )
            )
    return opaque + panes


def _to_camera_frame(surfaces: list[_Surface], pose: SensorPose) -> list[_Surface]:
    if pose.yaw_deg == 0.0 and pose.position == (0.0, 0.0, 0.0):
        return surfaces
    rot = _yaw_matrix(-pose.yaw_deg)
    p = np.asarray(pose.position)
    return [
        replace(
            s,
            anchor=rot @ (s.anchor - p),
            normal=rot @ s.normal,
            e_u=rot @ s.e_u,
            e_v=rot @ s.e_v,
        )
        for s in surfaces
    ]


def _surface_depths(
    surfaces: list[_Surface], intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel winner: (winner index, z depth, any-hit mask)."""
    xs = (np.arange(intr.width, dtype=np.float64) - intr.cx) / intr.fx
    ys = (np.arange(intr.height, dtype=np.float64) - intr.cy) / intr.fy
    x = xs[np.newaxis, :]
    y = ys[:, np.newaxis]
    stack = np.full((len(surfaces), intr.height, intr.width), np.inf)
    for k, s in enumerate(surfaces):
        rn = x * s.normal[0] + y * s.normal[1] + s.normal[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = float(s.anchor @ s.normal) / rn
        qu = t * (x * s.e_u[0] + y * s.e_u[1] + s.e_u[2]) - float(s.anchor @ s.e_u)
        qv = t * (x * s.e_v[0] + y * s.e_v[1] + s.e_v[2]) - float(s.anchor @ s.e_v)
        u0, u1, v0, v1 = s.extent
        ok = (
            np.isfinite(t)
            & (t > 1e-9)
            & (qu >= u0) & (qu <= u1)
            & (qv >= v0) & (qv <= v1)
        )
        stack[k][ok] = t[ok]
    winner = stack.argmin(axis=0)
    z = stack.min(axis=0)
    hit = np.isfinite(z)
    return winner, z, hit


def _axial_range(surfaces: list[_Surface], max_range: float) -> float:
    """First surface along the optical axis; glass reflects sound like a wall."""
    best = math.inf
    for s in surfaces:
        rn = float(s.normal[2])
        if abs(rn) < 1e-12:
            continue
        t = float(s.anchor @ s.normal) / rn
        if t <= 1e-9:
            continue
        qu = t * float(s.e_u[2]) - float(s.anchor @ s.e_u)
        qv = t * float(s.e_v[2]) - float(s.anchor @ s.e_v)
        u0, u1, v0, v1 = s.extent
        if u0 <= qu <= u1 and v0 <= qv <= v1:
            best = min(best, t)
    return min(best, max_range)


def _perpendicular_pixel(
    normal: np.ndarray, intr: CameraIntrinsics
) -> tuple[int, int] | None:
    """Pixel whose ray is anti-parallel to the pane normal, if inside the FoV."""
    direction = -normal
    if direction[2] <= 1e-9:
        return None
    u = intr.cx + intr.fx * direction[0] / direction[2]
    v = intr.cy + intr.fy * direction[1] / direction[2]
    ui, vi = int(round(u)), int(round(v))
    if 0 <= ui < intr.width and 0 <= vi < intr.height:
        return ui, vi
    return None


def render_scene(
    spec: SceneSpec, intr: CameraIntrinsics, timestamp: float = 0.0
) -> tuple[DepthFrame, SonarReading, GroundTruth]:
    """Render one frame plus its sonar reading and ground truth."""
    surfaces = _to_camera_frame(_build_surfaces(spec), spec.pose)
    n_opaque = sum(1 for s in surfaces if s.opaque)
    winner, z, hit = _surface_depths(surfaces, intr)

    rng = np.random.default_rng(spec.seed)
    speckle_drawn = [bool(rng.random() < spec.speckle.render_prob) for _ in spec.panes]

    glass_mask = hit & (winner >= n_opaque)
    true_depth = np.where(hit, z, 0.0)

    depth = np.where(hit & (winner < n_opaque), z, 0.0)
    planes: list[GlassPlane] = []
    for k, s in enumerate(surfaces):
        if s.opaque:
            continue
        ray_dir = -s.normal
        if float(ray_dir @ s.anchor) > 0.0:
            planes.append(GlassPlane(point=s.anchor, normal=ray_dir))
        axis_angle = math.degrees(math.acos(max(-1.0, min(1.0, float(ray_dir[2])))))
        if not speckle_drawn[s.pane_index] or axis_angle > spec.speckle.max_angle_deg:
            continue
        center = _perpendicular_pixel(s.normal, intr)
        if center is None:
            continue
        uc, vc = center
        r = spec.speckle.radius_px
        reach = int(math.ceil(r))
        x0, x1 = max(0, uc - reach), min(intr.width, uc + reach + 1)
        y0, y1 = max(0, vc - reach), min(intr.height, vc + reach + 1)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        disk = (yy - vc) ** 2 + (xx - uc) ** 2 <= r * r
        disk &= winner[y0:y1, x0:x1] == k
        patch = depth[y0:y1, x0:x1]
        patch[disk] = z[y0:y1, x0:x1][disk]

    depth = np.where(depth > MAX_DEPTH_M, 0.0, depth)
    gauss = rng.standard_normal(depth.shape)
    drop = rng.random(depth.shape)
    depth = np.where(depth > 0.0, depth + spec.noise.sigma_m * gauss, 0.0)
    if spec.noise.dropout > 0.0:
        depth = np.where(drop < spec.noise.dropout, 0.0, depth)
    depth = np.where((depth > 0.0) & (depth <= MAX_DEPTH_M), depth, 0.0)

    frame = DepthFrame(intrinsics=intr, timestamp=timestamp, depth=depth)
    sonar = SonarReading(
        range_m=_axial_range(surfaces, SONAR_MAX_RANGE_M), timestamp=timestamp
    )
    gt = GroundTruth(
        glass_mask=glass_mask, true_planes=tuple(planes), true_depth=true_depth
    )
    return frame, sonar, gt


@dataclass(frozen=True)
class CorpusSpec:
    """A corpus: one template scene swept over distance and/or tilt."""

    name: str
    frames: int
    seed: int
    scene: SceneSpec
    sweep_distance_m: tuple[float, float] | None = None
    sweep_tilt_deg: tuple[float, float] | None = None
    fps: float = 10.0

    def __post_init__(self) -> None:
        if not self.name or "/" in self.name:
            raise ParameterError("corpus name must be a non-empty plain string")
        if self.frames < 0:
            raise ParameterError("frame count must be non-negative")
        if self.fps <= 0.0:
            raise ParameterError("fps must be positive")
        for sweep in (self.sweep_distance_m, self.sweep_tilt_deg):
            if sweep is not None and len(sweep) != 2:
                raise ParameterError("sweeps are (start, end) pairs")
        if (self.sweep_distance_m or self.sweep_tilt_deg) and not self.scene.panes:
            raise ParameterError("sweeps require at least one pane")


def frame_seed(corpus_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((corpus_seed, index)).generate_state(1)[0])


def frame_scene(corpus: CorpusSpec, index: int) -> SceneSpec:
    """Per-frame scene: sweeps move panes and walls together (rigid scene)."""
    if not (0 <= index < corpus.frames):
        raise ParameterError(f"frame index {index} outside corpus of {corpus.frames}")
    frac = index / (corpus.frames - 1) if corpus.frames > 1 else 0.0
    scene = corpus.scene
    panes = list(scene.panes)
    walls = list(scene.walls)
    if corpus.sweep_distance_m is not None:
        start, end = corpus.sweep_distance_m
        shift = (start + (end - start) * frac) - panes[0].distance_m
        panes = [replace(p, distance_m=p.distance_m + shift) for p in panes]
        walls = [replace(w, distance_m=w.distance_m + shift) for w in walls]
    if corpus.sweep_tilt_deg is not None:
        start, end = corpus.sweep_tilt_deg
        delta = (start + (end - start) * frac) - panes[0].tilt_deg
        panes = [replace(p, tilt_deg=p.tilt_deg + delta) for p in panes]
        walls = [replace(w, tilt_deg=w.tilt_deg + delta) for w in walls]
    return replace(
        scene,
        panes=tuple(panes),
        walls=tuple(walls),
        seed=frame_seed(corpus.seed, index),
    )


def generate_corpus(
    corpus: CorpusSpec, out_dir: str | Path, intr: CameraIntrinsics | None = None
) -> dict:
    """Render the corpus to ``out_dir`` and return the written manifest."""
    intr = intr or CameraIntrinsics.default()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(corpus.frames):
        scene = frame_scene(corpus, i)
        ts = i / corpus.fps
        frame, sonar, gt = render_scene(scene, intr, timestamp=ts)
        depth_name = f"frame_{i:04d}.pgm"
        mask_name = f"frame_{i:04d}_gt.pgm"
        write_depth(frame, out / depth_name, sonar=sonar, kind="synthetic")
        write_mask(gt.glass_mask, out / mask_name)
        entries.append(
            {
                "index": i,
                "depth": depth_name,
                "mask": mask_name,
                "timestamp": ts,
                "seed": scene.seed,
                "sonar_m": sonar.range_m,
                "scene": scene_to_dict(scene),
            }
        )
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "name": corpus.name,
        "seed": corpus.seed,
        "frames": corpus.frames,
        "fps": corpus.fps,
        "intrinsics": intrinsics_to_dict(intr),
        "corpus": corpus_to_dict(corpus),
        "entries": entries,
    }
    write_manifest(out / "manifest.json", manifest)
    return manifest


def _require_keys(d: dict, allowed: set[str], what: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ParameterError(f"unknown {what} keys: {sorted(unknown)}")


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "panes": [
            {
                "distance_m": p.distance_m,
                "tilt_deg": p.tilt_deg,
                "extent_m": list(p.extent_m),
                "stickers": [list(s) for s in p.stickers],
            }
            for p in scene.panes
        ],
        "walls": [
            {"distance_m": w.distance_m, "tilt_deg": w.tilt_deg, "extent_m": list(w.extent_m)}
            for w in scene.walls
        ],
        "clutter": [
            {"offset_m": c.offset_m, "extent_m": list(c.extent_m)} for c in scene.clutter
        ],
        "pose": {"position": list(scene.pose.position), "yaw_deg": scene.pose.yaw_deg},
        "noise": {"sigma_m": scene.noise.sigma_m, "dropout": scene.noise.dropout},
        "speckle": {
            "radius_px": scene.speckle.radius_px,
            "render_prob": scene.speckle.render_prob,
            "max_angle_deg": scene.speckle.max_angle_deg,
        },
        "seed": scene.seed,
    }


def scene_from_dict(d: dict) -> SceneSpec:
    _require_keys(
        d, {"panes", "walls", "clutter", "pose", "noise", "speckle", "seed"}, "scene"
    )
    panes = []
    for p in d.get("panes", []):
        _require_keys(p, {"distance_m", "tilt_deg", "extent_m", "stickers"}, "pane")
        panes.append(
            PaneSpec(
                distance_m=float(p["distance_m"]),
                tilt_deg=float(p.get("tilt_deg", 0.0)),
                extent_m=tuple(p.get("extent_m", (-0.6, 0.6, -0.5, 0.5))),
                stickers=tuple(tuple(s) for s in p.get("stickers", [])),
            )
        )
    walls = []
    for w in d.get("walls", []):
        _require_keys(w, {"distance_m", "tilt_deg", "extent_m"}, "wall")
        walls.append(
            WallSpec(
                distance_m=float(w["distance_m"]),
                extent_m=tuple(w["extent_m"]),
                tilt_deg=float(w.get("tilt_deg", 0.0)),
            )
        )
    clutter = []
    for c in d.get("clutter", []):
        _require_keys(c, {"offset_m", "extent_m"}, "clutter")
        clutter.append(
            ClutterSpec(offset_m=float(c["offset_m"]), extent_m=tuple(c["extent_m"]))
        )
    pose_d = d.get("pose", {})
    _require_keys(pose_d, {"position", "yaw_deg"}, "pose")
    noise_d = d.get("noise", {})
    _require_keys(noise_d, {"sigma_m", "dropout"}, "noise")
    speckle_d = d.get("speckle", {})
    _require_keys(speckle_d, {"radius_px", "render_prob", "max_angle_deg"}, "speckle")
    return SceneSpec(
        panes=tuple(panes),
        walls=tuple(walls),
        clutter=tuple(clutter),
        pose=SensorPose(
            position=tuple(pose_d.get("position", (0.0, 0.0, 0.0))),
            yaw_deg=float(pose_d.get("yaw_deg", 0.0)),
        ),
        noise=NoiseSpec(
            sigma_m=float(noise_d.get("sigma_m", 0.0)),
            dropout=float(noise_d.get("dropout", 0.0)),
        ),
        speckle=SpeckleSpec(
            radius_px=float(speckle_d.get("radius_px", 11.0)),
            render_prob=float(speckle_d.get("render_prob", 1.0)),
            max_angle_deg=float(speckle_d.get("max_angle_deg", 20.0)),
        ),
        seed=int(d.get("seed", 0)),
    )


def corpus_to_dict(corpus: CorpusSpec) -> dict:
    return {
        "name": corpus.name,
        "frames": corpus.frames,
        "seed": corpus.seed,
        "scene": scene_to_dict(corpus.scene),
        "sweep_distance_m": None
        if corpus.sweep_distance_m is None
        else list(corpus.sweep_distance_m),
        "sweep_tilt_deg": None
        if corpus.sweep_tilt_deg is None
        else list(corpus.sweep_tilt_deg),
        "fps": corpus.fps,
    }


def corpus_from_dict(d: dict) -> CorpusSpec:
    _require_keys(
        d,
        {"name", "frames", "seed", "scene", "sweep_distance_m", "sweep_tilt_deg", "fps"},
        "corpus",
    )
    for key in ("name", "frames", "seed", "scene"):
        if key not in d:
            raise ParameterError(f"corpus config missing required key '{key}'")
    sweep_d = d.get("sweep_distance_m")
    sweep_t = d.get("sweep_tilt_deg")
    return CorpusSpec(
        name=str(d["name"]),
        frames=int(d["frames"]),
        seed=int(d["seed"]),
        scene=scene_from_dict(d["scene"]),
        sweep_distance_m=None if sweep_d is None else (float(sweep_d[0]), float(sweep_d[1])),
        sweep_tilt_deg=None if sweep_t is None else (float(sweep_t[0]), float(sweep_t[1])),
        fps=float(d.get("fps", 10.0)),
    )
