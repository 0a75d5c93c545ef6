"""Tracking-by-detection for speckle candidates.

Single speckles flicker; a candidate only counts once it has been seen
``required_count`` times by the same track, where consecutive means within
``max_age_s`` of the previous sighting.  Tracks expire once unseen for longer
than ``max_age_s``.  Updates must be fed in strictly increasing time order,
and replaying the same detection stream reproduces the same outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import ContractError, ParameterError
from .kernels import SpeckleCandidate


@dataclass(frozen=True)
class TrackerConfig:
    required_count: int = 3
    max_age_s: float = 1.0
    gate_px: float = 30.0
    gate_depth_m: float = 0.3

    def __post_init__(self) -> None:
        if self.required_count < 1:
            raise ParameterError("required_count must be >= 1")
        if self.max_age_s <= 0 or self.gate_px <= 0 or self.gate_depth_m <= 0:
            raise ParameterError("tracker gates and max age must be positive")


@dataclass
class Track:
    track_id: int
    center: tuple[int, int]
    depth_m: float
    hit_count: int
    first_seen: float
    last_seen: float
    confirmed: bool
    last_candidate: SpeckleCandidate


@dataclass(frozen=True, eq=False)
class ConfirmedSpeckle:
    """A track that has met its confirmation count and is still alive."""

    track_id: int
    center: tuple[int, int]
    depth_m: float
    hit_count: int
    last_seen: float
    candidate: SpeckleCandidate


class SpeckleTracker:
    """Greedy nearest-neighbor tracker over speckle candidates."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_now: float = -math.inf

    def update(self, detections: list[SpeckleCandidate], now: float) -> list[ConfirmedSpeckle]:
        """Advance to time ``now`` and return every live confirmed track.

        Tracks unseen for longer than ``max_age_s`` are expired first; each
        detection then greedily claims the nearest surviving track inside both
        the pixel and depth gates (one-to-one), and unmatched detections open
        new tracks with a hit count of one.
        """
        if now <= self._last_now:
            raise ContractError(
                f"timestamps must strictly increase (got {now} after {self._last_now})"
            )
        self._last_now = now
        cfg = self.config
        self.tracks = [t for t in self.tracks if now - t.last_seen <= cfg.max_age_s]

        claimed: set[int] = set()
        born: list[Track] = []  # not associable until the next update
        for det in detections:
            best: Track | None = None
            best_d = math.inf
            for track in self.tracks:
                if track.track_id in claimed:
                    continue
                d = math.hypot(det.center[0] - track.center[0], det.center[1] - track.center[1])
                if d > cfg.gate_px or abs(det.depth_m - track.depth_m) > cfg.gate_depth_m:
                    continue
                if d < best_d:  # distance ties resolve to the oldest track
                    best = track
                    best_d = d
            if best is not None:
                claimed.add(best.track_id)
                best.center = det.center
                best.depth_m = det.depth_m
                best.hit_count += 1
                best.last_seen = now
                best.last_candidate = det
                if best.hit_count >= cfg.required_count:
                    best.confirmed = True
            else:
                born.append(
                    Track(
                        track_id=self._next_id,
                        center=det.center,
                        depth_m=det.depth_m,
                        hit_count=1,
                        first_seen=now,
                        last_seen=now,
                        confirmed=cfg.required_count <= 1,
                        last_candidate=det,
                    )
                )
                self._next_id += 1
        self.tracks.extend(born)

        return [
            ConfirmedSpeckle(
                track_id=t.track_id,
                center=t.center,
                depth_m=t.depth_m,
                hit_count=t.hit_count,
                last_seen=t.last_seen,
                candidate=t.last_candidate,
            )
            for t in sorted(self.tracks, key=lambda t: t.track_id)
            if t.confirmed
        ]
