"""Trajectory containers, downsampling, and linear densification.

A raw trajectory is timestamped (lat, lon) points straight from a GPS
device. A matched path locates every point on the road network as a
(segment id, moving ratio) pair; a matched trajectory additionally has an
exactly uniform sample interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .roadnet import RoadNetwork


@dataclass(frozen=True)
class RawTrajectory:
    """Ordered (lat, lon, t seconds) points with strictly increasing t."""

    points: np.ndarray  # shape (l, 3): lat, lon, t

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ContractError("raw trajectory needs >= 2 (lat, lon, t) rows")
        if not np.all(np.diff(pts[:, 2]) > 0):
            raise ContractError("timestamps must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def lat(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def lon(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def t(self) -> np.ndarray:
        return self.points[:, 2]


@dataclass(frozen=True)
class MatchedPath:
    """(segment id, moving ratio, t) per point; arbitrary time spacing."""

    seg_ids: np.ndarray
    ratios: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        seg = np.asarray(self.seg_ids, dtype=np.int64)
        ratios = np.asarray(self.ratios, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        if not (len(seg) == len(ratios) == len(t)) or len(seg) < 1:
            raise ContractError("matched path arrays must share a positive length")
        if np.any(ratios < 0.0) or np.any(ratios >= 1.0):
            raise ContractError("moving ratios must lie in [0, 1)")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ContractError("timestamps must be strictly increasing")
        object.__setattr__(self, "seg_ids", seg)
        object.__setattr__(self, "ratios", ratios)
        object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return len(self.seg_ids)


class MatchedTrajectory(MatchedPath):
    """Matched path sampled at an exactly fixed interval."""

    def __init__(self, seg_ids, ratios, t, interval: float):
        super().__init__(seg_ids, ratios, t)
        if interval <= 0:
            raise ContractError("interval must be positive")
        expected = self.t[0] + np.arange(len(self.t)) * float(interval)
        if not np.array_equal(self.t, expected):
            raise ContractError("timestamps do not match the fixed interval")
        object.__setattr__(self, "interval", float(interval))


def downsample(traj: RawTrajectory, stride: int, seed: int | None = None,
               jitter: bool = False) -> RawTrajectory:
    """Keep every `stride`-th point (plus both endpoints).

    With `jitter` each interior pick moves by -1/0/+1 index, drawn from a
    generator seeded with `seed`, so runs are reproducible. Mimics sparse
    reporting of a dense track: the mean interval grows by ~`stride`.
    """
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    n = len(traj)
    picks = np.arange(0, n, stride)
    if jitter:
        rng = np.random.default_rng(seed)
        offsets = rng.integers(-1, 2, size=len(picks))
        offsets[0] = 0
        picks = picks + offsets
    picks = np.unique(np.clip(np.concatenate([picks, [n - 1]]), 0, n - 1))
    if len(picks) < 2:
        raise ContractError("downsampled trajectory has fewer than 2 points")
    return RawTrajectory(traj.points[picks])


def downsample_indices(n: int, stride: int) -> np.ndarray:
    """Deterministic no-jitter pick pattern used to pair inputs to targets."""
    picks = np.arange(0, n, stride)
    return np.unique(np.concatenate([picks, [n - 1]]))


def linear_interpolate(traj: RawTrajectory, interval: float) -> RawTrajectory:
    """Resample at fixed `interval` assuming uniform speed between fixes.

    Output timestamps are t_1, t_1 + interval, ... up to the input span;
    coordinates are linear blends of the bracketing input points.
    """
    if interval <= 0:
        raise ContractError("interval must be positive")
    t0, t1 = traj.t[0], traj.t[-1]
    if t1 - t0 < interval:
        raise ContractError("trajectory span shorter than the interval")
    steps = int(np.floor((t1 - t0) / interval + 1e-9))
    times = t0 + np.arange(steps + 1) * interval
    lat = np.interp(times, traj.t, traj.lat)
    lon = np.interp(times, traj.t, traj.lon)
    return RawTrajectory(np.column_stack([lat, lon, times]))


def to_gps(path: MatchedPath, net: RoadNetwork) -> RawTrajectory:
    """Resolve (segment, ratio) locations back to (lat, lon) coordinates."""
    coords = np.empty((len(path), 3))
    for i, (sid, r, t) in enumerate(zip(path.seg_ids, path.ratios, path.t)):
        if sid not in net.segments:
            raise ContractError(f"unknown segment id {sid} at point {i}")
        lat, lon = net.segments[int(sid)].position_at(float(r))
        coords[i] = (lat, lon, t)
    return RawTrajectory(coords)


# -- file formats -------------------------------------------------------------


def save_raw(trajectories: dict[int, RawTrajectory], path) -> None:
    """One `traj_id t lat lon` record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for tid, traj in trajectories.items():
            for lat, lon, t in traj.points:
                fh.write(f"{tid} {float(t)!r} {float(lat)!r} {float(lon)!r}\n")


def load_raw(path) -> dict[int, RawTrajectory]:
    rows: dict[int, list[tuple[float, float, float]]] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'traj_id t lat lon'")
        try:
            tid, t, lat, lon = int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        rows.setdefault(tid, []).append((lat, lon, t))
    out = {}
    for tid, pts in rows.items():
        pts.sort(key=lambda p: p[2])
        out[tid] = RawTrajectory(np.asarray(pts))
    return out


def save_matched(paths: dict[int, MatchedPath], path) -> None:
    """One `traj_id t segment_id ratio` record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for tid, mp in paths.items():
            for sid, r, t in zip(mp.seg_ids, mp.ratios, mp.t):
                fh.write(f"{tid} {float(t)!r} {int(sid)} {float(r)!r}\n")


def load_matched(path) -> dict[int, MatchedPath]:
    """Load matched records; uniformly spaced paths come back as
    `MatchedTrajectory`, others as plain `MatchedPath`."""
    rows: dict[int, list[tuple[float, int, float]]] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'traj_id t segment_id ratio'")
        try:
            tid, t, sid, r = int(parts[0]), float(parts[1]), int(parts[2]), float(parts[3])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        rows.setdefault(tid, []).append((t, sid, r))
    out: dict[int, MatchedPath] = {}
    for tid, pts in rows.items():
        pts.sort(key=lambda p: p[0])
        t = np.asarray([p[0] for p in pts])
        sid = np.asarray([p[1] for p in pts])
        r = np.asarray([p[2] for p in pts])
        diffs = np.diff(t)
        if len(t) > 1 and np.all(diffs == diffs[0]):
            out[tid] = MatchedTrajectory(sid, r, t, float(diffs[0]))
        else:
            out[tid] = MatchedPath(sid, r, t)
    return out
