"""Road network as a directed graph over segments.

Segments are the graph's nodes: an edge (a, b) means traffic can continue
directly from segment a onto segment b. Each segment carries polyline
geometry in (lat, lon) degrees. The module also owns the grid partition
used by the embedding tables, per-segment static features, point-to-segment
projection, and a bucketed radius index for neighborhood queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, RangeError
from .geodesy import haversine_m, meters_per_degree, to_local_xy

N_LEVELS = 8
N_STATIC_FEATURES = N_LEVELS + 3  # one-hot level + length + in/out degree

_RATIO_CAP = np.nextafter(1.0, 0.0)  # moving ratio stays strictly below 1


@dataclass(frozen=True)
class GridSpec:
    """Uniform square-cell partition covering the network extent."""

    origin_lat: float
    origin_lon: float
    cell_size_m: float
    m: int  # cells along x (east)
    n: int  # cells along y (north)

    def local_xy(self, lat, lon):
        return to_local_xy(lat, lon, self.origin_lat, self.origin_lon)

    def cell_of(self, lat: float, lon: float, clamp: bool = False) -> tuple[int, int]:
        """Grid cell of a point; out-of-extent raises unless `clamp`."""
        x, y = self.local_xy(lat, lon)
        ix = int(math.floor(x / self.cell_size_m))
        iy = int(math.floor(y / self.cell_size_m))
        if clamp:
            return min(max(ix, 0), self.m - 1), min(max(iy, 0), self.n - 1)
        if not (0 <= ix < self.m and 0 <= iy < self.n):
            raise RangeError(
                f"point ({lat}, {lon}) maps to cell ({ix}, {iy}) "
                f"outside {self.m}x{self.n} grid")
        return ix, iy


class RoadSegment:
    """One directed road segment with polyline geometry.

    `length` is the summed spherical length of the polyline; cumulative
    leg lengths are cached for projections and ratio arithmetic.
    """

    __slots__ = ("id", "level", "polyline", "length", "cum_lengths")

    def __init__(self, seg_id: int, level: int, polyline: np.ndarray):
        polyline = np.asarray(polyline, dtype=np.float64)
        if polyline.ndim != 2 or polyline.shape[1] != 2 or polyline.shape[0] < 2:
            raise FormatError(
                f"segment {seg_id}: polyline needs >= 2 (lat, lon) points")
        if not (0 <= level < N_LEVELS):
            raise FormatError(
                f"segment {seg_id}: level {level} outside [0, {N_LEVELS})")
        legs = haversine_m(polyline[:-1, 0], polyline[:-1, 1],
                           polyline[1:, 0], polyline[1:, 1])
        if np.any(legs <= 0.0):
            raise FormatError(f"segment {seg_id}: degenerate zero-length leg")
        self.id = int(seg_id)
        self.level = int(level)
        self.polyline = polyline
        self.cum_lengths = np.concatenate([[0.0], np.cumsum(legs)])
        self.length = float(self.cum_lengths[-1])

    def position_at(self, ratio: float) -> tuple[float, float]:
        """(lat, lon) at arc-length `ratio * length` along the polyline."""
        target = ratio * self.length
        i = int(np.searchsorted(self.cum_lengths, target, side="right")) - 1
        i = min(max(i, 0), len(self.cum_lengths) - 2)
        leg_len = self.cum_lengths[i + 1] - self.cum_lengths[i]
        t = (target - self.cum_lengths[i]) / leg_len
        p = self.polyline[i] + t * (self.polyline[i + 1] - self.polyline[i])
        return float(p[0]), float(p[1])

    def start(self) -> tuple[float, float]:
        return float(self.polyline[0, 0]), float(self.polyline[0, 1])

    def end(self) -> tuple[float, float]:
        return float(self.polyline[-1, 0]), float(self.polyline[-1, 1])


def point_to_segment_distance(point: tuple[float, float],
                              seg: RoadSegment) -> tuple[float, float]:
    """Minimum spherical distance from a point to the segment polyline.

    Returns (meters, moving ratio in [0, 1)). The projection runs in the
    local tangent plane of each leg; the reported distance is spherical.
    """
    lat, lon = point
    poly = seg.polyline
    best_d = math.inf
    best_off = 0.0
    for i in range(poly.shape[0] - 1):
        ref_lat, ref_lon = poly[i]
        ax, ay = 0.0, 0.0
        bx, by = to_local_xy(poly[i + 1, 0], poly[i + 1, 1], ref_lat, ref_lon)
        px, py = to_local_xy(lat, lon, ref_lat, ref_lon)
        denom = (bx - ax) ** 2 + (by - ay) ** 2
        t = 0.0 if denom == 0.0 else ((px - ax) * (bx - ax) + (py - ay) * (by - ay)) / denom
        t = min(max(t, 0.0), 1.0)
        cand = poly[i] + t * (poly[i + 1] - poly[i])
        d = float(haversine_m(lat, lon, cand[0], cand[1]))
        if d < best_d:
            best_d = d
            leg = seg.cum_lengths[i + 1] - seg.cum_lengths[i]
            best_off = seg.cum_lengths[i] + t * leg
    ratio = min(best_off / seg.length, _RATIO_CAP)
    return best_d, float(ratio)


def grid_sequence(seg: RoadSegment, spec: GridSpec) -> list[tuple[int, int]]:
    """Ordered grid cells traversed by the segment polyline.

    Exact traversal: crossing parameters with the grid lines split each
    leg into intervals, and the cell of each interval midpoint is taken.
    Only consecutive duplicates are removed, so a self-bending segment may
    revisit a cell.
    """
    cells: list[tuple[int, int]] = []
    cell = spec.cell_size_m
    xs, ys = spec.local_xy(seg.polyline[:, 0], seg.polyline[:, 1])
    if np.any(xs < 0) or np.any(ys < 0) or np.any(xs >= spec.m * cell) or np.any(ys >= spec.n * cell):
        raise RangeError(f"segment {seg.id} leaves the grid extent")
    for i in range(len(xs) - 1):
        x0, y0, x1, y1 = xs[i], ys[i], xs[i + 1], ys[i + 1]
        ts = [0.0, 1.0]
        for lo, hi, delta, start in ((x0, x1, x1 - x0, x0), (y0, y1, y1 - y0, y0)):
            if delta == 0.0:
                continue
            k_lo = math.floor(min(lo, hi) / cell) + 1
            k_hi = math.ceil(max(lo, hi) / cell) - 1
            for k in range(k_lo, k_hi + 1):
                t = (k * cell - start) / delta
                if 0.0 < t < 1.0:
                    ts.append(t)
        ts.sort()
        for a, b in zip(ts[:-1], ts[1:]):
            if b <= a:
                continue
            tm = 0.5 * (a + b)
            ix = int(math.floor((x0 + tm * (x1 - x0)) / cell))
            iy = int(math.floor((y0 + tm * (y1 - y0)) / cell))
            if not cells or cells[-1] != (ix, iy):
                cells.append((ix, iy))
    return cells


@dataclass
class RoadNetwork:
    """Immutable-after-load directed graph of road segments."""

    segments: dict[int, RoadSegment]
    edges: set[tuple[int, int]]
    grid: GridSpec
    index_cell_m: float = 250.0
    ids: list[int] = field(default_factory=list)
    row_of: dict[int, int] = field(default_factory=dict)
    out_adj: dict[int, list[int]] = field(default_factory=dict)
    in_adj: dict[int, list[int]] = field(default_factory=dict)
    _buckets: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.segments:
            raise FormatError("network has no segments")
        self.ids = list(self.segments.keys())
        self.row_of = {sid: i for i, sid in enumerate(self.ids)}
        self.out_adj = {sid: [] for sid in self.ids}
        self.in_adj = {sid: [] for sid in self.ids}
        for a, b in sorted(self.edges):
            if a not in self.segments:
                raise FormatError(f"edge references unknown segment id {a}")
            if b not in self.segments:
                raise FormatError(f"edge references unknown segment id {b}")
            self.out_adj[a].append(b)
            self.in_adj[b].append(a)
        self._build_index()

    def __len__(self) -> int:
        return len(self.segments)

    def segment(self, sid: int) -> RoadSegment:
        return self.segments[sid]

    # -- radius index -----------------------------------------------------

    def _bucket_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(x / self.index_cell_m)),
                int(math.floor(y / self.index_cell_m)))

    def _build_index(self) -> None:
        self._buckets = {}
        for sid, seg in self.segments.items():
            xs, ys = self.grid.local_xy(seg.polyline[:, 0], seg.polyline[:, 1])
            bx0, by0 = self._bucket_of(float(xs.min()), float(ys.min()))
            bx1, by1 = self._bucket_of(float(xs.max()), float(ys.max()))
            for bx in range(bx0, bx1 + 1):
                for by in range(by0, by1 + 1):
                    self._buckets.setdefault((bx, by), []).append(sid)
        keys = list(self._buckets)
        self._bucket_lo = (min(k[0] for k in keys), min(k[1] for k in keys))
        self._bucket_hi = (max(k[0] for k in keys), max(k[1] for k in keys))

    def radius_query(self, point: tuple[float, float], delta: float) -> set[int]:
        """Exactly the segments within spherical distance `delta` of `point`."""
        x, y = self.grid.local_xy(point[0], point[1])
        bx0, by0 = self._bucket_of(x - delta, y - delta)
        bx1, by1 = self._bucket_of(x + delta, y + delta)
        bx0, by0 = max(bx0, self._bucket_lo[0]), max(by0, self._bucket_lo[1])
        bx1, by1 = min(bx1, self._bucket_hi[0]), min(by1, self._bucket_hi[1])
        candidates: set[int] = set()
        for bx in range(bx0, bx1 + 1):
            for by in range(by0, by1 + 1):
                candidates.update(self._buckets.get((bx, by), ()))
        return {sid for sid in candidates
                if point_to_segment_distance(point, self.segments[sid])[0] <= delta}

    def nearest_candidates(self, point: tuple[float, float], delta: float,
                           limit: int | None = None) -> list[tuple[int, float, float]]:
        """(segment id, distance, ratio) within `delta`, nearest first."""
        rows = []
        for sid in self.radius_query(point, delta):
            d, r = point_to_segment_distance(point, self.segments[sid])
            rows.append((sid, d, r))
        rows.sort(key=lambda t: (t[1], t[0]))
        return rows if limit is None else rows[:limit]


def static_features(net: RoadNetwork) -> np.ndarray:
    """Per-segment feature rows: one-hot level, relative length, degrees."""
    feats = np.zeros((len(net), N_STATIC_FEATURES))
    max_len = max(seg.length for seg in net.segments.values())
    for i, sid in enumerate(net.ids):
        seg = net.segments[sid]
        feats[i, seg.level] = 1.0
        feats[i, N_LEVELS] = seg.length / max_len
        feats[i, N_LEVELS + 1] = len(net.in_adj[sid])
        feats[i, N_LEVELS + 2] = len(net.out_adj[sid])
    return feats


# -- file formats -----------------------------------------------------------


def _data_lines(path):
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def derive_grid(segments: dict[int, RoadSegment], cell_size_m: float,
                margin_m: float) -> GridSpec:
    """Smallest grid with `margin_m` slack that holds every polyline."""
    pts = np.concatenate([s.polyline for s in segments.values()])
    min_lat, min_lon = pts[:, 0].min(), pts[:, 1].min()
    m_north, m_east = meters_per_degree(float(min_lat))
    origin_lat = float(min_lat - margin_m / m_north)
    origin_lon = float(min_lon - margin_m / m_east)
    x, y = to_local_xy(pts[:, 0], pts[:, 1], origin_lat, origin_lon)
    m = int(math.ceil((float(x.max()) + margin_m) / cell_size_m))
    n = int(math.ceil((float(y.max()) + margin_m) / cell_size_m))
    return GridSpec(origin_lat, origin_lon, cell_size_m, m, n)


def load_network(segment_path, edge_path, cell_size_m: float = 50.0,
                 margin_m: float = 100.0, grid: GridSpec | None = None) -> RoadNetwork:
    """Load the documented segment/edge text files into an indexed network.

    Segment record: `id,level,lat lon;lat lon;...` one per line.
    Edge record: `from_id to_id`. `#` starts a comment in both files.
    When `grid` is given, segments outside its extent are rejected;
    otherwise a spec is derived from the data with `margin_m` slack.
    """
    segments: dict[int, RoadSegment] = {}
    for lineno, line in _data_lines(segment_path):
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{segment_path}:{lineno}: expected id,level,polyline")
        try:
            sid, level = int(parts[0]), int(parts[1])
            pts = [[float(v) for v in pair.split()] for pair in parts[2].split(";")]
        except ValueError as exc:
            raise FormatError(f"{segment_path}:{lineno}: {exc}") from exc
        if sid in segments:
            raise FormatError(f"{segment_path}:{lineno}: duplicate segment id {sid}")
        segments[sid] = RoadSegment(sid, level, np.asarray(pts))
    if not segments:
        raise FormatError(f"{segment_path}: no segments")

    edges: set[tuple[int, int]] = set()
    for lineno, line in _data_lines(edge_path):
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{edge_path}:{lineno}: expected 'from_id to_id'")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise FormatError(f"{edge_path}:{lineno}: {exc}") from exc
        for sid in (a, b):
            if sid not in segments:
                raise FormatError(
                    f"{edge_path}:{lineno}: edge references unknown segment id {sid}")
        edges.add((a, b))

    if grid is None:
        grid = derive_grid(segments, cell_size_m, margin_m)
    else:
        for sid, seg in segments.items():
            try:
                grid_sequence(seg, grid)
            except RangeError as exc:
                raise FormatError(f"segment {sid} outside supplied grid") from exc
    return RoadNetwork(segments=segments, edges=edges, grid=grid)


def save_network(net: RoadNetwork, segment_path, edge_path) -> None:
    with open(segment_path, "w", encoding="utf-8") as fh:
        for sid in net.ids:
            seg = net.segments[sid]
            poly = ";".join(f"{float(p[0])!r} {float(p[1])!r}" for p in seg.polyline)
            fh.write(f"{sid},{seg.level},{poly}\n")
    with open(edge_path, "w", encoding="utf-8") as fh:
        for a, b in sorted(net.edges):
            fh.write(f"{a} {b}\n")
