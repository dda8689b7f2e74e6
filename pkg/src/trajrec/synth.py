"""Synthetic city and trajectory dataset generator.

Builds a block lattice of bidirectional streets (optionally with diagonal
shortcuts and elevated corridors running parallel to their ground-level
trunk roads), drives random shortest-path routes across it at constant
speed, and emits dense matched ground truth plus noisy GPS observations.

Level codes double as labels: 3 ordinary street, 4 diagonal, 1 trunk road
under an elevated corridor, 5 elevated. The elevated twins sit a small
lateral offset from their trunk, which is exactly what makes them easy to
confuse under GPS noise.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geodesy import from_local_xy, meters_per_degree
from .roadnet import RoadNetwork, RoadSegment, derive_grid
from .trajectory import MatchedTrajectory, RawTrajectory

LEVEL_STREET = 3
LEVEL_DIAGONAL = 4
LEVEL_TRUNK = 1
LEVEL_ELEVATED = 5

ELEVATED_OFFSET_M = 15.0


@dataclass(frozen=True)
class SynthConfig:
    nx: int = 6                      # intersections east-west
    ny: int = 6                      # intersections north-south
    block_len_m: float = 250.0
    elevated_fraction: float = 0.0   # fraction of straight corridors twinned
    diagonal_fraction: float = 0.0   # fraction of blocks with a diagonal
    speed_lo: float = 6.0            # m/s
    speed_hi: float = 12.0
    gps_noise_sigma_m: float = 15.0
    interval_s: float = 10.0         # dense sample interval
    n_points: int = 17               # points per dense trajectory
    n_trajectories: int = 50
    seed: int = 0
    origin_lat: float = 31.0
    origin_lon: float = 121.0
    start_span_days: int = 14
    cell_size_m: float = 50.0
    grid_margin_m: float = 150.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigError("lattice needs at least 2x2 intersections")
        for name in ("block_len_m", "speed_lo", "speed_hi", "interval_s",
                     "n_points", "n_trajectories", "cell_size_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.elevated_fraction <= 1.0:
            raise ConfigError("elevated_fraction must lie in [0, 1]")
        if not 0.0 <= self.diagonal_fraction <= 1.0:
            raise ConfigError("diagonal_fraction must lie in [0, 1]")
        if self.speed_hi < self.speed_lo:
            raise ConfigError("speed range is inverted")
        if self.n_points < 2:
            raise ConfigError("n_points must be >= 2")


def gen_network(cfg: SynthConfig) -> tuple[RoadNetwork, set[int]]:
    """Build the lattice network; returns it with the elevated segment ids."""
    rng = np.random.default_rng(cfg.seed)
    nodes: list[tuple[float, float]] = []   # node id -> local (x, y) meters

    def add_node(x: float, y: float) -> int:
        nodes.append((x, y))
        return len(nodes) - 1

    grid_node = {}
    for i in range(cfg.nx):
        for j in range(cfg.ny):
            grid_node[(i, j)] = add_node(i * cfg.block_len_m, j * cfg.block_len_m)

    links: list[tuple[int, int, int]] = []  # (node u, node v, level)
    for i in range(cfg.nx):
        for j in range(cfg.ny):
            if i + 1 < cfg.nx:
                links.append((grid_node[(i, j)], grid_node[(i + 1, j)], LEVEL_STREET))
            if j + 1 < cfg.ny:
                links.append((grid_node[(i, j)], grid_node[(i, j + 1)], LEVEL_STREET))

    if cfg.diagonal_fraction > 0.0:
        blocks = [(i, j) for i in range(cfg.nx - 1) for j in range(cfg.ny - 1)]
        k = int(round(cfg.diagonal_fraction * len(blocks)))
        for b in rng.choice(len(blocks), size=k, replace=False):
            i, j = blocks[int(b)]
            links.append((grid_node[(i, j)], grid_node[(i + 1, j + 1)], LEVEL_DIAGONAL))

    elevated_links: list[tuple[int, int, int]] = []
    if cfg.elevated_fraction > 0.0:
        corridors = [("row", j) for j in range(cfg.ny)] + \
                    [("col", i) for i in range(cfg.nx)]
        k = int(round(cfg.elevated_fraction * len(corridors)))
        trunk_pairs = set()
        for c in rng.choice(len(corridors), size=k, replace=False):
            kind, idx = corridors[int(c)]
            if kind == "row":
                chain = [grid_node[(i, idx)] for i in range(cfg.nx)]
                off = (0.0, ELEVATED_OFFSET_M)
            else:
                chain = [grid_node[(idx, j)] for j in range(cfg.ny)]
                off = (ELEVATED_OFFSET_M, 0.0)
            for u, v in zip(chain[:-1], chain[1:]):
                trunk_pairs.add((u, v))
            twin = [chain[0]]
            for nid in chain[1:-1]:
                x, y = nodes[nid]
                twin.append(add_node(x + off[0], y + off[1]))
            twin.append(chain[-1])
            for u, v in zip(twin[:-1], twin[1:]):
                elevated_links.append((u, v, LEVEL_ELEVATED))
        links = [(u, v, LEVEL_TRUNK if (u, v) in trunk_pairs or (v, u) in trunk_pairs
                  else lvl) for u, v, lvl in links]
    links.extend(elevated_links)

    segments: dict[int, RoadSegment] = {}
    seg_nodes: dict[int, tuple[int, int]] = {}
    reverse_of: dict[int, int] = {}
    elevated_ids: set[int] = set()

    def latlon(nid: int) -> tuple[float, float]:
        x, y = nodes[nid]
        lat, lon = from_local_xy(x, y, cfg.origin_lat, cfg.origin_lon)
        return float(lat), float(lon)

    next_id = 0
    for u, v, level in links:
        poly_fwd = np.asarray([latlon(u), latlon(v)])
        a, b = next_id, next_id + 1
        next_id += 2
        segments[a] = RoadSegment(a, level, poly_fwd)
        segments[b] = RoadSegment(b, level, poly_fwd[::-1])
        seg_nodes[a] = (u, v)
        seg_nodes[b] = (v, u)
        reverse_of[a] = b
        reverse_of[b] = a
        if level == LEVEL_ELEVATED:
            elevated_ids.update((a, b))

    starts_at: dict[int, list[int]] = {}
    for sid, (u, _) in seg_nodes.items():
        starts_at.setdefault(u, []).append(sid)
    # direct continuations, U-turns onto the reverse twin excluded
    edges = {(a, b)
             for a, (_, w) in seg_nodes.items()
             for b in starts_at.get(w, ())
             if b != a and b != reverse_of[a]}

    grid = derive_grid(segments, cfg.cell_size_m, cfg.grid_margin_m)
    net = RoadNetwork(segments=segments, edges=edges, grid=grid)
    return net, elevated_ids


def elevated_segment_ids(net: RoadNetwork) -> set[int]:
    """Recover elevated labels from the level-code convention."""
    return {sid for sid, seg in net.segments.items() if seg.level == LEVEL_ELEVATED}


# -- route sampling -----------------------------------------------------------


def _junction_graph(net: RoadNetwork):
    """Node coordinates -> outgoing (segment id, end node) over exact endpoints."""
    node_ids: dict[tuple[float, float], int] = {}
    out: dict[int, list[tuple[int, int, float]]] = {}
    seg_ends: dict[int, tuple[int, int]] = {}

    def node_of(p: tuple[float, float]) -> int:
        if p not in node_ids:
            node_ids[p] = len(node_ids)
            out[node_ids[p]] = []
        return node_ids[p]

    for sid, seg in net.segments.items():
        u = node_of(seg.start())
        v = node_of(seg.end())
        out[u].append((sid, v, seg.length))
        seg_ends[sid] = (u, v)
    return out, seg_ends


def _route(out, src: int, dst: int) -> list[int] | None:
    """Shortest junction-to-junction path as a segment id sequence."""
    dist: dict[int, float] = {src: 0.0}
    prev: dict[int, tuple[int, int]] = {}
    heap = [(0.0, src)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == dst:
            break
        done.add(u)
        for sid, v, w in out[u]:
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                prev[v] = (u, sid)
                heapq.heappush(heap, (nd, v))
    if dst not in prev and dst != src:
        return None
    path = []
    node = dst
    while node != src:
        node, sid = prev[node]
        path.append(sid)
    path.reverse()
    return path


def gen_trajectories(net: RoadNetwork, cfg: SynthConfig
                     ) -> list[tuple[MatchedTrajectory, RawTrajectory]]:
    """Sample (dense matched truth, noisy raw observation) pairs.

    Each trajectory drives a random shortest-path route at a constant
    speed drawn from the configured range and is sampled every
    `interval_s` seconds for `n_points` points. Noise is isotropic
    Gaussian in the local tangent plane.
    """
    out, _ = _junction_graph(net)
    n_nodes = len(out)
    m_north, m_east = meters_per_degree(cfg.origin_lat)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trajectories)
    pairs = []
    for k in range(cfg.n_trajectories):
        rng = np.random.default_rng(children[k])
        speed = float(rng.uniform(cfg.speed_lo, cfg.speed_hi))
        needed = speed * (cfg.n_points - 1) * cfg.interval_s
        route = None
        for _attempt in range(200):
            src, dst = rng.integers(0, n_nodes, size=2)
            if src == dst:
                continue
            cand = _route(out, int(src), int(dst))
            if cand is None:
                continue
            total = sum(net.segments[sid].length for sid in cand)
            if total > needed:
                route = cand
                break
        if route is None:
            raise ConfigError(
                "network too small for the requested trajectory span; "
                "increase lattice size or reduce n_points/speed")

        lengths = np.array([net.segments[sid].length for sid in route])
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        t0 = float(rng.integers(0, cfg.start_span_days * 86400))
        times = t0 + np.arange(cfg.n_points) * cfg.interval_s
        # random start offset keeps samples off the exact junction points,
        # where segment identity is degenerate
        offset = float(rng.uniform(0.0, cum[-1] - needed))
        arcs = offset + speed * np.arange(cfg.n_points) * cfg.interval_s
        idx = np.searchsorted(cum, arcs, side="right") - 1
        seg_ids = np.array([route[i] for i in idx])
        ratios = (arcs - cum[idx]) / lengths[idx]
        truth = MatchedTrajectory(seg_ids, ratios, times, cfg.interval_s)

        coords = np.empty((cfg.n_points, 3))
        for i, (sid, r, t) in enumerate(zip(seg_ids, ratios, times)):
            lat, lon = net.segments[int(sid)].position_at(float(r))
            coords[i] = (lat, lon, t)
        if cfg.gps_noise_sigma_m > 0.0:
            noise = rng.normal(0.0, cfg.gps_noise_sigma_m, size=(cfg.n_points, 2))
            coords[:, 0] += noise[:, 0] / m_north
            coords[:, 1] += noise[:, 1] / m_east
        pairs.append((truth, RawTrajectory(coords)))
    return pairs
