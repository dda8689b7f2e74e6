"""Per-GPS-point receptive fields as weighted induced sub-graphs.

Each trajectory point pulls in the road segments within a radius, keeps
the connectivity they inherit from the network, and weights every segment
by an exponentially decaying function of its projection distance. Pooling
those weighted rows of the road representation gives the point's input
embedding; the flattened node/edge arrays drive the refinement layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import UnmatchedPointError
from .graph_attention import attend_pairs
from .layers import LinearParams, linear
from .roadnet import GridSpec, RoadNetwork, RoadSegment, point_to_segment_distance
from .trajectory import RawTrajectory

N_POINT_FEATURES = 3  # normalized time + grid x + grid y


def influence(seg: RoadSegment, point: tuple[float, float], gamma: float) -> float:
    """exp(-d^2 / gamma^2) with d the point-to-segment distance."""
    d, _ = point_to_segment_distance(point, seg)
    return math.exp(-(d * d) / (gamma * gamma))


@dataclass
class SubGraph:
    """Receptive field of one GPS point."""

    seg_ids: list[int]
    edges: list[tuple[int, int]]   # segment-id pairs inherited from the network
    weights: np.ndarray            # influence per node, same order as seg_ids


def gen_subgraph(net: RoadNetwork, point: tuple[float, float], delta: float,
                 gamma: float) -> SubGraph:
    """Induced sub-graph of all segments within `delta` meters of `point`.

    An empty query widens the radius twice (2x then 4x) before giving up,
    which flags points that are nowhere near the network.
    """
    ids: set[int] = set()
    for scale in (1.0, 2.0, 4.0):
        ids = net.radius_query(point, delta * scale)
        if ids:
            break
    if not ids:
        raise UnmatchedPointError(
            -1, f"no segment within {4 * delta:.0f} m of {point}")
    seg_ids = sorted(ids)
    members = set(seg_ids)
    edges = [(a, b) for a in seg_ids for b in net.out_adj[a] if b in members]
    weights = np.array([influence(net.segments[s], point, gamma) for s in seg_ids])
    return SubGraph(seg_ids=seg_ids, edges=edges, weights=weights)


def pool_point(sub: SubGraph, x_road: Tensor, row_of: dict[int, int]) -> Tensor:
    """Influence-weighted mean of the sub-graph's road embedding rows."""
    rows = np.array([row_of[s] for s in sub.seg_ids], dtype=np.int64)
    w = sub.weights[:, None]
    gathered = ad.gather(x_road, rows)
    return ad.reshape(ad.tsum(gathered * w, axis=0) / float(sub.weights.sum()),
                      (x_road.shape[1],))


@dataclass
class SubGraphSeq:
    """Flattened per-trajectory geometry, cacheable across training steps."""

    graphs: list[SubGraph]
    node_rows: np.ndarray     # (total,) row into the road representation
    node_group: np.ndarray    # (total,) owning point index
    node_offsets: np.ndarray  # (l + 1,) flat start of each point's nodes
    weights: np.ndarray       # (total,)
    self_idx: np.ndarray      # flat attend pairs across all sub-graphs
    neigh_idx: np.ndarray
    feats: np.ndarray         # (l, N_POINT_FEATURES)


def build_point_geometry(net: RoadNetwork, traj: RawTrajectory, delta: float,
                         gamma: float, grid: GridSpec | None = None) -> SubGraphSeq:
    """Sub-graphs plus flat index arrays for every point of one trajectory."""
    grid = grid or net.grid
    graphs: list[SubGraph] = []
    for i in range(len(traj)):
        try:
            graphs.append(gen_subgraph(net, (traj.lat[i], traj.lon[i]), delta, gamma))
        except UnmatchedPointError as exc:
            raise UnmatchedPointError(i, f"point {i}: {exc}") from exc

    counts = np.array([len(g.seg_ids) for g in graphs])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    node_rows = np.concatenate(
        [[net.row_of[s] for s in g.seg_ids] for g in graphs]).astype(np.int64)
    node_group = np.repeat(np.arange(len(graphs)), counts)
    weights = np.concatenate([g.weights for g in graphs])

    selfs, neighs = [], []
    for i, g in enumerate(graphs):
        local = {s: k for k, s in enumerate(g.seg_ids)}
        pairs = [(local[a], local[b]) for a, b in g.edges]
        s_idx, n_idx = attend_pairs(pairs, len(g.seg_ids))
        selfs.append(s_idx + offsets[i])
        neighs.append(n_idx + offsets[i])

    span = traj.t[-1] - traj.t[0]
    feats = np.empty((len(traj), N_POINT_FEATURES))
    for i in range(len(traj)):
        ix, iy = grid.cell_of(traj.lat[i], traj.lon[i], clamp=True)
        feats[i] = ((traj.t[i] - traj.t[0]) / span, ix / grid.m, iy / grid.n)

    return SubGraphSeq(graphs=graphs, node_rows=node_rows, node_group=node_group,
                       node_offsets=offsets, weights=weights,
                       self_idx=np.concatenate(selfs), neigh_idx=np.concatenate(neighs),
                       feats=feats)


def truth_node_index(seq: SubGraphSeq, point: int, road_row: int) -> int:
    """Flat node index of `road_row` inside point's sub-graph, or -1."""
    lo, hi = seq.node_offsets[point], seq.node_offsets[point + 1]
    hits = np.nonzero(seq.node_rows[lo:hi] == road_row)[0]
    return int(lo + hits[0]) if len(hits) else -1


@dataclass
class EncoderInput:
    """Initial encoder state for one trajectory."""

    h0: Tensor          # (l, d) projected per-point embedding
    z0: Tensor          # (total nodes, d) gathered road rows
    seq: SubGraphSeq


def build_encoder_input(net: RoadNetwork, x_road: Tensor, traj: RawTrajectory,
                        delta: float, gamma: float, grid: GridSpec,
                        proj: LinearParams) -> EncoderInput:
    """Pool, annotate, and project one trajectory into encoder space."""
    seq = build_point_geometry(net, traj, delta, gamma, grid)
    z0 = ad.gather(x_road, seq.node_rows)
    weighted = z0 * seq.weights[:, None]
    sums = ad.scatter_add(weighted, seq.node_group, len(seq.graphs))
    totals = np.zeros(len(seq.graphs))
    np.add.at(totals, seq.node_group, seq.weights)
    pooled = sums / totals[:, None]
    h0 = linear(ad.concat([pooled, ad.constant(seq.feats)], axis=1), proj)
    return EncoderInput(h0=h0, z0=z0, seq=seq)
