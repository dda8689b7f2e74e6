"""Road-network representation learning.

Every segment is read as the sequence of grid cells it passes through; a
GRU over looked-up grid embeddings plus a per-segment embedding gives the
initial state, a stack of graph-attention layers mixes in topology, and
static features (level, length, degrees) are concatenated before a final
projection. The output is one d-dimensional row per segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .graph_attention import GatLayerParams, attend_pairs, gat_layer, make_gat_layer
from .layers import GruCellParams, LinearParams, gru_cell, linear, make_gru_cell, make_linear
from .roadnet import GridSpec, N_STATIC_FEATURES, RoadNetwork, RoadSegment, grid_sequence, static_features


@dataclass
class RoadEncoderParams:
    grid_table: Tensor                 # (m * n, d) grid-cell embeddings
    seg_table: Tensor                  # (|V|, d) per-segment embeddings
    gru: GruCellParams
    gat_layers: list[GatLayerParams]
    out: LinearParams                  # (d + static) -> d


def make_road_encoder(rng: np.random.Generator, grid: GridSpec, n_segments: int,
                      d: int, gat_depth: int, heads: int) -> RoadEncoderParams:
    return RoadEncoderParams(
        grid_table=ad.uniform_param(rng, (grid.m * grid.n, d), fan_in=d),
        seg_table=ad.uniform_param(rng, (n_segments, d), fan_in=d),
        gru=make_gru_cell(rng, d, d),
        gat_layers=[make_gat_layer(rng, d, heads) for _ in range(gat_depth)],
        out=make_linear(rng, d + N_STATIC_FEATURES, d),
    )


@dataclass
class RoadGraphStructure:
    """Geometry-derived constants reused across every forward pass."""

    length_groups: list[tuple[np.ndarray, np.ndarray]]  # (rows, (L, n) cell idx)
    order: np.ndarray            # inverse permutation for regrouped rows
    self_idx: np.ndarray
    neigh_idx: np.ndarray
    static: np.ndarray           # (|V|, N_STATIC_FEATURES)


def _flat_cells(seg: RoadSegment, grid: GridSpec) -> np.ndarray:
    cells = grid_sequence(seg, grid)
    if not cells:
        raise ContractError(f"segment {seg.id} has an empty grid sequence")
    return np.array([ix * grid.n + iy for ix, iy in cells], dtype=np.int64)


def build_road_structure(net: RoadNetwork) -> RoadGraphStructure:
    grid = net.grid
    seqs = [_flat_cells(net.segments[sid], grid) for sid in net.ids]
    by_len: dict[int, list[int]] = {}
    for row, seq in enumerate(seqs):
        by_len.setdefault(len(seq), []).append(row)
    groups = []
    concat_rows = []
    for length in sorted(by_len):
        rows = np.array(by_len[length], dtype=np.int64)
        cells = np.stack([seqs[r] for r in rows], axis=1)  # (L, n_group)
        groups.append((rows, cells))
        concat_rows.append(rows)
    concat_rows = np.concatenate(concat_rows)
    order = np.argsort(concat_rows)

    row_edges = [(net.row_of[a], net.row_of[b]) for a, b in net.edges]
    self_idx, neigh_idx = attend_pairs(row_edges, len(net))
    return RoadGraphStructure(length_groups=groups, order=order,
                              self_idx=self_idx, neigh_idx=neigh_idx,
                              static=static_features(net))


def _grid_gru_states(p: RoadEncoderParams, structure: RoadGraphStructure,
                     d: int) -> Tensor:
    """Final GRU state over each segment's grid sequence, in network order."""
    finals = []
    for rows, cells in structure.length_groups:
        state = ad.constant(np.zeros((len(rows), d)))
        for step in range(cells.shape[0]):
            g = ad.gather(p.grid_table, cells[step])
            state = gru_cell(state, g, p.gru)
        finals.append(state)
    stacked = ad.concat(finals, axis=0)
    return ad.gather(stacked, structure.order)


def segment_init(seg: RoadSegment, p: RoadEncoderParams, grid: GridSpec,
                 row: int) -> Tensor:
    """Initial embedding of one segment: ReLU(final GRU state + own row)."""
    cells = _flat_cells(seg, grid)
    d = p.grid_table.shape[1]
    state = ad.constant(np.zeros((1, d)))
    for idx in cells:
        g = ad.gather(p.grid_table, np.array([idx]))
        state = gru_cell(state, g, p.gru)
    return ad.reshape(ad.relu(state + ad.gather(p.seg_table, np.array([row]))), (d,))


def embed_network(p: RoadEncoderParams, structure: RoadGraphStructure,
                  heads: int) -> Tensor:
    """Full road representation: (|V|, d) rows aligned with network order."""
    d = p.grid_table.shape[1]
    states = _grid_gru_states(p, structure, d)
    x = ad.relu(states + p.seg_table)
    for layer in p.gat_layers:
        x = gat_layer(x, structure.self_idx, structure.neigh_idx, layer, heads)
    joined = ad.concat([x, ad.constant(structure.static)], axis=1)
    return linear(joined, p.out)
