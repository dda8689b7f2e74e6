"""Spatial-temporal trajectory encoder.

A stack of blocks, each pairing a standard transformer encoder layer
(temporal mixing across the trajectory) with a graph refinement step
(spatial mixing inside every point's sub-graph). The refinement step
gate-fuses each point's temporal state into its sub-graph node features,
pushes them through graph attention, and renormalizes with batch-level
graph statistics; sub-graph means feed the next block, so input and
output shapes match and blocks stack freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import stats
from .autodiff import Tensor
from .errors import ContractError
from .graph_attention import GatLayerParams, gat_layer, make_gat_layer
from .layers import (LayerNormParams, LinearParams, layer_norm, linear,
                     make_layer_norm, make_linear, positional_encoding)
from .subgraph import SubGraphSeq

GRAPH_NORM_EPS = 1e-5
ENV_DIM = 25  # 24-hour one-hot plus holiday flag

VARIANTS = (None, "grl", "gf", "gn", "gat")


@dataclass(frozen=True)
class EnvContext:
    """Trajectory-level context: hour of day and holiday flag."""

    hour: int
    holiday: bool

    @classmethod
    def from_timestamp(cls, t: float) -> "EnvContext":
        hour = int(t // 3600) % 24
        day = int(t // 86400) % 7
        return cls(hour=hour, holiday=day in (5, 6))

    def vector(self) -> np.ndarray:
        v = np.zeros(ENV_DIM)
        v[self.hour] = 1.0
        v[24] = 1.0 if self.holiday else 0.0
        return v


@dataclass
class BatchGeometry:
    """Sub-graph structure of a same-length mini-batch, flattened."""

    seqs: list[SubGraphSeq]
    b: int
    l: int
    node_rows: np.ndarray
    node_group: np.ndarray      # global group = item * l + point
    group_counts: np.ndarray    # (b * l,)
    weights: np.ndarray
    weight_sums: np.ndarray     # (b * l,)
    self_idx: np.ndarray
    neigh_idx: np.ndarray
    feats: np.ndarray           # (b * l, point features)


def collate_geometry(seqs: list[SubGraphSeq]) -> BatchGeometry:
    lengths = {len(s.graphs) for s in seqs}
    if len(lengths) != 1:
        raise ContractError(f"mixed trajectory lengths in batch: {sorted(lengths)}")
    l = lengths.pop()
    rows, groups, weights, selfs, neighs, feats = [], [], [], [], [], []
    node_off = 0
    for item, seq in enumerate(seqs):
        rows.append(seq.node_rows)
        groups.append(seq.node_group + item * l)
        weights.append(seq.weights)
        selfs.append(seq.self_idx + node_off)
        neighs.append(seq.neigh_idx + node_off)
        feats.append(seq.feats)
        node_off += len(seq.node_rows)
    node_group = np.concatenate(groups)
    w = np.concatenate(weights)
    counts = np.bincount(node_group, minlength=len(seqs) * l).astype(np.float64)
    wsums = np.zeros(len(seqs) * l)
    np.add.at(wsums, node_group, w)
    return BatchGeometry(
        seqs=seqs, b=len(seqs), l=l,
        node_rows=np.concatenate(rows), node_group=node_group,
        group_counts=counts, weights=w, weight_sums=wsums,
        self_idx=np.concatenate(selfs), neigh_idx=np.concatenate(neighs),
        feats=np.concatenate(feats))


# -- transformer encoder layer -------------------------------------------------


@dataclass
class TransformerLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ffn_in: LinearParams
    ffn_out: LinearParams
    norm_attn: LayerNormParams
    norm_ffn: LayerNormParams


def make_transformer_layer(rng: np.random.Generator, d: int,
                           ffn_dim: int) -> TransformerLayerParams:
    return TransformerLayerParams(
        wq=ad.uniform_param(rng, (d, d), fan_in=d),
        wk=ad.uniform_param(rng, (d, d), fan_in=d),
        wv=ad.uniform_param(rng, (d, d), fan_in=d),
        wo=ad.uniform_param(rng, (d, d), fan_in=d),
        ffn_in=make_linear(rng, d, ffn_dim),
        ffn_out=make_linear(rng, ffn_dim, d),
        norm_attn=make_layer_norm(d),
        norm_ffn=make_layer_norm(d),
    )


def positional_encode(h: Tensor) -> Tensor:
    """Add the sinusoidal position table to (..., l, d) features."""
    l, d = h.shape[-2], h.shape[-1]
    return h + ad.constant(positional_encoding(l, d))


def multi_head_attention(h: Tensor, p: TransformerLayerParams,
                         heads: int) -> Tensor:
    """Scaled dot-product self-attention, (b, l, d) -> (b, l, d)."""
    b, l, d = h.shape
    if d % heads != 0:
        raise ContractError(f"heads={heads} must divide d={d}")
    dh = d // heads

    def split(x: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(x, (b, l, heads, dh)), (0, 2, 1, 3))

    q, k, v = split(h @ p.wq), split(h @ p.wk), split(h @ p.wv)
    scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d))
    stats.add_attention_scores(b * heads * l * l)
    attn = ad.softmax(scores, axis=-1) @ v
    merged = ad.reshape(ad.transpose(attn, (0, 2, 1, 3)), (b, l, d))
    return merged @ p.wo


def transformer_encoder_layer(h: Tensor, p: TransformerLayerParams,
                              heads: int) -> Tensor:
    """Attention and feed-forward sub-layers, each with residual + norm."""
    h = layer_norm(h + multi_head_attention(h, p, heads), p.norm_attn)
    f = linear(ad.relu(linear(h, p.ffn_in)), p.ffn_out)
    return layer_norm(h + f, p.norm_ffn)


# -- graph refinement pieces ---------------------------------------------------


@dataclass
class GatedFusionParams:
    w_temporal: Tensor
    w_spatial: Tensor
    b: Tensor


def make_gated_fusion(rng: np.random.Generator, d: int) -> GatedFusionParams:
    return GatedFusionParams(
        w_temporal=ad.uniform_param(rng, (d, d), fan_in=d),
        w_spatial=ad.uniform_param(rng, (d, d), fan_in=d),
        b=ad.uniform_param(rng, (d,), fan_in=d),
    )


def gated_fusion(tr: Tensor, z: Tensor, p: GatedFusionParams) -> Tensor:
    """Sigmoid-gated convex blend of a temporal state into node features.

    `tr` is either a single d-vector (repeated over the nodes) or already
    one row per node.
    """
    if tr.ndim == 1:
        tr = ad.expand(ad.reshape(tr, (1, tr.shape[0])), z.shape)
    gate = ad.sigmoid(tr @ p.w_temporal + z @ p.w_spatial + p.b)
    return gate * tr + (1.0 - gate) * z


@dataclass
class GraphNormParams:
    """Batch-style normalization over variable-size sub-graphs.

    The centering statistic is the mean of per-graph mean vectors; the
    spread statistic is the node-level mean squared deviation from it.
    Buffers hold running estimates for inference.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor   # buffer, requires_grad False
    running_var: Tensor
    momentum: float = 0.1


def make_graph_norm(d: int) -> GraphNormParams:
    return GraphNormParams(
        gamma=Tensor(np.ones(d), requires_grad=True),
        beta=ad.zeros_param((d,)),
        running_mean=Tensor(np.zeros(d)),
        running_var=Tensor(np.ones(d)),
    )


def graph_norm(z: Tensor, node_group: np.ndarray, group_counts: np.ndarray,
               p: GraphNormParams, training: bool) -> Tensor:
    """Normalize flattened node features with graph-level batch statistics."""
    if training:
        sums = ad.scatter_add(z, node_group, len(group_counts))
        graph_means = sums / group_counts[:, None]
        mu = ad.tmean(graph_means, axis=0)
        centered = z - mu
        var = ad.tmean(centered * centered, axis=0)
        p.running_mean.data *= 1.0 - p.momentum
        p.running_mean.data += p.momentum * mu.data
        p.running_var.data *= 1.0 - p.momentum
        p.running_var.data += p.momentum * var.data
    else:
        centered = z - ad.constant(p.running_mean.data)
        var = ad.constant(p.running_var.data)
    return centered / ad.sqrt(var + GRAPH_NORM_EPS) * p.gamma + p.beta


@dataclass
class FeedForwardParams:
    inner: LinearParams
    outer: LinearParams


def make_feed_forward(rng: np.random.Generator, in_dim: int, hidden: int,
                      out_dim: int) -> FeedForwardParams:
    return FeedForwardParams(inner=make_linear(rng, in_dim, hidden),
                             outer=make_linear(rng, hidden, out_dim))


def feed_forward(x: Tensor, p: FeedForwardParams) -> Tensor:
    return linear(ad.relu(linear(x, p.inner)), p.outer)


@dataclass
class RefinementParams:
    """Spatial half of one encoder block, including ablation stand-ins."""

    fusion: Optional[GatedFusionParams]
    fusion_alt: Optional[FeedForwardParams]        # concat + FFN variant
    forward_gats: Optional[list[GatLayerParams]]
    forward_alt: Optional[FeedForwardParams]       # plain FFN variant
    norm_fusion: GraphNormParams | LayerNormParams
    norm_forward: GraphNormParams | LayerNormParams


def make_refinement(rng: np.random.Generator, d: int, heads: int,
                    gat_depth: int, variant: str | None) -> RefinementParams:
    use_layer_norm = variant == "gn"
    return RefinementParams(
        fusion=None if variant == "gf" else make_gated_fusion(rng, d),
        fusion_alt=make_feed_forward(rng, 2 * d, d, d) if variant == "gf" else None,
        forward_gats=None if variant == "gat" else
        [make_gat_layer(rng, d, heads) for _ in range(gat_depth)],
        forward_alt=make_feed_forward(rng, d, d, d) if variant == "gat" else None,
        norm_fusion=make_layer_norm(d) if use_layer_norm else make_graph_norm(d),
        norm_forward=make_layer_norm(d) if use_layer_norm else make_graph_norm(d),
    )


def _norm(z: Tensor, batch: BatchGeometry,
          p: GraphNormParams | LayerNormParams, training: bool) -> Tensor:
    if isinstance(p, LayerNormParams):
        return layer_norm(z, p)
    return graph_norm(z, batch.node_group, batch.group_counts, p, training)


def refine(tr: Tensor, z: Tensor, batch: BatchGeometry, p: RefinementParams,
           heads: int, training: bool) -> Tensor:
    """Graph refinement: fuse temporal states in, attend, renormalize."""
    flat_tr = ad.reshape(tr, (batch.b * batch.l, tr.shape[-1]))
    tr_nodes = ad.gather(flat_tr, batch.node_group)
    if p.fusion is not None:
        fused = gated_fusion(tr_nodes, z, p.fusion)
    else:
        fused = feed_forward(ad.concat([tr_nodes, z], axis=1), p.fusion_alt)
    z = _norm(z + fused, batch, p.norm_fusion, training)
    if p.forward_gats is not None:
        fwd = z
        for layer in p.forward_gats:
            fwd = gat_layer(fwd, batch.self_idx, batch.neigh_idx, layer, heads)
    else:
        fwd = feed_forward(z, p.forward_alt)
    return _norm(z + fwd, batch, p.norm_forward, training)


def graph_readout(z: Tensor, batch: BatchGeometry) -> Tensor:
    """Mean node feature per sub-graph, reshaped to (b, l, d)."""
    sums = ad.scatter_add(z, batch.node_group, batch.b * batch.l)
    means = sums / batch.group_counts[:, None]
    return ad.reshape(means, (batch.b, batch.l, z.shape[1]))


# -- full encoder ---------------------------------------------------------------


@dataclass
class EncoderBlockParams:
    attn: TransformerLayerParams
    refinement: Optional[RefinementParams]   # None when ablating refinement


@dataclass
class EncoderParams:
    input_proj: LinearParams                 # (d + point features) -> d
    blocks: list[EncoderBlockParams]
    head: LinearParams                       # (d + ENV_DIM) -> d
    variant: str | None = None


def make_encoder(rng: np.random.Generator, d: int, heads: int, n_blocks: int,
                 refine_depth: int, ffn_dim: int, n_point_features: int,
                 variant: str | None = None) -> EncoderParams:
    if variant not in VARIANTS:
        raise ContractError(f"unknown encoder variant {variant!r}")
    blocks = []
    for _ in range(n_blocks):
        blocks.append(EncoderBlockParams(
            attn=make_transformer_layer(rng, d, ffn_dim),
            refinement=None if variant == "grl" else
            make_refinement(rng, d, heads, refine_depth, variant),
        ))
    return EncoderParams(
        input_proj=make_linear(rng, d + n_point_features, d),
        blocks=blocks,
        head=make_linear(rng, d + ENV_DIM, d),
        variant=variant,
    )


def encode(h0: Tensor, z0: Tensor, batch: BatchGeometry, env: np.ndarray,
           p: EncoderParams, heads: int, training: bool
           ) -> tuple[Tensor, Tensor, Tensor]:
    """Run the block stack.

    `h0` is (b, l, d) projected input, `z0` the flattened node features,
    `env` a (b, ENV_DIM) context matrix. Returns the per-point states
    (b, l, d), the trajectory-level vector (b, d), and the final node
    features (refined, or `z0` when refinement is ablated).
    """
    h = positional_encode(h0)
    z = z0
    for block in p.blocks:
        tr = transformer_encoder_layer(h, block.attn, heads)
        if block.refinement is None:
            h = tr
            continue
        z = refine(tr, z, batch, block.refinement, heads, training)
        h = graph_readout(z, batch)
    pooled = ad.tmean(h, axis=1)
    h_traj = linear(ad.concat([pooled, ad.constant(env)], axis=1), p.head)
    return h, h_traj, z
