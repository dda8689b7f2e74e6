"""Multi-head graph attention over explicit edge lists.

Attention runs per directed attend-pair (i attends to j), so the score
work is proportional to the number of edges rather than the square of the
node count. Neighborhoods are symmetrized and include a self loop, which
keeps every softmax well defined even for isolated nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import stats
from .autodiff import Tensor

LEAKY_SLOPE = 0.2


@dataclass
class GatLayerParams:
    """One attention layer; feature transforms keep width d = heads * dh.

    `w_score` feeds the attention logits and `w_value` the aggregated
    messages; the two transforms are independent parameters.
    """

    w_score: Tensor            # (d, d)
    w_value: Tensor            # (d, d)
    att_self: Tensor           # (heads, dh), dotted with the attending node
    att_neigh: Tensor          # (heads, dh), dotted with the neighbor


def make_gat_layer(rng: np.random.Generator, d: int, heads: int) -> GatLayerParams:
    if d % heads != 0:
        raise ValueError(f"heads={heads} must divide d={d}")
    dh = d // heads
    return GatLayerParams(
        w_score=ad.uniform_param(rng, (d, d), fan_in=d),
        w_value=ad.uniform_param(rng, (d, d), fan_in=d),
        att_self=ad.uniform_param(rng, (heads, dh), fan_in=2 * dh),
        att_neigh=ad.uniform_param(rng, (heads, dh), fan_in=2 * dh),
    )


def attend_pairs(edges, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Build (self_idx, neigh_idx) arrays from directed edges.

    The neighborhood of i is its in- and out-neighbors plus i itself.
    """
    pairs = {(i, i) for i in range(n_nodes)}
    for a, b in edges:
        pairs.add((a, b))
        pairs.add((b, a))
    ordered = sorted(pairs)
    self_idx = np.fromiter((p[0] for p in ordered), dtype=np.int64, count=len(ordered))
    neigh_idx = np.fromiter((p[1] for p in ordered), dtype=np.int64, count=len(ordered))
    return self_idx, neigh_idx


def _segment_max(values: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    out = np.full((n_groups,) + values.shape[1:], -np.inf)
    np.maximum.at(out, groups, values)
    return out


def gat_layer(x: Tensor, self_idx: np.ndarray, neigh_idx: np.ndarray,
              p: GatLayerParams, heads: int) -> Tensor:
    """One multi-head attention pass over (n_nodes, d) features."""
    n, d = x.shape
    dh = d // heads
    scored = ad.reshape(x @ p.w_score, (n, heads, dh))
    score_self = ad.tsum(scored * p.att_self, axis=2)    # (n, heads)
    score_neigh = ad.tsum(scored * p.att_neigh, axis=2)  # (n, heads)

    e = ad.leaky_relu(ad.gather(score_self, self_idx) +
                      ad.gather(score_neigh, neigh_idx), LEAKY_SLOPE)
    stats.add_attention_scores(len(self_idx) * heads)

    # shift-invariant softmax per attending node; the max is a constant
    shift = _segment_max(e.data, self_idx, n)
    num = ad.exp(e - shift[self_idx])
    denom = ad.scatter_add(num, self_idx, n)
    alpha = num / ad.gather(denom, self_idx)             # (pairs, heads)

    values = ad.reshape(x @ p.w_value, (n, heads, dh))
    messages = ad.gather(values, neigh_idx) * ad.reshape(alpha, (len(self_idx), heads, 1))
    pooled = ad.scatter_add(messages, self_idx, n)
    return ad.reshape(ad.leaky_relu(pooled, LEAKY_SLOPE), (n, d))
