"""Attention-equipped recurrent decoder with constraint masks.

One GRU step per output timestamp: attention over the encoder states
picks the context, the GRU consumes [previous segment embedding, previous
ratio, context], a masked softmax over all segments predicts the next
segment, and a sigmoid head regresses the moving ratio on the predicted
segment. At timestamps where a raw observation exists, the constraint
mask restricts prediction to segments near that observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .layers import GruCellParams, gru_cell, make_gru_cell
from .roadnet import RoadNetwork
from .trajectory import RawTrajectory


@dataclass
class DecoderParams:
    attn_v: Tensor      # (d, 1)
    attn_wg: Tensor     # (d, d), transforms the recurrent state
    attn_wh: Tensor     # (d, d), transforms encoder states
    gru: GruCellParams  # input [x || r || a], width 2d + 1
    w_id: Tensor        # (d, |V|) segment scores
    w_rate: Tensor      # (2d, 1) ratio head over [x_pred || h]
    start: Tensor       # (d,) learned start token


def make_decoder(rng: np.random.Generator, d: int, n_segments: int) -> DecoderParams:
    return DecoderParams(
        attn_v=ad.uniform_param(rng, (d, 1), fan_in=d),
        attn_wg=ad.uniform_param(rng, (d, d), fan_in=d),
        attn_wh=ad.uniform_param(rng, (d, d), fan_in=d),
        gru=make_gru_cell(rng, 2 * d + 1, d),
        w_id=ad.uniform_param(rng, (d, n_segments), fan_in=d),
        w_rate=ad.uniform_param(rng, (2 * d, 1), fan_in=2 * d),
        start=ad.uniform_param(rng, (d,), fan_in=d),
    )


@dataclass
class ConstraintMask:
    """Non-negative weights (l_rho, |V|) restricting decoder predictions.

    Columns follow the network row order. Rows of observed timestamps
    weight nearby segments and zero out the rest; unobserved rows are all
    ones. `fallback_points` lists observed input points that had no
    segment within range and fell back to an all-ones row.
    """

    values: np.ndarray
    observed: np.ndarray                     # bool per output timestamp
    fallback_points: list[int] = field(default_factory=list)


def build_constraint_mask(traj: RawTrajectory, rho_times: np.ndarray,
                          net: RoadNetwork, beta: float,
                          max_gps_error: float = 100.0) -> ConstraintMask:
    """Exponential proximity weights at observed timestamps, ones elsewhere."""
    rho_times = np.asarray(rho_times, dtype=np.float64)
    slot = {t: j for j, t in enumerate(rho_times)}
    values = np.ones((len(rho_times), len(net)))
    observed = np.zeros(len(rho_times), dtype=bool)
    fallback = []
    for i in range(len(traj)):
        t = traj.t[i]
        if t not in slot:
            raise ContractError(
                f"input timestamp {t} missing from the output grid")
        j = slot[t]
        observed[j] = True
        rows = net.nearest_candidates((traj.lat[i], traj.lon[i]), max_gps_error)
        if not rows:
            fallback.append(i)
            continue  # keep the all-ones row, decoder stays unconstrained here
        row = np.zeros(len(net))
        for sid, dist, _ in rows:
            row[net.row_of[sid]] = np.exp(-(dist * dist) / (beta * beta))
        values[j] = row
    return ConstraintMask(values=values, observed=observed,
                          fallback_points=fallback)


def attend(h_gru: Tensor, enc: Tensor, p: DecoderParams) -> Tensor:
    """Additive attention of the recurrent state over encoder outputs.

    `h_gru` is (b, d) and `enc` (b, l, d); returns the (b, d) context.
    """
    b, l, d = enc.shape
    query = ad.reshape(h_gru @ p.attn_wg, (b, 1, d))
    keys = enc @ p.attn_wh
    scores = ad.reshape(ad.tanh(query + keys) @ p.attn_v, (b, l))
    alpha = ad.softmax(scores, axis=1)
    return ad.reshape(ad.reshape(alpha, (b, 1, l)) @ enc, (b, d))


@dataclass
class StepResult:
    log_probs: Tensor      # (b, |V|), -inf outside mask support
    probs: Tensor          # (b, |V|), rows sum to 1 over the support
    pred: np.ndarray       # (b,) argmax rows
    ratio: Tensor          # (b, 1) in (0, 1)
    h: Tensor              # (b, d) new recurrent state


def decode_step(x_prev: Tensor, r_prev: Tensor, context: Tensor, h_gru: Tensor,
                c_row: np.ndarray, p: DecoderParams,
                road_embed: Tensor) -> StepResult:
    """One prediction step under a constraint-mask row.

    The masked distribution multiplies segment scores by the mask, which
    is applied additively in log space for stability. The ratio head sees
    the embedding of the segment it just predicted.
    """
    c_row = np.asarray(c_row, dtype=np.float64)
    if np.any(c_row < 0):
        raise ContractError("constraint mask must be non-negative")
    support = c_row > 0
    if not np.all(support.any(axis=-1)):
        raise ContractError("constraint mask row has empty support")

    h = gru_cell(h_gru, ad.concat([x_prev, r_prev, context], axis=1), p.gru)
    logits = h @ p.w_id
    log_c = np.full_like(c_row, -np.inf)
    log_c[support] = np.log(c_row[support])
    masked = logits + ad.constant(log_c)
    shift = np.max(masked.data, axis=1, keepdims=True)
    e = ad.exp(masked - ad.constant(shift))
    total = ad.tsum(e, axis=1, keepdims=True)
    log_probs = (masked - ad.constant(shift)) - ad.log(total)
    probs = e / total

    pred = np.argmax(probs.data, axis=1)
    x_pred = ad.gather(road_embed, pred)
    ratio = ad.sigmoid(ad.concat([x_pred, h], axis=1) @ p.w_rate)
    return StepResult(log_probs=log_probs, probs=probs, pred=pred,
                      ratio=ratio, h=h)


@dataclass
class DecodeResult:
    log_probs: list[Tensor]    # per step, (b, |V|)
    ratios: list[Tensor]       # per step, (b, 1)
    preds: np.ndarray          # (b, l_rho) predicted rows
    pred_ratios: np.ndarray    # (b, l_rho)


def decode_sequence(enc: Tensor, h_traj: Tensor, mask: np.ndarray,
                    road_embed: Tensor, p: DecoderParams, teacher_forced: bool,
                    target_rows: Optional[np.ndarray] = None,
                    target_ratios: Optional[np.ndarray] = None) -> DecodeResult:
    """Decode l_rho steps, feeding truth (teacher forced) or own predictions.

    `mask` is (b, l_rho, |V|) or (l_rho, |V|) shared across the batch.
    The first step consumes the learned start token with ratio zero.
    """
    b, _, d = enc.shape
    if mask.ndim == 2:
        mask = np.broadcast_to(mask, (b,) + mask.shape)
    l_rho = mask.shape[1]
    if teacher_forced:
        if target_rows is None or target_ratios is None:
            raise ContractError("teacher forcing requires targets")
        if target_rows.shape[1] != l_rho:
            raise ContractError(
                f"mask covers {l_rho} steps but targets have {target_rows.shape[1]}")

    h = h_traj
    x = ad.expand(ad.reshape(p.start, (1, d)), (b, d))
    r = ad.constant(np.zeros((b, 1)))
    log_probs, ratios = [], []
    preds = np.zeros((b, l_rho), dtype=np.int64)
    pred_ratios = np.zeros((b, l_rho))
    for j in range(l_rho):
        context = attend(h, enc, p)
        step = decode_step(x, r, context, h, mask[:, j], p, road_embed)
        h = step.h
        log_probs.append(step.log_probs)
        ratios.append(step.ratio)
        preds[:, j] = step.pred
        pred_ratios[:, j] = step.ratio.data[:, 0]
        if teacher_forced:
            x = ad.gather(road_embed, target_rows[:, j])
            r = ad.constant(target_ratios[:, j][:, None])
        else:
            x = ad.gather(road_embed, step.pred)
            r = step.ratio
    return DecodeResult(log_probs=log_probs, ratios=ratios, preds=preds,
                        pred_ratios=pred_ratios)
