"""Losses and the training loop.

Three objectives: cross entropy over masked segment predictions, squared
error on moving ratios, and an auxiliary classification of each input
point's true segment inside its sub-graph (weighted by the sub-graph
influence weights). Their weighted sum trains everything end to end with
Adam. Batches bucket same-length trajectories; the run is deterministic
given the seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import AdamState, Tensor, adam_step, clip_grad_norm
from .decoder import ConstraintMask, decode_sequence
from .encoder import BatchGeometry, EnvContext, collate_geometry
from .errors import ConfigError, ContractError
from .model import ModelConfig, RecoveryModel, batch_truth_nodes
from .roadnet import RoadNetwork
from .trajectory import MatchedTrajectory, RawTrajectory

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    """One training triple: sparse noisy input, dense matched target, and
    the true segment row of every input point."""

    traj_id: int
    raw: RawTrajectory
    target: MatchedTrajectory
    input_rows: np.ndarray
    mask: Optional[ConstraintMask] = None  # built lazily, cached


def build_samples(net: RoadNetwork, low: dict[int, RawTrajectory],
                  truth: dict[int, MatchedTrajectory]) -> list[Sample]:
    """Join sparse inputs with dense targets on trajectory id + timestamp."""
    samples = []
    for tid in sorted(set(low) & set(truth)):
        raw, tgt = low[tid], truth[tid]
        slot = {t: j for j, t in enumerate(tgt.t)}
        try:
            idx = np.array([slot[t] for t in raw.t])
        except KeyError as exc:
            raise ContractError(
                f"trajectory {tid}: input time {exc} missing from target") from exc
        rows = np.array([net.row_of[int(s)] for s in tgt.seg_ids[idx]])
        samples.append(Sample(traj_id=tid, raw=raw, target=tgt, input_rows=rows))
    if not samples:
        raise ConfigError("no (input, target) trajectory pairs found")
    return samples


# -- losses -------------------------------------------------------------------


def loss_id(log_probs: list[Tensor], target_rows: np.ndarray,
            support: np.ndarray) -> tuple[Tensor, int]:
    """Masked cross entropy; steps whose target lacks support are skipped.

    Per-trajectory mean over supported steps, then mean over trajectories.
    Returns the scalar loss and the number of skipped steps.
    """
    b, l = target_rows.shape
    n_seg = log_probs[0].shape[1]
    picked = []
    for j, lp in enumerate(log_probs):
        flat = ad.reshape(lp, (b * n_seg,))
        idx = np.arange(b) * n_seg + target_rows[:, j]
        picked.append(ad.reshape(ad.gather(flat, idx), (b, 1)))
    nll = -ad.concat(picked, axis=1) * support.astype(np.float64)
    counts = support.sum(axis=1)
    valid = counts > 0
    if not valid.any():
        raise ContractError("every target step fell outside mask support")
    per_traj = ad.tsum(nll, axis=1) / np.maximum(counts, 1)
    total = ad.tsum(per_traj * valid.astype(np.float64)) / float(valid.sum())
    return total, int((~support).sum())


def loss_rate(ratios: list[Tensor], target_ratios: np.ndarray) -> Tensor:
    """Mean squared error on moving ratios over all decoded steps."""
    pred = ad.concat(ratios, axis=1)
    diff = pred - target_ratios
    return ad.tmean(diff * diff)


def loss_enc(z_final: Tensor, batch: BatchGeometry, truth_nodes: np.ndarray,
             head: Tensor) -> tuple[Tensor, int]:
    """Sub-graph classification of the true segment of each input point.

    A weighted softmax over each sub-graph's nodes (weights fixed to the
    influence weights) should place its mass on the true segment. Points
    whose truth lies outside the sub-graph are skipped and counted.
    """
    n_groups = batch.b * batch.l
    logits = ad.reshape(z_final @ head, (len(batch.node_rows),))
    scores = logits + np.log(batch.weights)
    shift = np.full(n_groups, -np.inf)
    np.maximum.at(shift, batch.node_group, scores.data)
    e = ad.exp(scores - shift[batch.node_group])
    denom = ad.scatter_add(ad.reshape(e, (-1, 1)), batch.node_group, n_groups)
    lse = ad.reshape(ad.log(denom), (n_groups,)) + shift

    valid = truth_nodes >= 0
    if not valid.any():
        raise ContractError("no input point has its truth inside the sub-graph")
    picked = ad.gather(scores, np.maximum(truth_nodes, 0))
    nll = (lse - picked) * valid.astype(np.float64)
    per_traj = ad.tsum(ad.reshape(nll, (batch.b, batch.l)), axis=1)
    counts = valid.reshape(batch.b, batch.l).sum(axis=1)
    traj_valid = counts > 0
    per_traj = per_traj / np.maximum(counts, 1)
    total = ad.tsum(per_traj * traj_valid.astype(np.float64)) / float(traj_valid.sum())
    return total, int((~valid).sum())


# -- batched forward -----------------------------------------------------------


@dataclass
class BatchResult:
    total: Tensor
    id_value: float
    rate_value: float
    enc_value: float
    skipped_id: int
    skipped_enc: int
    preds: np.ndarray


def run_batch(model: RecoveryModel, samples: list[Sample], lambda_rate: float,
              lambda_enc: float, training: bool, teacher_forced: bool,
              compute_losses: bool = True) -> BatchResult:
    """Forward one same-length bucket of samples and assemble the loss."""
    net = model.net
    target_rows = np.stack([[net.row_of[int(s)] for s in smp.target.seg_ids]
                            for smp in samples])
    target_ratios = np.stack([smp.target.ratios for smp in samples])
    env = np.stack([EnvContext.from_timestamp(smp.raw.t[0]).vector()
                    for smp in samples])
    geometry = [model.point_geometry(smp.raw, key=smp.traj_id) for smp in samples]
    batch = collate_geometry(geometry)

    for smp in samples:
        if smp.mask is None:
            smp.mask = model.constraint_mask(smp.raw, smp.target.t)
    mask = np.stack([smp.mask.values for smp in samples])

    x_road = model.road_embedding()
    enc, h_traj, z_final = model.encode_batch(x_road, batch, env, training)
    result = decode_sequence(enc, h_traj, mask, x_road, model.decoder,
                             teacher_forced=teacher_forced,
                             target_rows=target_rows, target_ratios=target_ratios)
    if not compute_losses:
        return BatchResult(total=ad.constant(0.0), id_value=0.0, rate_value=0.0,
                           enc_value=0.0, skipped_id=0, skipped_enc=0,
                           preds=result.preds)

    support = np.take_along_axis(mask, target_rows[:, :, None], axis=2)[:, :, 0] > 0
    l_id, skipped_id = loss_id(result.log_probs, target_rows, support)
    l_rate = loss_rate(result.ratios, target_ratios)
    total = l_id + lambda_rate * l_rate
    enc_value, skipped_enc = 0.0, 0
    if lambda_enc != 0.0:
        truth_nodes = batch_truth_nodes(
            batch, np.stack([smp.input_rows for smp in samples]))
        l_enc, skipped_enc = loss_enc(z_final, batch, truth_nodes, model.enc_head)
        total = total + lambda_enc * l_enc
        enc_value = l_enc.item()
    return BatchResult(total=total, id_value=l_id.item(),
                       rate_value=l_rate.item(), enc_value=enc_value,
                       skipped_id=skipped_id, skipped_enc=skipped_enc,
                       preds=result.preds)


# -- the loop -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    d: int = 64
    road_gat_depth: int = 2
    blocks: int = 2
    refine_depth: int = 1
    heads: int = 8
    receptive_radius: float = 400.0
    influence_scale: float = 30.0
    mask_scale: float = 15.0
    mask_max_error: float = 100.0
    lambda_rate: float = 10.0
    lambda_enc: float = 0.1
    ablate: Optional[str] = None
    val_fraction: float = 0.1
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lambda_rate < 0 or self.lambda_enc < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d, heads=self.heads, road_gat_depth=self.road_gat_depth,
            blocks=self.blocks, refine_depth=self.refine_depth,
            receptive_radius=self.receptive_radius,
            influence_scale=self.influence_scale, mask_scale=self.mask_scale,
            mask_max_error=self.mask_max_error, ablate=self.ablate,
            seed=self.seed)


def _buckets(samples: list[Sample]) -> dict[tuple[int, int], list[int]]:
    groups: dict[tuple[int, int], list[int]] = {}
    for i, smp in enumerate(samples):
        groups.setdefault((len(smp.raw), len(smp.target)), []).append(i)
    return groups


def predict_batch(model: RecoveryModel, samples: list[Sample]) -> np.ndarray:
    """Free-running predictions (rows) for a same-length bucket."""
    with ad.no_grad():
        result = run_batch(model, samples, lambda_rate=0.0, lambda_enc=0.0,
                           training=False, teacher_forced=False,
                           compute_losses=False)
    return result.preds


def _validate(model: RecoveryModel, samples: list[Sample]) -> tuple[float, float]:
    if not samples:
        return float("nan"), float("nan")
    accs, f1s = [], []
    for key, idxs in sorted(_buckets(samples).items()):
        group = [samples[i] for i in idxs]
        preds = predict_batch(model, group)
        for smp, rows in zip(group, preds):
            pred_ids = np.array([model.net.ids[r] for r in rows])
            pred = MatchedTrajectory(pred_ids, np.full(len(rows), 0.5),
                                     smp.target.t, smp.target.interval)
            accs.append(metrics.accuracy(smp.target, pred))
            f1s.append(metrics.path_prf(smp.target, pred)[2])
    return float(np.mean(accs)), float(np.mean(f1s))


@dataclass
class EpochStats:
    epoch: int
    loss_id: float
    loss_rate: float
    loss_enc: float
    val_acc: float
    val_f1: float

    def log_line(self) -> str:
        return (f"{self.epoch} {self.loss_id:.6f} {self.loss_rate:.6f} "
                f"{self.loss_enc:.6f} {self.val_acc:.6f} {self.val_f1:.6f}")


def train(samples: list[Sample], net: RoadNetwork, cfg: TrainConfig,
          log_path=None) -> tuple[RecoveryModel, list[EpochStats]]:
    """Train a fresh model; returns it (best validation weights) + history."""
    if not samples:
        raise ConfigError("empty dataset")
    model = RecoveryModel(net, cfg.model_config())
    params = model.parameters()
    state = AdamState.for_params(params, lr=cfg.lr)
    lambda_enc = 0.0 if cfg.ablate == "gcl" else cfg.lambda_enc

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(samples))
    n_val = int(round(cfg.val_fraction * len(samples)))
    val_set = [samples[i] for i in order[:n_val]]
    train_set = [samples[i] for i in order[n_val:]]
    if not train_set:
        raise ConfigError("validation split leaves no training data")

    history: list[EpochStats] = []
    best: tuple[float, dict] | None = None
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t_start = time.time()
            batches: list[list[Sample]] = []
            for key, idxs in sorted(_buckets(train_set).items()):
                idxs = [idxs[i] for i in rng.permutation(len(idxs))]
                for lo in range(0, len(idxs), cfg.batch_size):
                    batches.append([train_set[i] for i in idxs[lo:lo + cfg.batch_size]])
            batch_order = rng.permutation(len(batches))

            sums = np.zeros(3)
            for bi in batch_order:
                group = batches[bi]
                model.zero_grads()
                result = run_batch(model, group, cfg.lambda_rate, lambda_enc,
                                   training=True, teacher_forced=True)
                result.total.backward()
                clip_grad_norm(params, cfg.clip_norm)
                adam_step(params, state)
                sums += (result.id_value, result.rate_value, result.enc_value)
            sums /= max(len(batches), 1)

            val_acc, val_f1 = _validate(model, val_set)
            row = EpochStats(epoch, sums[0], sums[1], sums[2], val_acc, val_f1)
            history.append(row)
            if log_fh:
                log_fh.write(row.log_line() + "\n")
                log_fh.flush()
            logger.info("epoch %d id=%.4f rate=%.4f enc=%.4f val_acc=%.4f "
                        "val_f1=%.4f (%.1fs)", epoch, sums[0], sums[1], sums[2],
                        val_acc, val_f1, time.time() - t_start)

            if val_set and (best is None or val_acc > best[0]):
                best = (val_acc, {name: t.data.copy()
                                  for name, t in model.named_tensors()})
    finally:
        if log_fh:
            log_fh.close()

    if best is not None:
        for name, t in model.named_tensors():
            t.data = best[1][name]
    return model, history
