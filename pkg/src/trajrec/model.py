"""End-to-end model: road encoder, trajectory encoder, and decoder.

Holds every learnable tensor under a stable dotted name so checkpoints,
optimizer state, and gradient checks all agree on ordering. Geometry
lookups (sub-graphs, grid sequences) are cached per trajectory; they are
pure functions of the data and never change during training.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decoder import (ConstraintMask, DecoderParams, build_constraint_mask,
                      decode_sequence, make_decoder)
from .encoder import (ENV_DIM, BatchGeometry, EncoderParams, EnvContext,
                      collate_geometry, encode, make_encoder)
from .errors import ConfigError, ContractError
from .layers import linear
from .road_encoder import (RoadEncoderParams, RoadGraphStructure,
                           build_road_structure, embed_network,
                           make_road_encoder)
from .roadnet import RoadNetwork
from .subgraph import (N_POINT_FEATURES, SubGraphSeq, build_point_geometry,
                       truth_node_index)
from .trajectory import MatchedTrajectory, RawTrajectory

ABLATIONS = ("grl", "gf", "gn", "gat", "gcl")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    heads: int = 8
    road_gat_depth: int = 2      # attention layers over the full network
    blocks: int = 2              # encoder blocks
    refine_depth: int = 1        # attention layers inside refinement
    ffn_mult: int = 4
    receptive_radius: float = 400.0   # sub-graph radius, meters
    influence_scale: float = 30.0     # sub-graph weight decay, meters
    mask_scale: float = 15.0          # constraint-mask weight decay, meters
    mask_max_error: float = 100.0     # constraint-mask support radius, meters
    mask_at_inference: bool = True
    ablate: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")
        if self.ablate is not None and self.ablate not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablate!r}; "
                              f"choose from {ABLATIONS}")

    def encoder_variant(self) -> Optional[str]:
        return self.ablate if self.ablate in ("grl", "gf", "gn", "gat") else None


def named_tensors(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Depth-first walk over dataclass fields, lists, and Tensor leaves."""
    out: list[tuple[str, Tensor]] = []
    if isinstance(obj, Tensor):
        out.append((prefix, obj))
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            out.extend(named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}"))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.extend(named_tensors(item, f"{prefix}.{i}"))
    return out


class RecoveryModel:
    """Parameters plus cached structure for one road network."""

    def __init__(self, net: RoadNetwork, config: ModelConfig):
        self.net = net
        self.config = config
        self.structure: RoadGraphStructure = build_road_structure(net)
        rng = np.random.default_rng(config.seed)
        d = config.d
        self.road: RoadEncoderParams = make_road_encoder(
            rng, net.grid, len(net), d, config.road_gat_depth, config.heads)
        self.encoder: EncoderParams = make_encoder(
            rng, d, config.heads, config.blocks, config.refine_depth,
            config.ffn_mult * d, N_POINT_FEATURES, config.encoder_variant())
        self.decoder: DecoderParams = make_decoder(rng, d, len(net))
        # auxiliary graph-classification head over refined node features
        self.enc_head: Tensor = ad.uniform_param(rng, (d, 1), fan_in=d)
        self._geometry_cache: dict[int, SubGraphSeq] = {}

    # -- parameter bookkeeping -------------------------------------------

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = named_tensors(self.road, "road")
        out += named_tensors(self.encoder, "encoder")
        out += named_tensors(self.decoder, "decoder")
        out.append(("enc_head", self.enc_head))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors() if t.requires_grad]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- forward paths ------------------------------------------------------

    def road_embedding(self) -> Tensor:
        return embed_network(self.road, self.structure, self.config.heads)

    def point_geometry(self, traj: RawTrajectory, key: int | None = None) -> SubGraphSeq:
        if key is not None and key in self._geometry_cache:
            return self._geometry_cache[key]
        seq = build_point_geometry(self.net, traj, self.config.receptive_radius,
                                   self.config.influence_scale)
        if key is not None:
            self._geometry_cache[key] = seq
        return seq

    def encode_batch(self, x_road: Tensor, batch: BatchGeometry,
                     env: np.ndarray, training: bool):
        z0 = ad.gather(x_road, batch.node_rows)
        weighted = z0 * batch.weights[:, None]
        sums = ad.scatter_add(weighted, batch.node_group, batch.b * batch.l)
        pooled = sums / batch.weight_sums[:, None]
        joined = ad.concat([pooled, ad.constant(batch.feats)], axis=1)
        h0 = ad.reshape(linear(joined, self.encoder.input_proj),
                        (batch.b, batch.l, self.config.d))
        return encode(h0, z0, batch, env, self.encoder, self.config.heads, training)

    def constraint_mask(self, traj: RawTrajectory,
                        rho_times: np.ndarray) -> ConstraintMask:
        return build_constraint_mask(traj, rho_times, self.net,
                                     self.config.mask_scale,
                                     self.config.mask_max_error)

    def recover(self, traj: RawTrajectory, interval: float) -> MatchedTrajectory:
        """Free-running recovery of one trajectory at the given interval."""
        span = traj.t[-1] - traj.t[0]
        steps = int(round(span / interval))
        if abs(steps * interval - span) > 1e-9 or steps < 1:
            raise ContractError(
                f"trajectory span {span}s is not a multiple of {interval}s")
        rho_times = traj.t[0] + np.arange(steps + 1) * interval
        mask = self.constraint_mask(traj, rho_times)
        mask_values = mask.values if self.config.mask_at_inference \
            else np.ones_like(mask.values)
        env = EnvContext.from_timestamp(traj.t[0]).vector()[None, :]
        with ad.no_grad():
            x_road = self.road_embedding()
            batch = collate_geometry([self.point_geometry(traj)])
            enc, h_traj, _ = self.encode_batch(x_road, batch, env, training=False)
            result = decode_sequence(enc, h_traj, mask_values[None], x_road,
                                     self.decoder, teacher_forced=False)
        seg_ids = np.array([self.net.ids[row] for row in result.preds[0]])
        return MatchedTrajectory(seg_ids, result.pred_ratios[0], rho_times,
                                 float(interval))

    # -- checkpointing -----------------------------------------------------

    def save(self, path, extra_header: dict | None = None) -> None:
        header = {
            "d": self.config.d,
            "heads": self.config.heads,
            "road_gat_depth": self.config.road_gat_depth,
            "blocks": self.config.blocks,
            "refine_depth": self.config.refine_depth,
            "ffn_mult": self.config.ffn_mult,
            "receptive_radius": self.config.receptive_radius,
            "influence_scale": self.config.influence_scale,
            "mask_scale": self.config.mask_scale,
            "mask_max_error": self.config.mask_max_error,
            "mask_at_inference": self.config.mask_at_inference,
            "ablate": self.config.ablate,
            "seed": self.config.seed,
            "n_segments": len(self.net),
        }
        if extra_header:
            header.update(extra_header)
        arrays = {name: t.data for name, t in self.named_tensors()}
        ad.save_arrays(path, header, arrays)

    @classmethod
    def load(cls, path, net: RoadNetwork) -> tuple["RecoveryModel", dict]:
        header, arrays = ad.load_arrays(path)
        if header.get("n_segments") != len(net):
            raise ContractError(
                f"checkpoint built for {header.get('n_segments')} segments, "
                f"network has {len(net)}")
        config = ModelConfig(
            d=header["d"], heads=header["heads"],
            road_gat_depth=header["road_gat_depth"], blocks=header["blocks"],
            refine_depth=header["refine_depth"], ffn_mult=header["ffn_mult"],
            receptive_radius=header["receptive_radius"],
            influence_scale=header["influence_scale"],
            mask_scale=header["mask_scale"],
            mask_max_error=header["mask_max_error"],
            mask_at_inference=header["mask_at_inference"],
            ablate=header["ablate"], seed=header["seed"])
        model = cls(net, config)
        tensors = dict(model.named_tensors())
        missing = set(tensors) - set(arrays)
        surplus = set(arrays) - set(tensors)
        if missing or surplus:
            raise ContractError(
                f"checkpoint mismatch: missing {sorted(missing)[:3]}, "
                f"surplus {sorted(surplus)[:3]}")
        for name, t in tensors.items():
            if arrays[name].shape != t.data.shape:
                raise ContractError(f"{name}: checkpoint shape "
                                    f"{arrays[name].shape} != {t.data.shape}")
            t.data = arrays[name].astype(np.float64)
        return model, header


def batch_truth_nodes(batch: BatchGeometry, truth_rows: np.ndarray) -> np.ndarray:
    """Flat node index of each (item, point) truth segment, -1 if absent.

    `truth_rows` is (b, l) of road rows for the raw input points.
    """
    out = np.full(batch.b * batch.l, -1, dtype=np.int64)
    node_off = 0
    for item, seq in enumerate(batch.seqs):
        for point in range(batch.l):
            idx = truth_node_index(seq, point, int(truth_rows[item, point]))
            if idx >= 0:
                out[item * batch.l + point] = idx + node_off
        node_off += len(seq.node_rows)
    return out
