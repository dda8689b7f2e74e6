"""Shared neural building blocks: linear maps, GRU cell, layer norm, and
sinusoidal positions. All forwards are pure functions over parameter
dataclasses so the same cell can serve both the grid encoder and the
decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LAYER_NORM_EPS = 1e-5


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor


def make_linear(rng: np.random.Generator, in_dim: int, out_dim: int) -> LinearParams:
    return LinearParams(w=ad.uniform_param(rng, (in_dim, out_dim), fan_in=in_dim),
                        b=ad.uniform_param(rng, (out_dim,), fan_in=in_dim))


def linear(x: Tensor, p: LinearParams) -> Tensor:
    return (x @ p.w) + p.b


@dataclass
class GruCellParams:
    """Gates over the concatenation [state, input]."""

    w_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    b_cand: Tensor


def make_gru_cell(rng: np.random.Generator, input_dim: int,
                  hidden_dim: int) -> GruCellParams:
    fan = hidden_dim + input_dim
    shape = (fan, hidden_dim)
    return GruCellParams(
        w_update=ad.uniform_param(rng, shape, fan_in=fan),
        b_update=ad.uniform_param(rng, (hidden_dim,), fan_in=fan),
        w_reset=ad.uniform_param(rng, shape, fan_in=fan),
        b_reset=ad.uniform_param(rng, (hidden_dim,), fan_in=fan),
        w_cand=ad.uniform_param(rng, shape, fan_in=fan),
        b_cand=ad.uniform_param(rng, (hidden_dim,), fan_in=fan),
    )


def gru_cell(state: Tensor, x: Tensor, p: GruCellParams) -> Tensor:
    """One recurrent step: convex blend of old state and gated candidate.

    `state` is (batch, hidden), `x` is (batch, input). The update gate z
    picks the blend, the reset gate r filters the old state feeding the
    candidate.
    """
    joint = ad.concat([state, x], axis=1)
    z = ad.sigmoid(joint @ p.w_update + p.b_update)
    r = ad.sigmoid(joint @ p.w_reset + p.b_reset)
    cand = ad.tanh(ad.concat([r * state, x], axis=1) @ p.w_cand + p.b_cand)
    return (1.0 - z) * state + z * cand


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


def make_layer_norm(d: int) -> LayerNormParams:
    return LayerNormParams(gamma=Tensor(np.ones(d), requires_grad=True),
                           beta=ad.zeros_param((d,)))


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    """Normalize each feature vector (last axis) to zero mean, unit var."""
    mu = ad.tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.tmean(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + LAYER_NORM_EPS) * p.gamma + p.beta


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Standard sinusoidal table: sin on even dims, cos on odd dims."""
    pos = np.arange(length)[:, None]
    dim = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d)
    pe = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return pe
