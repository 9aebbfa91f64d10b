"""Word-embedding-conditioned co-attention between support and query features.

Feature maps are handled as ``C x (H*W)`` matrices, one column per spatial
location. A projected class-word vector ``z`` is tiled over every location and
stacked under the visual channels; the affinity between the two augmented maps
is normalised column-wise into attention weights, which summarise one map in
terms of the other. Summaries are gated per location, concatenated with the
original features and mixed back down to ``C`` channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .tensor import (
    ContractError,
    DimensionError,
    Parameter,
    Tensor,
    add,
    as_tensor,
    concat_rows,
    hadamard,
    matmul,
    reshape,
    sigmoid,
    softmax_columns,
    transpose,
)

EMBED_DIM = 256
DEFAULT_DEPTH = 2


class ConfigurationError(ValueError):
    """Inputs disagree with the configured dimensions."""


@dataclass
class FeatureMap:
    """Visual features stored as a ``channels x (height*width)`` matrix."""

    matrix: Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.matrix.data.ndim != 2 or self.matrix.shape[1] != self.height * self.width:
            raise DimensionError(
                f"feature matrix {self.matrix.shape} does not fit spatial size "
                f"{self.height}x{self.width}"
            )

    @classmethod
    def from_array(cls, array: np.ndarray, requires_grad: bool = False) -> "FeatureMap":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3:
            raise DimensionError(f"feature array must be C x H x W, got {array.shape}")
        c, h, w = array.shape
        return cls(Tensor(array.reshape(c, h * w), requires_grad=requires_grad), h, w)

    @property
    def channels(self) -> int:
        return self.matrix.shape[0]

    @property
    def locations(self) -> int:
        return self.height * self.width

    def to_array(self) -> np.ndarray:
        return self.matrix.data.reshape(self.channels, self.height, self.width).copy()


@dataclass
class Projection:
    """Linear map from word-embedding space (E) to the tiled vector (d)."""

    weight: Parameter  # E x d
    bias: Parameter  # d x 1

    @classmethod
    def init(cls, embedding_dim: int, embed_dim: int, rng: np.random.Generator, prefix: str = "proj"):
        w = rng.normal(0.0, 1.0 / np.sqrt(embedding_dim), size=(embedding_dim, embed_dim))
        return cls(Parameter(w, f"{prefix}.weight"), Parameter(np.zeros((embed_dim, 1)), f"{prefix}.bias"))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


@dataclass
class CoAttentionParams:
    """Learnable weights of one co-attention block.

    ``w_co`` acts on augmented channels (C + d); the gate is a single weight
    row over those channels, so it yields one scalar per location. ``mix_w``
    maps the concatenation [gated summary; original features] back to C.
    """

    w_co: Parameter  # (C+d) x (C+d)
    gate_w: Parameter  # 1 x (C+d)
    gate_b: Parameter  # 1 x 1
    mix_w: Parameter  # C x (2C+d)
    mix_b: Parameter  # C x 1

    @classmethod
    def init(cls, channels: int, embed_dim: int, rng: np.random.Generator, prefix: str = "block0"):
        aug = channels + embed_dim
        return cls(
            w_co=Parameter(rng.normal(0.0, 1.0 / np.sqrt(aug), size=(aug, aug)), f"{prefix}.w_co"),
            gate_w=Parameter(rng.normal(0.0, 1.0 / np.sqrt(aug), size=(1, aug)), f"{prefix}.gate_w"),
            gate_b=Parameter(np.zeros((1, 1)), f"{prefix}.gate_b"),
            mix_w=Parameter(
                rng.normal(0.0, 1.0 / np.sqrt(aug + channels), size=(channels, aug + channels)),
                f"{prefix}.mix_w",
            ),
            mix_b=Parameter(np.zeros((channels, 1)), f"{prefix}.mix_b"),
        )

    @property
    def channels(self) -> int:
        return self.mix_w.shape[0]

    @property
    def augmented(self) -> int:
        return self.w_co.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w_co, self.gate_w, self.gate_b, self.mix_w, self.mix_b]


class BlockTrace(NamedTuple):
    """Every intermediate of one block, for inspection and tests."""

    fq: FeatureMap
    fs: FeatureMap
    vs_aug: Tensor
    vq_aug: Tensor
    affinity: Tensor
    s_c: Tensor
    s_r: Tensor
    u_q: Tensor
    u_s: Tensor
    gate_q: Tensor
    gate_s: Tensor


def project_embedding(e, projection: Projection) -> Tensor:
    """``z = W^T e + b`` as a ``d x 1`` column."""
    e = np.asarray(e.data if isinstance(e, Tensor) else e, dtype=np.float64).reshape(-1, 1)
    if e.shape[0] != projection.weight.shape[0]:
        raise ConfigurationError(
            f"word embedding has {e.shape[0]} components, projection expects "
            f"{projection.weight.shape[0]}"
        )
    return add(matmul(transpose(projection.weight), Tensor(e)), projection.bias)


def tile_concat(v: Tensor, z: Tensor) -> Tensor:
    """Stack ``z`` (d x 1), repeated over every column, under ``v`` (C x L)."""
    v, z = as_tensor(v), as_tensor(z)
    if z.data.ndim == 1:
        z = reshape(z, (-1, 1))
    if z.shape[1] != 1:
        raise DimensionError(f"z must be a column vector, got {z.shape}")
    tiled = matmul(z, Tensor(np.ones((1, v.shape[1]))))
    return concat_rows(v, tiled)


def affinity(vs_aug: Tensor, vq_aug: Tensor, w_co: Tensor) -> Tensor:
    """``S = Vs~^T W_co Vq~``; entry (i, j) pairs support i with query j."""
    if vs_aug.shape[0] != vq_aug.shape[0]:
        raise DimensionError(
            f"support and query channel counts differ: {vs_aug.shape} vs {vq_aug.shape}"
        )
    return matmul(transpose(vs_aug), matmul(w_co, vq_aug))


def normalize_affinity(s: Tensor, direction: str = "column") -> Tensor:
    """``column``: S^c, each query column a distribution over support locations.
    ``row``: S^r = softmax over columns of S^T."""
    if direction == "column":
        return softmax_columns(s)
    if direction == "row":
        return softmax_columns(transpose(s))
    raise ValueError(f"direction must be 'column' or 'row', got {direction!r}")


def attention_summary(v_aug: Tensor, weights: Tensor) -> Tensor:
    return matmul(v_aug, weights)


def gate(u: Tensor, gate_w: Tensor, gate_b: Tensor) -> tuple[Tensor, Tensor]:
    """Return ``(u * g, g)`` with ``g = sigmoid(w^T u + b)`` of shape 1 x L."""
    g = sigmoid(add(matmul(gate_w, u), gate_b))
    return hadamard(u, g), g


def _mix(params: CoAttentionParams, gated: Tensor, v: Tensor) -> Tensor:
    return add(matmul(params.mix_w, concat_rows(gated, v)), params.mix_b)


def coattention_trace(vs: FeatureMap, vq: FeatureMap, z: Tensor, params: CoAttentionParams) -> BlockTrace:
    if vs.channels != vq.channels:
        raise DimensionError(f"support has {vs.channels} channels, query {vq.channels}")
    if vs.channels + z.shape[0] != params.augmented:
        raise ConfigurationError(
            f"block expects {params.augmented} augmented channels, got "
            f"{vs.channels} + {z.shape[0]}"
        )
    vs_aug = tile_concat(vs.matrix, z)
    vq_aug = tile_concat(vq.matrix, z)
    s = affinity(vs_aug, vq_aug, params.w_co)
    s_c = normalize_affinity(s, "column")
    s_r = normalize_affinity(s, "row")
    u_q = attention_summary(vs_aug, s_c)
    u_s = attention_summary(vq_aug, s_r)
    gated_q, g_q = gate(u_q, params.gate_w, params.gate_b)
    gated_s, g_s = gate(u_s, params.gate_w, params.gate_b)
    fq = FeatureMap(_mix(params, gated_q, vq.matrix), vq.height, vq.width)
    fs = FeatureMap(_mix(params, gated_s, vs.matrix), vs.height, vs.width)
    return BlockTrace(fq, fs, vs_aug, vq_aug, s, s_c, s_r, u_q, u_s, g_q, g_s)


def coattention_block(
    vs: FeatureMap, vq: FeatureMap, z: Tensor, params: CoAttentionParams
) -> tuple[FeatureMap, FeatureMap]:
    """One gated co-attention step; returns ``(F_q, F_s)``."""
    trace = coattention_trace(vs, vq, z, params)
    return trace.fq, trace.fs


def stacked_coattention(
    vs: FeatureMap, vq: FeatureMap, z: Tensor, blocks: Sequence[CoAttentionParams]
) -> tuple[FeatureMap, FeatureMap]:
    """Chain blocks, feeding each one the previous block's ``(F_s, F_q)``.

    Pass the same :class:`CoAttentionParams` several times to tie weights.
    """
    if len(blocks) < 1:
        raise ContractError("stacked co-attention needs depth >= 1")
    fs, fq = vs, vq
    for params in blocks:
        fq, fs = coattention_block(fs, fq, z, params)
    return fq, fs


def init_blocks(
    channels: int, embed_dim: int, depth: int, rng: np.random.Generator, tied: bool = False
) -> list[CoAttentionParams]:
    if depth < 1:
        raise ContractError("stacked co-attention needs depth >= 1")
    if tied:
        shared = CoAttentionParams.init(channels, embed_dim, rng, "block0")
        return [shared] * depth
    return [CoAttentionParams.init(channels, embed_dim, rng, f"block{k}") for k in range(depth)]
