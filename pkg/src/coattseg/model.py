"""Episodic segmentation model built around stacked co-attention.

Pipeline per episode: encode support and query, project the class word to
``z``, run the co-attention stack, then decode the query features with a 1x1
head, bilinear upsampling and a sigmoid.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from . import io as fio
from .coattention import (
    DEFAULT_DEPTH,
    EMBED_DIM,
    ConfigurationError,
    CoAttentionParams,
    FeatureMap,
    Projection,
    init_blocks,
    project_embedding,
    stacked_coattention,
)
from .tensor import (
    DimensionError,
    Parameter,
    Tensor,
    add,
    backward,
    binary_cross_entropy,
    matmul,
    mean_of,
    relu,
    reshape,
    scale,
    sigmoid,
    transpose,
    zero_grad,
)

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    channels: int = 16
    embed_dim: int = EMBED_DIM
    depth: int = DEFAULT_DEPTH
    tied: bool = False
    encoder: str = "toy"  # "toy" or "file"
    image_channels: int = 3
    hidden_channels: int = 16
    upsample: int = 4
    embedding_dim: int = 300
    use_embedding: bool = True
    learning_rate: float = 0.05
    momentum: float = 0.9
    iterations: int = 500
    episodes_per_iter: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        for name in ("channels", "embed_dim", "image_channels", "hidden_channels", "upsample",
                     "embedding_dim", "episodes_per_iter"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.encoder not in ("toy", "file"):
            raise ConfigurationError(f"unknown encoder backend {self.encoder!r}")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SegPrediction:
    probabilities: Tensor  # H x W

    @property
    def binarized(self) -> np.ndarray:
        return self.probabilities.data >= 0.5


# -- encoder / decoder pieces -------------------------------------------------


def space_to_depth(x: Tensor, channels: int, height: int, width: int) -> Tensor:
    """(C, H*W) -> (4C, H/2 * W/2): each 2x2 patch becomes one column."""
    if height % 2 or width % 2:
        raise ConfigurationError(f"spatial size {height}x{width} is not divisible by 2")
    t = reshape(x, (channels, height // 2, 2, width // 2, 2))
    t = transpose(t, (2, 4, 0, 1, 3))
    return reshape(t, (4 * channels, (height // 2) * (width // 2)))


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation weights (n_out x n_in), align_corners=False convention."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        lo = min(int(math.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def upsample_bilinear(grid: Tensor, out_h: int, out_w: int) -> Tensor:
    h, w = grid.shape
    rows = Tensor(bilinear_matrix(h, out_h))
    cols = Tensor(bilinear_matrix(w, out_w).T)
    return matmul(matmul(rows, grid), cols)


@dataclass
class ToyEncoder:
    """Two stages of 2x2 space-to-depth, bias-free 1x1 mixing and ReLU."""

    w1: Parameter
    w2: Parameter

    @classmethod
    def init(cls, image_channels: int, hidden: int, channels: int, rng: np.random.Generator):
        w1 = rng.normal(0.0, np.sqrt(2.0 / (4 * image_channels)), size=(hidden, 4 * image_channels))
        w2 = rng.normal(0.0, np.sqrt(2.0 / (4 * hidden)), size=(channels, 4 * hidden))
        return cls(Parameter(w1, "encoder.w1"), Parameter(w2, "encoder.w2"))

    def __call__(self, image: np.ndarray) -> FeatureMap:
        c, h, w = image.shape
        if c * 4 != self.w1.shape[1]:
            raise ConfigurationError(f"encoder expects {self.w1.shape[1] // 4} image channels, got {c}")
        if h % 4 or w % 4:
            raise ConfigurationError(f"image size {h}x{w} is not divisible by 4")
        x = Tensor(image.reshape(c, h * w))
        x = relu(matmul(self.w1, space_to_depth(x, c, h, w)))
        x = relu(matmul(self.w2, space_to_depth(x, self.w1.shape[0], h // 2, w // 2)))
        return FeatureMap(x, h // 4, w // 4)

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.w2]


@dataclass
class DecoderHead:
    weight: Parameter  # 1 x C
    bias: Parameter  # 1 x 1

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator):
        w = rng.normal(0.0, 1.0 / np.sqrt(channels), size=(1, channels))
        return cls(Parameter(w, "head.weight"), Parameter(np.zeros((1, 1)), "head.bias"))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def decode(fq: FeatureMap, head: DecoderHead, target: tuple[int, int]) -> SegPrediction:
    out_h, out_w = target
    if out_h % fq.height or out_w % fq.width:
        raise ConfigurationError(
            f"target {out_h}x{out_w} is not an integer multiple of features {fq.height}x{fq.width}"
        )
    logits = add(matmul(head.weight, fq.matrix), head.bias)
    grid = reshape(logits, (fq.height, fq.width))
    return SegPrediction(sigmoid(upsample_bilinear(grid, out_h, out_w)))


def bce_loss(pred: SegPrediction, gt: np.ndarray) -> Tensor:
    gt = np.asarray(gt, dtype=np.float64)
    if pred.probabilities.shape != gt.shape:
        raise DimensionError(f"prediction {pred.probabilities.shape} vs mask {gt.shape}")
    return binary_cross_entropy(pred.probabilities, gt)


# -- model --------------------------------------------------------------------


class SegModel:
    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.encoder = (
            ToyEncoder.init(config.image_channels, config.hidden_channels, config.channels, rng)
            if config.encoder == "toy"
            else None
        )
        self.projection = (
            Projection.init(config.embedding_dim, config.embed_dim, rng) if config.use_embedding else None
        )
        self.blocks: list[CoAttentionParams] = init_blocks(
            config.channels, config.embed_dim, config.depth, rng, tied=config.tied
        )
        self.head = DecoderHead.init(config.channels, rng)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        if self.encoder is not None:
            params += self.encoder.parameters()
        if self.projection is not None:
            params += self.projection.parameters()
        seen = set()
        for block in self.blocks:
            if id(block) not in seen:
                seen.add(id(block))
                params += block.parameters()
        params += self.head.parameters()
        names = [p.name for p in params]
        assert len(names) == len(set(names)), "duplicate parameter names"
        return params

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise ConfigurationError(f"checkpoint lacks parameter {p.name!r}")
            if state[p.name].shape != p.shape:
                raise ConfigurationError(
                    f"parameter {p.name!r} has shape {state[p.name].shape}, expected {p.shape}"
                )
            p.data = np.array(state[p.name], dtype=np.float64)

    def encode(self, array: np.ndarray) -> FeatureMap:
        array = np.asarray(array, dtype=np.float64)
        if self.config.encoder == "file":
            if array.ndim != 3 or array.shape[0] != self.config.channels:
                raise ConfigurationError(
                    f"feature file shape {array.shape} does not match {self.config.channels} channels"
                )
            return FeatureMap.from_array(array)
        return self.encoder(array)

    def semantic_vector(self, embedding: np.ndarray | None) -> Tensor:
        if self.projection is None:
            return Tensor(np.zeros((self.config.embed_dim, 1)))
        return project_embedding(embedding, self.projection)

    def forward(
        self,
        supports: list[np.ndarray],
        query: np.ndarray,
        embedding: np.ndarray | None,
        target: tuple[int, int],
    ) -> SegPrediction:
        if not supports:
            raise ConfigurationError("episode has no support items")
        feats = [self.encode(s) for s in supports]
        vs = feats[0]
        if len(feats) > 1:
            vs = FeatureMap(mean_of([f.matrix for f in feats]), vs.height, vs.width)
        vq = self.encode(query)
        z = self.semantic_vector(embedding)
        fq, _ = stacked_coattention(vs, vq, z, self.blocks)
        return decode(fq, self.head, target)


# -- episodes on disk -----------------------------------------------------------


class EpisodeLoader:
    """Reads and caches episode arrays; shared read-only after warm-up."""

    def __init__(self, table: fio.EmbeddingTable | None):
        self.table = table
        self._arrays: dict[str, np.ndarray] = {}
        self._masks: dict[str, np.ndarray] = {}

    def array(self, path: str) -> np.ndarray:
        if path not in self._arrays:
            self._arrays[path] = fio.read_ften(path)
        return self._arrays[path]

    def mask(self, path: str) -> np.ndarray:
        if path not in self._masks:
            self._masks[path] = fio.load_mask(path)
        return self._masks[path]

    def embedding(self, label: str) -> np.ndarray:
        if self.table is None:
            raise fio.LookupFailure(f"no embedding table loaded for label {label!r}")
        return self.table.lookup(label)


def forward_episode(episode, model: SegModel, loader: EpisodeLoader) -> SegPrediction:
    """Run one episode; k-shot supports are averaged in feature space."""
    labels = {label for _, label in episode.support}
    if labels != {episode.class_label}:
        raise ConfigurationError(f"support labels {sorted(labels)} differ from {episode.class_label!r}")
    embedding = loader.embedding(episode.class_label) if model.config.use_embedding else None
    supports = [loader.array(path) for path, _ in episode.support]
    gt = loader.mask(episode.gt_mask)
    return model.forward(supports, loader.array(episode.query), embedding, gt.shape)


def episode_loss(episode, model: SegModel, loader: EpisodeLoader) -> Tensor:
    return bce_loss(forward_episode(episode, model, loader), loader.mask(episode.gt_mask))


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    state: dict[str, np.ndarray]
    losses: list[float] = field(default_factory=list)


def train(
    model: SegModel,
    episodes: Iterator,
    loader: EpisodeLoader,
    config: ModelConfig | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Gradient descent with momentum for exactly ``config.iterations`` steps.

    Each step averages the loss of ``episodes_per_iter`` episodes drawn from
    ``episodes``. No validation-based model selection is performed.
    """
    cfg = config or model.config
    params = model.parameters()
    velocity = {p.name: np.zeros_like(p.data) for p in params}
    losses: list[float] = []
    for it in range(cfg.iterations):
        zero_grad(params)
        batch = [next(episodes) for _ in range(cfg.episodes_per_iter)]
        loss = scale(_sum([episode_loss(ep, model, loader) for ep in batch]), 1.0 / len(batch))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at iteration {it}")
        backward(loss)
        for p in params:
            if p.grad is None:
                continue
            v = velocity[p.name]
            v *= cfg.momentum
            v -= cfg.learning_rate * p.grad
            p.data = p.data + v
        losses.append(value)
        if callback is not None:
            callback(it, value)
    zero_grad(params)
    return TrainResult(model.state(), losses)


def _sum(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return acc


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(directory, model: SegModel, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, value in model.state().items():
        fname = f"{name}.ften"
        fio.write_ften(directory / fname, value)
        files[name] = fname
    manifest = {"config": model.config.to_dict(), "parameters": files}
    if extra:
        manifest.update(extra)
    fio.write_json(directory / "checkpoint.json", manifest)


def load_checkpoint(directory) -> tuple[SegModel, dict]:
    directory = Path(directory)
    with open(directory / "checkpoint.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    model = SegModel(ModelConfig.from_dict(manifest["config"]))
    state = {name: fio.read_ften(directory / fname) for name, fname in manifest["parameters"].items()}
    model.load_state(state)
    return model, manifest
