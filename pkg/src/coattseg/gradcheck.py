"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ModelConfig, SegModel, bce_loss
from .tensor import Parameter, Tensor, backward, zero_grad

STEP = 1e-5
# below this magnitude the error is measured absolutely (|a - n| <= 1e-4 * FLOOR)
FLOOR = 1e-5


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_parameter: str
    n_checked: int


def relative_error(analytic: float, numeric: float, floor: float = FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    rng: np.random.Generator,
    max_entries: int | None = 16,
    step: float = STEP,
) -> GradCheckResult:
    """Compare ``backward`` against central differences of ``loss_fn``.

    At most ``max_entries`` randomly chosen entries per parameter are probed.
    """
    zero_grad(params)
    backward(loss_fn())
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}
    zero_grad(params)
    worst, worst_name, n = 0.0, "", 0
    for p in params:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            err = relative_error(float(analytic[p.name].reshape(-1)[i]), numeric)
            n += 1
            if err > worst:
                worst, worst_name = err, f"{p.name}[{i}]"
    return GradCheckResult(worst, worst_name, n)


def model_gradcheck(
    seed: int,
    channels: int = 8,
    locations: int = 16,
    embed_dim: int = 6,
    depth: int = 2,
    embedding_dim: int = 10,
    max_entries: int | None = 16,
) -> GradCheckResult:
    """Gradient check of the full episodic model on random inputs.

    The toy encoder divides image sides by 4, so ``locations`` must be a
    perfect square; the image side is ``4 * sqrt(locations)``.
    """
    side = math.isqrt(locations)
    if side * side != locations:
        raise ValueError(f"locations must be a perfect square, got {locations}")
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        channels=channels,
        embed_dim=embed_dim,
        depth=depth,
        hidden_channels=channels,
        embedding_dim=embedding_dim,
        seed=seed,
    )
    model = SegModel(cfg, rng)
    # bias terms start at zero; perturb them so their gradients are generic
    for p in model.parameters():
        p.data = p.data + rng.normal(0.0, 0.1, size=p.shape)
    size = 4 * side
    support = rng.normal(0.5, 0.5, size=(cfg.image_channels, size, size))
    query = rng.normal(0.5, 0.5, size=(cfg.image_channels, size, size))
    embedding = rng.normal(0.0, 1.0, size=embedding_dim)
    gt = rng.random((size, size)) < 0.3

    def loss_fn() -> Tensor:
        return bce_loss(model.forward([support], query, embedding, gt.shape), gt)

    return check_gradients(loss_fn, model.parameters(), rng, max_entries)
