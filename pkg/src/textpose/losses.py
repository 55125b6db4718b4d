"""Training losses and Gaussian target rendering.

Heatmap loss: mean over joints of the per-pixel penalty between the
sigmoid-squashed proposal logits and a rendered Gaussian target. The penalty
is squared error by default; absolute error sits behind the `norm` switch
because the written form does not pin one down. Either way the double
normalization (1/N and 1/(h*w)) collapses to a single mean over all entries.

Offset loss: mean over decoder layers of the *summed* per-joint L1 distance
(both coordinates), matching the written double sum — note this scales with
the joint count N, unlike the heatmap term.

Total: lambda * heatmap + offset, lambda = 2 by default. The identity
`total == lambda * heatmap + offset` holds bit-for-bit because the total is
computed exactly that way, with no rearrangement.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, absolute, add, mean_all, mul, scale, sigmoid, sub, sum_all

DEFAULT_HEATMAP_WEIGHT = 2.0


@dataclass
class LossBreakdown:
    """Scalar loss terms of one forward pass (graph handles, not floats)."""

    heatmap: Tensor
    offset: Tensor
    total: Tensor
    heatmap_weight: float

    def values(self) -> tuple[float, float, float]:
        return self.heatmap.item(), self.offset.item(), self.total.item()


def gaussian_target(coords: np.ndarray, h: int, w: int, sigma: float) -> np.ndarray:
    """Per-joint Gaussian heatmap targets, (N, h, w).

    coords are normalized (x, y) pairs in [0, 1]^2; the Gaussian is centered
    at the exact continuous position coord * (w, h) measured against cell
    centers, with sigma in cell units. A coordinate on a cell center puts an
    exact 1.0 in that cell.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must be (N, 2), got {coords.shape}")
    if np.any((coords < 0.0) | (coords > 1.0)):
        raise ValueError("coords must lie in the unit square")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    cx = np.arange(w) + 0.5
    cy = np.arange(h) + 0.5
    gx = coords[:, 0:1] * w  # (N, 1)
    gy = coords[:, 1:2] * h
    dx2 = (cx[None, :] - gx) ** 2  # (N, w)
    dy2 = (cy[None, :] - gy) ** 2  # (N, h)
    d2 = dy2[:, :, None] + dx2[:, None, :]  # (N, h, w)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def heatmap_loss(logits: Tensor, target: np.ndarray, *, norm: str = "mse") -> Tensor:
    """(1/N) sum_i (1/(h*w)) sum_p penalty(sigmoid(logits_i[p]) - target_i[p]).

    `logits` may be (N, h*w) or (N, h, w); the target must match its total
    layout (row-major)."""
    target = np.asarray(target, dtype=np.float64)
    if target.size != logits.size or target.shape[0] != logits.shape[0]:
        raise ValueError(
            f"target shape {target.shape} incompatible with logits {logits.shape}")
    diff = sub(sigmoid(logits), Tensor(target.reshape(logits.shape)))
    if norm == "mse":
        return mean_all(mul(diff, diff))
    if norm == "l1":
        return mean_all(absolute(diff))
    raise ValueError(f"unknown heatmap norm {norm!r}")


def offset_loss(layer_coords: list[Tensor], target: np.ndarray) -> Tensor:
    """(1/L) sum_l sum_i |P^l_i - target_i|, summing joints and coordinates."""
    if not layer_coords:
        raise ValueError("need at least one layer of location estimates")
    target = np.asarray(target, dtype=np.float64)
    tgt = Tensor(target)
    acc = None
    for coords in layer_coords:
        if coords.shape != target.shape:
            raise ValueError(
                f"layer coords {coords.shape} vs target {target.shape}")
        term = sum_all(absolute(sub(coords, tgt)))
        acc = term if acc is None else add(acc, term)
    return scale(acc, 1.0 / len(layer_coords))


def total_loss(heatmap: Tensor, offset: Tensor, *,
               heatmap_weight: float = DEFAULT_HEATMAP_WEIGHT) -> LossBreakdown:
    total = add(scale(heatmap, heatmap_weight), offset)
    return LossBreakdown(heatmap=heatmap, offset=offset, total=total,
                         heatmap_weight=heatmap_weight)
