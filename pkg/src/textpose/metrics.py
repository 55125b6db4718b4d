"""Keypoint-accuracy metrics (PCK) and the evaluation harness.

A predicted joint counts as correct at threshold tau when its Euclidean
distance to the ground truth is at most tau times the *longest* bbox side
(inclusive boundary). Evaluation walks samples in index order and averages
with a fixed summation order, so the same checkpoint, dataset and config
always produce byte-identical CSV rows.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .dataset import SceneSample
from .model import predict_with_losses

PCK_THRESHOLDS = (0.05, 0.1, 0.15, 0.2, 0.25)


def pck(pred: np.ndarray, gt: np.ndarray, bbox: np.ndarray, tau: float) -> float:
    """Fraction of joints within tau * max(bbox w, bbox h) of ground truth."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if tau <= 0:
        raise ValueError(f"threshold must be positive, got {tau}")
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ValueError(f"joint arrays must share shape (N, 2), "
                         f"got {pred.shape} vs {gt.shape}")
    w, h = float(bbox[2]), float(bbox[3])
    limit = tau * max(w, h)
    dist = np.sqrt(((pred - gt) ** 2).sum(axis=1))
    return float(np.count_nonzero(dist <= limit)) / pred.shape[0]


@dataclass
class MetricsRow:
    """One evaluation result: a (config, split) pair."""

    config_id: str
    split_id: str
    thresholds: tuple[float, ...]
    pck_values: tuple[float, ...]       # mean PCK per threshold, same order
    mean_pck: float | None              # None when thresholds is empty
    heatmap_loss: float
    offset_loss: float
    total_loss: float

    def __post_init__(self):
        if len(self.pck_values) != len(self.thresholds):
            raise ValueError("one PCK value per threshold required")
        for v in self.pck_values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"PCK value out of [0,1]: {v}")
        for label in (self.config_id, self.split_id):
            if "," in label or "\n" in label:
                raise ValueError(f"id not CSV-safe: {label!r}")

    def pck_at(self, tau: float) -> float:
        return self.pck_values[self.thresholds.index(tau)]


def evaluate(arrays: dict[str, np.ndarray], samples: list[SceneSample],
             cfg: ExperimentConfig, *,
             thresholds: tuple[float, ...] = PCK_THRESHOLDS,
             config_id: str | None = None,
             split_id: str = "all") -> MetricsRow:
    """Mean PCK per threshold plus mean losses over `samples` (fixed order)."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    n = len(samples)
    pck_sums = [0.0] * len(thresholds)
    heat_sum = off_sum = total_sum = 0.0
    for sample in samples:
        prediction, losses = predict_with_losses(arrays, sample, cfg)
        for j, tau in enumerate(thresholds):
            pck_sums[j] += pck(prediction.final_coords, sample.keypoints,
                               sample.bbox, tau)
        heat_sum += losses.heatmap.item()
        off_sum += losses.offset.item()
        total_sum += losses.total.item()
    values = tuple(s / n for s in pck_sums)
    mean = sum(values) / len(values) if values else None
    return MetricsRow(config_id=config_id or cfg.config_id, split_id=split_id,
                      thresholds=tuple(thresholds), pck_values=values,
                      mean_pck=mean, heatmap_loss=heat_sum / n,
                      offset_loss=off_sum / n, total_loss=total_sum / n)


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def metrics_header(thresholds: tuple[float, ...]) -> list[str]:
    return (["config_id", "split_id"]
            + [f"pck@{repr(float(t))}" for t in thresholds]
            + ["mean_pck", "heatmap_loss", "offset_loss", "total_loss"])


def metrics_csv_lines(rows: list[MetricsRow]) -> list[str]:
    """Header plus one line per row; all rows must share a threshold list."""
    if not rows:
        raise ValueError("no metrics rows to format")
    thresholds = rows[0].thresholds
    for row in rows:
        if row.thresholds != thresholds:
            raise ValueError("metrics rows mix different threshold lists")
    lines = [",".join(metrics_header(thresholds))]
    for row in rows:
        cells = ([row.config_id, row.split_id]
                 + [_fmt(v) for v in row.pck_values]
                 + [_fmt(row.mean_pck), _fmt(row.heatmap_loss),
                    _fmt(row.offset_loss), _fmt(row.total_loss)])
        lines.append(",".join(cells))
    return lines


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(metrics_csv_lines(rows)) + "\n")


def read_metrics_csv(path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
