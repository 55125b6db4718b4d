"""Training loop, per-step history rows, and checkpoint save/load.

Everything downstream of the config seed is deterministic: parameter init
draws from one generator stream, batch sampling from a second, and each step
runs one forward/backward over the batch followed by a single exclusive Adam
update. Prompt/image encodings and heatmap targets are frozen functions of
the data, so they are computed once up front.

A checkpoint is a binary container holding the config text, every parameter
array (``param.<name>``) and the full Adam state (``adam.m.<name>``,
``adam.v.<name>``, ``adam.step``), which makes resumed state and the active
architecture auditable by name.
"""

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ExperimentConfig, config_from_text
from .container import load_container, save_container
from .dataset import SceneSample
from .losses import gaussian_target, heatmap_loss, offset_loss, total_loss
from .model import forward, init_model_params, sample_bundle
from .optim import OptimState, adam_step, lr_schedule
from .tensor import NonFiniteError, add, gradients, parameters_from, scale

# distinct spawn keys so init and batch sampling never share a stream
_INIT_STREAM = 0
_BATCH_STREAM = 1


class TrainingDiverged(RuntimeError):
    """Raised when a loss or update stops being finite."""


@dataclass
class HistoryRow:
    step: int
    heatmap_loss: float
    offset_loss: float
    total: float
    lr: float


@dataclass
class TrainingResult:
    params: dict[str, np.ndarray]
    state: OptimState
    history: list[HistoryRow]
    initial_loss: float | None
    stopped_at: int                  # number of update steps actually taken


def history_csv_lines(history: list[HistoryRow]) -> list[str]:
    lines = ["step,heatmap_loss,offset_loss,total,lr"]
    for row in history:
        lines.append(f"{row.step},{row.heatmap_loss!r},{row.offset_loss!r},"
                     f"{row.total!r},{row.lr!r}")
    return lines


def write_history_csv(path, history: list[HistoryRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(history_csv_lines(history)) + "\n")


def train(cfg: ExperimentConfig, samples: list[SceneSample],
          *, params: dict[str, np.ndarray] | None = None) -> TrainingResult:
    """Run up to cfg.steps Adam updates on `samples` (uniform batches).

    Early stop: once at least cfg.min_steps updates ran, stop when the batch
    total loss falls to cfg.stop_loss_frac times the first batch's loss
    (disabled at 0.0). Pass `params` to continue from existing arrays.
    """
    cfg.validate()
    if not samples and cfg.steps > 0:
        raise ValueError("cannot train on an empty sample list")
    if params is None:
        params = init_model_params(
            cfg, np.random.default_rng([cfg.seed, _INIT_STREAM]))
    else:
        params = dict(params)
    state = OptimState()
    history: list[HistoryRow] = []
    if cfg.steps == 0:
        return TrainingResult(params=params, state=state, history=history,
                              initial_loss=None, stopped_at=0)

    batch_rng = np.random.default_rng([cfg.seed, _BATCH_STREAM])
    bundles = [sample_bundle(s, cfg) for s in samples]
    grid = cfg.grid
    targets = [gaussian_target(s.keypoints, grid, grid, cfg.sigma)
               for s in samples]

    initial_loss = None
    steps_done = 0
    for step in range(cfg.steps):
        idx = batch_rng.integers(0, len(samples), size=cfg.batch_size)
        tensors = parameters_from(params)
        try:
            heat_terms = []
            off_terms = []
            for i in idx:
                s = samples[i]
                fwd = forward(tensors, s.image, bundles[i], s.skeleton, cfg)
                heat_terms.append(
                    heatmap_loss(fwd.proposal_logits, targets[i],
                                 norm=cfg.heatmap_norm))
                off_terms.append(offset_loss(fwd.layer_coords, s.keypoints))
            heat = scale(_sum(heat_terms), 1.0 / len(idx))
            off = scale(_sum(off_terms), 1.0 / len(idx))
            breakdown = total_loss(heat, off, heatmap_weight=cfg.heatmap_weight)
            grads = gradients(breakdown.total, tensors)
            lr = lr_schedule(step, cfg.steps, cfg.base_lr)
            params = adam_step(params, grads, state, lr)
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"non-finite value at step {step}: {exc}") from exc
        total = breakdown.total.item()
        history.append(HistoryRow(step=step,
                                  heatmap_loss=breakdown.heatmap.item(),
                                  offset_loss=breakdown.offset.item(),
                                  total=total, lr=lr))
        steps_done = step + 1
        if initial_loss is None:
            initial_loss = total
        if (cfg.stop_loss_frac > 0.0 and steps_done >= cfg.min_steps
                and total <= cfg.stop_loss_frac * initial_loss):
            break
    return TrainingResult(params=params, state=state, history=history,
                          initial_loss=initial_loss, stopped_at=steps_done)


def _sum(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return acc


def save_checkpoint(path, cfg: ExperimentConfig,
                    params: dict[str, np.ndarray],
                    state: OptimState | None = None) -> None:
    entries: dict[str, np.ndarray | str] = {"cfg.text": cfg.to_text()}
    for name, arr in params.items():
        entries[f"param.{name}"] = arr
    state = state or OptimState()
    entries["adam.step"] = np.float64(state.step)
    for name, arr in state.m.items():
        entries[f"adam.m.{name}"] = arr
    for name, arr in state.v.items():
        entries[f"adam.v.{name}"] = arr
    save_container(path, entries)


def load_checkpoint(path) -> tuple[ExperimentConfig, dict[str, np.ndarray], OptimState]:
    entries = load_container(path)
    if "cfg.text" not in entries:
        raise ConfigError(f"{path}: checkpoint is missing its config text")
    cfg = config_from_text(entries["cfg.text"])
    params = {}
    state = OptimState()
    for name, value in entries.items():
        if name.startswith("param."):
            params[name[len("param."):]] = value
        elif name.startswith("adam.m."):
            state.m[name[len("adam.m."):]] = value
        elif name.startswith("adam.v."):
            state.v[name[len("adam.v."):]] = value
    step = entries.get("adam.step")
    if step is not None:
        state.step = int(np.asarray(step).reshape(()))
    return cfg, params, state
