"""Adam with bias correction and the proportional two-drop step schedule."""

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimState:
    """Per-parameter Adam moment accumulators plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimState, lr: float) -> dict[str, np.ndarray]:
    """One Adam update; returns new parameter arrays, mutates `state`."""
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m[...] = BETA1 * m + (1.0 - BETA1) * g
        v[...] = BETA2 * v + (1.0 - BETA2) * g * g
        m_hat = m / (1.0 - BETA1 ** t)
        v_hat = v / (1.0 - BETA2 ** t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return out


def lr_schedule(step: int, total_steps: int, base_lr: float) -> float:
    """base lr until 80% of the run, then /10, then /100 from 90% on."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    frac = step / total_steps
    if frac < 0.8:
        return base_lr
    if frac < 0.9:
        return base_lr / 10.0
    return base_lr / 100.0
