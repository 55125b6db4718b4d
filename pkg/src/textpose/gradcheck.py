"""Finite-difference verification of reverse-mode gradients.

A check takes a closure mapping named parameter arrays to a scalar loss
tensor, evaluates the analytic gradient once via the reverse sweep, then
perturbs every parameter component by +/- step and compares central
differences against the analytic values. The comparison metric is

    rel_err = |analytic - numeric| / max(1, |analytic|, |numeric|)

reported as the max over all components, so tiny gradients are judged on an
absolute scale and large ones on a relative scale.

The closure is evaluated twice on identical inputs before any perturbation;
if the two losses are not bitwise equal the function under test is
nondeterministic and the check refuses to proceed.
"""

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, gradients

DEFAULT_STEP = 1e-4
DEFAULT_TOL = 1e-5

LossFn = Callable[[Mapping[str, Tensor]], Tensor]


class DeterminismError(RuntimeError):
    """Two evaluations of the same closure on identical inputs disagreed."""


@dataclass
class GradReport:
    """Outcome of one finite-difference check."""

    max_rel_err: float
    worst_param: str
    worst_index: tuple[int, ...]
    n_components: int
    tol: float
    step: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self) -> str:
        verdict = "OK" if self.ok else "FAIL"
        return (f"gradcheck {verdict}: max_rel_err={self.max_rel_err:.3e} "
                f"(tol={self.tol:.1e}) at {self.worst_param}{list(self.worst_index)} "
                f"over {self.n_components} components")


def _eval(fn: LossFn, arrays: Mapping[str, np.ndarray]) -> Tensor:
    params = {k: Tensor(v, name=k) for k, v in arrays.items()}
    out = fn(params)
    if out.size != 1:
        raise ValueError(f"gradcheck closure must return a scalar, got {out.shape}")
    return out


def _eval_with_params(fn: LossFn, arrays: Mapping[str, np.ndarray]):
    params = {k: Tensor(v, name=k) for k, v in arrays.items()}
    out = fn(params)
    if out.size != 1:
        raise ValueError(f"gradcheck closure must return a scalar, got {out.shape}")
    return out, params


def finite_difference(fn: LossFn, arrays: Mapping[str, np.ndarray], name: str,
                      index: tuple[int, ...], step: float = DEFAULT_STEP) -> float:
    """Central difference of the loss along one parameter component."""
    bumped = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    bumped[name][index] += step
    hi = _eval(fn, bumped).item()
    bumped[name][index] -= 2.0 * step
    lo = _eval(fn, bumped).item()
    return (hi - lo) / (2.0 * step)


def grad_check(fn: LossFn, arrays: Mapping[str, np.ndarray], *,
               step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL) -> GradReport:
    """Compare reverse-mode gradients of `fn` against central differences.

    Every component of every array in `arrays` is perturbed, so cost is two
    closure evaluations per scalar parameter; size the inputs accordingly.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    loss_a, params = _eval_with_params(fn, arrays)
    loss_b = _eval(fn, arrays)
    ba, bb = loss_a.item(), loss_b.item()
    if ba != bb or np.float64(ba).tobytes() != np.float64(bb).tobytes():
        raise DeterminismError(
            f"closure returned {ba!r} then {bb!r} on identical inputs")

    analytic = gradients(loss_a, params)

    max_rel = -1.0
    worst_param = ""
    worst_index: tuple[int, ...] = ()
    per_param: dict[str, float] = {}
    total = 0
    for name, arr in arrays.items():
        param_worst = 0.0
        it = np.ndindex(arr.shape) if arr.shape else iter([()])
        for index in it:
            total += 1
            numeric = finite_difference(fn, arrays, name, index, step=step)
            a = float(analytic[name][index]) if arr.shape else float(analytic[name])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            param_worst = max(param_worst, rel)
            if rel > max_rel:
                max_rel = rel
                worst_param = name
                worst_index = index
        per_param[name] = param_worst

    return GradReport(max_rel_err=max_rel, worst_param=worst_param,
                      worst_index=worst_index, n_components=total,
                      tol=tol, step=step, per_param=per_param)
