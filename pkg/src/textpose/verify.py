"""Named finite-difference gradient checks for every differentiable block.

Each entry builds a small fixed-seed problem and compares reverse-mode
gradients against central finite differences (see gradcheck). Sizes are kept
tiny so the whole registry runs in seconds; seeds are pinned to inputs that
keep pre-activations away from ReLU/absolute-value kinks at the probe step.

The decoder and full-model checks overwrite the zero-initialized decode
heads with random values: at zero those heads produce identically zero
output and a vacuous 0 == 0 comparison, while random heads exercise their
actual gradient paths.
"""

from typing import Callable, Mapping

import numpy as np

from .config import ExperimentConfig
from .dataset import synth_dataset
from .encoders import build_bundle
from .gradcheck import GradReport, grad_check
from .losses import gaussian_target, heatmap_loss, offset_loss
from .mixer import (init_attention_params, init_mixer_params, mix_context,
                    self_attention)
from .model import compute_losses, forward, init_model_params
from .pipeline import (FeatureMap, Skeleton, backbone_features, decode_heads,
                       encoder_refine, graph_decoder, init_backbone_params,
                       init_decoder_params, init_encoder_params,
                       proposal_heatmaps)
from .refiner import cross_attention, gate_scores, init_gate_params, \
    init_refiner_params, refine_joints
from .tensor import Tensor, add, mean_all, mul

_DIM = 8
_HIDDEN = 16


def _quad(t: Tensor) -> Tensor:
    return mean_all(mul(t, t))


def _unit_rows(rng, n, dim) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _check_self_attention() -> GradReport:
    rng = np.random.default_rng(11)
    tokens = Tensor(rng.standard_normal((5, _DIM)))
    arrays = init_attention_params(_DIM, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return _quad(self_attention(tokens, p))

    return grad_check(fn, arrays)


def _check_mixer() -> GradReport:
    rng = np.random.default_rng(12)
    image = Tensor(_unit_rows(rng, 4, _DIM))
    cls = Tensor(_unit_rows(rng, 1, _DIM))
    arrays = init_mixer_params(_DIM, _HIDDEN, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        img_ctx, cls_ctx = mix_context(image, cls, p)
        return add(_quad(img_ctx), _quad(cls_ctx))

    return grad_check(fn, arrays)


def _check_cross_attention() -> GradReport:
    rng = np.random.default_rng(13)
    queries = Tensor(rng.standard_normal((4, _DIM)))
    keys = Tensor(rng.standard_normal((6, _DIM)))
    arrays = init_attention_params(_DIM, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return _quad(cross_attention(queries, keys, p))

    return grad_check(fn, arrays)


def _check_gates() -> GradReport:
    rng = np.random.default_rng(14)
    features = Tensor(rng.standard_normal((5, _DIM)))
    arrays = init_gate_params(_DIM, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return _quad(gate_scores(features, p))

    return grad_check(fn, arrays)


def _check_refiner() -> GradReport:
    rng = np.random.default_rng(15)
    joints = Tensor(_unit_rows(rng, 3, _DIM))
    image = Tensor(_unit_rows(rng, 4, _DIM))
    cls = Tensor(_unit_rows(rng, 1, _DIM))
    arrays = init_refiner_params(_DIM, _HIDDEN, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return _quad(refine_joints(joints, image, cls, p))

    return grad_check(fn, arrays)


def _check_refiner_bypass() -> GradReport:
    rng = np.random.default_rng(16)
    joints = Tensor(_unit_rows(rng, 3, _DIM))
    image = Tensor(_unit_rows(rng, 4, _DIM))
    cls = Tensor(_unit_rows(rng, 1, _DIM))
    arrays = init_refiner_params(_DIM, _HIDDEN, rng, enabled=False)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return _quad(refine_joints(joints, image, cls, p, enabled=False))

    return grad_check(fn, arrays)


def _check_backbone() -> GradReport:
    rng = np.random.default_rng(17)
    image = rng.random((12, 12))
    arrays = init_backbone_params(4, _DIM, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return _quad(backbone_features(image, p, 4).tokens)

    return grad_check(fn, arrays)


def _check_encoder() -> GradReport:
    rng = np.random.default_rng(18)
    feat = FeatureMap(Tensor(rng.standard_normal((9, _DIM))), 3, 3)
    arrays = init_encoder_params(_DIM, _HIDDEN, 1, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return _quad(encoder_refine(feat, p, 1).tokens)

    return grad_check(fn, arrays)


def _check_decoder() -> GradReport:
    rng = np.random.default_rng(19)
    joints = Tensor(rng.standard_normal((3, _DIM)))
    feat = FeatureMap(Tensor(rng.standard_normal((9, _DIM))), 3, 3)
    skel = Skeleton.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    arrays = init_decoder_params(_DIM, _HIDDEN, 1, rng)
    _randomize_heads(arrays, rng)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        locs, nodes = graph_decoder(joints, feat, skel, p, 1)
        heat, off_x, off_y = decode_heads(nodes, feat, p)
        loss = add(_quad(nodes), _quad(heat))
        loss = add(loss, add(_quad(off_x), _quad(off_y)))
        for loc in locs:
            loss = add(loss, _quad(loc))
        return loss

    return grad_check(fn, arrays)


def _check_heatmap_loss() -> GradReport:
    rng = np.random.default_rng(20)
    target = rng.random((3, 16))
    arrays = {"logits": rng.standard_normal((3, 16))}

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return heatmap_loss(p["logits"], target)

    return grad_check(fn, arrays)


def _check_offset_loss() -> GradReport:
    rng = np.random.default_rng(21)
    target = rng.uniform(0.3, 0.7, size=(3, 2))
    # keep every |pred - target| component well away from the L1 kink
    arrays = {"layer0": target + rng.uniform(0.05, 0.2, size=(3, 2)),
              "layer1": target - rng.uniform(0.05, 0.2, size=(3, 2))}

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        return offset_loss([p["layer0"], p["layer1"]], target)

    return grad_check(fn, arrays)


def _tiny_config() -> ExperimentConfig:
    return ExperimentConfig(config_id="gradcheck", seed=5, dim=_DIM,
                            image_tokens=4, patch=4, image_size=16,
                            encoder_layers=1, decoder_layers=1)


def _randomize_heads(arrays: dict[str, np.ndarray],
                     rng: np.random.Generator) -> None:
    for name in arrays:
        if name.startswith("heads."):
            arrays[name] = rng.standard_normal(arrays[name].shape) * 0.1


def _check_full_model() -> GradReport:
    cfg = _tiny_config()
    rng = np.random.default_rng([cfg.seed, 99])
    sample = synth_dataset(7, n_categories=2, instances=1,
                           image_size=cfg.image_size)[0]
    arrays = init_model_params(cfg, rng)
    _randomize_heads(arrays, rng)
    bundle = build_bundle(sample.prompts, sample.image, cfg.dim,
                          cfg.image_tokens)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        fwd = forward(p, sample.image, bundle, sample.skeleton, cfg)
        return compute_losses(fwd, sample.keypoints, cfg).total

    return grad_check(fn, arrays)


def _check_losses_on_model() -> GradReport:
    """Heatmap + offset losses driven by real proposal/decoder outputs."""
    rng = np.random.default_rng(23)
    joints = Tensor(_unit_rows(rng, 3, _DIM))
    feat = FeatureMap(Tensor(rng.standard_normal((16, _DIM))), 4, 4)
    skel = Skeleton.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    arrays = init_decoder_params(_DIM, _HIDDEN, 1, rng)
    _randomize_heads(arrays, rng)
    coords = rng.uniform(0.2, 0.8, size=(3, 2))
    target = gaussian_target(coords, 4, 4, 1.5)

    def fn(p: Mapping[str, Tensor]) -> Tensor:
        locs, nodes = graph_decoder(joints, feat, skel, p, 1)
        heat = heatmap_loss(proposal_heatmaps(feat, nodes), target)
        return add(heat, offset_loss(locs, coords))

    return grad_check(fn, arrays)


CHECKS: dict[str, Callable[[], GradReport]] = {
    "self-attention": _check_self_attention,
    "mixer": _check_mixer,
    "cross-attention": _check_cross_attention,
    "gates": _check_gates,
    "refiner": _check_refiner,
    "refiner-bypass": _check_refiner_bypass,
    "backbone": _check_backbone,
    "encoder": _check_encoder,
    "decoder": _check_decoder,
    "heatmap-loss": _check_heatmap_loss,
    "offset-loss": _check_offset_loss,
    "losses-on-model": _check_losses_on_model,
    "full-model": _check_full_model,
}


def run_all(module: str | None = None) -> dict[str, GradReport]:
    """Run one named check or the whole registry."""
    if module is not None:
        if module not in CHECKS:
            known = ", ".join(sorted(CHECKS))
            raise KeyError(f"unknown gradcheck module {module!r}; one of: {known}")
        return {module: CHECKS[module]()}
    return {name: fn() for name, fn in CHECKS.items()}
