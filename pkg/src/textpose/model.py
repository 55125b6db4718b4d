"""Full model assembly: encoders in, losses and keypoints out.

Parameters live in one flat name->array dict so checkpoints, Adam state and
gradient maps all share the same keys. Which keys exist depends on the
ablation flags (the bypass owns different parameters than the refiner it
replaces), which also makes the active architecture auditable from a
checkpoint's parameter names alone.

The forward pass returns graph handles (Tensors) for everything the losses
read, plus enough pieces to decode final keypoints in plain numpy. Decoding
consumes the proposal logits plus the decoder's additive heatmap refinement
and offset maps; with those heads at their zero initialization the decode
degenerates to peak-picking on the proposal maps at cell centers.
"""

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .dataset import SceneSample
from .encoders import EmbeddingBundle, PromptSet, build_bundle
from .losses import LossBreakdown, gaussian_target, heatmap_loss, offset_loss, total_loss
from .mixer import init_mixer_params, mix_context, scoped
from .pipeline import (
    FeatureMap, backbone_features, decode_heads, decode_keypoints,
    encoder_refine, graph_decoder, init_backbone_params, init_decoder_params,
    init_encoder_params, proposal_heatmaps,
)
from .refiner import init_refiner_params, refine_joints
from .tensor import Tensor, add, parameters_from


@dataclass
class KeypointPrediction:
    """Decoded output for one sample."""

    heatmaps: np.ndarray              # (N, h, w) supervised proposal logits
    layer_coords: list[np.ndarray]    # L x (N, 2) per-layer location estimates
    final_coords: np.ndarray          # (N, 2) normalized, in [0, 1]^2
    mean_gates: tuple[float, float] | None  # mean (alpha, beta), when gated


@dataclass
class ForwardPass:
    """Graph handles from one differentiable forward evaluation."""

    feature_map: FeatureMap
    refined_joints: Tensor
    proposal_logits: Tensor           # (N, h*w)
    layer_coords: list[Tensor]
    nodes: Tensor
    heat_refine: Tensor               # (N, h*w)
    off_x: Tensor
    off_y: Tensor
    alpha: Tensor | None
    beta: Tensor | None


def init_model_params(cfg: ExperimentConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    params.update(init_backbone_params(cfg.patch, cfg.dim, rng))
    params.update(init_encoder_params(cfg.dim, cfg.hidden, cfg.encoder_layers, rng))
    if cfg.use_mixer:
        for k, v in init_mixer_params(cfg.dim, cfg.hidden, rng).items():
            params[f"mixer.{k}"] = v
    for k, v in init_refiner_params(cfg.dim, cfg.hidden, rng,
                                    enabled=cfg.use_refiner,
                                    learnable_gates=cfg.use_learnable_gates).items():
        params[f"refiner.{k}"] = v
    params.update(init_decoder_params(cfg.dim, cfg.hidden, cfg.decoder_layers, rng))
    return params


def forward(params: dict[str, Tensor], image: np.ndarray, bundle: EmbeddingBundle,
            skeleton, cfg: ExperimentConfig) -> ForwardPass:
    feat = backbone_features(image, params, cfg.patch)
    feat = encoder_refine(feat, params, cfg.encoder_layers)

    if cfg.use_mixer:
        image_ctx, class_ctx = mix_context(bundle.image, bundle.category,
                                           scoped(params, "mixer"),
                                           residual=cfg.mixer_residual)
    else:
        image_ctx, class_ctx = bundle.image, bundle.category

    alpha = beta = None
    if cfg.use_refiner:
        trace = refine_joints(bundle.joints, image_ctx, class_ctx,
                              scoped(params, "refiner"),
                              learnable_gates=cfg.use_learnable_gates,
                              outer_residual=cfg.outer_residual,
                              return_trace=True)
        joints = trace.output
        alpha, beta = trace.alpha, trace.beta
    else:
        joints = refine_joints(bundle.joints, image_ctx, class_ctx,
                               scoped(params, "refiner"), enabled=False)

    logits = proposal_heatmaps(feat, joints)
    layer_coords, nodes = graph_decoder(joints, feat, skeleton, params,
                                        cfg.decoder_layers)
    heat_refine, off_x, off_y = decode_heads(nodes, feat, params)
    return ForwardPass(feature_map=feat, refined_joints=joints,
                       proposal_logits=logits, layer_coords=layer_coords,
                       nodes=nodes, heat_refine=heat_refine,
                       off_x=off_x, off_y=off_y, alpha=alpha, beta=beta)


def compute_losses(fwd: ForwardPass, keypoints: np.ndarray,
                   cfg: ExperimentConfig) -> LossBreakdown:
    target = gaussian_target(keypoints, fwd.feature_map.h, fwd.feature_map.w,
                             cfg.sigma)
    heat = heatmap_loss(fwd.proposal_logits, target, norm=cfg.heatmap_norm)
    off = offset_loss(fwd.layer_coords, keypoints)
    return total_loss(heat, off, heatmap_weight=cfg.heatmap_weight)


def sample_bundle(sample: SceneSample, cfg: ExperimentConfig,
                  prompts: PromptSet | None = None) -> EmbeddingBundle:
    """Encode a sample's prompts (optionally overridden, e.g. by the noise
    suite) and image."""
    return build_bundle(prompts or sample.prompts, sample.image,
                        cfg.dim, cfg.image_tokens)


def decode_forward(fwd: ForwardPass) -> KeypointPrediction:
    """Peak-pick final coordinates from one forward pass."""
    h, w = fwd.feature_map.h, fwd.feature_map.w
    n = fwd.proposal_logits.shape[0]
    maps = add(fwd.proposal_logits, fwd.heat_refine).data.reshape(n, h, w)
    offsets = np.stack([fwd.off_x.data.reshape(n, h, w),
                        fwd.off_y.data.reshape(n, h, w)], axis=-1)
    final = decode_keypoints(maps, offsets)
    gates = None
    if fwd.alpha is not None:
        gates = (float(fwd.alpha.data.mean()), float(fwd.beta.data.mean()))
    return KeypointPrediction(
        heatmaps=fwd.proposal_logits.data.reshape(n, h, w),
        layer_coords=[p.data.copy() for p in fwd.layer_coords],
        final_coords=final, mean_gates=gates)


def predict_with_losses(arrays: dict[str, np.ndarray], sample: SceneSample,
                        cfg: ExperimentConfig, *,
                        prompts: PromptSet | None = None,
                        ) -> tuple[KeypointPrediction, LossBreakdown]:
    """One forward evaluation yielding both decoded keypoints and losses."""
    bundle = sample_bundle(sample, cfg, prompts)
    fwd = forward(parameters_from(arrays), sample.image, bundle,
                  sample.skeleton, cfg)
    return decode_forward(fwd), compute_losses(fwd, sample.keypoints, cfg)


def predict(arrays: dict[str, np.ndarray], sample: SceneSample,
            cfg: ExperimentConfig, *,
            prompts: PromptSet | None = None) -> KeypointPrediction:
    """Decode final keypoints for one sample (inference path)."""
    prediction, _ = predict_with_losses(arrays, sample, cfg, prompts=prompts)
    return prediction
