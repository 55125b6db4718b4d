"""Joint-embedding refiner: dual cross-attention with gated fusion.

Each keypoint (joint) embedding queries two sources in parallel — the mixed
image tokens and the mixed class token — through separate single-head
cross-attentions, each followed by its own two-layer MLP. Two gating
networks (linear C->1 then sigmoid) score each joint's refined streams; the
gated streams plus the original joint embedding feed a fusion MLP whose
*final layer starts at zero*, and the block output adds the original joint
embedding back on. Consequences used throughout the tests:

  * at initialization the block is exactly the identity on the joint
    embeddings, so training starts from the unrefined baseline;
  * gates live strictly inside (0, 1) for every input;
  * the block is equivariant under permutations of the joint rows.

Ablations: `use_learnable_gates=False` replaces both gates with the constant
1; `enabled=False` (the refiner bypass) swaps the whole block for two
ReLU-activated linear projections of the pooled image tokens and the class
token, added onto the joint embeddings. The bypass owns separate parameters,
so which parameters exist depends on the flags used at init time.
"""

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .tensor import Tensor, add, matmul, mul, relu, scale, sigmoid, softmax_rows
from .mixer import init_attention_params, init_mlp_params, mlp_forward, scoped


def init_gate_params(dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    # zero bias puts every initial gate at sigmoid(~0) ~= 0.5
    return {"w": rng.standard_normal((dim, 1)) / np.sqrt(dim), "b": np.zeros((1, 1))}


def init_refiner_params(dim: int, hidden: int, rng: np.random.Generator, *,
                        enabled: bool = True,
                        learnable_gates: bool = True) -> dict[str, np.ndarray]:
    """Parameters for the refiner, or for its bypass when `enabled` is False."""
    if not enabled:
        params = {}
        for stream in ("img", "cls"):
            params[f"bypass.{stream}.w"] = rng.standard_normal((dim, dim)) / np.sqrt(dim)
            params[f"bypass.{stream}.b"] = np.zeros((1, dim))
        return params
    params = {}
    for stream in ("img", "cls"):
        for k, v in init_attention_params(dim, rng).items():
            params[f"{stream}.attn.{k}"] = v
        for k, v in init_mlp_params(dim, hidden, rng).items():
            params[f"{stream}.mlp.{k}"] = v
    if learnable_gates:
        for stream in ("img", "cls"):
            for k, v in init_gate_params(dim, rng).items():
                params[f"gate.{stream}.{k}"] = v
    for k, v in init_mlp_params(dim, hidden, rng, zero_last=True).items():
        params[f"fuse.{k}"] = v
    return params


def cross_attention(queries: Tensor, keys_values: Tensor,
                    params: Mapping[str, Tensor], *,
                    return_weights: bool = False):
    """N queries attend over M keys; single head, scale 1/sqrt(C), no residual."""
    if queries.shape[1] != keys_values.shape[1]:
        raise ValueError(
            f"width mismatch: queries {queries.shape} vs keys {keys_values.shape}")
    dim = queries.shape[1]
    q = matmul(queries, params["wq"])
    k = matmul(keys_values, params["wk"])
    v = matmul(keys_values, params["wv"])
    weights = softmax_rows(scale(matmul(q, k.T), 1.0 / np.sqrt(dim)))
    out = matmul(matmul(weights, v), params["wo"])
    if return_weights:
        return out, weights
    return out


def gate_scores(features: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Per-joint scalar gates: sigmoid(features @ w + b), strictly in (0,1)."""
    return sigmoid(add(matmul(features, params["w"]), params["b"]))


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows as a 1 x C tensor (differentiable pooling)."""
    n = x.shape[0]
    ones = Tensor(np.full((1, n), 1.0 / n))
    return matmul(ones, x)


@dataclass
class RefinerTrace:
    """Intermediate values of one refiner evaluation, for tests and analysis."""

    image_stream: Tensor
    class_stream: Tensor
    alpha: Tensor | None
    beta: Tensor | None
    fusion_input: Tensor
    output: Tensor


def refine_joints(joints: Tensor, image_tokens: Tensor, class_token: Tensor,
                  params: Mapping[str, Tensor], *,
                  enabled: bool = True,
                  learnable_gates: bool = True,
                  outer_residual: bool = True,
                  gate_override: tuple[float, float] | None = None,
                  return_trace: bool = False):
    """Refine joint embeddings against image and class context.

    `gate_override=(a, b)` clamps both gates to constants (test hook).
    `outer_residual=False` drops the final additive skip, leaving only the
    skip inside the fusion MLP input.
    """
    if not enabled:
        pooled = mean_rows(image_tokens)
        img_add = relu(add(matmul(pooled, params["bypass.img.w"]), params["bypass.img.b"]))
        cls_add = relu(add(matmul(class_token, params["bypass.cls.w"]), params["bypass.cls.b"]))
        return add(add(joints, img_add), cls_add)

    image_stream = mlp_forward(
        cross_attention(joints, image_tokens, scoped(params, "img.attn")),
        scoped(params, "img.mlp"))
    class_stream = mlp_forward(
        cross_attention(joints, class_token, scoped(params, "cls.attn")),
        scoped(params, "cls.mlp"))

    alpha = beta = None
    if gate_override is not None:
        a, b = gate_override
        gated = add(add(scale(image_stream, a), scale(class_stream, b)), joints)
    elif learnable_gates:
        alpha = gate_scores(image_stream, scoped(params, "gate.img"))
        beta = gate_scores(class_stream, scoped(params, "gate.cls"))
        gated = add(add(mul(alpha, image_stream), mul(beta, class_stream)), joints)
    else:
        gated = add(add(image_stream, class_stream), joints)

    fused = mlp_forward(gated, scoped(params, "fuse"))
    out = add(joints, fused) if outer_residual else fused
    if return_trace:
        return RefinerTrace(image_stream=image_stream, class_stream=class_stream,
                            alpha=alpha, beta=beta, fusion_input=gated, output=out)
    return out
