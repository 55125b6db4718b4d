"""Context mixer: joint self-attention over image and class tokens.

The M image tokens and the single class token are concatenated into one
(M+1)-token sequence, run through single-head scaled dot-product
self-attention and a per-token MLP, then split back apart in the same order
(image tokens first, class token last). Attention lets every token condition
on every other, so the class description and the image content exchange
information before any keypoint matching happens.

Residual connections around the attention and around the MLP are on by
default and controlled by one flag; with residuals on, an untrained block
stays close to its input instead of scrambling it.
"""

from typing import Mapping

import numpy as np

from .tensor import (
    Tensor, add, concat_rows, matmul, relu, scale, softmax_rows, take_rows,
)

ATTN_KEYS = ("wq", "wk", "wv", "wo")
MLP_KEYS = ("w1", "b1", "w2", "b2")


def init_attention_params(dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    s = 1.0 / np.sqrt(dim)
    return {k: rng.standard_normal((dim, dim)) * s for k in ATTN_KEYS}


def init_mlp_params(dim: int, hidden: int, rng: np.random.Generator, *,
                    zero_last: bool = False) -> dict[str, np.ndarray]:
    out = {
        "w1": rng.standard_normal((dim, hidden)) / np.sqrt(dim),
        "b1": np.zeros((1, hidden)),
        "w2": np.zeros((hidden, dim)) if zero_last
              else rng.standard_normal((hidden, dim)) / np.sqrt(hidden),
        "b2": np.zeros((1, dim)),
    }
    return out


def init_mixer_params(dim: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {f"attn.{k}": v for k, v in init_attention_params(dim, rng).items()}
    params.update({f"mlp.{k}": v for k, v in init_mlp_params(dim, hidden, rng).items()})
    return params


def scoped(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """Sub-view of a flat parameter dict: keys under `prefix.` with it stripped."""
    pre = prefix + "."
    out = {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}
    if not out:
        raise KeyError(f"no parameters under prefix {prefix!r}")
    return out


def mlp_forward(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Two-layer ReLU MLP applied row-wise (token-wise)."""
    h = relu(add(matmul(x, params["w1"]), params["b1"]))
    return add(matmul(h, params["w2"]), params["b2"])


def self_attention(tokens: Tensor, params: Mapping[str, Tensor], *,
                   residual: bool = True, return_weights: bool = False):
    """Single-head scaled dot-product self-attention over T tokens.

    Scale is 1/sqrt(C). With `residual` the input is added back to the
    attended output.
    """
    dim = tokens.shape[1]
    q = matmul(tokens, params["wq"])
    k = matmul(tokens, params["wk"])
    v = matmul(tokens, params["wv"])
    weights = softmax_rows(scale(matmul(q, k.T), 1.0 / np.sqrt(dim)))
    out = matmul(matmul(weights, v), params["wo"])
    if residual:
        out = add(out, tokens)
    if return_weights:
        return out, weights
    return out


def mix_context(image_tokens: Tensor, class_token: Tensor,
                params: Mapping[str, Tensor], *,
                residual: bool = True) -> tuple[Tensor, Tensor]:
    """Mix M image tokens with the class token; returns both refined.

    Concatenation order is image tokens then class token, and the split
    mirrors it, so row i in equals row i out.
    """
    if image_tokens.shape[1] != class_token.shape[1]:
        raise ValueError(
            f"width mismatch: image {image_tokens.shape} vs class {class_token.shape}")
    m = image_tokens.shape[0]
    tokens = concat_rows([image_tokens, class_token])
    attended = self_attention(tokens, scoped(params, "attn"), residual=residual)
    mixed = mlp_forward(attended, scoped(params, "mlp"))
    if residual:
        mixed = add(mixed, attended)
    return take_rows(mixed, 0, m), take_rows(mixed, m, m + 1)
