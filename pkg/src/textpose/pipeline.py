"""Image pipeline: toy backbone, token encoder, proposals, graph decoder.

The backbone cuts the image into non-overlapping patches, embeds each patch
linearly, then applies two ReLU conv-style mixing layers (3x3 neighborhoods
over the patch grid, expressed as nine shift matrices so the whole thing
stays inside the autodiff engine). The encoder adds fixed 2-D sinusoidal
position codes once, then runs E standard self-attention + MLP layers with
residuals.

Proposal maps are plain inner products between refined joint embeddings and
feature tokens — raw logits; the training loss applies the sigmoid.

The graph decoder starts from the refined joint embeddings as node features
and per layer (a) propagates over the skeleton with symmetric normalization,
(b) cross-attends onto the feature tokens, (c) applies an MLP — each with a
residual — and emits a per-layer location estimate through a sigmoid linear
head. After the last layer, three linear heads project node features back
over the token grid to produce an additive heatmap refinement and per-cell
x/y offsets; these heads start at zero so an untrained decoder leaves the
proposal maps untouched.

Keypoint decoding is deliberately plain numpy (argmax is not differentiable
anyway): flattened row-major argmax with first-hit tie-breaking, plus the
offset at the peak, normalized and clamped to the unit square.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .mixer import (
    init_attention_params, init_mlp_params, mlp_forward, scoped, self_attention,
)
from .refiner import cross_attention
from .tensor import Tensor, add, matmul, relu, sigmoid

CONV_LAYERS = 2  # fixed mixing depth of the toy backbone


class SkeletonError(ValueError):
    """Adjacency matrix violates the skeleton contract."""


@dataclass
class FeatureMap:
    """h*w feature tokens with their spatial extents (row-major order)."""

    tokens: Tensor
    h: int
    w: int

    def __post_init__(self):
        if self.tokens.shape[0] != self.h * self.w:
            raise ValueError(
                f"{self.tokens.shape[0]} tokens for a {self.h}x{self.w} grid")


@dataclass(frozen=True)
class Skeleton:
    """Symmetric 0/1 joint adjacency with an empty diagonal."""

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise SkeletonError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise SkeletonError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0.0):
            raise SkeletonError("self-loops are not allowed")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise SkeletonError("adjacency entries must be 0 or 1")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n_joints(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[tuple[int, int]]) -> "Skeleton":
        a = np.zeros((n, n))
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise SkeletonError(f"bad edge ({i}, {j}) for {n} joints")
            a[i, j] = a[j, i] = 1.0
        return cls(a)

    def edges(self) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(np.triu(self.adjacency))
        return list(zip(ii.tolist(), jj.tolist()))

    def normalized(self) -> np.ndarray:
        """Symmetric-normalized adjacency with self-loops:
        D^(-1/2) (A + I) D^(-1/2), D the degree matrix of A + I."""
        a = self.adjacency + np.eye(self.n_joints)
        dinv = 1.0 / np.sqrt(a.sum(axis=1))
        return dinv[:, None] * a * dinv[None, :]


def save_skeleton(path, skel: Skeleton) -> None:
    lines = [f"{i} {j}" for i, j in skel.edges()]
    text = f"{skel.n_joints}\n" + "\n".join(lines)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_skeleton(path) -> Skeleton:
    fields = Path(path).read_text(encoding="utf-8").split()
    if not fields:
        raise SkeletonError(f"{path}: empty skeleton file")
    n = int(fields[0])
    rest = [int(x) for x in fields[1:]]
    if len(rest) % 2:
        raise SkeletonError(f"{path}: odd number of edge indices")
    return Skeleton.from_edges(n, list(zip(rest[::2], rest[1::2])))


# --- positional encodings ---------------------------------------------------

def sinusoidal_grid(h: int, w: int, dim: int) -> np.ndarray:
    """Fixed 2-D sin/cos position codes, (h*w) x dim, row-major.

    Half the channels encode the row index, half the column index, each with
    the classic geometric frequency ladder.
    """
    if dim % 4:
        raise ValueError(f"dim must be a multiple of 4, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(0, half, 2) / half)
    rows, cols = np.divmod(np.arange(h * w), w)
    out = np.empty((h * w, dim))
    for offset, coord in ((0, rows), (half, cols)):
        ang = coord[:, None] * freqs[None, :]
        out[:, offset:offset + half:2] = np.sin(ang)
        out[:, offset + 1:offset + half:2] = np.cos(ang)
    return out


# --- backbone ---------------------------------------------------------------

def init_backbone_params(patch: int, dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {
        "patch.w": rng.standard_normal((patch * patch, dim)) / patch,
        "patch.b": np.zeros((1, dim)),
    }
    for layer in range(CONV_LAYERS):
        for k in range(9):
            params[f"conv{layer}.w{k}"] = rng.standard_normal((dim, dim)) / np.sqrt(9 * dim)
        params[f"conv{layer}.b"] = np.zeros((1, dim))
    return params


def _patch_grid(image: np.ndarray, patch: int) -> tuple[np.ndarray, int, int]:
    ih, iw = image.shape
    if ih % patch or iw % patch:
        raise ValueError(f"image {ih}x{iw} not divisible by patch {patch}")
    h, w = ih // patch, iw // patch
    flat = np.empty((h * w, patch * patch))
    for gy in range(h):
        for gx in range(w):
            flat[gy * w + gx] = image[gy * patch:(gy + 1) * patch,
                                      gx * patch:(gx + 1) * patch].ravel()
    return flat, h, w


def shift_matrices(h: int, w: int) -> list[np.ndarray]:
    """Nine (h*w)x(h*w) matrices moving tokens by each 3x3 offset, zero-padded."""
    mats = []
    idx = np.arange(h * w).reshape(h, w)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            m = np.zeros((h * w, h * w))
            ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
            sy, sx = ys + dy, xs + dx
            ok = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
            m[idx[ok], idx[sy[ok], sx[ok]]] = 1.0
            mats.append(m)
    return mats


def backbone_features(image: np.ndarray, params: Mapping[str, Tensor],
                      patch: int) -> FeatureMap:
    """Patch-embed an image and mix neighborhoods; differentiable in params."""
    image = np.asarray(image, dtype=np.float64)
    flat, h, w = _patch_grid(image, patch)
    x = add(matmul(Tensor(flat), params["patch.w"]), params["patch.b"])
    shifts = [Tensor(m) for m in shift_matrices(h, w)]
    for layer in range(CONV_LAYERS):
        acc = None
        for k, s in enumerate(shifts):
            term = matmul(matmul(s, x), params[f"conv{layer}.w{k}"])
            acc = term if acc is None else add(acc, term)
        x = relu(add(acc, params[f"conv{layer}.b"]))
    return FeatureMap(tokens=x, h=h, w=w)


# --- transformer encoder over tokens ----------------------------------------

def init_encoder_params(dim: int, hidden: int, layers: int,
                        rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for i in range(layers):
        for k, v in init_attention_params(dim, rng).items():
            params[f"enc.{i}.attn.{k}"] = v
        for k, v in init_mlp_params(dim, hidden, rng).items():
            params[f"enc.{i}.mlp.{k}"] = v
    return params


def encoder_refine(feat: FeatureMap, params: Mapping[str, Tensor],
                   layers: int) -> FeatureMap:
    """E residual attention+MLP layers; position codes added once at entry."""
    x = add(feat.tokens, Tensor(sinusoidal_grid(feat.h, feat.w, feat.tokens.shape[1])))
    for i in range(layers):
        x = self_attention(x, scoped(params, f"enc.{i}.attn"), residual=True)
        x = add(x, mlp_forward(x, scoped(params, f"enc.{i}.mlp")))
    return FeatureMap(tokens=x, h=feat.h, w=feat.w)


# --- proposals ---------------------------------------------------------------

def proposal_heatmaps(feat: FeatureMap, joints: Tensor) -> Tensor:
    """Raw per-joint similarity logits over the grid, shape N x (h*w)."""
    if joints.shape[1] != feat.tokens.shape[1]:
        raise ValueError(
            f"width mismatch: joints {joints.shape} vs tokens {feat.tokens.shape}")
    return matmul(joints, feat.tokens.T)


# --- graph decoder ------------------------------------------------------------

def init_decoder_params(dim: int, hidden: int, layers: int,
                        rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for i in range(layers):
        params[f"dec.{i}.graph.w"] = rng.standard_normal((dim, dim)) / np.sqrt(dim)
        for k, v in init_attention_params(dim, rng).items():
            params[f"dec.{i}.attn.{k}"] = v
        for k, v in init_mlp_params(dim, hidden, rng).items():
            params[f"dec.{i}.mlp.{k}"] = v
        params[f"dec.{i}.loc.w"] = rng.standard_normal((dim, 2)) / np.sqrt(dim)
        params[f"dec.{i}.loc.b"] = np.zeros((1, 2))
    # decode heads start at zero: the untrained decoder must not disturb the
    # proposal maps it refines
    for head in ("heat", "off_x", "off_y"):
        params[f"heads.{head}.w"] = np.zeros((dim, dim))
        params[f"heads.{head}.b"] = np.zeros((1, dim))
    return params


def graph_decoder(joints: Tensor, feat: FeatureMap, skeleton: Skeleton,
                  params: Mapping[str, Tensor],
                  layers: int) -> tuple[list[Tensor], Tensor]:
    """Run L decoder layers; returns per-layer location estimates and the
    final node features."""
    if skeleton.n_joints != joints.shape[0]:
        raise SkeletonError(
            f"skeleton has {skeleton.n_joints} joints, embeddings {joints.shape[0]}")
    ahat = Tensor(skeleton.normalized())
    x = joints
    locations: list[Tensor] = []
    for i in range(layers):
        x = add(x, matmul(matmul(ahat, x), params[f"dec.{i}.graph.w"]))
        x = add(x, cross_attention(x, feat.tokens, scoped(params, f"dec.{i}.attn")))
        x = add(x, mlp_forward(x, scoped(params, f"dec.{i}.mlp")))
        locations.append(sigmoid(add(matmul(x, params[f"dec.{i}.loc.w"]),
                                     params[f"dec.{i}.loc.b"])))
    return locations, x


def decode_heads(nodes: Tensor, feat: FeatureMap,
                 params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """Project node features over the token grid: additive heatmap
    refinement plus x/y offset maps, each N x (h*w)."""
    def head(name: str) -> Tensor:
        projected = add(matmul(nodes, params[f"heads.{name}.w"]),
                        params[f"heads.{name}.b"])
        return matmul(projected, feat.tokens.T)

    return head("heat"), head("off_x"), head("off_y")


# --- final decoding ------------------------------------------------------------

def decode_keypoints(heatmaps: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Peak + offset decoding to normalized (x, y) per joint.

    heatmaps: (N, h, w); offsets: (N, h, w, 2) with [..., 0] the x offset and
    [..., 1] the y offset, both in cell units. The peak is the flat row-major
    argmax, so ties resolve to the lowest row-major index. Output is clamped
    to the unit square.
    """
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if heatmaps.ndim != 3 or offsets.shape != heatmaps.shape + (2,):
        raise ValueError(
            f"inconsistent shapes: heatmaps {heatmaps.shape}, offsets {offsets.shape}")
    n, h, w = heatmaps.shape
    out = np.empty((n, 2))
    for i in range(n):
        flat = int(np.argmax(heatmaps[i]))
        r, c = divmod(flat, w)
        out[i, 0] = (c + 0.5 + offsets[i, r, c, 0]) / w
        out[i, 1] = (r + 0.5 + offsets[i, r, c, 1]) / h
    return np.clip(out, 0.0, 1.0)
