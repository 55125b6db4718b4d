"""Deterministic, weight-free stand-ins for pretrained text/image encoders.

Text: a stable 64-bit hash of the prompt seeds a fixed pseudo-random draw,
which is then unit-normalized. Identical prompts give bitwise-identical
vectors across processes; distinct prompts give (almost surely) distinct
vectors. Semantic similarity is NOT preserved — two prompts one typo apart
land far from each other, so robustness results with these encoders are
behavioral, not semantic.

Image: the image is cut into a square grid of patches; each patch is reduced
to [mean, variance, mean |horizontal diff|, mean |vertical diff|, 1.0] and
pushed through a random projection whose seed is a build-time constant. The
trailing 1.0 keeps an all-zero patch away from the zero vector so the L2
normalization is always defined.

Both encoders are pure functions of their inputs and safe to call from
anywhere.
"""

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import Tensor

# per-patch statistics: mean, var, mean|dx|, mean|dy|, bias
_N_PATCH_STATS = 5
# fixed at build time; changing it re-keys every image embedding ever produced
_PROJECTION_SEED = 0x7E97A10


class PromptError(ValueError):
    """A prompt or prompt set violates its contract."""


class ImageShapeError(ValueError):
    """Image extents are incompatible with the requested patch grid."""


@dataclass(frozen=True)
class PromptSet:
    """One category's text prompts: a category description plus one
    description per keypoint, in a fixed order that defines the joint index."""

    category: str
    keypoints: tuple[str, ...]

    def __post_init__(self):
        if not self.category.strip():
            raise PromptError("empty category description")
        if not self.keypoints:
            raise PromptError("prompt set needs at least one keypoint description")
        if any(not k.strip() for k in self.keypoints):
            raise PromptError("empty keypoint description")

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoints)


@dataclass(frozen=True)
class EmbeddingBundle:
    """Encoder outputs for one (prompt set, image) pair.

    joints:   one row per keypoint prompt, N x C
    category: the category description embedding, 1 x C
    image:    patch tokens, M x C

    Every row is unit-norm; all three share the same width C.
    """

    joints: Tensor
    category: Tensor
    image: Tensor

    def __post_init__(self):
        widths = {self.joints.shape[1], self.category.shape[1], self.image.shape[1]}
        if len(widths) != 1:
            raise ValueError(f"bundle width mismatch: {sorted(widths)}")
        if self.category.shape[0] != 1:
            raise ValueError("category embedding must be a single row")
        for part in (self.joints, self.category, self.image):
            norms = np.linalg.norm(part.data, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("bundle rows must be unit-norm")


def _stable_seed(text: str) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def encode_text(prompt: str, dim: int) -> Tensor:
    """Unit-norm pseudo-embedding of a prompt; stable across processes."""
    if not prompt:
        raise PromptError("empty prompt")
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    rng = np.random.Generator(np.random.PCG64(_stable_seed(prompt)))
    vec = rng.standard_normal(dim)
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # pragma: no cover - measure-zero draw
        raise RuntimeError("degenerate zero draw")
    return Tensor((vec / norm).reshape(1, dim))


@lru_cache(maxsize=8)
def _patch_projection(dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(_PROJECTION_SEED))
    proj = rng.standard_normal((_N_PATCH_STATS, dim))
    proj.setflags(write=False)
    return proj


def _mean_abs(arr: np.ndarray) -> float:
    return float(np.abs(arr).mean()) if arr.size else 0.0


def patch_statistics(patch: np.ndarray) -> np.ndarray:
    """The 5-vector of statistics an image token is built from."""
    return np.array([
        float(patch.mean()),
        float(patch.var()),
        _mean_abs(np.diff(patch, axis=1)),
        _mean_abs(np.diff(patch, axis=0)),
        1.0,
    ])


def encode_image_global(image: np.ndarray, dim: int, tokens: int) -> Tensor:
    """M unit-norm patch tokens from a grayscale image.

    `tokens` must be a perfect square g*g and both image extents divisible by
    g; token order is row-major over the patch grid.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ImageShapeError(f"expected a 2-D grayscale image, got {image.shape}")
    grid = math.isqrt(tokens)
    if grid * grid != tokens or tokens < 1:
        raise ImageShapeError(f"tokens must be a perfect square, got {tokens}")
    h, w = image.shape
    if h % grid or w % grid:
        raise ImageShapeError(f"image {h}x{w} not divisible into a {grid}x{grid} grid")
    ph, pw = h // grid, w // grid
    proj = _patch_projection(dim)
    rows = np.empty((tokens, dim))
    for gy in range(grid):
        for gx in range(grid):
            patch = image[gy * ph:(gy + 1) * ph, gx * pw:(gx + 1) * pw]
            vec = patch_statistics(patch) @ proj
            rows[gy * grid + gx] = vec / np.linalg.norm(vec)
    return Tensor(rows)


def perturb_prompt(prompt: str, kind: str, seed: int,
                   categories: Sequence[str] | None = None) -> str:
    """Apply one noise edit to a prompt, deterministically per (inputs, seed).

    kind="typo": one adjacent-character transposition or one character
    duplication (edit distance 1-2 from the input). kind="class": replace the
    whole prompt with a different entry from `categories`.
    """
    if kind not in ("typo", "class"):
        raise ValueError(f"unknown noise kind {kind!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if kind == "class":
        if not categories:
            raise ValueError("class substitution needs a category list")
        pool = [c for c in categories if c != prompt]
        if not pool:
            raise ValueError("no alternative category to substitute")
        return pool[int(rng.integers(len(pool)))]

    if len(prompt) < 2 or rng.random() < 0.5:
        # duplicate one character (the only possible edit for 1-char prompts)
        i = int(rng.integers(len(prompt)))
        return prompt[:i + 1] + prompt[i] + prompt[i + 1:]
    # transpose an adjacent pair, preferring pairs that actually differ
    pairs = [i for i in range(len(prompt) - 1) if prompt[i] != prompt[i + 1]]
    if not pairs:
        i = int(rng.integers(len(prompt)))
        return prompt[:i + 1] + prompt[i] + prompt[i + 1:]
    i = pairs[int(rng.integers(len(pairs)))]
    return prompt[:i] + prompt[i + 1] + prompt[i] + prompt[i + 2:]


def build_bundle(prompts: PromptSet, image: np.ndarray, dim: int,
                 tokens: int) -> EmbeddingBundle:
    """Encode a prompt set and image into one bundle, joint rows in prompt order."""
    joint_rows = np.vstack([encode_text(k, dim).data for k in prompts.keypoints])
    return EmbeddingBundle(
        joints=Tensor(joint_rows),
        category=encode_text(prompts.category, dim),
        image=encode_image_global(image, dim, tokens),
    )


# --- prompt-set sidecar files: first line the category description, then ---
# --- one keypoint description per line, UTF-8                            ---

def save_prompt_set(path: str | Path, prompts: PromptSet) -> None:
    lines = [prompts.category, *prompts.keypoints]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_prompt_set(path: str | Path) -> PromptSet:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    if len(lines) < 2:
        raise PromptError(f"{path}: need a category line and at least one keypoint line")
    return PromptSet(category=lines[0], keypoints=tuple(lines[1:]))
