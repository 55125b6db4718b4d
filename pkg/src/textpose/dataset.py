"""Procedural scene generator: polygons and stars with labeled landmarks.

Each category is a distinct outline topology — convex polygons with 3..9
corners, then stars with 3..9 spikes (spike tips plus inner notches, so the
joint counts differ from the polygons'). Keypoint prompts are deliberately
reused across categories ("corner 1" appears in every polygon category), so
identical keypoint text refers to different geometry in different categories.

An instance is a rotated, scaled, shifted copy of the canonical outline,
rasterized into a 64x64 grayscale image over a dark background with a little
pixel noise and up to two small dim decoy shapes borrowed from other
categories. Keypoints are the outline vertices in normalized (x, y)
coordinates; the bbox is their tight axis-aligned box. Rotation is kept
small so different instances of a category stay visually alignable; scale
and position carry most of the instance variance.

Everything is drawn from one seeded generator in a fixed order, so a seed
fully determines the dataset, byte for byte.
"""

from dataclasses import dataclass

import numpy as np

from .container import load_container, save_container
from .encoders import PromptSet
from .pipeline import Skeleton

N_CATEGORIES = 14
_MIN_POLY, _MAX_POLY = 3, 9
_MIN_STAR, _MAX_STAR = 3, 9
_STAR_INNER_RADIUS = 0.45
_MARGIN = 0.04
_MAX_RESAMPLE = 100


class DatasetError(ValueError):
    """Generator preconditions or dataset file contents are invalid."""


@dataclass
class SceneSample:
    """One rendered scene with its annotations."""

    image: np.ndarray          # (S, S) grayscale in [0, 1]
    category: int
    keypoints: np.ndarray      # (N, 2) normalized (x, y)
    bbox: np.ndarray           # (x, y, w, h) normalized
    skeleton: Skeleton
    prompts: PromptSet

    def __post_init__(self):
        n = self.keypoints.shape[0]
        if self.prompts.n_keypoints != n or self.skeleton.n_joints != n:
            raise DatasetError(
                f"inconsistent joint counts: {n} keypoints, "
                f"{self.prompts.n_keypoints} prompts, {self.skeleton.n_joints} skeleton")
        x, y, w, h = self.bbox
        if x < 0 or y < 0 or x + w > 1 or y + h > 1:
            raise DatasetError(f"bbox {self.bbox} leaves the image")
        inside = ((self.keypoints[:, 0] >= x - 1e-12) & (self.keypoints[:, 0] <= x + w + 1e-12)
                  & (self.keypoints[:, 1] >= y - 1e-12) & (self.keypoints[:, 1] <= y + h + 1e-12))
        if not np.all(inside):
            raise DatasetError("keypoints outside bbox")


def canonical_outline(category: int) -> np.ndarray:
    """Unit-scale outline vertices of a category, (N, 2), cyclic order."""
    if not 0 <= category < N_CATEGORIES:
        raise DatasetError(f"category {category} out of range")
    n_poly = _MAX_POLY - _MIN_POLY + 1
    if category < n_poly:
        k = _MIN_POLY + category
        ang = -np.pi / 2 + 2 * np.pi * np.arange(k) / k
        return np.column_stack([np.cos(ang), np.sin(ang)])
    p = _MIN_STAR + (category - n_poly)
    outer = -np.pi / 2 + 2 * np.pi * np.arange(p) / p
    inner = outer + np.pi / p
    verts = np.empty((2 * p, 2))
    verts[0::2] = np.column_stack([np.cos(outer), np.sin(outer)])
    verts[1::2] = _STAR_INNER_RADIUS * np.column_stack([np.cos(inner), np.sin(inner)])
    return verts


def category_prompts(category: int) -> PromptSet:
    n_poly = _MAX_POLY - _MIN_POLY + 1
    if category < n_poly:
        k = _MIN_POLY + category
        return PromptSet(
            category=f"a solid convex polygon with {k} corners",
            keypoints=tuple(f"corner {i + 1}" for i in range(k)))
    p = _MIN_STAR + (category - n_poly)
    kps = []
    for i in range(p):
        kps.append(f"spike tip {i + 1}")
        kps.append(f"inner notch {i + 1}")
    return PromptSet(category=f"a solid star with {p} spikes", keypoints=tuple(kps))


def category_skeleton(category: int) -> Skeleton:
    n = canonical_outline(category).shape[0]
    return Skeleton.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def fill_polygon(size: int, verts: np.ndarray) -> np.ndarray:
    """Even-odd rasterization mask; verts in pixel units, pixel centers tested."""
    px = np.arange(size) + 0.5
    cx, cy = np.meshgrid(px, px)  # cy varies along axis 0 (rows)
    inside = np.zeros((size, size), dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > cy) != (y2 > cy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xhit = (x2 - x1) * (cy - y1) / (y2 - y1) + x1
        inside ^= crosses & (cx < xhit)
    return inside


def _instance_vertices(category: int, rng: np.random.Generator) -> np.ndarray:
    base = canonical_outline(category)
    for _ in range(_MAX_RESAMPLE):
        theta = rng.uniform(-0.3, 0.3)
        scale = rng.uniform(0.30, 0.38)
        center = rng.uniform(0.42, 0.58, size=2)
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        verts = center + scale * (base @ rot.T)
        if np.all((verts >= _MARGIN) & (verts <= 1.0 - _MARGIN)):
            return verts
    raise DatasetError(f"could not place category {category} inside the frame")


def _render(category: int, verts: np.ndarray, size: int,
            rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size))
    # dim decoys from other categories, drawn under the main shape
    for _ in range(int(rng.integers(0, 3))):
        other = int(rng.integers(0, N_CATEGORIES))
        d_theta = rng.uniform(0, 2 * np.pi)
        d_scale = rng.uniform(0.05, 0.10)
        d_center = rng.uniform(0.1, 0.9, size=2)
        rot = np.array([[np.cos(d_theta), -np.sin(d_theta)],
                        [np.sin(d_theta), np.cos(d_theta)]])
        d_verts = d_center + d_scale * (canonical_outline(other) @ rot.T)
        mask = fill_polygon(size, d_verts * size)
        img[mask] = rng.uniform(0.15, 0.35)
    mask = fill_polygon(size, verts * size)
    img[mask] = rng.uniform(0.55, 0.95)
    img += rng.uniform(0.0, 0.02, size=(size, size))
    return np.clip(img, 0.0, 1.0)


def synth_dataset(seed: int, n_categories: int = N_CATEGORIES, instances: int = 8,
                  image_size: int = 64) -> list[SceneSample]:
    """Deterministic dataset: `instances` samples for each of the first
    `n_categories` category templates, category-major order."""
    if n_categories < 2:
        raise DatasetError("need at least 2 categories")
    if n_categories > N_CATEGORIES:
        raise DatasetError(f"at most {N_CATEGORIES} categories available")
    if instances < 1:
        raise DatasetError("instances must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for category in range(n_categories):
        prompts = category_prompts(category)
        skeleton = category_skeleton(category)
        for _ in range(instances):
            verts = _instance_vertices(category, rng)
            image = _render(category, verts, image_size, rng)
            # pad the tight box a hair so x + w >= max(x_i) survives rounding
            lo = np.maximum(verts.min(axis=0) - 1e-9, 0.0)
            hi = np.minimum(verts.max(axis=0) + 1e-9, 1.0)
            bbox = np.array([lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]])
            samples.append(SceneSample(image=image, category=category,
                                       keypoints=verts.copy(), bbox=bbox,
                                       skeleton=skeleton, prompts=prompts))
    return samples


def save_dataset(path, samples: list[SceneSample]) -> None:
    entries: dict[str, np.ndarray | str] = {
        "meta.samples": np.asarray(float(len(samples))),
    }
    categories = sorted({s.category for s in samples})
    entries["meta.categories"] = np.asarray([float(c) for c in categories])
    for c in categories:
        ref = next(s for s in samples if s.category == c)
        entries[f"cat{c}.name"] = ref.prompts.category
        entries[f"cat{c}.keypoints"] = "\n".join(ref.prompts.keypoints)
        entries[f"cat{c}.adjacency"] = ref.skeleton.adjacency
    for i, s in enumerate(samples):
        entries[f"sample{i}.image"] = s.image
        entries[f"sample{i}.keypoints"] = s.keypoints
        entries[f"sample{i}.bbox"] = s.bbox
        entries[f"sample{i}.category"] = np.asarray(float(s.category))
    save_container(path, entries)


def load_dataset(path) -> list[SceneSample]:
    entries = load_container(path)
    try:
        count = int(entries["meta.samples"])
    except KeyError as exc:
        raise DatasetError(f"{path}: not a dataset container") from exc
    prompts = {}
    skeletons = {}
    for c in (int(v) for v in np.atleast_1d(entries["meta.categories"])):
        prompts[c] = PromptSet(category=entries[f"cat{c}.name"],
                               keypoints=tuple(entries[f"cat{c}.keypoints"].splitlines()))
        skeletons[c] = Skeleton(entries[f"cat{c}.adjacency"])
    samples = []
    for i in range(count):
        c = int(entries[f"sample{i}.category"])
        samples.append(SceneSample(
            image=entries[f"sample{i}.image"], category=c,
            keypoints=entries[f"sample{i}.keypoints"],
            bbox=entries[f"sample{i}.bbox"],
            skeleton=skeletons[c], prompts=prompts[c]))
    return samples


def split_by_instance(samples: list[SceneSample], categories: list[int],
                      first_n: int, *, held_out: bool = False) -> list[SceneSample]:
    """Per category, the first `first_n` instances (or the rest, when
    `held_out`), preserving the generator's deterministic order."""
    wanted = set(categories)
    out = []
    seen: dict[int, int] = {}
    for s in samples:
        if s.category not in wanted:
            continue
        k = seen.get(s.category, 0)
        seen[s.category] = k + 1
        if (k >= first_n) == held_out:
            out.append(s)
    return out
