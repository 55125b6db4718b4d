"""Experiment protocols: the four-variant ablation and the prompt-noise suite.

Ablation variants (shared data and seed, one trained model per row):
  full         all blocks active
  no-mixer     image/class context mixing removed (raw embeddings pass through)
  no-refiner   joint refinement replaced by the two-ReLU-projection bypass
  fixed-gates  fusion gates clamped to the constant 1 instead of learned

The noise suite evaluates one trained model on clean prompts and on prompts
perturbed per sample at a given rate: "class" substitutes the category
sentence with a different category's, "typo" applies an edit-distance-1..2
typo to every keypoint prompt of a selected sample. It also reports a
bit-level audit of how many category embeddings actually changed and, when
the model has learnable gates, the mean gate scores on clean vs. noisy
prompts.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .dataset import N_CATEGORIES, SceneSample, category_prompts, split_by_instance
from .encoders import PromptSet, encode_text, perturb_prompt
from .metrics import PCK_THRESHOLDS, MetricsRow, evaluate
from .model import predict
from .train import TrainingResult, save_checkpoint, train

ABLATION_LABELS = ("full", "no-mixer", "no-refiner", "fixed-gates")


def ablation_config(cfg: ExperimentConfig, label: str) -> ExperimentConfig:
    """The base config with exactly one block disabled (or none, for full)."""
    if label == "full":
        flags = {}
    elif label == "no-mixer":
        flags = {"use_mixer": False}
    elif label == "no-refiner":
        flags = {"use_refiner": False}
    elif label == "fixed-gates":
        flags = {"use_learnable_gates": False}
    else:
        raise ConfigError(f"unknown ablation label: {label!r}")
    return dataclasses.replace(cfg, config_id=label, **flags)


def run_ablation(cfg: ExperimentConfig, samples: list[SceneSample], *,
                 thresholds: tuple[float, ...] = PCK_THRESHOLDS,
                 checkpoint_dir: str | Path | None = None,
                 ) -> tuple[list[MetricsRow], dict[str, TrainingResult]]:
    """Train and evaluate all four variants on a shared split and seed.

    Trains on the first cfg.train_instances instances of every training
    category and evaluates on the remaining (held-out) instances of those
    same categories. Returns one MetricsRow per variant plus the training
    results keyed by label.
    """
    train_split = split_by_instance(samples, cfg.train_categories,
                                    cfg.train_instances)
    heldout = split_by_instance(samples, cfg.train_categories,
                                cfg.train_instances, held_out=True)
    if not heldout:
        raise ValueError("no held-out instances: generate more instances "
                         "per category than cfg.train_instances")
    rows = []
    results = {}
    for label in ABLATION_LABELS:
        variant = ablation_config(cfg, label)
        result = train(variant, train_split)
        rows.append(evaluate(result.params, heldout, variant,
                             thresholds=thresholds, split_id="held-out"))
        results[label] = result
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"{label}.ckpt",
                            variant, result.params, result.state)
    return rows, results


def _category_prompt_pool() -> tuple[str, ...]:
    return tuple(category_prompts(c).category for c in range(N_CATEGORIES))


def perturb_sample_prompts(prompts: PromptSet, kind: str, seed: int) -> PromptSet:
    """A noisy copy of one sample's prompts (see module docstring)."""
    if kind == "class":
        noisy = perturb_prompt(prompts.category, "class", seed,
                               categories=_category_prompt_pool())
        return PromptSet(category=noisy, keypoints=prompts.keypoints)
    if kind == "typo":
        noisy_kps = tuple(perturb_prompt(kp, "typo", seed + j)
                          for j, kp in enumerate(prompts.keypoints))
        return PromptSet(category=prompts.category, keypoints=noisy_kps)
    raise ValueError(f"unknown noise kind: {kind!r}")


@dataclass
class NoiseReport:
    kind: str
    rate: float
    clean: MetricsRow
    noisy: MetricsRow
    noisy_prompts: list[PromptSet]        # aligned with the input samples
    class_changed_fraction: float         # bit-level e_cls difference audit
    gates_clean: tuple[float, float] | None
    gates_noisy: tuple[float, float] | None

    @property
    def rows(self) -> list[MetricsRow]:
        return [self.clean, self.noisy]


def mean_gate_scores(arrays, samples: list[SceneSample], cfg: ExperimentConfig,
                     prompt_sets: list[PromptSet] | None = None,
                     ) -> tuple[float, float] | None:
    """Mean (alpha, beta) over samples, or None if the model has no gates."""
    a_sum = b_sum = 0.0
    for i, sample in enumerate(samples):
        override = prompt_sets[i] if prompt_sets is not None else None
        gates = predict(arrays, sample, cfg, prompts=override).mean_gates
        if gates is None:
            return None
        a_sum += gates[0]
        b_sum += gates[1]
    return a_sum / len(samples), b_sum / len(samples)


def run_noise_suite(arrays, cfg: ExperimentConfig, samples: list[SceneSample],
                    *, kind: str, rate: float, seed: int = 0,
                    thresholds: tuple[float, ...] = PCK_THRESHOLDS,
                    ) -> NoiseReport:
    if kind not in ("class", "typo"):
        raise ValueError(f"unknown noise kind: {kind!r}")
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"noise rate must be in [0, 1], got {rate}")
    if not samples:
        raise ValueError("cannot run the noise suite on an empty sample list")

    rng = np.random.default_rng([seed, 0x5E1F])
    noisy_prompts = []
    for sample in samples:
        hit = rng.random() < rate
        sub_seed = int(rng.integers(0, 2**62))
        noisy_prompts.append(
            perturb_sample_prompts(sample.prompts, kind, sub_seed)
            if hit else sample.prompts)

    changed = sum(
        1 for s, p in zip(samples, noisy_prompts)
        if not np.array_equal(encode_text(p.category, cfg.dim).data,
                              encode_text(s.prompts.category, cfg.dim).data))
    noisy_samples = [dataclasses.replace(s, prompts=p)
                     for s, p in zip(samples, noisy_prompts)]

    clean_row = evaluate(arrays, samples, cfg, thresholds=thresholds,
                         split_id="clean")
    noisy_row = evaluate(arrays, noisy_samples, cfg, thresholds=thresholds,
                         split_id=f"{kind}@{rate!r}")
    return NoiseReport(
        kind=kind, rate=rate, clean=clean_row, noisy=noisy_row,
        noisy_prompts=noisy_prompts,
        class_changed_fraction=changed / len(samples),
        gates_clean=mean_gate_scores(arrays, samples, cfg),
        gates_noisy=mean_gate_scores(arrays, samples, cfg, noisy_prompts))
