"""Experiment configuration: a flat key=value text format.

One key per line, `key=value`, UTF-8; blank lines and lines starting with
`#` are ignored. Unknown keys are an error (typos should not silently become
defaults). Values are parsed by the declared field type; integer lists are
comma-separated. `to_text` writes keys in declaration order so a config
round-trips byte-identically.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

VALID_HEATMAP_NORMS = ("mse", "l1")
VALID_NOISE_KINDS = ("none", "class", "typo")


class ConfigError(ValueError):
    """Config file or field values violate the configuration contract."""


@dataclass(frozen=True)
class AblationFlags:
    """Which architecture pieces are active (the ablation axes)."""

    use_mixer: bool = True
    use_refiner: bool = True
    use_learnable_gates: bool = True


@dataclass
class ExperimentConfig:
    # identity / reproducibility
    config_id: str = "default"
    seed: int = 0
    # model dimensions
    dim: int = 64
    image_tokens: int = 4
    patch: int = 8
    image_size: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 3
    # ablation switches
    use_mixer: bool = True
    use_refiner: bool = True
    use_learnable_gates: bool = True
    mixer_residual: bool = True
    outer_residual: bool = True
    # loss
    sigma: float = 1.5
    heatmap_weight: float = 2.0
    heatmap_norm: str = "mse"
    # optimization
    base_lr: float = 1e-3
    batch_size: int = 8
    steps: int = 2000
    stop_loss_frac: float = 0.0
    min_steps: int = 100
    # data & splits
    data: str = ""
    train_categories: list[int] = field(default_factory=lambda: list(range(8)))
    val_categories: list[int] = field(default_factory=lambda: [8, 9])
    test_categories: list[int] = field(default_factory=lambda: [10, 11, 12, 13])
    train_instances: int = 6
    # noise suite
    noise_kind: str = "none"
    noise_rate: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dim % 4:
            raise ConfigError("dim must be a multiple of 4 (position codes)")
        if self.image_size % self.patch:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch {self.patch}")
        g = int(round(self.image_tokens ** 0.5))
        if g * g != self.image_tokens:
            raise ConfigError(f"image_tokens must be a perfect square, got {self.image_tokens}")
        if self.image_size % g:
            raise ConfigError("image_tokens grid must divide image_size")
        if self.heatmap_norm not in VALID_HEATMAP_NORMS:
            raise ConfigError(f"heatmap_norm must be one of {VALID_HEATMAP_NORMS}")
        if self.noise_kind not in VALID_NOISE_KINDS:
            raise ConfigError(f"noise_kind must be one of {VALID_NOISE_KINDS}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must be in [0, 1]")
        if self.batch_size < 1 or self.steps < 0 or self.min_steps < 0:
            raise ConfigError("batch_size >= 1, steps >= 0, min_steps >= 0 required")
        if not 0.0 <= self.stop_loss_frac < 1.0:
            raise ConfigError("stop_loss_frac must be in [0, 1)")
        if self.encoder_layers < 0 or self.decoder_layers < 1:
            raise ConfigError("encoder_layers >= 0 and decoder_layers >= 1 required")
        if self.train_instances < 1:
            raise ConfigError("train_instances must be >= 1")
        splits = (set(self.train_categories), set(self.val_categories),
                  set(self.test_categories))
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = splits[i] & splits[j]
                if overlap:
                    raise ConfigError(f"category splits overlap: {sorted(overlap)}")

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags(use_mixer=self.use_mixer, use_refiner=self.use_refiner,
                             use_learnable_gates=self.use_learnable_gates)

    @property
    def hidden(self) -> int:
        return 2 * self.dim

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"


def _parse_value(name: str, kind, raw: str):
    if kind is bool or kind == "bool":
        if raw not in ("true", "false"):
            raise ValueError(f"expected true/false, got {raw!r}")
        return raw == "true"
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    if kind is str or kind == "str":
        return raw
    # the only remaining field type is list[int]
    return [int(x) for x in raw.split(",") if x.strip() != ""] if raw.strip() else []


def config_from_text(text: str) -> ExperimentConfig:
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in by_name:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, by_name[key].type, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"))


def save_config(path: str | Path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(cfg.to_text(), encoding="utf-8")
