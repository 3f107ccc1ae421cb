"""Configuration dataclasses for the model, losses and training loop."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError

GATING_MODES = ("none", "soft", "hard")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    The encoder has four stages; stages 1-3 end in a patch-merging step
    (tokens /4, channels x2) while stage 4 keeps stage-3 geometry. The
    decoder mirrors this with patch-expanding steps and skip fusion.
    """

    in_channels: int = 1
    image_size: tuple[int, int] = (256, 256)
    patch_size: tuple[int, int] = (4, 4)
    embed_dim: int = 96
    stage_depths: tuple[int, int, int, int] = (2, 2, 6, 2)
    num_heads: tuple[int, int, int, int] = (3, 6, 12, 24)
    decoder_depths: tuple[int, int, int, int] = (2, 2, 2, 2)
    window_size: int = 8
    num_classes: int = 3
    num_roi: int = 3
    context_enabled: bool = True
    gating_mode: str = "none"
    gating_threshold: float = 0.5
    detection_context_free: bool = True
    mlp_ratio: float = 4.0
    det_hidden: int = 256
    qkv_bias: bool = True

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.patch_size = tuple(self.patch_size)
        self.stage_depths = tuple(self.stage_depths)
        self.num_heads = tuple(self.num_heads)
        self.decoder_depths = tuple(self.decoder_depths)
        h, w = self.image_size
        ph, pw = self.patch_size
        if h % ph != 0:
            raise ConfigError(f"image height {h} not divisible by patch height {ph}")
        if w % pw != 0:
            raise ConfigError(f"image width {w} not divisible by patch width {pw}")
        if len(self.stage_depths) != 4:
            raise ConfigError(f"stage_depths must have 4 entries, got {len(self.stage_depths)}")
        if len(self.num_heads) != 4:
            raise ConfigError(f"num_heads must have 4 entries, got {len(self.num_heads)}")
        if len(self.decoder_depths) != 4:
            raise ConfigError(f"decoder_depths must have 4 entries, got {len(self.decoder_depths)}")
        if not 0.0 <= self.gating_threshold <= 1.0:
            raise ConfigError(f"gating_threshold {self.gating_threshold} outside [0, 1]")
        if self.gating_mode not in GATING_MODES:
            raise ConfigError(f"gating_mode must be one of {GATING_MODES}, got {self.gating_mode!r}")
        # Attention blocks run at grids base/1, base/2, base/4 and base/8; the
        # window clamps to the grid side on small stages, so divisibility is
        # checked against the effective (clamped) window at each of them.
        bh, bw = self.base_grid
        for f in (1, 2, 4, 8):
            gh, gw = bh // f, bw // f
            if gh < 1 or gw < 1:
                raise ConfigError(f"token grid {bh}x{bw} too small for 4-stage downsampling")
            ws = min(self.window_size, gh, gw)
            if gh % ws or gw % ws:
                raise ConfigError(
                    f"token grid {gh}x{gw} not divisible by window size {ws}"
                )
        for s in range(4):
            if self.stage_channels(s + 1) % self.num_heads[s]:
                raise ConfigError(
                    f"stage {s + 1} channels {self.stage_channels(s + 1)} not divisible "
                    f"by num_heads {self.num_heads[s]}"
                )
        if self.num_classes != self.num_roi and self.num_classes != 1:
            raise ConfigError(
                f"num_classes {self.num_classes} must equal num_roi {self.num_roi} or be 1"
            )

    @property
    def base_grid(self) -> tuple[int, int]:
        """Token grid produced by patch embedding."""
        return (self.image_size[0] // self.patch_size[0], self.image_size[1] // self.patch_size[1])

    def stage_channels(self, stage: int) -> int:
        """Channel count at the output of encoder stage 1..4 (stage 4 == stage 3)."""
        if stage not in (1, 2, 3, 4):
            raise ConfigError(f"stage index {stage} outside 1..4")
        return self.embed_dim * 2 ** min(stage, 3)

    def stage_grid(self, stage: int) -> tuple[int, int]:
        """Token grid at the output of encoder stage 1..4."""
        if stage not in (1, 2, 3, 4):
            raise ConfigError(f"stage index {stage} outside 1..4")
        gh, gw = self.base_grid
        f = 2 ** min(stage, 3)
        return (gh // f, gw // f)

    def stage_grids(self) -> list[tuple[int, int]]:
        return [self.stage_grid(s) for s in range(1, 5)]

    def effective_window(self, stage: int) -> int:
        gh, gw = self.stage_grid(stage)
        return min(self.window_size, gh, gw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TverskyParams:
    """False-positive / false-negative weighting of the overlap loss."""

    alpha: float = 0.3
    beta: float = 0.7
    smooth: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("tversky alpha and beta must be >= 0")
        if self.alpha + self.beta <= 0:
            raise ConfigError("tversky alpha + beta must be > 0")
        if self.smooth <= 0:
            raise ConfigError("tversky smooth must be > 0")


@dataclass
class AugmentConfig:
    """Stochastic augmentation amplitudes; zeros everywhere give the identity."""

    enabled: bool = True
    flip_prob: float = 0.5
    rot90: bool = True
    elastic_prob: float = 0.5
    elastic_max_disp: float = 4.0
    elastic_smooth_sigma: float = 8.0
    brightness: float = 0.1
    contrast: float = 0.1
    noise_sigma: float = 0.02


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    lambda_det: float = 1.0
    seed: int = 0
    eval_gating_mode: str = "hard"
    model: ModelConfig = field(default_factory=ModelConfig)
    tversky: TverskyParams = field(default_factory=TverskyParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_every: int = 10
    grad_clip: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.eval_gating_mode not in GATING_MODES:
            raise ConfigError(f"eval_gating_mode must be one of {GATING_MODES}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        if "tversky" in d and isinstance(d["tversky"], dict):
            d["tversky"] = TverskyParams(**d["tversky"])
        if "augment" in d and isinstance(d["augment"], dict):
            d["augment"] = AugmentConfig(**d["augment"])
        return cls(**d)


def tiny_model_config(**overrides) -> ModelConfig:
    """A CPU-friendly configuration used throughout the test-suite."""
    base = dict(
        in_channels=1,
        image_size=(32, 32),
        patch_size=(4, 4),
        embed_dim=16,
        stage_depths=(1, 1, 1, 1),
        num_heads=(2, 2, 4, 4),
        decoder_depths=(1, 1, 1, 1),
        window_size=2,
        num_classes=3,
        num_roi=3,
        det_hidden=32,
    )
    base.update(overrides)
    return ModelConfig(**base)
