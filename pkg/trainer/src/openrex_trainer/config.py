"""Trainer configuration and per-dataset hyperparameter presets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from openrex.errors import ConfigError


@dataclass(frozen=True)
class TrainerConfig:
    """Two-stage adapter fine-tuning knobs.

    ``alpha`` weighs the distillation term in the second stage; ``tau``
    softens both the teacher and the student distribution before the
    divergence (no extra rescaling of the loss).
    """

    base_model: str = "tiny-2l-64d"
    rank: int = 64
    scaling: float = 64.0
    rp_lr: float = 5e-5
    rd_lr: float = 3e-6
    tau: float = 4.0
    alpha: float = 0.5
    epochs: int = 1
    batch_size: int = 4
    max_seq_len: int = 512
    seed: int = 0
    n_demos: int = 4
    target_modules: tuple[str, ...] = ("q_proj", "v_proj", "lm_head")
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    capture_batches: int = 1

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.rank < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("rank, epochs and batch_size must be positive")


# Published two-stage settings, keyed by (dataset, base model family).
PRESETS: dict[tuple[str, str], dict] = {
    ("fewrel", "llama-2-7b"): {"rp_lr": 5e-5, "rd_lr": 3e-6, "tau": 4.0, "alpha": 0.5},
    ("fewrel", "qwen2.5-14b"): {"rp_lr": 5e-5, "rd_lr": 3e-6, "tau": 4.0, "alpha": 0.2},
    ("tacred", "llama-2-7b"): {"rp_lr": 1e-4, "rd_lr": 8e-5, "tau": 4.0, "alpha": 1.0},
    ("tacred", "qwen2.5-14b"): {"rp_lr": 7e-5, "rd_lr": 6e-6, "tau": 2.0, "alpha": 0.9},
    ("fewrel-lt", "llama-2-7b"): {"rp_lr": 5e-5, "rd_lr": 3e-6, "tau": 4.0, "alpha": 0.5},
    ("fewrel-lt", "qwen2.5-14b"): {"rp_lr": 6e-5, "rd_lr": 3e-6, "tau": 4.0, "alpha": 0.1},
}


def preset_config(dataset: str, model_family: str = "llama-2-7b", **overrides) -> TrainerConfig:
    key = (dataset.lower(), model_family.lower())
    if key not in PRESETS:
        raise ConfigError(f"no preset for {key}; known: {sorted(PRESETS)}")
    return replace(TrainerConfig(**PRESETS[key]), **overrides)
