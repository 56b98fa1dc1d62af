"""Two-stage adapter fine-tuning for the discoverer and predictor roles."""

from .config import PRESETS, TrainerConfig, preset_config
from .examples import PairedExample, TrainingExample, build_examples, build_paired_examples
from .export import export_adapters, export_bundle, export_distribution_dump, load_bundle
from .model import Tokenizer, TinyCausalLM, build_model
from .serve import CompletionServer, generate_text
from .train import TrainedBundle, TrainingDiverged, train_rd, train_rp

__all__ = [
    "CompletionServer",
    "PRESETS",
    "PairedExample",
    "Tokenizer",
    "TinyCausalLM",
    "TrainedBundle",
    "TrainerConfig",
    "TrainingDiverged",
    "TrainingExample",
    "build_examples",
    "build_model",
    "build_paired_examples",
    "export_adapters",
    "export_bundle",
    "export_distribution_dump",
    "generate_text",
    "load_bundle",
    "preset_config",
    "train_rd",
    "train_rp",
]

__version__ = "0.1.0"
