"""Open relation extraction with a two-role generation pipeline.

A discoverer role proposes new relation names for unlabeled instances from
known-relation demonstrations; a predictor role picks among candidate
relations shown in its demonstrations. Inference composes them into three
self-correcting stages (discovery, denoising, prediction) over a pluggable
text-generation backend, with reference loss math and a full clustering
evaluation suite alongside.
"""

from .domain import (
    CandidatePrediction,
    Corpus,
    Instance,
    LabeledInstance,
    PipelineConfig,
    RelationName,
    ReliableSet,
    normalize_relation_name,
    validate_corpus,
)
from .backend import (
    GenerationRequest,
    HttpBackend,
    ReplayBackend,
    SimulatedOracle,
    SimulatedOracleConfig,
    TextBackend,
)
from .infer import run_discovery, run_denoising, run_pipeline, run_prediction
from .metrics import EvalReport, evaluate

__all__ = [
    "CandidatePrediction",
    "Corpus",
    "EvalReport",
    "GenerationRequest",
    "HttpBackend",
    "Instance",
    "LabeledInstance",
    "PipelineConfig",
    "RelationName",
    "ReliableSet",
    "ReplayBackend",
    "SimulatedOracle",
    "SimulatedOracleConfig",
    "TextBackend",
    "evaluate",
    "normalize_relation_name",
    "run_denoising",
    "run_discovery",
    "run_pipeline",
    "run_prediction",
    "validate_corpus",
]

__version__ = "0.1.0"
