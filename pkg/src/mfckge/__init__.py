"""Continual knowledge graph embedding with per-snapshot decoupled spaces."""
from .config import DESK, PRESETS, TrainConfig
from .errors import MFCKGEError
from .evaluator import MetricsMatrix, evaluate_all, evaluate_snapshot, lifelong_run
from .inference import FilterIndex, Predictor, Query, rank_query
from .kg import GrowingKG, load_growing_kg, write_growing_kg
from .kernels import BACKEND
from .store import EmbeddingStore, load_checkpoint, save_checkpoint
from .synthgen import SynthSpec, synthesize_growing_kg

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DESK", "PRESETS", "EmbeddingStore", "FilterIndex", "GrowingKG", "MFCKGEError", "MetricsMatrix",
    "Predictor", "Query", "SynthSpec", "TrainConfig", "evaluate_all", "evaluate_snapshot", "lifelong_run",
    "load_checkpoint", "load_growing_kg", "rank_query", "save_checkpoint", "synthesize_growing_kg",
    "write_growing_kg",
]
