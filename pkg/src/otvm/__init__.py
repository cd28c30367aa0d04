"""One-trimap video matting: trimap propagation, alpha prediction and refinement."""
from .clipsim import ClipSample, composite, make_trimap, simulate_clip
from .config import Config, get_config, load_config
from .engine import memory_policy, run_sequence
from .estimator import OneTrimapVideoMatting, TrimapGenerator
from .losses import total_loss
from .metrics import alpha_metrics, trimap_quality
from .model import OTVM, build_model, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "OTVM",
    "ClipSample",
    "Config",
    "OneTrimapVideoMatting",
    "TrimapGenerator",
    "alpha_metrics",
    "build_model",
    "composite",
    "get_config",
    "load_checkpoint",
    "load_config",
    "make_trimap",
    "memory_policy",
    "run_sequence",
    "save_checkpoint",
    "simulate_clip",
    "total_loss",
    "trimap_quality",
]
