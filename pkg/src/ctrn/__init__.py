"""Cross temporal recurrent networks for ranking question/answer pairs."""

from .encoder import align_step, compute_gates, ctrn_pair, embed_project, fo_pool
from .model import ModelConfig, Ranker

__all__ = [
    "ModelConfig",
    "Ranker",
    "align_step",
    "compute_gates",
    "ctrn_pair",
    "embed_project",
    "fo_pool",
]
__version__ = "0.1.0"
