"""Bayesian weighted relaxed instance frequency-wise normalization for
speaker embeddings, built on a minimal verified autodiff engine."""

from .autodiff import Parameter, Tape, Tensor, backward, gradcheck
from .estimator import SpeakerEmbedder
from .network import NetworkConfig, build, load_checkpoint, save_checkpoint
from .norm import (DeterministicWeights, NoiseMode, RelaxationConfig,
                   VariationalWeights, bwrfn, ifn, kl_to_standard_normal, ln,
                   rfn, sample_weights, wrfn)
from .train import TrainConfig, train

__all__ = [
    "Parameter", "Tape", "Tensor", "backward", "gradcheck",
    "SpeakerEmbedder",
    "NetworkConfig", "build", "load_checkpoint", "save_checkpoint",
    "DeterministicWeights", "NoiseMode", "RelaxationConfig",
    "VariationalWeights", "bwrfn", "ifn", "kl_to_standard_normal", "ln",
    "rfn", "sample_weights", "wrfn",
    "TrainConfig", "train",
]

__version__ = "0.1.0"
