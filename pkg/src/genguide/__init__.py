"""Genetic guidance of a latent generative model toward experimental observables."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import GenGuideError
from .ga import GAConfig, RunResult, SchedulerSpec, run
from .generator import Generator, GeneratorConfig, MixturePrior, NoiseSchedule, mixture_from_structures
from .scorers import NoeScorer, PairwiseScorer, ShiftScorer, noe_loss, pairwise_loss, shift_loss
from .structure import Structure, parse_pdb, write_pdb

__all__ = [
    "GAConfig", "GenGuideError", "Generator", "GeneratorConfig", "MixturePrior", "NoeScorer",
    "NoiseSchedule", "PairwiseScorer", "RunResult", "SchedulerSpec", "ShiftScorer", "Structure",
    "mixture_from_structures", "noe_loss", "pairwise_loss", "parse_pdb", "run", "shift_loss",
    "write_pdb",
]
