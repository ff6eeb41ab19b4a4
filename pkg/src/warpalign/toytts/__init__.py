"""Synthetic tone-language task, toy generator, trainer and evaluation."""

from .task import ToyTask, make_batch, synthesize_ground_truth
from .text import Vocabulary, apply_substitutions, preprocess_tokens

__all__ = ["ToyTask", "make_batch", "synthesize_ground_truth", "Vocabulary",
           "apply_substitutions", "preprocess_tokens"]
