"""Prompted weak supervision: prompts as labeling functions, label-model
denoising, and expected-risk training of a small servable classifier."""

__version__ = "0.1.0"

from .data import ABSTAIN, ClassSpace, Dataset, Example, Vote, VoteMatrix
from .prompts import LabelMap, LabelerSuite, PromptTemplate, PromptedLF

__all__ = [
    "ABSTAIN",
    "ClassSpace",
    "Dataset",
    "Example",
    "Vote",
    "VoteMatrix",
    "LabelMap",
    "LabelerSuite",
    "PromptTemplate",
    "PromptedLF",
    "__version__",
]
