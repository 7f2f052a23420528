"""Object-centric video dialog at desk scale.

A small library for training and probing a dialog model that reasons over
per-object feature trajectories: query-driven temporal summaries, recurrent
per-object dialog states, graph reasoning over a question-specific
interaction matrix, answer-history retrieval, and a pointer-augmented
autoregressive decoder. Everything runs on the numpy autodiff core in
:mod:`objdialog.tensor`.
"""

from .tensor import (
    Adam,
    DegenerateInputError,
    OutOfVocabularyError,
    ShapeMismatchError,
    Tape,
    TapeError,
    Tensor,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "DegenerateInputError",
    "OutOfVocabularyError",
    "ShapeMismatchError",
    "Tape",
    "TapeError",
    "Tensor",
    "__version__",
]
