"""Cipher-language laboratory for consistency-regularized translation
instruction finetuning of a small decoder-only transformer."""

from . import (
    autodiff,
    decoding,
    errors,
    evaluation,
    experiments,
    languages,
    losses,
    prompts,
    representation,
    training,
    transformer,
)

__all__ = [
    "autodiff",
    "decoding",
    "errors",
    "evaluation",
    "experiments",
    "languages",
    "losses",
    "prompts",
    "representation",
    "training",
    "transformer",
]

__version__ = "0.1.0"
