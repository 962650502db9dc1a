"""Audio dubbing toolkit.

A self-contained mel-spectrogram inpainting system: a flow-matching
transformer fills masked spans of a log-mel spectrogram, conditioned on
silent-video features and the target text, with classifier-free guidance
over both condition streams. Ships with a synthetic paired corpus, a
training/evaluation pipeline, and a CLI (``adt --help``).

Typical library use::

    from adt import Config, load_corpus, load_model, sample

The CLI in :mod:`adt.cli` strings these pieces together.
"""

from .config import Config, build_id
from .corpus import (Corpus, CorpusConfig, build_corpus, load_corpus,
                     make_reference_pair, save_corpus)
from .dit import MelInpainter
from .errors import (AdtError, AlignmentInfeasibleError, ConfigError,
                     DimensionError, DomainError, FormatError, InputError)
from .evaluate import evaluate_model, train_classifier
from .sampler import sample
from .text import Alphabet
from .training import build_model, load_model, pretrain, train

__version__ = "0.1.0"

__all__ = [
    "AdtError", "AlignmentInfeasibleError", "Alphabet", "Config",
    "ConfigError", "Corpus", "CorpusConfig", "DimensionError", "DomainError",
    "FormatError", "InputError", "MelInpainter", "build_corpus", "build_id",
    "build_model", "evaluate_model", "load_corpus", "load_model",
    "make_reference_pair", "pretrain", "sample", "save_corpus", "train",
    "train_classifier",
]
