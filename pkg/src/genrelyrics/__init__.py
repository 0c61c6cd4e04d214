"""Genre-conditioned lyrics transcription at desk scale.

A numpy-only hybrid CTC/attention transformer whose encoder and decoder
blocks carry per-genre residual adapters.
"""

from .data import GenreClass
from .decode import DecodeConfig, beam_search
from .model import AdapterPlacement, GenreTransformer, ModelConfig, load_checkpoint, save_checkpoint
from .scoring import wer
from .tokenizer import BpeModel, train_bpe

__version__ = "0.1.0"

__all__ = [
    "AdapterPlacement", "BpeModel", "DecodeConfig", "GenreClass", "GenreTransformer", "ModelConfig",
    "beam_search", "load_checkpoint", "save_checkpoint", "train_bpe", "wer",
]
