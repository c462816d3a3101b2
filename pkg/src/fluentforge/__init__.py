"""Desk-scale toolkit converting synthetic stuttered speech to fluent speech
while jointly predicting its grapheme transcription."""

__version__ = "0.1.0"

from .autodiff import Tensor
from .corpus import DisfluencyEvent, DisfluencyKind, Lexicon, PairedSample, generate_corpus
from .frontend import StftConfig, Waveform, griffin_lim, log_mel, read_wav, write_wav
from .metrics import cer, evaluate_model, wer, wilcoxon_signed_rank
from .stutterformer import StutterFormer, StutterFormerConfig
from .stutterzero import StutterZero, StutterZeroConfig
from .training import TrainConfig, load_checkpoint, make_splits, save_checkpoint, train

__all__ = [
    "Tensor", "DisfluencyEvent", "DisfluencyKind", "Lexicon", "PairedSample",
    "generate_corpus", "StftConfig", "Waveform", "griffin_lim", "log_mel",
    "read_wav", "write_wav", "cer", "evaluate_model", "wer",
    "wilcoxon_signed_rank", "StutterFormer", "StutterFormerConfig",
    "StutterZero", "StutterZeroConfig", "TrainConfig", "load_checkpoint",
    "make_splits", "save_checkpoint", "train",
]
