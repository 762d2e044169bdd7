from .config import ModelConfig
from .labels import MappingError, label_text, map_label
from .layers import apply_dropout, attention, gelu, layer_norm, softmax
from .network import (
    NonFiniteError,
    SequenceTooLong,
    WeightBundle,
    classifier_forward,
    encoder_forward,
    greedy_decode,
    greedy_decode_ids,
    init_weights,
    next_token_logits,
    param_shapes,
    seq2seq_forward,
)
from .weights import WeightFileError, load_weights, read_weights, save_weights

__all__ = [
    "MappingError",
    "ModelConfig",
    "NonFiniteError",
    "SequenceTooLong",
    "WeightBundle",
    "WeightFileError",
    "apply_dropout",
    "attention",
    "classifier_forward",
    "encoder_forward",
    "gelu",
    "greedy_decode",
    "greedy_decode_ids",
    "init_weights",
    "label_text",
    "layer_norm",
    "load_weights",
    "map_label",
    "next_token_logits",
    "param_shapes",
    "read_weights",
    "save_weights",
    "seq2seq_forward",
    "softmax",
]
