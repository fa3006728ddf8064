from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (LstmParams, LstmState, conv2d, dense, global_avg_pool, lstm_sequence,
                     lstm_step, normalize_layer)
from .optim import Adam, AdamState, adam_step
from .tensor import Parameter, Tensor, backward, concat, zero_grad

__all__ = [
    "Adam", "AdamState", "LstmParams", "LstmState", "Parameter", "Tensor", "adam_step",
    "backward", "concat", "conv2d", "dense", "global_avg_pool", "load_checkpoint",
    "lstm_sequence", "lstm_step", "normalize_layer", "save_checkpoint", "zero_grad",
]
