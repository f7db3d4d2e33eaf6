"""Numpy neural network layers with hand-written backward passes, and the M1-M4 models."""

from .layers import (
    LSTM,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    GlobalStatPool,
    LayerStateError,
    MaxPool1d,
    ReLU,
    cccp_forward,
    conv1d_forward,
    cross_entropy,
    dropout,
    gsp_forward,
    lstm_step,
    max_pool1d,
    relu,
    sigmoid,
    softmax,
    softmax_head,
    xavier_init,
)
from .model import VARIANTS, Network, NetworkSpec

__all__ = [
    "LSTM",
    "Conv1d",
    "Dense",
    "Dropout",
    "Flatten",
    "GlobalStatPool",
    "LayerStateError",
    "MaxPool1d",
    "ReLU",
    "cccp_forward",
    "conv1d_forward",
    "cross_entropy",
    "dropout",
    "gsp_forward",
    "lstm_step",
    "max_pool1d",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_head",
    "xavier_init",
    "VARIANTS",
    "Network",
    "NetworkSpec",
]
