"""Kolmogorov-Arnold networks with neuron Dropout and DropKAN masking."""

from .autograd import GradientSet, LossKind, backward, loss_eval
from .data import DatasetSplits, RawTable, fit_schema, load_csv, split, transform
from .layers import (
    DropConfig, DropMode, KanLayer, KanNetwork, build_network, layer_forward, load_network,
    network_forward, sample_mask, save_network,
)
from .splines import EdgeActivation, EdgeGrid, activation_eval, basis_deriv, basis_eval, silu, silu_deriv
from .train import AdamConfig, MetricLog, NonFiniteError, TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
