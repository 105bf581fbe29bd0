"""Differentiable building blocks, optimizer and checkpoint I/O."""
from .autodiff import GradientContext, NonFiniteError, Tensor, no_grad
from .layers import ParameterSet, dense, dropout, gru_cell, layer_norm
from .optim import Nadam, clip_gradients, global_norm

__all__ = ["GradientContext", "NonFiniteError", "Tensor", "no_grad", "ParameterSet", "dense", "dropout",
           "gru_cell", "layer_norm", "Nadam", "clip_gradients", "global_norm"]
