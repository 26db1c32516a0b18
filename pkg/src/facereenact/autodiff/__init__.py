"""Minimal float64 reverse-mode autodiff for the toy GAN kernel."""
from .tensor import Parameter, Tensor, as_tensor, backward
from .optim import Adam, AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from . import ops

__all__ = ["Tensor", "Parameter", "as_tensor", "backward", "Adam", "AdamState", "adam_step",
           "save_checkpoint", "load_checkpoint", "ops"]
