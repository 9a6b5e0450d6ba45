"""Noyau tenseur : Tensor + autodiff inverse, opérations, Adam, checkpoints."""

from autodiff.tensor import Graph, Tensor, backward, no_grad

__all__ = ["Graph", "Tensor", "backward", "no_grad"]
