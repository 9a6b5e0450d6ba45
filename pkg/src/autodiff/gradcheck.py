"""Vérification des gradients par différences finies centrées.

Utilisé par la suite de tests : h = 1e-6 en float64, erreur relative
|a − n| / max(|a|, |n|, floor) élément par élément.
"""

from typing import Callable, Sequence

import numpy as np

from autodiff.tensor import Tensor, backward


def numerical_grad(
    fn: Callable[[], Tensor], wrt: Tensor, h: float = 1e-6
) -> np.ndarray:
    """∂fn/∂wrt par différences centrées ; ``fn`` relit ``wrt.data`` à chaque appel."""
    grad = np.zeros_like(wrt.data)
    flat = wrt.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        plus = fn().item()
        flat[i] = old - h
        minus = fn().item()
        flat[i] = old
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    fn: Callable[[], Tensor], wrt: Sequence[Tensor], h: float = 1e-6
) -> float:
    """Pire erreur relative analytique vs numérique sur tous les tenseurs ``wrt``."""
    for t in wrt:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_rel_error(analytic, numerical_grad(fn, t, h)))
    return worst
