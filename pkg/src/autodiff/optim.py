"""Adam avec correction de biais + écrêtage par norme globale.

Les paramètres sont un dict ordonné ``nom → Tensor`` ; les gradients un dict
``nom → ndarray`` de mêmes shapes. L'ordre d'itération du dict fixe l'ordre
de sommation de la norme globale, donc le résultat est reproductible au bit.
"""

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from autodiff.tensor import Tensor
from utils.errors import NumericalError, ShapeError, UsageError


@dataclass
class AdamState:
    """Moments d'ordre 1 et 2 par paramètre, initialisés à zéro au premier pas."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def collect_grads(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients courants ; zéros pour les paramètres que la perte n'atteint pas."""
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_grad_norm(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Ramène la norme globale à ``max_norm`` si elle la dépasse.

    ``max_norm <= 0`` désactive l'écrêtage. Retourne (gradients, norme avant).
    """
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / (norm + 1e-12)
    return {name: g * scale for name, g in grads.items()}, norm


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Un pas d'Adam en place sur ``params.data`` ; incrémente ``state.step`` de 1."""
    if lr <= 0:
        raise UsageError(f"adam_step : lr doit être > 0, reçu {lr}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"adam_step : gradient non fini pour le paramètre '{name}'")
        if g.shape != params[name].shape:
            raise ShapeError(f"adam_step : '{name}' grad {g.shape} vs param {params[name].shape}")

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
