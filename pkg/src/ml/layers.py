"""Paramètres nommés et couches élémentaires partagées par les modules.

Un jeu de paramètres est un dict ordonné ``nom → Tensor`` ; les noms sont
hiérarchiques (« fem.br2.convb.w ») et servent tels quels de clés dans
les checkpoints CPG1. L'ordre d'insertion fixe l'ordre de sérialisation
et de sommation de la norme globale.

Initialisation :
  - poids de convolution / denses : Kaiming-uniforme sur le fan-in
  - matrices récurrentes : orthogonales
  - biais : zéro ; gains de layer-norm : 1, offsets : 0
"""

from typing import Callable

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor
from utils.errors import ConfigError

Params = dict[str, Tensor]


def param(name: str, data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


# ── Déclaration ───────────────────────────────────────────────────────────────


def add_conv(params: Params, prefix: str, rng: np.random.Generator, k: int, cin: int, cout: int) -> None:
    if k % 2 == 0:
        raise ConfigError(f"{prefix} : taille de noyau paire ({k})")
    params[f"{prefix}.w"] = param(f"{prefix}.w", kaiming_uniform(rng, (k, cin, cout), k * cin))
    params[f"{prefix}.b"] = param(f"{prefix}.b", np.zeros(cout))


def add_dense(
    params: Params, prefix: str, rng: np.random.Generator, cin: int, cout: int, bias: bool = True
) -> None:
    params[f"{prefix}.w"] = param(f"{prefix}.w", kaiming_uniform(rng, (cin, cout), cin))
    if bias:
        params[f"{prefix}.b"] = param(f"{prefix}.b", np.zeros(cout))


def add_norm(params: Params, prefix: str, n: int) -> None:
    params[f"{prefix}.gain"] = param(f"{prefix}.gain", np.ones(n))
    params[f"{prefix}.offset"] = param(f"{prefix}.offset", np.zeros(n))


# ── Application ───────────────────────────────────────────────────────────────


def conv(params: Params, prefix: str, x: Tensor) -> Tensor:
    return F.conv1d(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def dense(params: Params, prefix: str, x: Tensor) -> Tensor:
    return F.linear(x, params[f"{prefix}.w"], params.get(f"{prefix}.b"))


def norm(params: Params, prefix: str, x: Tensor) -> Tensor:
    return F.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.offset"])


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": F.gelu,
    "sigmoid": F.sigmoid,
    "tanh": F.tanh,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"activation inconnue '{name}' (choix : {sorted(ACTIVATIONS)})") from None


def subset(params: Params, prefix: str) -> Params:
    """Paramètres dont le nom commence par ``prefix.``."""
    head = prefix + "."
    return {k: v for k, v in params.items() if k.startswith(head)}
