"""Extraction multi-échelle : quatre branches convolutives concaténées.

    Br1 = conv1(x)
    Br2 = conv3(conv1(x))
    Br3 = conv5(conv1(x))
    Br4 = conv1(maxpool3(x))
    sortie = concat(Br1, Br2, Br3, Br4) sur les canaux, F/4 canaux par branche

Chaque convolution est suivie d'une GeLU ; les branches ont des paramètres
indépendants. Tout est « same-padded » : la longueur L est conservée.
"""

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor
from ml.layers import Params, add_conv, conv
from utils.errors import ConfigError, ShapeError

# (nom, [(suffixe, noyau), ...]) ; la première conv de chaque branche lit l'entrée
BRANCHES: tuple[tuple[str, tuple[tuple[str, int], ...]], ...] = (
    ("br1", (("conva", 1),)),
    ("br2", (("conva", 1), ("convb", 3))),
    ("br3", (("conva", 1), ("convb", 5))),
    ("br4", (("conva", 1),)),
)
MIN_LEN = 5


def check_channels(channels: int) -> None:
    if channels <= 0 or channels % 4:
        raise ConfigError(f"FEM : F={channels} doit être un multiple positif de 4")


def init_fem(rng: np.random.Generator, channels: int, in_channels: int = 1, prefix: str = "fem") -> Params:
    check_channels(channels)
    width = channels // 4
    params: Params = {}
    for branch, convs in BRANCHES:
        cin = in_channels
        for suffix, k in convs:
            add_conv(params, f"{prefix}.{branch}.{suffix}", rng, k, cin, width)
            cin = width
    return params


def fem_forward(x: Tensor, params: Params, prefix: str = "fem") -> Tensor:
    """(L, 1) ou (B, L, 1) → (L, F) ou (B, L, F)."""
    length = x.shape[-2]
    if length < MIN_LEN:
        raise ShapeError(f"FEM : L={length} < {MIN_LEN} (noyau 5 en same-padding)")
    outs = []
    for branch, convs in BRANCHES:
        h = F.maxpool1d(x, 3) if branch == "br4" else x
        for suffix, _ in convs:
            h = F.gelu(conv(params, f"{prefix}.{branch}.{suffix}", h))
        outs.append(h)
    return F.concat(outs, axis=-1)
