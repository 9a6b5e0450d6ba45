"""IE-LSTM : LSTM étendu à portes exponentielles, stabilisateur m et normaliseur n.

Chaîne complète pour une séquence x (L × F) :

    x̃      = conv3(layer_norm(x))                       pré-porte
    ĩ, f̃   = W_h· h_{t−1} + W_x· x̃_t + b                portes entrée/oubli
    z̃, õ   = W_h· h_{t−1} + W_x· x_t + b                candidat/sortie
    m_t    = max(f̃_t + m_{t−1}, ĩ_t)
    i_t    = exp(ĩ_t − m_t),  f_t = exp(f̃_t + m_{t−1} − m_t)
    n_t    = f_t·n_{t−1} + i_t
    c_t    = f_t·c_{t−1} + i_t·tanh(z̃_t)
    h_t    = sigmoid(õ_t) · c_t / (n_t + 1e-8)
    sortie = Ln1( Ln2(H) ⊙ gelu(Ln3(H)) ) + x            projection + résiduel

Chaque porte a ses propres matrices (``ielstm.gates.<g>.{wh,wx,b}``) ; elles
sont concaténées une fois par passe pour un seul matmul récurrent par pas.
"""

import logging
from dataclasses import dataclass

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor
from ml.layers import (
    Params, add_conv, add_dense, add_norm, conv, dense, kaiming_uniform, norm, orthogonal, param,
)
from utils.errors import NumericalError, ShapeError

log = logging.getLogger(__name__)

GATES = ("i", "f", "z", "o")
EPS = 1e-8
MIN_LEN = 3


@dataclass
class CellState:
    h: Tensor
    c: Tensor
    n: Tensor
    m: Tensor

    @classmethod
    def zeros(cls, batch_shape: tuple[int, ...], hidden: int) -> "CellState":
        z = np.zeros((*batch_shape, hidden))
        return cls(Tensor(z), Tensor(z), Tensor(z), Tensor(z))


def init_ielstm(rng: np.random.Generator, channels: int, hidden: int, prefix: str = "ielstm") -> Params:
    if hidden <= 0:
        raise ShapeError(f"IE-LSTM : H={hidden} doit être > 0")
    params: Params = {}
    add_norm(params, f"{prefix}.norm", channels)
    add_conv(params, f"{prefix}.conv", rng, 3, channels, channels)
    for g in GATES:
        name = f"{prefix}.gates.{g}"
        params[f"{name}.wh"] = param(f"{name}.wh", orthogonal(rng, hidden, hidden))
        params[f"{name}.wx"] = param(f"{name}.wx", kaiming_uniform(rng, (channels, hidden), channels))
        bias = np.ones(hidden) if g == "f" else np.zeros(hidden)
        params[f"{name}.b"] = param(f"{name}.b", bias)
    add_dense(params, f"{prefix}.proj.ln2", rng, hidden, hidden)
    add_dense(params, f"{prefix}.proj.ln3", rng, hidden, hidden)
    add_dense(params, f"{prefix}.proj.ln1", rng, hidden, channels)
    return params


def pregate(x: Tensor, params: Params, prefix: str = "ielstm") -> Tensor:
    return conv(params, f"{prefix}.conv", norm(params, f"{prefix}.norm", x))


def _fused(params: Params, prefix: str, part: str, gates: tuple[str, ...]) -> Tensor:
    return F.concat([params[f"{prefix}.gates.{g}.{part}"] for g in gates], axis=-1)


def gate_inputs(x: Tensor, x_tilde: Tensor, params: Params, prefix: str = "ielstm") -> Tensor:
    """Parts « entrée » des 4 préactivations, ordre (i, f, z, o) sur le dernier axe."""
    pre_if = F.linear(x_tilde, _fused(params, prefix, "wx", ("i", "f")), _fused(params, prefix, "b", ("i", "f")))
    pre_zo = F.linear(x, _fused(params, prefix, "wx", ("z", "o")), _fused(params, prefix, "b", ("z", "o")))
    return F.concat([pre_if, pre_zo], axis=-1)


def stabilized_update(
    i_pre: Tensor, f_pre: Tensor, z_pre: Tensor, o_pre: Tensor, state: CellState
) -> CellState:
    """Récurrence stabilisée à partir des préactivations d'un pas."""
    m = F.maximum(f_pre + state.m, i_pre)
    i = F.exp(i_pre - m)
    f = F.exp(f_pre + state.m - m)
    n = f * state.n + i
    c = f * state.c + i * F.tanh(z_pre)
    h = F.sigmoid(o_pre) * c / (n + EPS)
    return CellState(h=h, c=c, n=n, m=m)


def _step(pre_x: Tensor, state: CellState, wh: Tensor, hidden: int) -> CellState:
    if state.h.ndim == 1:
        rec = F.reshape(F.matmul(F.reshape(state.h, (1, hidden)), wh), (4 * hidden,))
    else:
        rec = F.matmul(state.h, wh)
    pre = pre_x + rec
    i_pre, f_pre, z_pre, o_pre = F.split(pre, [hidden] * 4, axis=-1)
    return stabilized_update(i_pre, f_pre, z_pre, o_pre, state)


def cell_step(x_t: Tensor, x_tilde_t: Tensor, state: CellState, params: Params, prefix: str = "ielstm") -> CellState:
    """Un pas de la récurrence ; x_t, x̃_t : (F,) ou (B, F)."""
    hidden = params[f"{prefix}.gates.i.wh"].shape[0]
    wh = _fused(params, prefix, "wh", GATES)
    return _step(gate_inputs(x_t, x_tilde_t, params, prefix), state, wh, hidden)


def recurrence(x: Tensor, x_tilde: Tensor, params: Params, prefix: str = "ielstm") -> Tensor:
    """Empile h_t sur la séquence : (B, L, F) → (B, L, H)."""
    hidden = params[f"{prefix}.gates.i.wh"].shape[0]
    wh = _fused(params, prefix, "wh", GATES)
    pre_x = gate_inputs(x, x_tilde, params, prefix)
    state = CellState.zeros(x.shape[:-2], hidden)
    hs = []
    for t in range(x.shape[-2]):
        try:
            state = _step(pre_x[..., t, :], state, wh, hidden)
        except NumericalError as exc:
            raise NumericalError(f"IE-LSTM : état non fini au pas {t + 1} ({exc})") from exc
        if not np.all(state.n.data > 0):
            raise NumericalError(f"IE-LSTM : normaliseur n ≤ 0 au pas {t + 1}")
        hs.append(state.h)
    return F.stack(hs, axis=-2)


def ielstm_forward(x: Tensor, params: Params, prefix: str = "ielstm") -> Tensor:
    """(L, F) ou (B, L, F) → même forme."""
    if x.shape[-2] < MIN_LEN:
        raise ShapeError(f"IE-LSTM : L={x.shape[-2]} < {MIN_LEN}")
    hs = recurrence(x, pregate(x, params, prefix), params, prefix)
    gated = dense(params, f"{prefix}.proj.ln2", hs) * F.gelu(dense(params, f"{prefix}.proj.ln3", hs))
    return dense(params, f"{prefix}.proj.ln1", gated) + x
