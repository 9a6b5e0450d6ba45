"""Attention double flux : flux SOH (attention polarisée) et flux RUL (attention creuse).

Chaque flux est un bloc encodeur :

    a   = layer_norm(attention(x) + x)
    out = layer_norm(ffn(a) + a),   ffn : F → ffn_hidden → F

Attention polarisée (deux branches en série, convolutions noyau 3) :
    canal   : q = C_q(x) (L×1), v = C_v(x) (L×F/2)
              w_ch = sigmoid(Ln(C_z(vᵀ·softmax_L(q))))        1×F
              y = w_ch ⊙ x
    spatial : q' = softmax_canaux(max_L(C_q'(y)))              1×F/2
              v' = C_v'(y)                                     L×F/2
              w_sp = sigmoid(v'·q'ᵀ)                            L×1
              sortie = w_sp ⊙ y

Attention creuse (par tête, d = F/heads) :
    Q, K, V = x·W_Q, x·W_K, x·W_V
    S clés tirées sans remise (graine explicite)
    M̄(q_i) = max_j(q_i·k̄_j/√d) − (1/L)·Σ_j q_i·k̄_j/√d    (1/S si mean_norm="S")
    les U requêtes de plus grand M̄ reçoivent softmax(q_i·Kᵀ/√d)·V,
    les autres lignes la moyenne des lignes de V ; puis concat des têtes
    et projection de sortie F → F.
    U = min(L, ⌈c_u·ln L⌉), S = min(L, ⌈c_s·ln L⌉), bornés à [1, L].
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor
from ml.layers import Params, activation, add_conv, add_dense, add_norm, conv, dense, norm
from utils.errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseConfig:
    heads: int = 4
    c_u: float = 5.0
    c_s: float = 5.0
    mean_norm: str = "L"
    n_queries: int | None = None
    n_keys: int | None = None

    def __post_init__(self) -> None:
        if self.mean_norm not in ("L", "S"):
            raise ConfigError(f"mean_norm doit valoir 'L' ou 'S', reçu '{self.mean_norm}'")
        if self.heads <= 0:
            raise ConfigError(f"heads={self.heads} doit être > 0")


def _budget(c: float, length: int, override: int | None, label: str) -> int:
    raw = override if override is not None else math.ceil(c * math.log(length)) if length > 1 else 1
    value = min(max(int(raw), 1), length)
    if value != raw:
        log.debug("attention creuse : %s=%s borné à %d (L=%d)", label, raw, value, length)
    return value


def query_budget(cfg: SparseConfig, length: int) -> int:
    return _budget(cfg.c_u, length, cfg.n_queries, "U")


def key_budget(cfg: SparseConfig, length: int) -> int:
    return _budget(cfg.c_s, length, cfg.n_keys, "S")


# ── Initialisation ────────────────────────────────────────────────────────────


def _init_encoder(params: Params, prefix: str, rng: np.random.Generator, channels: int, ffn_hidden: int) -> None:
    add_norm(params, f"{prefix}.norm1", channels)
    add_dense(params, f"{prefix}.ffn.fc1", rng, channels, ffn_hidden)
    add_dense(params, f"{prefix}.ffn.fc2", rng, ffn_hidden, channels)
    add_norm(params, f"{prefix}.norm2", channels)


def init_polarized(rng: np.random.Generator, channels: int, prefix: str = "dsam.pa.attn") -> Params:
    if channels % 2:
        raise ConfigError(f"attention polarisée : F={channels} doit être pair")
    half = channels // 2
    params: Params = {}
    add_conv(params, f"{prefix}.cq", rng, 3, channels, 1)
    add_conv(params, f"{prefix}.cv", rng, 3, channels, half)
    add_conv(params, f"{prefix}.cz", rng, 3, half, channels)
    add_norm(params, f"{prefix}.norm", channels)
    add_conv(params, f"{prefix}.sq", rng, 3, channels, half)
    add_conv(params, f"{prefix}.sv", rng, 3, channels, half)
    return params


def init_sparse(rng: np.random.Generator, channels: int, heads: int, prefix: str = "dsam.sa.attn") -> Params:
    if channels % heads:
        raise ConfigError(f"attention creuse : F={channels} non divisible par heads={heads}")
    d = channels // heads
    params: Params = {}
    for h in range(heads):
        for part in ("wq", "wk", "wv"):
            add_dense(params, f"{prefix}.head{h}.{part}", rng, channels, d, bias=False)
    add_dense(params, f"{prefix}.out", rng, channels, channels)
    return params


def init_dsam(rng: np.random.Generator, channels: int, heads: int, ffn_hidden: int, prefix: str = "dsam") -> Params:
    params: Params = {}
    params.update(init_polarized(rng, channels, f"{prefix}.pa.attn"))
    _init_encoder(params, f"{prefix}.pa", rng, channels, ffn_hidden)
    params.update(init_sparse(rng, channels, heads, f"{prefix}.sa.attn"))
    _init_encoder(params, f"{prefix}.sa", rng, channels, ffn_hidden)
    return params


# ── Attention polarisée ───────────────────────────────────────────────────────


def polarized_attention(
    x: Tensor, params: Params, prefix: str = "dsam.pa.attn", return_weights: bool = False
):
    """(B, L, F) → (B, L, F) ; avec ``return_weights`` renvoie aussi (w_ch, w_sp)."""
    if x.shape[-1] % 2:
        raise ConfigError(f"attention polarisée : F={x.shape[-1]} doit être pair")
    q = F.softmax(conv(params, f"{prefix}.cq", x), axis=-2)                     # (B, L, 1)
    v = conv(params, f"{prefix}.cv", x)                                        # (B, L, F/2)
    pooled = F.transpose_last_two(F.matmul(F.transpose_last_two(v), q))       # (B, 1, F/2)
    w_ch = F.sigmoid(norm(params, f"{prefix}.norm", conv(params, f"{prefix}.cz", pooled)))
    y = w_ch * x

    qs = F.softmax(F.amax(conv(params, f"{prefix}.sq", y), axis=-2, keepdims=True), axis=-1)
    vs = conv(params, f"{prefix}.sv", y)                                       # (B, L, F/2)
    w_sp = F.sigmoid(F.matmul(vs, F.transpose_last_two(qs)))                   # (B, L, 1)
    out = w_sp * y
    return (out, w_ch, w_sp) if return_weights else out


# ── Attention creuse ──────────────────────────────────────────────────────────


def sample_keys(rng: np.random.Generator, length: int, n_keys: int) -> np.ndarray:
    return np.sort(rng.choice(length, size=n_keys, replace=False))


def sparsity_measure(q: np.ndarray, k_sample: np.ndarray, length: int, mean_norm: str = "L") -> np.ndarray:
    """M̄ par requête : q (..., L, d), k_sample (..., S, d) → (..., L)."""
    d = q.shape[-1]
    scores = q @ np.swapaxes(k_sample, -1, -2) / np.sqrt(d)
    denom = length if mean_norm == "L" else k_sample.shape[-2]
    return scores.max(axis=-1) - scores.sum(axis=-1) / denom


def select_top_queries(measure: np.ndarray, n_queries: int) -> np.ndarray:
    """Indices des U plus grands M̄ (à égalité, plus petit indice d'abord), triés."""
    order = np.argsort(-measure, axis=-1, kind="stable")[..., :n_queries]
    return np.sort(order, axis=-1)


def sparse_attention(
    x: Tensor, params: Params, seed: int, cfg: SparseConfig = SparseConfig(), prefix: str = "dsam.sa.attn"
) -> Tensor:
    """(L, F) ou (B, L, F) → même forme ; l'échantillon de clés ne dépend que de ``seed`` et de la tête."""
    batched = x.ndim == 3
    xb = x if batched else F.reshape(x, (1, *x.shape))
    n_batch, length, channels = xb.shape
    if channels % cfg.heads:
        raise ConfigError(f"attention creuse : F={channels} non divisible par heads={cfg.heads}")
    d = channels // cfg.heads
    n_queries = query_budget(cfg, length)
    n_keys = key_budget(cfg, length)
    rng = np.random.default_rng(seed)
    bi = np.arange(n_batch)[:, None]

    heads = []
    for h in range(cfg.heads):
        q = dense(params, f"{prefix}.head{h}.wq", xb)
        k = dense(params, f"{prefix}.head{h}.wk", xb)
        v = dense(params, f"{prefix}.head{h}.wv", xb)
        keys = sample_keys(rng, length, n_keys)
        measure = sparsity_measure(q.data, k.data[:, keys], length, cfg.mean_norm)
        sel = select_top_queries(measure, n_queries)                          # (B, U)

        q_sel = q[bi, sel]                                                     # (B, U, d)
        attn = F.softmax(F.matmul(q_sel, F.transpose_last_two(k)) * (1.0 / np.sqrt(d)), axis=-1)
        rows = F.matmul(attn, v)                                               # (B, U, d)
        fill = F.broadcast_to(F.mean(v, axis=-2, keepdims=True), (n_batch, length, d))
        heads.append(F.place_rows(fill, rows, sel))

    out = dense(params, f"{prefix}.out", F.concat(heads, axis=-1))
    return out if batched else F.reshape(out, out.shape[1:])


# ── Blocs encodeurs ───────────────────────────────────────────────────────────


def ffn(a: Tensor, params: Params, prefix: str, act: str = "sigmoid") -> Tensor:
    return dense(params, f"{prefix}.fc2", activation(act)(dense(params, f"{prefix}.fc1", a)))


def encoder_block(
    x: Tensor,
    attention_fn: Callable[[Tensor], Tensor],
    params: Params,
    prefix: str,
    ffn_act: str = "sigmoid",
) -> Tensor:
    a = norm(params, f"{prefix}.norm1", attention_fn(x) + x)
    return norm(params, f"{prefix}.norm2", ffn(a, params, f"{prefix}.ffn", ffn_act) + a)


def dsam_forward(
    x: Tensor,
    params: Params,
    seed: int,
    cfg: SparseConfig = SparseConfig(),
    ffn_act: str = "sigmoid",
    prefix: str = "dsam",
) -> tuple[Tensor, Tensor]:
    """Retourne (flux SOH, flux RUL) ; les deux flux ne partagent aucun paramètre."""
    soh = encoder_block(
        x, lambda t: polarized_attention(t, params, f"{prefix}.pa.attn"), params, f"{prefix}.pa", ffn_act
    )
    rul = encoder_block(
        x, lambda t: sparse_attention(t, params, seed, cfg, f"{prefix}.sa.attn"), params, f"{prefix}.sa", ffn_act
    )
    return soh, rul
