"""Réseau complet FEM → IE-LSTM → DSAM → têtes SOH/RUL, perte jointe.

Entrée : séquence de tension (L,), (L, 1), (B, L) ou (B, L, 1), déjà
interpolée à ``seq_len``. Sorties par échantillon : SOH (fraction, non
bornée) et RUL normalisé (RUL / rul_scale).

Variantes d'ablation :
  - use_fem=false    : une conv ponctuelle 1 → F remplace les quatre branches
  - use_ielstm=false : la sortie FEM passe telle quelle
  - use_dsam=false   : les deux têtes lisent la même sortie IE-LSTM

Option use_factors=true : les facteurs de charge partielle du cycle
(``factors``, standardisés par factor_mean/factor_scale) sont concaténés à
la moyenne temporelle avant la première couche dense de chaque tête.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from sklearn.preprocessing import StandardScaler

from autodiff import functional as F
from autodiff.tensor import Tensor
from battery.cells import CellDataset
from battery.features import FEATURE_NAMES
from config.loader import dump_flat, load_config, load_flat
from ml.dsam import SparseConfig, dsam_forward, init_dsam
from ml.fem import check_channels, fem_forward, init_fem
from ml.ielstm import ielstm_forward, init_ielstm
from ml.layers import Params, activation, add_conv, add_dense, conv, dense
from utils.errors import ConfigError, ShapeError, UsageError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 200
    channels: int = 64
    hidden: int = 128
    task_hidden: int = 128
    ffn_hidden: int = 64
    heads: int = 4
    c_u: float = 5.0
    c_s: float = 5.0
    mean_norm: str = "L"
    ffn_act: str = "sigmoid"
    head_act: str = "gelu"
    soh_weight: float = 1.0
    rul_weight: float = 1.0
    rul_scale: float = 1.0
    v_mean: float = 0.0
    v_scale: float = 1.0
    use_fem: bool = True
    use_ielstm: bool = True
    use_dsam: bool = True
    use_factors: bool = False
    factors: tuple[str, ...] = ()
    factor_threshold: float = 0.8
    factor_mean: tuple[float, ...] = ()
    factor_scale: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        for name in ("seq_len", "channels", "hidden", "task_hidden", "ffn_hidden", "heads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ModelConfig : {name}={getattr(self, name)} doit être > 0")
        for name in ("c_u", "c_s", "rul_scale", "v_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"ModelConfig : {name}={getattr(self, name)} doit être > 0")
        check_channels(self.channels)
        if self.channels % self.heads:
            raise ConfigError(f"ModelConfig : F={self.channels} non divisible par heads={self.heads}")
        if self.soh_weight < 0 or self.rul_weight < 0:
            raise ConfigError("ModelConfig : poids de perte négatifs")
        activation(self.ffn_act)
        activation(self.head_act)
        SparseConfig(heads=self.heads, mean_norm=self.mean_norm)
        unknown = [n for n in self.factors if n not in FEATURE_NAMES]
        if unknown or len(set(self.factors)) != len(self.factors):
            raise ConfigError(f"ModelConfig : factors={list(self.factors)} (connus : {list(FEATURE_NAMES)})")
        if not 0 <= self.factor_threshold <= 1:
            raise ConfigError(f"ModelConfig : factor_threshold={self.factor_threshold} hors de [0, 1]")
        if self.factor_mean or self.factor_scale:
            if not len(self.factor_mean) == len(self.factor_scale) == len(self.factors):
                raise ConfigError("ModelConfig : factor_mean/factor_scale de longueur ≠ factors")
            if not all(s > 0 for s in self.factor_scale):
                raise ConfigError("ModelConfig : factor_scale doit être > 0")

    @property
    def n_factors(self) -> int:
        """Largeur ajoutée à l'entrée des têtes (0 hors option facteurs)."""
        return len(self.factors) if self.use_factors else 0

    @property
    def sparse(self) -> SparseConfig:
        return SparseConfig(heads=self.heads, c_u=self.c_u, c_s=self.c_s, mean_norm=self.mean_norm)

    # ── Persistance ──────────────────────────────────────────────────────────

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "ModelConfig | None" = None) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"ModelConfig : clés inconnues {unknown}")
        base = base or cls()
        coerced = {}
        for key, val in values.items():
            kind = type(getattr(base, key))
            if kind is bool and not isinstance(val, bool):
                raise ConfigError(f"ModelConfig : {key} attend true/false, reçu {val!r}")
            if kind is tuple:
                if not isinstance(val, (list, tuple)):
                    raise ConfigError(f"ModelConfig : {key} attend une liste, reçu {val!r}")
                coerced[key] = tuple(v if key == "factors" else float(v) for v in val)
                continue
            coerced[key] = kind(val)
        return replace(base, **coerced)

    @classmethod
    def defaults(cls) -> "ModelConfig":
        """Valeurs de config/model.toml."""
        return cls.from_mapping(load_config("model").get("model", {}))

    @classmethod
    def load(cls, path: Path, base: "ModelConfig | None" = None) -> "ModelConfig":
        return cls.from_mapping(load_flat(path), base)

    def to_mapping(self) -> dict[str, Any]:
        return asdict(self)

    def save(self, path: Path) -> None:
        dump_flat(path, self.to_mapping(), header="ModelConfig (cellprog)")


@dataclass
class Prediction:
    """Sorties par échantillon ; ``rul_hat`` en cycles = rul_hat_norm × rul_scale."""

    soh_hat: Tensor
    rul_hat_norm: Tensor
    rul_scale: float

    @property
    def rul_hat(self) -> np.ndarray:
        return self.rul_hat_norm.data * self.rul_scale


@dataclass
class LossTerms:
    total: Tensor
    soh: float
    rul: float
    n_rul: int


# ── Paramètres ────────────────────────────────────────────────────────────────


def _init_head(params: Params, prefix: str, rng: np.random.Generator, channels: int, hidden: int) -> None:
    add_dense(params, f"{prefix}.fc1", rng, channels, hidden)
    add_dense(params, f"{prefix}.fc2", rng, hidden, 1)


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Jeu complet, ordre stable : fem|lift, ielstm, dsam, head.soh, head.rul."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    if cfg.use_fem:
        params.update(init_fem(rng, cfg.channels))
    else:
        add_conv(params, "lift", rng, 1, 1, cfg.channels)
    if cfg.use_ielstm:
        params.update(init_ielstm(rng, cfg.channels, cfg.hidden))
    if cfg.use_dsam:
        params.update(init_dsam(rng, cfg.channels, cfg.heads, cfg.ffn_hidden))
    if cfg.use_factors and not cfg.factors:
        raise UsageError("init_params : use_factors sans facteurs retenus (factors vide)")
    _init_head(params, "head.soh", rng, cfg.channels + cfg.n_factors, cfg.task_hidden)
    _init_head(params, "head.rul", rng, cfg.channels + cfg.n_factors, cfg.task_hidden)
    return params


def check_params(params: Params, cfg: ModelConfig) -> None:
    """Vérifie noms et formes d'un jeu chargé contre la config (checkpoint ↔ model.cfg)."""
    expected = {name: t.shape for name, t in init_params(cfg).items()}
    got = {name: t.shape for name, t in params.items()}
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    if missing or extra:
        raise ConfigError(f"checkpoint incompatible avec la config : manquants {missing[:5]}, en trop {extra[:5]}")
    wrong = [n for n in expected if expected[n] != got[n]]
    if wrong:
        n = wrong[0]
        raise ShapeError(f"checkpoint incompatible : '{n}' {got[n]} vs attendu {expected[n]}")


# ── Passe avant ───────────────────────────────────────────────────────────────


def task_head(x: Tensor, params: Params, prefix: str, act: str = "gelu", extra: Tensor | None = None) -> Tensor:
    """(…, L, F) → (…,) : moyenne sur L, dense task_hidden, activation, dense 1.

    ``extra`` (…, k) est concaténé à la moyenne avant la première dense.
    """
    pooled = F.mean(x, axis=-2, keepdims=True)
    if extra is not None:
        if extra.shape[:-1] != pooled.shape[:-2]:
            raise ShapeError(f"task_head : facteurs {extra.shape} vs flux {x.shape}")
        pooled = F.concat([pooled, F.reshape(extra, (*pooled.shape[:-2], 1, extra.shape[-1]))], axis=-1)
    out = dense(params, f"{prefix}.fc2", activation(act)(dense(params, f"{prefix}.fc1", pooled)))
    return F.reshape(out, out.shape[:-2])


def _as_input(x, cfg: ModelConfig) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    shape = x.shape
    if len(shape) in (2, 3) and shape[-1] == 1:
        shape = shape[:-1]
    if len(shape) not in (1, 2) or shape[-1] != cfg.seq_len:
        raise ShapeError(f"entrée {x.shape} incompatible avec seq_len={cfg.seq_len}")
    x = F.reshape(x, (*shape, 1)) if x.shape != (*shape, 1) else x
    return (x - cfg.v_mean) * (1.0 / cfg.v_scale)


def forward_streams(x, params: Params, cfg: ModelConfig, seed: int = 0) -> tuple[Tensor, Tensor]:
    h = _as_input(x, cfg)
    h = fem_forward(h, params) if cfg.use_fem else conv(params, "lift", h)
    if cfg.use_ielstm:
        h = ielstm_forward(h, params)
    if cfg.use_dsam:
        return dsam_forward(h, params, seed, cfg.sparse, cfg.ffn_act)
    return h, h


def _factor_input(factors, cfg: ModelConfig) -> Tensor | None:
    if not cfg.use_factors:
        if factors is not None:
            raise UsageError("model_forward : facteurs fournis alors que use_factors=false")
        return None
    if factors is None:
        raise UsageError(f"model_forward : use_factors=true, facteurs {list(cfg.factors)} requis")
    factors = factors if isinstance(factors, Tensor) else Tensor(factors)
    if factors.shape[-1:] != (cfg.n_factors,):
        raise ShapeError(f"facteurs {factors.shape} incompatibles avec {cfg.n_factors} facteur(s)")
    if not cfg.factor_mean:
        return factors
    return (factors - np.asarray(cfg.factor_mean)) * (1.0 / np.asarray(cfg.factor_scale))


def model_forward(x, params: Params, cfg: ModelConfig, seed: int = 0, factors=None) -> Prediction:
    """``factors`` : (k,) ou (B, k) bruts, requis si et seulement si use_factors."""
    extra = _factor_input(factors, cfg)
    soh_stream, rul_stream = forward_streams(x, params, cfg, seed)
    return Prediction(
        soh_hat=task_head(soh_stream, params, "head.soh", cfg.head_act, extra),
        rul_hat_norm=task_head(rul_stream, params, "head.rul", cfg.head_act, extra),
        rul_scale=cfg.rul_scale,
    )


# ── Perte ─────────────────────────────────────────────────────────────────────


def joint_loss(
    pred: Prediction,
    soh: Sequence[float] | np.ndarray,
    rul_norm: Sequence[float] | np.ndarray,
    soh_weight: float = 1.0,
    rul_weight: float = 1.0,
) -> LossTerms:
    """MSE(SOH) + MSE(RUL normalisé) ; ``rul_norm`` vaut NaN pour les échantillons sans RUL.

    Le terme RUL est moyenné sur les seuls échantillons étiquetés.
    """
    soh = np.atleast_1d(np.asarray(soh, dtype=np.float64))
    rul_norm = np.atleast_1d(np.asarray(rul_norm, dtype=np.float64))
    if soh.size == 0:
        raise UsageError("joint_loss : batch vide")
    soh_hat = F.reshape(pred.soh_hat, (-1,))
    rul_hat = F.reshape(pred.rul_hat_norm, (-1,))
    if soh_hat.shape != soh.shape or rul_hat.shape != rul_norm.shape:
        raise ShapeError(f"joint_loss : prédictions {soh_hat.shape} vs cibles {soh.shape}/{rul_norm.shape}")

    soh_term = F.mean((soh_hat - soh) * (soh_hat - soh))
    total = soh_term * soh_weight
    mask = np.isfinite(rul_norm)
    n_rul = int(mask.sum())
    rul_value = 0.0
    if n_rul:
        err = (rul_hat - np.where(mask, rul_norm, 0.0)) * mask.astype(np.float64)
        rul_term = F.sum(err * err) * (1.0 / n_rul)
        rul_value = rul_term.item()
        total = total + rul_term * rul_weight
    return LossTerms(total=total, soh=soh_term.item(), rul=rul_value, n_rul=n_rul)


# ── Mise à l'échelle de l'entrée ─────────────────────────────────────────────


def fit_voltage_scaler(cells: Sequence[CellDataset]) -> tuple[float, float]:
    """Moyenne/écart-type scalaires de toutes les tensions d'entraînement."""
    volts = np.concatenate([c.voltages for cell in cells for c in cell.cycles]).reshape(-1, 1)
    scaler = StandardScaler().fit(volts)
    mean, scale = float(scaler.mean_[0]), float(scaler.scale_[0])
    log.info("fit_voltage_scaler : %d échantillons, V μ=%.4f σ=%.4f", len(volts), mean, scale)
    return mean, scale


def fit_factor_scaler(factors: np.ndarray) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Moyenne/écart-type par colonne des facteurs d'entraînement (N, k)."""
    scaler = StandardScaler().fit(np.asarray(factors, dtype=np.float64))
    return tuple(scaler.mean_.tolist()), tuple(scaler.scale_.tolist())
