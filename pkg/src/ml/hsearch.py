"""Recherche d'hyperparamètres : tirage aléatoire + raffinement TPE-lite optionnel.

Espace déclaré dans un fichier TOML (cf. config/search.toml) :

    [space.channels]
    kind   = "categorical"        values = [32, 64]
    [space.base_lr]
    kind   = "loguniform"         low = 1e-5, high = 1e-3
    [space.ffn_hidden]
    kind   = "intuniform"         low = 32, high = 128

Chaque essai entraîne un modèle court (proxy ``epochs`` de [search]) sur les
cellules d'entraînement et renvoie la perte jointe sur la ou les cellules
tenues à l'écart. Classement final : (objectif, indice d'essai).

TPE-lite : après budget//2 essais aléatoires, les essais terminés sont coupés
en « bons » (quantile inférieur) et « autres » ; pour chaque dimension on tire
24 candidats depuis la densité des bons et on garde celui qui maximise
densité(bons) / densité(autres). Noyau gaussien (KernelDensity) pour les
dimensions numériques, comptes lissés pour les catégorielles.
"""

import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.neighbors import KernelDensity

from battery.labels import derive_labels
from config.loader import load_config
from ml.model import ModelConfig
from ml.train import Split, TrainConfig, evaluate_loss, samples_for, train_run
from utils.errors import CellProgError, ConfigError, SearchError, UsageError

log = logging.getLogger(__name__)

TRIALS_COLUMNS = ["trial", "config_json", "objective", "seed", "status"]
TPE_CANDIDATES = 24

ObjectiveFn = Callable[[dict[str, Any], int], float]


# ── Dimensions ────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Categorical:
    values: tuple

    def validate(self, name: str) -> None:
        if not self.values:
            raise ConfigError(f"espace : dimension '{name}' sans valeur")

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass(frozen=True)
class LogUniform:
    low: float
    high: float

    def validate(self, name: str) -> None:
        if not 0 < self.low <= self.high:
            raise ConfigError(f"espace : '{name}' loguniform exige 0 < low ≤ high ({self.low}, {self.high})")

    def to_unit(self, value: float) -> float:
        return math.log(value)

    def from_unit(self, u: float) -> float:
        return float(np.clip(math.exp(u), self.low, self.high))

    @property
    def bounds(self) -> tuple[float, float]:
        return math.log(self.low), math.log(self.high)

    def sample(self, rng: np.random.Generator) -> float:
        lo, hi = self.bounds
        return self.from_unit(rng.uniform(lo, hi))


@dataclass(frozen=True)
class IntUniform:
    low: int
    high: int

    def validate(self, name: str) -> None:
        if self.low > self.high:
            raise ConfigError(f"espace : '{name}' intuniform exige low ≤ high ({self.low}, {self.high})")

    def to_unit(self, value: int) -> float:
        return float(value)

    def from_unit(self, u: float) -> int:
        return int(np.clip(round(u), self.low, self.high))

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.low), float(self.high)

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high + 1))


Dimension = Categorical | LogUniform | IntUniform


def _dimension(name: str, table: Mapping[str, Any]) -> Dimension:
    kind = table.get("kind")
    try:
        if kind == "categorical":
            dim: Dimension = Categorical(tuple(table["values"]))
        elif kind == "loguniform":
            dim = LogUniform(float(table["low"]), float(table["high"]))
        elif kind == "intuniform":
            dim = IntUniform(int(table["low"]), int(table["high"]))
        else:
            raise ConfigError(f"espace : '{name}' kind={kind!r} inconnu (categorical, loguniform, intuniform)")
    except KeyError as exc:
        raise ConfigError(f"espace : '{name}' ({kind}) sans clé {exc}") from exc
    dim.validate(name)
    return dim


@dataclass(frozen=True)
class SearchSpace:
    dimensions: dict[str, Dimension]

    def __post_init__(self) -> None:
        if not self.dimensions:
            raise ConfigError("espace de recherche vide")
        for name, dim in self.dimensions.items():
            dim.validate(name)

    @property
    def names(self) -> list[str]:
        return list(self.dimensions)

    @classmethod
    def from_mapping(cls, space: Mapping[str, Mapping[str, Any]]) -> "SearchSpace":
        return cls({name: _dimension(name, table) for name, table in space.items()})


@dataclass(frozen=True)
class SearchSettings:
    budget: int = 8
    epochs: int = 10
    tpe: bool = False
    tpe_quantile: float = 0.25

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ConfigError(f"search : budget={self.budget} doit être ≥ 1")
        if self.epochs < 1:
            raise ConfigError(f"search : epochs={self.epochs} doit être ≥ 1")
        if not 0 < self.tpe_quantile < 1:
            raise ConfigError(f"search : tpe_quantile={self.tpe_quantile} hors de ]0, 1[")


def load_search_file(path: Path | None = None) -> tuple[SearchSettings, SearchSpace]:
    """Lit [search] et [space.*] ; sans ``path``, config/search.toml."""
    defaults = load_config("search")
    data = defaults
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path} : TOML invalide ({exc})") from exc
        if "space" not in data:
            raise ConfigError(f"{path} : aucune table [space.*]")
    raw = {**defaults.get("search", {}), **data.get("search", {})}
    known = {f.name for f in fields(SearchSettings)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"[search] : clés inconnues {unknown}")
    return SearchSettings(**raw), SearchSpace.from_mapping(data["space"])


def sample(space: SearchSpace, rng: np.random.Generator) -> dict[str, Any]:
    """Un tirage indépendant par dimension, dans l'ordre de déclaration."""
    return {name: dim.sample(rng) for name, dim in space.dimensions.items()}


# ── Essais ────────────────────────────────────────────────────────────────────


@dataclass
class Trial:
    index: int
    config: dict[str, Any]
    seed: int
    objective: float = float("nan")
    status: str = "pending"
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class SearchResult:
    best: Trial
    ranked: list[Trial]
    trials: list[Trial]


def run_trial(objective_fn: ObjectiveFn, index: int, config: dict[str, Any], seed: int) -> Trial:
    """Exécute un essai ; toute erreur de l'essai est consignée, pas propagée."""
    trial = Trial(index=index, config=config, seed=seed)
    try:
        value = float(objective_fn(config, seed))
    except (CellProgError, ArithmeticError, ValueError, RuntimeError) as exc:
        trial.status, trial.error = "failed", f"{type(exc).__name__}: {exc}"
        return trial
    if not math.isfinite(value):
        trial.status, trial.error = "failed", f"objectif non fini ({value})"
        return trial
    trial.objective, trial.status = value, "ok"
    return trial


def _trial_seeds(seed: int, budget: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(budget)


def _seed_of(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def _run_batch(
    objective_fn: ObjectiveFn, jobs: Sequence[tuple[int, dict, int]], workers: int
) -> list[Trial]:
    if workers <= 1 or len(jobs) <= 1:
        return [run_trial(objective_fn, *job) for job in jobs]
    out = []
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(run_trial, objective_fn, *job) for job in jobs]
        for future in as_completed(futures):
            out.append(future.result())
    return sorted(out, key=lambda t: t.index)


# ── TPE-lite ──────────────────────────────────────────────────────────────────


def _split_good(trials: Sequence[Trial], quantile: float) -> tuple[list[Trial], list[Trial]]:
    done = sorted((t for t in trials if t.ok), key=lambda t: (t.objective, t.index))
    n_good = max(1, math.ceil(quantile * len(done)))
    return done[:n_good], done[n_good:]


def _bandwidth(points: np.ndarray, lo: float, hi: float) -> float:
    span = max(hi - lo, 1e-12)
    if len(points) > 1 and np.ptp(points) > 0:
        return float(max(np.std(points) * len(points) ** -0.2, 0.05 * span))
    return 0.1 * span


def _propose_numeric(
    dim: LogUniform | IntUniform, good: np.ndarray, bad: np.ndarray, rng: np.random.Generator
):
    lo, hi = dim.bounds
    kde_good = KernelDensity(bandwidth=_bandwidth(good, lo, hi)).fit(good.reshape(-1, 1))
    kde_bad = KernelDensity(bandwidth=_bandwidth(bad, lo, hi)).fit(bad.reshape(-1, 1))
    cand = kde_good.sample(TPE_CANDIDATES, random_state=int(rng.integers(2**31)))
    cand = np.clip(cand, lo, hi)
    ratio = kde_good.score_samples(cand) - kde_bad.score_samples(cand)
    return dim.from_unit(float(cand[int(np.argmax(ratio)), 0]))


def _propose_categorical(dim: Categorical, good: list, bad: list, rng: np.random.Generator):
    k = len(dim.values)
    p_good = np.array([good.count(v) + 1.0 for v in dim.values]) / (len(good) + k)
    p_bad = np.array([bad.count(v) + 1.0 for v in dim.values]) / (len(bad) + k)
    cand = rng.choice(k, size=TPE_CANDIDATES, p=p_good)
    ratio = p_good[cand] / p_bad[cand]
    return dim.values[int(cand[int(np.argmax(ratio))])]


def propose(
    space: SearchSpace, trials: Sequence[Trial], rng: np.random.Generator, quantile: float = 0.25
) -> dict[str, Any]:
    """Config suivante par ratio de densités ; tirage aléatoire s'il manque des « autres »."""
    good, bad = _split_good(trials, quantile)
    if not bad:
        return sample(space, rng)
    config = {}
    for name, dim in space.dimensions.items():
        if isinstance(dim, Categorical):
            config[name] = _propose_categorical(
                dim, [t.config[name] for t in good], [t.config[name] for t in bad], rng
            )
        else:
            g = np.array([dim.to_unit(t.config[name]) for t in good])
            b = np.array([dim.to_unit(t.config[name]) for t in bad])
            config[name] = _propose_numeric(dim, g, b, rng)
    return config


# ── Boucle de recherche ──────────────────────────────────────────────────────


def search(
    space: SearchSpace,
    budget: int,
    objective_fn: ObjectiveFn,
    seed: int = 0,
    tpe: bool = False,
    workers: int = 1,
    quantile: float = 0.25,
) -> SearchResult:
    if budget < 1:
        raise UsageError(f"search : budget={budget} doit être ≥ 1")
    seqs = _trial_seeds(seed, budget)
    n_random = budget if not tpe else max(budget // 2, 1)
    log.info("search : %d essais (%d aléatoires, tpe=%s, workers=%d)", budget, n_random, tpe, workers)

    jobs = []
    for i in range(n_random):
        rng = np.random.default_rng(seqs[i])
        jobs.append((i, sample(space, rng), _seed_of(seqs[i])))
    trials = _run_batch(objective_fn, jobs, workers)

    for i in range(n_random, budget):
        rng = np.random.default_rng(seqs[i])
        config = propose(space, trials, rng, quantile)
        trials.append(run_trial(objective_fn, i, config, _seed_of(seqs[i])))

    for t in trials:
        if t.ok:
            log.info("essai %3d  objectif=%.6f  %s", t.index, t.objective, t.config)
        else:
            log.warning("essai %3d  échec : %s", t.index, t.error)

    ranked = sorted((t for t in trials if t.ok), key=lambda t: (t.objective, t.index))
    if not ranked:
        detail = "; ".join(f"essai {t.index} : {t.error}" for t in trials)
        raise SearchError(f"tous les essais ont échoué ({detail})")
    log.info("search : meilleur essai %d, objectif=%.6f", ranked[0].index, ranked[0].objective)
    return SearchResult(best=ranked[0], ranked=ranked, trials=trials)


def write_trials_csv(trials: Sequence[Trial], path: Path) -> None:
    rows = [
        {
            "trial": t.index,
            "config_json": json.dumps(t.config, sort_keys=True),
            "objective": t.objective,
            "seed": t.seed,
            "status": t.status,
        }
        for t in sorted(trials, key=lambda t: t.index)
    ]
    pd.DataFrame(rows, columns=TRIALS_COLUMNS).to_csv(path, index=False, lineterminator="\n")


# ── Objectif : entraînement court, perte sur cellule(s) tenue(s) à l'écart ───


def split_config(config: Mapping[str, Any]) -> tuple[dict[str, Any], dict[str, Any]]:
    """Répartit les clés d'un essai entre ModelConfig et TrainConfig."""
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(config) - model_keys - train_keys)
    if unknown:
        raise ConfigError(f"espace : dimensions inconnues {unknown}")
    model = {k: v for k, v in config.items() if k in model_keys}
    train = {k: v for k, v in config.items() if k in train_keys and k not in model_keys}
    return model, train


@dataclass
class TrialObjective:
    """Objectif sérialisable (pickle) pour ProcessPoolExecutor."""

    split: Split
    model_base: ModelConfig
    train_base: TrainConfig
    epochs: int = 10

    def configs(self, config: Mapping[str, Any], seed: int) -> tuple[ModelConfig, TrainConfig]:
        model_vals, train_vals = split_config(config)
        warmup = min(train_vals.get("warmup_epochs", self.train_base.warmup_epochs), self.epochs - 1)
        train_cfg = TrainConfig.from_mapping(
            {**train_vals, "epochs": self.epochs, "warmup_epochs": warmup, "seed": seed}, self.train_base
        )
        return ModelConfig.from_mapping(model_vals, self.model_base), train_cfg

    def __call__(self, config: dict[str, Any], seed: int) -> float:
        model_cfg, train_cfg = self.configs(config, seed)
        result = train_run(self.split.train, model_cfg, train_cfg)
        labeled = [derive_labels(c) for c in self.split.test]
        samples = samples_for(labeled, result.model_cfg, start=self.split.oc)
        return evaluate_loss(samples, result.best_params, result.model_cfg, seed, train_cfg.batch_size)


def holdout_objective(
    split: Split,
    model_base: ModelConfig,
    train_base: TrainConfig,
    epochs: int,
) -> TrialObjective:
    if not split.test:
        raise UsageError("search : au moins une cellule tenue à l'écart requise")
    log.info(
        "search : entraînement %s, test %s, proxy %d epochs",
        split.train_ids, split.test_ids, epochs,
    )
    return TrialObjective(split=split, model_base=model_base, train_base=train_base, epochs=epochs)
