"""Chargement des configs TOML avec fusion depuis common.toml.

Stratégie de fusion (depth=1) :
  - Pour chaque clé de l'override dont la valeur est un dict :
      result[key] = {**common[key], **override[key]}   ← merge superficiel
  - Sinon : result[key] = override[key]                ← remplacement direct

Conséquences :
  - [paths], [runtime] : définis dans common.toml, complétés/écrasés par
    le fichier spécifique (ex. train.toml ajoute [train] sans perdre [paths]).
  - [dataset.<nom>] : tables de second niveau remplacées en bloc.

Fichiers plats « clé = valeur » (model.cfg, run.cfg, manifestes de cellule,
--model-cfg / --train-cfg) : une ligne par clé, valeurs TOML ou chaînes nues,
lus par load_flat() et écrits par dump_flat().
"""

import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Mapping

from utils.errors import ConfigError

_CONFIG_DIR = Path(__file__).resolve().parent


def _merge(base: dict, override: dict) -> dict:
    """Fusionne override dans base (depth=1)."""
    result = dict(base)
    for key, val in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(val, dict):
            result[key] = {**result[key], **val}
        else:
            result[key] = val
    return result


def load_config(name: str) -> dict:
    """Charge common.toml puis le fusionne avec <name>.toml."""
    common_path = _CONFIG_DIR / "common.toml"
    if not common_path.exists():
        raise FileNotFoundError(f"Config introuvable : common.toml (cherché dans {_CONFIG_DIR})")
    specific_path = _CONFIG_DIR / f"{name}.toml"
    if not specific_path.exists():
        raise FileNotFoundError(f"Config introuvable : {name}.toml (cherché dans {_CONFIG_DIR})")
    with open(common_path, "rb") as f:
        common = tomllib.load(f)
    with open(specific_path, "rb") as f:
        specific = tomllib.load(f)
    return _merge(common, specific)


def _parse_scalar(raw: str, where: str) -> Any:
    """Valeur TOML si elle en est une, sinon chaîne nue (``cell_id=B0005``)."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError as exc:
        if raw[0] in "\"'[{=":
            raise ConfigError(f"{where} : valeur invalide {raw!r} ({exc})") from exc
        return raw


def load_flat(path: Path) -> dict[str, Any]:
    """Lit un fichier « clé = valeur » ; toute table imbriquée est refusée.

    Une ligne par clé, coupée au premier ``=``. Les valeurs TOML (nombres,
    booléens, chaînes entre guillemets, listes) sont décodées ; le reste est
    gardé comme chaîne brute.
    """
    data: dict[str, Any] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{path}:{lineno}"
        if line.startswith("["):
            raise ConfigError(f"{where} : tables non supportées dans un fichier plat : {line}")
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key or not raw or any(c.isspace() for c in key):
            raise ConfigError(f"{where} : syntaxe clé = valeur invalide : {line!r}")
        if key in data:
            raise ConfigError(f"{where} : clé '{key}' répétée")
        value = _parse_scalar(raw, where)
        if isinstance(value, dict):
            raise ConfigError(f"{where} : tables non supportées dans un fichier plat : {key}")
        data[key] = value
    return data


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ConfigError(f"dump_flat : type non sérialisable {type(value).__name__}")


def dump_flat(path: Path, values: Mapping[str, Any], header: str | None = None) -> None:
    """Écrit un mapping plat en lignes « clé = valeur » relisibles par load_flat()."""
    lines = [f"# {line}" for line in header.splitlines()] if header else []
    lines += [f"{key} = {_format_value(val)}" for key, val in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def worker_count() -> int:
    """CELLPROG_THREADS si défini, sinon [runtime] threads de common.toml (≥ 1)."""
    raw = os.environ.get("CELLPROG_THREADS")
    if raw is None:
        raw = load_config("common").get("runtime", {}).get("threads", 1)
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"CELLPROG_THREADS={raw!r} n'est pas un entier") from exc
    return max(value, 1)
