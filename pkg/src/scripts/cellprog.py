"""cellprog : frontal en ligne de commande (pronostic SOH/RUL de cellules).

Usage :
    python scripts/cellprog.py synth      --seed 0 --cells 4 --cycles 60 --out data/synth
    python scripts/cellprog.py preprocess --in data/synth --target-len 200 --out data/aligned
    python scripts/cellprog.py features   --in data/aligned --out runs/features
    python scripts/cellprog.py train      --data data/aligned --hold-out cell04 --out runs/cell04
    python scripts/cellprog.py evaluate   --checkpoint runs/cell04/best.cpg --data data/aligned --out runs/cell04/eval
    python scripts/cellprog.py search     --data data/aligned --hold-out cell04 --budget 8 --out runs/search
    python scripts/cellprog.py replay     runs/cell04/run_manifest.toml

Code retour : 0 si succès, 2 pour une erreur cellprog (ligne ``E:<code>:<message>``
sur stderr), 3 pour une erreur d'entrée/sortie (``E:IO:``).
Parallélisme de la recherche : variable CELLPROG_THREADS (défaut 1).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from config.loader import load_config
from scripts import commands
from scripts.manifest import RunManifest
from utils.errors import CellProgError

log = logging.getLogger(__name__)


def _runtime() -> dict:
    return load_config("common").get("runtime", {})


def build_parser() -> argparse.ArgumentParser:
    runtime = _runtime()
    paths = load_config("common").get("paths", {})
    seed = int(runtime.get("seed", 0))
    seq_len = int(load_config("model").get("model", {}).get("seq_len", 200))

    parser = argparse.ArgumentParser(prog="cellprog", description="Pronostic SOH/RUL de cellules lithium-ion")
    parser.add_argument("--verbose", "-v", action="store_true", help="journal DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="génère des cellules synthétiques au format canonique")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--cells", type=int, default=4)
    p.add_argument("--cycles", type=int, default=60)
    p.add_argument("--seq-len", type=int, default=seq_len)
    p.add_argument("--regen-rate", type=float, default=0.0, help="probabilité de régénération par cycle")
    p.add_argument("--preset", default="synth", help="préréglage de config/datasets.toml")
    p.add_argument("--out", type=Path, default=Path(paths.get("data_dir", "data/synth")))

    p = sub.add_parser("preprocess", help="aligne chaque cycle sur --target-len points")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--target-len", type=int, default=None, help=f"défaut : target_len du préréglage, sinon {seq_len}")
    p.add_argument("--preset", default=None, help="préréglage de config/datasets.toml (target_len)")
    p.add_argument("--out", type=Path, default=Path(paths.get("aligned_dir", "data/aligned")))

    p = sub.add_parser("train", help="entraîne sur toutes les cellules sauf --hold-out")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hold-out", required=True, help="identifiant(s) de cellule de test, séparés par des virgules")
    p.add_argument("--oc", type=int, default=None, help="cycle d'observation (défaut : préréglage, sinon train.toml)")
    p.add_argument("--preset", default=None, help="préréglage de config/datasets.toml (oc)")
    p.add_argument("--use-factors", action="store_true", help="facteurs de charge en entrée des têtes")
    p.add_argument("--model-cfg", type=Path, default=None)
    p.add_argument("--train-cfg", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="prédictions, erreurs par cycle et métriques")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--oc", type=int, default=None, help="défaut : oc du préréglage, sinon 0")
    p.add_argument("--preset", default=None)
    p.add_argument("--model-cfg", type=Path, default=None, help="défaut : model.cfg à côté du checkpoint")
    p.add_argument("--cells", default=None, help="restreint l'évaluation à ces cellules")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("search", help="recherche d'hyperparamètres")
    p.add_argument("--space", type=Path, default=None, help="défaut : config/search.toml")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hold-out", required=True)
    p.add_argument("--oc", type=int, default=None, help="défaut : oc du préréglage, sinon 0")
    p.add_argument("--preset", default=None)
    p.add_argument("--use-factors", action="store_true")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--model-cfg", type=Path, default=None, help="base des essais (défaut : model.toml)")
    p.add_argument("--train-cfg", type=Path, default=None)
    p.add_argument("--tpe", action="store_true", help="raffinement TPE-lite après budget/2 essais")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("features", help="facteurs de charge par cycle + corrélations de Pearson")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("replay", help="rejoue une commande depuis son run_manifest.toml")
    p.add_argument("manifest", type=Path)
    return parser


COMMANDS = {
    "synth": commands.cmd_synth,
    "preprocess": commands.cmd_preprocess,
    "train": commands.cmd_train,
    "evaluate": commands.cmd_evaluate,
    "search": commands.cmd_search,
    "features": commands.cmd_features,
}


def _configure_logging(verbose: bool) -> None:
    runtime = _runtime()
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=runtime.get("log_format", "%(asctime)s  %(levelname)-8s  %(message)s"),
        datefmt=runtime.get("log_datefmt", "%H:%M:%S"),
        force=True,
    )


def run(argv: Sequence[str]) -> None:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    if args.command == "replay":
        manifest = RunManifest.load(args.manifest)
        log.info("replay : %s %s", manifest.command, " ".join(manifest.argv))
        run(manifest.argv)
        return
    COMMANDS[args.command](args, argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        run(argv)
    except CellProgError as exc:
        print(f"E:{exc.code}:{exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"E:IO:{exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
