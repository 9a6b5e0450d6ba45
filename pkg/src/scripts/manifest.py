"""Manifeste de run : ce qu'il faut pour rejouer une commande cellprog.

Écrit dans <out>/run_manifest.toml avant tout travail, relu par
``cellprog replay <manifeste>``.
"""

from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

from config.loader import dump_flat, load_flat
from utils.errors import ConfigError

MANIFEST_NAME = "run_manifest.toml"


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    seed: int
    out_dir: str
    inputs: list[str] = field(default_factory=list)
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))

    def save(self, out_dir: Path | None = None) -> Path:
        out = Path(out_dir or self.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / MANIFEST_NAME
        dump_flat(path, asdict(self), header=f"cellprog {self.command}")
        return path

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        values = load_flat(path)
        missing = sorted({"command", "argv", "seed", "out_dir"} - set(values))
        if missing:
            raise ConfigError(f"{path} : manifeste incomplet, clés manquantes {missing}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(f"{path} : manifeste invalide ({exc})") from exc
