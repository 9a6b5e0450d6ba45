"""Conteneur binaire des paramètres (format « CPG1 »).

Disposition exacte, tout en little-endian :

    offset 0   4 octets     magic ASCII b"CPG1"
    puis, pour chaque paramètre, dans l'ordre du dict :
               uint32       longueur du nom en octets (n)
               n octets     nom UTF-8 (ex. "fem.br2.conva.w")
               uint32       rang r
               r × uint64   dimensions
               prod(dims) × float64   valeurs row-major

Pas de compteur d'entrées : la lecture s'arrête à la fin du fichier. Un
fichier tronqué au milieu d'une entrée est rejeté.
"""

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from autodiff.tensor import Tensor
from utils.errors import DataError

MAGIC = b"CPG1"


def save_params(path: Path, params: Mapping[str, Tensor]) -> None:
    chunks = [MAGIC]
    for name, tensor in params.items():
        raw_name = name.encode("utf-8")
        data = np.ascontiguousarray(tensor.data, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(data.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_params(path: Path, requires_grad: bool = True) -> dict[str, Tensor]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path} : magic '{blob[:4]!r}' ≠ {MAGIC!r}, pas un checkpoint CPG1")

    params: dict[str, Tensor] = {}
    pos = 4
    try:
        while pos < len(blob):
            (n_name,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n_name].decode("utf-8")
            pos += n_name
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 8 * count > len(blob):
                raise DataError(f"{path} : entrée '{name}' tronquée")
            values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
            params[name] = Tensor(values.reshape(dims), requires_grad=requires_grad, name=name)
    except struct.error as exc:
        raise DataError(f"{path} : checkpoint tronqué ({exc})") from exc
    return params
