"""Tenseur dense float64 + différentiation automatique en mode inverse.

Chaque opération différentiable produit un ``Tensor`` et, si l'une de ses
entrées requiert un gradient, un ``Node`` numéroté dans l'ordre d'exécution
(compteur global monotone). Le graphe est donc un registre append-only :
``backward`` parcourt les nœuds atteignables depuis la perte dans l'ordre
inverse d'ajout, chaque nœud une seule fois.

Les opérations elles-mêmes vivent dans ``autodiff.functional`` ; ce module
ne contient que la structure de données et le parcours arrière.
"""

import itertools
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from utils.errors import NumericalError, UsageError

_SEQ = itertools.count()
_GRAD_ENABLED: ContextVar[bool] = ContextVar("grad_enabled", default=True)

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@contextmanager
def no_grad() -> Iterator[None]:
    """Désactive l'enregistrement du graphe (évaluation, recherche)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


@dataclass(eq=False)
class Node:
    """Une opération exécutée : entrées, règle de gradient, rang d'ajout."""

    op: str
    inputs: tuple["Tensor", ...]
    backward_fn: BackwardFn
    seq: int
    out_id: int = field(default=0)


class Tensor:
    """Tableau dense row-major en float64, éventuellement différentiable.

    ``shape``, ``data`` et ``grad`` suivent numpy ; ``grad`` n'existe que
    pour les feuilles (paramètres, entrées) qui demandent un gradient.
    """

    __array_priority__ = 100.0  # numpy délègue a + Tensor au Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None) -> None:
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad: bool = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name: str | None = name
        self._node: Node | None = None

    @classmethod
    def from_op(
        cls,
        op: str,
        data: np.ndarray,
        inputs: Sequence["Tensor"],
        backward_fn: BackwardFn,
    ) -> "Tensor":
        """Construit la sortie d'une opération et l'inscrit dans le graphe."""
        if not np.all(np.isfinite(data)):
            raise NumericalError(f"{op} : valeurs non finies en sortie (shape={data.shape})")
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64, order="C")
        out.grad = None
        out.name = None
        out._node = None
        out.requires_grad = _GRAD_ENABLED.get() and any(t.requires_grad for t in inputs)
        if out.requires_grad:
            out._node = Node(op, tuple(inputs), backward_fn, next(_SEQ), id(out))
        return out

    # ── Accès ────────────────────────────────────────────────────────────────

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ── Opérateurs (délégués à autodiff.functional) ─────────────────────────

    def __add__(self, other):
        return F.add(self, other)

    def __radd__(self, other):
        return F.add(other, self)

    def __sub__(self, other):
        return F.sub(self, other)

    def __rsub__(self, other):
        return F.sub(other, self)

    def __mul__(self, other):
        return F.mul(self, other)

    def __rmul__(self, other):
        return F.mul(other, self)

    def __truediv__(self, other):
        return F.div(self, other)

    def __rtruediv__(self, other):
        return F.div(other, self)

    def __neg__(self):
        return F.neg(self)

    def __matmul__(self, other):
        return F.matmul(self, other)

    def __getitem__(self, idx):
        return F.getitem(self, idx)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return F.mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


class Graph:
    """Nœuds atteignables depuis une sortie, triés par ordre d'ajout."""

    def __init__(self, nodes: Sequence[Node]) -> None:
        self.nodes: list[Node] = sorted(nodes, key=lambda n: n.seq)

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        # Parcours itératif : une récurrence de L pas produit des chaînes
        # bien plus profondes que la limite de récursion Python.
        seen: set[int] = set()
        nodes: list[Node] = []
        stack = [out]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or node.seq in seen:
                continue
            seen.add(node.seq)
            nodes.append(node)
            stack.extend(node.inputs)
        return cls(nodes)

    def leaves(self) -> list[Tensor]:
        """Feuilles différentiables du graphe, sans doublon, ordre stable."""
        out: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t._node is None and t.requires_grad:
                    out.setdefault(id(t), t)
        return list(out.values())

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class SliceGrad:
    """Gradient nul partout sauf sur ``a[index]`` : sortie de ``getitem``.

    Une récurrence lit L tranches d'un même tenseur ; accumuler ces
    tranches dans un seul tampon évite L tableaux pleine taille.
    """

    index: object
    values: np.ndarray
    shape: tuple[int, ...]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.index] += self.values
        return out


def _densify(g) -> np.ndarray:
    return g.dense() if isinstance(g, SliceGrad) else g


def _accumulate(pending: dict, owned: set, key: int, gi) -> None:
    acc = pending.get(key)
    if acc is None:
        pending[key] = gi
        return
    if isinstance(acc, SliceGrad):
        acc = acc.dense()
        owned.add(key)
    elif key not in owned:
        acc = np.array(acc, dtype=np.float64)
        owned.add(key)
    if isinstance(gi, SliceGrad):
        acc[gi.index] += gi.values
    else:
        acc += gi
    pending[key] = acc


def backward(loss: Tensor) -> Graph:
    """Propage d∂loss vers toutes les feuilles ``requires_grad``.

    Les gradients s'accumulent dans ``leaf.grad`` (appeler ``zero_grad``
    entre deux batchs). Retourne le graphe parcouru.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward attend une perte scalaire, reçu shape={loss.shape}")
    if loss._node is None:
        raise UsageError("backward : graphe vide (la perte ne dépend d'aucun paramètre)")

    graph = Graph.from_output(loss)
    pending: dict[int, object] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()

    for node in reversed(graph.nodes):
        g = pending.pop(node.out_id, None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward_fn(_densify(g))):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                gi = _densify(gi)
                t.grad = np.array(gi, dtype=np.float64) if t.grad is None else t.grad + gi
            else:
                _accumulate(pending, owned, id(t), gi)

    for leaf in graph.leaves():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
    return graph


from autodiff import functional as F  # noqa: E402  (import circulaire volontairement tardif)
