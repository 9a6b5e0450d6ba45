"""Hiérarchie d'exceptions du projet.

Chaque classe porte un ``code`` stable repris par la CLI dans la ligne
d'erreur ``E:<code>:<message>``. Les sous-classes dérivent aussi de
l'exception standard qu'on lèverait sans elles (ValueError, RuntimeError),
pour que ``except ValueError`` continue de fonctionner côté appelant.
"""


class CellProgError(Exception):
    """Racine des erreurs métier."""

    code = "ERROR"


class ShapeError(CellProgError, ValueError):
    """Dimensions incompatibles entre tenseurs ou vs la configuration."""

    code = "SHAPE"


class ConfigError(CellProgError, ValueError):
    """Hyperparamètre ou fichier de configuration invalide."""

    code = "CONFIG"


class DataError(CellProgError, ValueError):
    """Fichier de données (CSV, manifeste) incohérent."""

    code = "DATA"


class NumericalError(CellProgError, RuntimeError):
    """NaN/Inf rencontré dans un calcul."""

    code = "NUMERIC"


class UsageError(CellProgError, ValueError):
    """Mauvaise utilisation d'une API (ex. backward sur un non-scalaire)."""

    code = "USAGE"


class SearchError(CellProgError, RuntimeError):
    """Recherche d'hyperparamètres sans aucun essai valide."""

    code = "SEARCH"
