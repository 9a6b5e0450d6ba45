"""Réseau SOH/RUL, entraînement, métriques et recherche d'hyperparamètres."""
