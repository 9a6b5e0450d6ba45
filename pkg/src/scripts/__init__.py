"""Frontal en ligne de commande `cellprog`."""
