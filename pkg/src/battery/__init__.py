"""Données de cellules : format canonique, alignement, étiquettes, facteurs, corpus synthétiques."""
