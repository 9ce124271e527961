"""Graph reduction under one roof: coreset selection, coarsening, and
condensation, evaluated by a single fixed protocol."""

__version__ = "0.1.0"
