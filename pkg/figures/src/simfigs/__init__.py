"""simfigs: turn spingas run directories (CSV + manifest) into figures.

A strictly read-only consumer: nothing here recomputes physics, it only
plots what the simulation CLI wrote.
"""

__version__ = "0.1.0"

from .spec import EmptyMapError, FigureSpec, MissingColumnError
from .render import render, render_run_dir

__all__ = [
    "EmptyMapError",
    "FigureSpec",
    "MissingColumnError",
    "render",
    "render_run_dir",
]
