"""Figure descriptions and their validation errors."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class MissingColumnError(KeyError):
    """A referenced CSV column does not exist."""

    def __init__(self, column: str, path):
        super().__init__(column)
        self.column = column
        self.path = str(path)

    def __str__(self):
        return f"column {self.column!r} not found in {self.path}"


class EmptyMapError(ValueError):
    """A heatmap was requested from an empty table."""


@dataclass
class FigureSpec:
    """One figure: where the data lives and how to draw it.

    kind "lines" plots y_columns against x_column; kind "heatmap" pivots
    value_column over (x_column, y_column).
    """

    csv_path: Path
    kind: str  # "lines" | "heatmap"
    out_path: Path
    x_column: str = "t"
    y_columns: tuple[str, ...] = ()
    y_column: str = "c"
    value_column: str = ""
    x_label: str = ""
    y_label: str = ""
    title: str = ""
    group_columns: tuple[str, ...] = ()
    annotation: str = ""

    def __post_init__(self):
        if self.kind not in ("lines", "heatmap"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
