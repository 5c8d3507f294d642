"""Render figures from the training CLI's CSV outputs."""

from .figures import (
    FIGURE_KINDS,
    FigureSpec,
    MissingColumnError,
    Table,
    build_figure,
    moving_average,
    read_table,
    render,
)

__all__ = [
    "FIGURE_KINDS",
    "FigureSpec",
    "MissingColumnError",
    "Table",
    "build_figure",
    "moving_average",
    "read_table",
    "render",
]
