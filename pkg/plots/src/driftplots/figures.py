"""Figure builders over the training CLI's CSV tables.

Every figure is a pure function of its input files: rows are read with the
stdlib csv module, smoothing happens only at render time, and images are
written through the Agg backend with pinned metadata, so identical inputs
produce identical bytes.  A header-only CSV renders as empty axes with a
warning; a missing column is a hard error naming the column and the file.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

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

FIGURE_KINDS = (
    "training_curves",
    "control_overlay",
    "tensorisation",
    "grad_variance",
)

_MAX_SLICES = 4


class MissingColumnError(ValueError):
    """An input table lacks a column a figure kind depends on."""


@dataclass
class Table:
    """One parsed CSV: numeric columns as float arrays, the rest as strings.

    A column is numeric when every non-empty cell parses as a float
    ("nan" and "inf" count); empty cells become nan.  With zero data rows
    every column is an empty float array, so column checks still pass and
    the figure builders get to warn instead of crash.
    """

    path: Path
    columns: tuple
    numeric: dict
    text: dict

    @property
    def rows(self) -> int:
        if not self.columns:
            return 0
        name = self.columns[0]
        if name in self.numeric:
            return len(self.numeric[name])
        return len(self.text[name])

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise MissingColumnError(
                f"{self.path}: missing column(s) {', '.join(missing)} "
                f"(has: {', '.join(self.columns)})"
            )

    def numbers(self, name: str) -> np.ndarray:
        self.require(name)
        if name not in self.numeric:
            raise MissingColumnError(
                f"{self.path}: column {name!r} is not numeric"
            )
        return self.numeric[name]

    def strings(self, name: str) -> list:
        self.require(name)
        if name in self.text:
            return self.text[name]
        return [repr(v) for v in self.numeric[name]]


def read_table(path) -> Table:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumnError(f"{path}: empty file, no header row") from None
        raw = [row for row in reader if row]
    numeric: dict = {}
    text: dict = {}
    for j, name in enumerate(header):
        cells = [row[j].strip() if j < len(row) else "" for row in raw]
        try:
            numeric[name] = np.array(
                [float(c) if c else np.nan for c in cells], dtype=np.float64
            )
        except ValueError:
            text[name] = cells
    return Table(path=path, columns=tuple(header), numeric=numeric, text=text)


def moving_average(values, window: int = 30) -> np.ndarray:
    """Trailing moving average; early entries average what is available."""
    if window < 1:
        raise ValueError("window must be positive")
    arr = np.asarray(values, dtype=np.float64)
    out = np.empty_like(arr)
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    for i in range(len(arr)):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


@dataclass
class FigureSpec:
    """What to draw: input CSVs, figure kind, output image, smoothing."""

    kind: str
    inputs: tuple
    output: str
    labels: tuple | None = None
    window: int = 30

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(
                f"unknown figure kind {self.kind!r}; one of {FIGURE_KINDS}"
            )
        self.inputs = tuple(self.inputs)
        if not self.inputs:
            raise ValueError("at least one input CSV is required")
        if self.labels is not None:
            self.labels = tuple(self.labels)
            if len(self.labels) != len(self.inputs):
                raise ValueError(
                    f"{len(self.labels)} labels for {len(self.inputs)} inputs"
                )
        if self.window < 1:
            raise ValueError("window must be positive")


def _warn_empty(table: Table) -> None:
    warnings.warn(
        f"{table.path}: no data rows, leaving its axes empty",
        UserWarning,
        stacklevel=3,
    )


def _label(spec: FigureSpec, index: int, table: Table) -> str:
    if spec.labels is not None:
        return spec.labels[index]
    parent = table.path.resolve().parent.name
    return parent or table.path.stem


def _legend(ax) -> None:
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize="small")


def _training_curves(spec: FigureSpec, tables) -> plt.Figure:
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7.0, 8.0))
    panels = (
        (axes[0], "loss", False),
        (axes[1], "isre", True),
        (axes[2], "l2_error", True),
    )
    for i, table in enumerate(tables):
        table.require("iteration", "loss", "isre", "l2_error")
        if table.rows == 0:
            _warn_empty(table)
            continue
        iteration = table.numbers("iteration")
        label = _label(spec, i, table)
        for ax, column, positive in panels:
            values = table.numbers(column)
            mask = np.isfinite(values)
            if positive:
                mask &= values > 0.0
            if not mask.any():
                continue
            smoothed = moving_average(values[mask], spec.window)
            ax.plot(iteration[mask], smoothed, label=label)
    for ax, column, positive in panels:
        if positive:
            ax.set_yscale("log")
        ax.set_ylabel(column.replace("_", " "))
        _legend(ax)
    axes[-1].set_xlabel("iteration")
    fig.align_ylabels(axes)
    return fig


def _control_columns(table: Table) -> list:
    cols = [c for c in table.columns if c == "u" or c.startswith("u_")]
    if not cols:
        raise MissingColumnError(
            f"{table.path}: no control column ('u' or 'u_*') "
            f"(has: {', '.join(table.columns)})"
        )
    return cols


def _pick_slices(values: np.ndarray) -> np.ndarray:
    unique = np.unique(values[np.isfinite(values)])
    if len(unique) <= _MAX_SLICES:
        return unique
    idx = np.round(np.linspace(0, len(unique) - 1, _MAX_SLICES)).astype(int)
    return unique[idx]


def _control_overlay(spec: FigureSpec, tables) -> plt.Figure:
    """First input is the reference (dashed), the rest are solid
    approximations; spatial slices when x varies, time profiles otherwise."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    axis_name = None
    for i, table in enumerate(tables):
        ucols = _control_columns(table)
        if table.rows == 0:
            _warn_empty(table)
            continue
        role = _label(spec, i, table) if spec.labels is not None else (
            "reference" if i == 0 else "approximation")
        style = "--" if i == 0 else "-"
        xs = table.numbers("x") if "x" in table.columns else None
        ts = table.numbers("t") if "t" in table.columns else None
        spatial = xs is not None and len(np.unique(xs[np.isfinite(xs)])) > 1
        if spatial:
            axis_name = "x"
            slice_ts = _pick_slices(ts) if ts is not None else [None]
            for ucol in ucols:
                u = table.numbers(ucol)
                for t0 in slice_ts:
                    mask = np.isfinite(xs) & np.isfinite(u)
                    if t0 is not None:
                        mask &= ts == t0
                    if not mask.any():
                        continue
                    order = np.argsort(xs[mask])
                    tag = role if len(ucols) == 1 else f"{role} {ucol}"
                    if t0 is not None and len(slice_ts) > 1:
                        tag = f"{tag}, t={t0:g}"
                    ax.plot(xs[mask][order], u[mask][order], style, label=tag)
        else:
            if ts is None:
                raise MissingColumnError(
                    f"{table.path}: needs an 'x' or 't' column to plot against"
                )
            axis_name = axis_name or "t"
            for ucol in ucols:
                u = table.numbers(ucol)
                mask = np.isfinite(ts) & np.isfinite(u)
                if not mask.any():
                    continue
                order = np.argsort(ts[mask])
                tag = role if len(ucols) == 1 else f"{role} {ucol}"
                ax.plot(ts[mask][order], u[mask][order], style, label=tag)
    ax.set_xlabel(axis_name or "t")
    ax.set_ylabel("control")
    _legend(ax)
    return fig


def _tensorisation(spec: FigureSpec, tables) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for i, table in enumerate(tables):
        table.require("kind", "copies", "relative_error")
        if table.rows == 0:
            _warn_empty(table)
            continue
        kinds = table.strings("kind")
        copies = table.numbers("copies")
        rel = table.numbers("relative_error")
        prefix = "" if len(tables) == 1 else _label(spec, i, table) + " "
        seen: list = []
        for kind in kinds:
            if kind not in seen:
                seen.append(kind)
        for kind in seen:
            mask = np.array([k == kind for k in kinds])
            mask &= np.isfinite(copies) & np.isfinite(rel) & (rel > 0.0)
            if not mask.any():
                continue
            ms = np.unique(copies[mask])
            errs = [rel[mask][copies[mask] == m].mean() for m in ms]
            ax.plot(ms, errs, marker="o", label=prefix + kind)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("independent copies")
    ax.set_ylabel("relative error")
    _legend(ax)
    return fig


def _grad_variance(spec: FigureSpec, tables) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for i, table in enumerate(tables):
        table.require("iteration", "relative_spread")
        if table.rows == 0:
            _warn_empty(table)
            continue
        iteration = table.numbers("iteration")
        spread = table.numbers("relative_spread")
        mask = np.isfinite(spread) & (spread > 0.0)
        if not mask.any():
            continue
        if "relative_spread_smoothed" in table.columns:
            smoothed = table.numbers("relative_spread_smoothed")[mask]
        else:
            smoothed = moving_average(spread[mask], spec.window)
        label = _label(spec, i, table)
        (line,) = ax.plot(iteration[mask], smoothed, label=label)
        ax.plot(iteration[mask], spread[mask], alpha=0.25, linewidth=0.8,
                color=line.get_color())
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative spread of gradient estimates")
    _legend(ax)
    return fig


_BUILDERS = {
    "training_curves": _training_curves,
    "control_overlay": _control_overlay,
    "tensorisation": _tensorisation,
    "grad_variance": _grad_variance,
}


def build_figure(spec: FigureSpec) -> plt.Figure:
    """Read the inputs and assemble the figure without writing it."""
    tables = [read_table(p) for p in spec.inputs]
    return _BUILDERS[spec.kind](spec, tables)


def _metadata(suffix: str):
    if suffix == ".png":
        return {"Software": "driftplots"}
    if suffix == ".svg":
        return {"Date": None}
    if suffix == ".pdf":
        return {"CreationDate": None}
    return None


def render(spec: FigureSpec) -> Path:
    """Write the figure image; bytes depend only on the input CSVs.

    Timestamp metadata is stripped per format so re-rendering the same
    tables gives byte-identical output.
    """
    fig = build_figure(spec)
    out = Path(spec.output)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    try:
        meta = _metadata(out.suffix.lower())
        if meta is None:
            fig.savefig(out, dpi=150)
        else:
            fig.savefig(out, dpi=150, metadata=meta)
    finally:
        plt.close(fig)
    return out
