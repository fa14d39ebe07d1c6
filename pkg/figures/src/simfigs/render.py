"""Rendering: CSV tables to PNG + SVG files, deterministically."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "simfigs"

import matplotlib.pyplot as plt

from .spec import EmptyMapError, FigureSpec, MissingColumnError

PNG_META = {"Software": "simfigs"}
SVG_META = {"Date": None}


def _require_columns(frame: pd.DataFrame, columns, path) -> None:
    for column in columns:
        if column and column not in frame.columns:
            raise MissingColumnError(column, path)


def _save(fig, out_path: Path) -> list[Path]:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for suffix, meta in ((".png", PNG_META), (".svg", SVG_META)):
        target = out_path.with_suffix(suffix)
        fig.savefig(target, dpi=150, metadata=meta)
        written.append(target)
    plt.close(fig)
    return written


def _render_lines(spec: FigureSpec, frame: pd.DataFrame) -> list[Path]:
    _require_columns(frame, (spec.x_column, *spec.y_columns, *spec.group_columns),
                     spec.csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if spec.group_columns:
        for key, group in frame.groupby(list(spec.group_columns), sort=True):
            key = key if isinstance(key, tuple) else (key,)
            label = ", ".join(f"{c}={v:g}" for c, v in zip(spec.group_columns, key))
            for column in spec.y_columns:
                ax.plot(group[spec.x_column], group[column],
                        label=f"{column} ({label})" if len(spec.y_columns) > 1 else label)
    else:
        for column in spec.y_columns:
            ax.plot(frame[spec.x_column], frame[column], label=column)
    ax.set_xlabel(spec.x_label or spec.x_column)
    ax.set_ylabel(spec.y_label or ", ".join(spec.y_columns))
    if spec.title:
        ax.set_title(spec.title)
    if spec.annotation:
        ax.annotate(spec.annotation, xy=(0.02, 0.02), xycoords="axes fraction",
                    fontsize=8, color="gray")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, spec.out_path)


def _render_heatmap(spec: FigureSpec, frame: pd.DataFrame) -> list[Path]:
    _require_columns(frame, (spec.x_column, spec.y_column, spec.value_column),
                     spec.csv_path)
    if frame.empty:
        raise EmptyMapError(f"no rows in {spec.csv_path}")
    table = frame.pivot_table(index=spec.y_column, columns=spec.x_column,
                              values=spec.value_column, aggfunc="mean")
    if table.size == 0:
        raise EmptyMapError(f"empty map for {spec.value_column!r}")
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    xs = table.columns.to_numpy(dtype=float)
    ys = table.index.to_numpy(dtype=float)
    mesh = ax.pcolormesh(_edges(xs), _edges(ys), table.to_numpy(), shading="flat")
    fig.colorbar(mesh, ax=ax, label=spec.value_column)
    # annotate the actual grid points
    for y in ys:
        ax.plot(xs, [y] * len(xs), "k.", markersize=3)
    ax.set_xlabel(spec.x_label or spec.x_column)
    ax.set_ylabel(spec.y_label or spec.y_column)
    if spec.title:
        ax.set_title(spec.title)
    if spec.annotation:
        ax.annotate(spec.annotation, xy=(0.02, 0.02), xycoords="axes fraction",
                    fontsize=8, color="white")
    fig.tight_layout()
    return _save(fig, spec.out_path)


def _edges(values: np.ndarray) -> np.ndarray:
    """Cell edges bracketing possibly non-uniform grid points."""
    if len(values) == 1:
        half = max(abs(values[0]) * 0.5, 0.5)
        return np.array([values[0] - half, values[0] + half])
    mids = (values[1:] + values[:-1]) / 2
    first = values[0] - (mids[0] - values[0])
    last = values[-1] + (values[-1] - mids[-1])
    return np.concatenate([[first], mids, [last]])


def render(spec: FigureSpec) -> list[Path]:
    """Render one figure; returns the written image paths (PNG and SVG)."""
    frame = pd.read_csv(spec.csv_path)
    if spec.kind == "lines":
        return _render_lines(spec, frame)
    return _render_heatmap(spec, frame)


def _manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if path.exists():
        return json.loads(path.read_text())
    return {}


def figure_specs_for_run(run_dir: Path, out_dir: Path) -> list[FigureSpec]:
    """Decide which figures a run directory supports.

    Driven by the manifest kind and the columns actually present; nothing is
    recomputed from physics.
    """
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    manifest = _manifest(run_dir)
    kind = manifest.get("kind", "")
    series = run_dir / "series.csv"
    map_csv = run_dir / "map.csv"
    snapshot = manifest.get("snapshot_time")
    note = f"snapshot t = {snapshot:g}" if snapshot is not None else ""
    specs: list[FigureSpec] = []
    if kind == "idealgas_fig1":
        specs.append(FigureSpec(
            csv_path=series, kind="lines", out_path=out_dir / "statistics_decay",
            x_column="t", y_columns=("C_bosons", "C_fermions", "C_boltzmann"),
            x_label="trap periods (omega t)", y_label="normalized contrast",
            title="ideal-gas contrast decay by quantum statistics",
        ))
        return specs
    theta = float(manifest.get("config", {}).get("prep", {}).get("tact_theta", "0") or 0)
    squeezed = theta != 0.0
    if map_csv.exists():
        if squeezed:
            specs.append(FigureSpec(
                csv_path=map_csv, kind="heatmap",
                out_path=out_dir / "decoherence_ratio_map",
                x_column="g", y_column="c", value_column="t_cross_ratio",
                title="squeezing lifetime t / t0 over couplings",
                annotation=note,
            ))
        else:
            specs.append(FigureSpec(
                csv_path=map_csv, kind="heatmap",
                out_path=out_dir / "sector_population_map",
                x_column="g", y_column="c", value_column="p_top",
                title="maximal-spin population over couplings",
                annotation=note,
            ))
            specs.append(FigureSpec(
                csv_path=map_csv, kind="heatmap",
                out_path=out_dir / "coherence_map",
                x_column="g", y_column="c", value_column="Sx",
                title="transverse spin over couplings",
                annotation=note,
            ))
    if series.exists():
        frame_cols = pd.read_csv(series, nrows=0).columns
        grouped = ("g", "c") if "g" in frame_cols else ()
        p_top = next((c for c in frame_cols if c.startswith("p_")), None)
        if squeezed and "xi2" in frame_cols:
            specs.append(FigureSpec(
                csv_path=series, kind="lines", out_path=out_dir / "squeezing_series",
                x_column="t", y_columns=("xi2",), group_columns=grouped,
                x_label="trap periods (omega t)", y_label="squeezing parameter",
                title="squeezing parameter evolution",
            ))
        elif p_top is not None:
            specs.append(FigureSpec(
                csv_path=series, kind="lines", out_path=out_dir / "sector_series",
                x_column="t", y_columns=(p_top,), group_columns=grouped,
                x_label="trap periods (omega t)", y_label=p_top,
                title="maximal-spin population evolution",
            ))
    return specs


def render_run_dir(run_dir, out_dir) -> list[Path]:
    """Render every applicable figure for one run directory."""
    specs = figure_specs_for_run(Path(run_dir), Path(out_dir))
    if not specs:
        raise FileNotFoundError(f"{run_dir} has no renderable outputs")
    written = []
    for spec in specs:
        written.extend(render(spec))
    return written
