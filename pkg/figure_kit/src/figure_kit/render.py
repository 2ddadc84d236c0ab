"""Render one figure per job from validated thermlab CSV tables.

The renderer draws what the tables already contain and nothing else: fitted
values shown on a figure are read from the runner's verdicts JSON, never
recomputed here.  The only synthetic curves are guide lines (the dyadic decay
reference with slope -2 log(1/rho) on cascade figures and the second-order
reference on convergence figures), both anchored at the first plotted point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.ticker import MaxNLocator

from .schemas import load_annotations, load_table

KINDS = ("cascade", "modulus", "stability", "convergence")

MARKERS = ("o", "s", "^", "d", "v")

# kind -> (verdicts section, key, printed label) for the optional annotation.
ANNOTATION_KEYS = {
    "cascade": ("cascade", "fitted_decay_exponent", "fitted decay exponent"),
    "modulus": ("modulus", "max_ratio", "max ratio"),
    "stability": ("stability", "fitted_order", "fitted order"),
}


class OutputExists(Exception):
    """The output path already exists and overwriting was not forced."""


@dataclass(frozen=True)
class FigureJob:
    """One figure to render.

    ``inputs`` holds one or more CSV paths in the kind's documented schema;
    a path ending in .json is treated as the runner's verdicts file and
    supplies the fitted-value annotation.  ``rho`` sets the slope of the
    cascade reference line and must match the rho the runner used.
    """

    kind: str
    inputs: tuple
    output: str
    rho: float = 0.5
    force: bool = False
    title: str | None = None
    dpi: int = 150


def render(job: FigureJob) -> Path:
    """Draw the figure described by ``job`` and write it to ``job.output``."""
    if job.kind not in KINDS:
        raise ValueError(f"unknown figure kind {job.kind!r}; expected one of {KINDS}")
    if not 0.0 < job.rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {job.rho!r}")
    out = Path(job.output)
    if not out.suffix:
        raise ValueError(f"output path {out} needs an image extension such as .png")
    if out.exists() and not job.force:
        raise OutputExists(f"refusing to overwrite {out}; pass --force to replace it")

    csv_paths = [Path(p) for p in job.inputs if Path(p).suffix != ".json"]
    json_paths = [Path(p) for p in job.inputs if Path(p).suffix == ".json"]
    if not csv_paths:
        raise ValueError("at least one CSV input is required")
    if len(json_paths) > 1:
        raise ValueError("at most one verdicts JSON input is accepted")
    annotations = load_annotations(json_paths[0]) if json_paths else {}

    labels = _series_labels(csv_paths)
    tables = [load_table(p, job.kind, label=lab) for p, lab in zip(csv_paths, labels)]

    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    try:
        draw(ax, job.kind, tables, rho=job.rho, annotations=annotations)
        ax.set_title(job.title if job.title is not None else _default_title(job.kind))
        fig.tight_layout()
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, dpi=job.dpi)
    finally:
        plt.close(fig)
    return out


def draw(ax, kind: str, tables, rho: float = 0.5, annotations: dict | None = None):
    """Draw one figure kind onto an existing axes (render() composes this)."""
    if kind == "cascade":
        _draw_cascade(ax, tables, rho)
    elif kind == "modulus":
        _draw_modulus(ax, tables)
    elif kind == "stability":
        _draw_stability(ax, tables)
    elif kind == "convergence":
        _draw_convergence(ax, tables)
    else:
        raise ValueError(f"unknown figure kind {kind!r}; expected one of {KINDS}")
    text = _annotation_text(kind, annotations or {})
    if text is not None:
        # decaying curves leave the lower-left corner free; rising ones the
        # upper-left
        if kind in ("cascade", "convergence"):
            y, va = 0.03, "bottom"
        else:
            y, va = 0.97, "top"
        ax.text(
            0.02,
            y,
            text,
            transform=ax.transAxes,
            fontsize=9,
            color="0.25",
            verticalalignment=va,
        )
    ax.grid(True, which="both", alpha=0.3)
    handles, _ = ax.get_legend_handles_labels()
    if len(handles) > 1 or len(tables) > 1:
        ax.legend(fontsize=8)


def _draw_cascade(ax, tables, rho: float) -> None:
    positive_seen = False
    for i, tab in enumerate(tables):
        n = tab.columns["n"]
        err = tab.columns["sup_error"]
        positive_seen = positive_seen or bool(np.any(err > 0.0))
        shown = np.where(err > 0.0, err, np.nan)
        ax.plot(n, shown, marker=MARKERS[i % len(MARKERS)], label=tab.label)
    if positive_seen:
        ax.set_yscale("log")
        base = tables[0]
        n = base.columns["n"]
        err = base.columns["sup_error"]
        ok = np.isfinite(err) & (err > 0.0)
        n0 = n[ok][0]
        e0 = err[ok][0]
        ref = e0 * rho ** (2.0 * (n - n0))
        ax.plot(
            n,
            ref,
            linestyle="--",
            color="0.4",
            label=f"reference slope -2 log(1/rho), rho={rho:g}",
        )
    else:
        # Degenerate input (all errors exactly zero): keep a linear axis so
        # the flat curve is still visible.
        for i, tab in enumerate(tables):
            ax.plot(
                tab.columns["n"],
                tab.columns["sup_error"],
                marker=MARKERS[i % len(MARKERS)],
                label=tab.label,
            )
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("cascade level n")
    ax.set_ylabel("sup error over the level window")


def _draw_modulus(ax, tables) -> None:
    for i, tab in enumerate(tables):
        ax.plot(
            tab.columns["r"],
            tab.columns["ratio"],
            marker=MARKERS[i % len(MARKERS)],
            label=tab.label,
        )
    ax.set_xscale("log")
    ax.set_xlabel("radius r")
    ax.set_ylabel("osc(r) / (r^2 log(1/r))")


def _draw_stability(ax, tables) -> None:
    plotted = 0
    for i, tab in enumerate(tables):
        scale = tab.columns["scale"]
        dist = tab.columns["distance"]
        ok = np.isfinite(dist) & (dist > 0.0) & (scale > 0.0)
        if not np.any(ok):
            continue
        ax.plot(
            scale[ok],
            dist[ok],
            marker=MARKERS[i % len(MARKERS)],
            label=tab.label,
        )
        plotted += 1
    if plotted == 0:
        raise ValueError(
            "no finite positive distances to plot; the stability run "
            "produced degenerate data"
        )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("coefficient scale")
    ax.set_ylabel("window distance to the unscaled solution")


def _draw_convergence(ax, tables) -> None:
    anchor = None
    plotted = 0
    for i, tab in enumerate(tables):
        value = tab.columns["value"]
        err = tab.columns["error"]
        ok = np.isfinite(err) & (err > 0.0) & (value > 0.0)
        if not np.any(ok):
            continue
        ax.plot(
            value[ok],
            err[ok],
            marker=MARKERS[i % len(MARKERS)],
            label=tab.label,
        )
        if anchor is None:
            anchor = (value[ok], err[ok][0], value[ok][0])
        plotted += 1
    if plotted == 0:
        raise ValueError(
            "no finite positive values in column 'error'; sweeps over axes "
            "other than gridSize do not measure a discretization error "
            "(see the note column)"
        )
    values, e0, v0 = anchor
    ref = e0 * (values / v0) ** (-2.0)
    ax.plot(values, ref, linestyle="--", color="0.4", label="second-order reference")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("grid size")
    ax.set_ylabel("error against the exact solution")


def _annotation_text(kind: str, annotations: dict):
    spec = ANNOTATION_KEYS.get(kind)
    if spec is None or not annotations:
        return None
    section, key, label = spec
    value = annotations.get(section, {})
    if not isinstance(value, dict):
        return None
    value = value.get(key)
    if isinstance(value, (int, float)) and math.isfinite(value):
        return f"{label} = {value:.4g}"
    return None


def _series_labels(paths) -> list:
    """Legend labels: file stems, disambiguated by parent directory."""
    stems = [p.stem for p in paths]
    labels = []
    for p, stem in zip(paths, stems):
        if stems.count(stem) > 1:
            labels.append(f"{p.parent.name}/{stem}")
        else:
            labels.append(stem)
    return labels


def _default_title(kind: str) -> str:
    return {
        "cascade": "Paraboloid cascade decay",
        "modulus": "Log-Lipschitz modulus ratio",
        "stability": "Stability under coefficient scaling",
        "convergence": "Convergence under grid refinement",
    }[kind]
