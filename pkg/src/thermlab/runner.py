"""Experiment orchestration: solve runs, regularity runs, parameter sweeps.

Every run writes its artifacts into one output directory and finishes by
atomically writing ``manifest.json``, which echoes the configuration, lists
every file the run emitted, and records per-stage status.  CSV and JSON
payloads are deterministic for a fixed configuration and package version;
the manifest's wall-clock timestamps are the one deliberate exception.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, build_settings, build_spec, parse_config
from .coupled import (
    CoupledError,
    CoupledSolution,
    dump_history,
    fixed_point,
    scale_system,
    validate_assumptions,
)
from .fields import FieldError, ScalarField, dump_raw
from .poisson import PoissonError
from .px_laplace import DEFAULT_SCHEDULE, ExponentField, NonfiniteEnergy, energy
from .regularity import (
    RESOLUTION_RADII,
    RegularityError,
    dump_cascade,
    dump_modulus,
    dump_stability,
    dyadic_cascade,
    loglip_modulus,
    stability_regression,
)

SOLVER_ERRORS = (
    CoupledError,
    PoissonError,
    FieldError,
    NonfiniteEnergy,
    RegularityError,
    ValueError,
)

DECAY_THRESHOLD = 1.9
STABILITY_THRESHOLD = 0.9


class NotConverged(Exception):
    """The outer fixed point exhausted its budget without meeting tolerance."""


@dataclass(frozen=True)
class StageStatus:
    name: str
    status: str  # ok | failed | skipped
    detail: str = ""


@dataclass(frozen=True)
class RunManifest:
    version: str
    started: str
    finished: str
    stages: tuple
    files: tuple
    config_text: str


class OutputDir:
    """Tracks every file a run emits so the manifest can list them all."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.directory / name


def _jsonable(value):
    """Round-trip-safe payloads: non-finite floats become null."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, np.floating):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def write_manifest(out: OutputDir, stages, started: str, config_text: str) -> Path:
    # List everything actually present, not just what this run emitted, so a
    # rerun into a previously used directory still produces a complete index.
    on_disk = [
        p.name
        for p in out.directory.iterdir()
        if p.is_file() and p.name not in ("manifest.json", "manifest.json.tmp")
    ]
    manifest = RunManifest(
        version=__version__,
        started=started,
        finished=utc_now(),
        stages=tuple(stages),
        files=tuple(sorted(set(out.files) | set(on_disk))),
        config_text=config_text,
    )
    payload = {
        "version": manifest.version,
        "started": manifest.started,
        "finished": manifest.finished,
        "stages": [
            {"name": s.name, "status": s.status, "detail": s.detail}
            for s in manifest.stages
        ],
        "files": list(manifest.files),
        "config": manifest.config_text,
    }
    final = out.directory / "manifest.json"
    tmp = out.directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, final)
    return final


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def run_validate(config: ExperimentConfig):
    spec = build_spec(config)
    return validate_assumptions(spec)


def _solution_energy(spec, settings, sol: CoupledSolution) -> float:
    p_vals = np.asarray(spec.sigma(sol.theta.values), dtype=float)
    upper = spec.sigma.upper_clamp
    p_max = float(upper) if upper is not None else float(np.max(p_vals))
    pfield = ExponentField(
        ScalarField(spec.f.grid, p_vals), p_min=spec.sigma_minus, p_max=p_max
    )
    schedule = settings.schedule if settings.schedule is not None else DEFAULT_SCHEDULE
    return energy(sol.u, pfield, spec.f, schedule.epsilons[-1])


def run_solve(config: ExperimentConfig, out: OutputDir) -> CoupledSolution:
    """Solve the coupled system and persist fields, history, and summary."""
    spec = build_spec(config)
    settings = build_settings(config)
    sol = fixed_point(
        spec,
        relaxation=config.solver.relaxation,
        outer_tol=config.solver.outer_tol,
        max_outer=config.solver.max_outer,
        settings=settings,
    )
    out.path("u.raw")
    out.path("u.json")
    dump_raw(sol.u, out.directory / "u")
    out.path("theta.raw")
    out.path("theta.json")
    dump_raw(sol.theta, out.directory / "theta")
    dump_history(out.path("history.csv"), sol.history)
    summary = {
        "converged": sol.converged,
        "outer_iterations": sol.outer_iterations,
        "final_diff": sol.history[-1].theta_diff_sup if sol.history else 0.0,
        "energy": _solution_energy(spec, settings, sol),
    }
    _write_json(out.path("summary.json"), summary)
    return sol


def run_regularity(
    config: ExperimentConfig, out: OutputDir, solution: CoupledSolution | None = None
):
    """Run cascade, modulus, and stability experiments; write CSVs and verdicts.

    Resolution or trace failures are recorded in the verdicts instead of
    aborting the run, since a too-coarse grid is a finding, not a crash.
    """
    spec = build_spec(config)
    settings = build_settings(config)
    if solution is None:
        solution = fixed_point(
            spec,
            relaxation=config.solver.relaxation,
            outer_tol=config.solver.outer_tol,
            max_outer=config.solver.max_outer,
            settings=settings,
        )
    reg = config.regularity
    center = (reg.center_x, reg.center_y)
    grid = solution.theta.grid
    verdicts = {}
    stages = []

    scaled_spec, transform = scale_system(spec, reg.delta)
    theta_k = ScalarField(grid, solution.theta.values / transform.K)
    try:
        report = dyadic_cascade(
            theta_k, center, reg.rho, reg.n_max,
            samples=reg.samples, trace_tol=reg.trace_tol,
        )
        dump_cascade(out.path("cascade.csv"), report)
        exponent = report.fitted_decay_exponent
        verdicts["cascade"] = {
            "scaling_K": transform.K,
            "fitted_decay_exponent": exponent,
            "threshold": DECAY_THRESHOLD,
            "passed": bool(exponent >= DECAY_THRESHOLD)
            if math.isfinite(exponent)
            else None,
            "matrix_growth_slope": report.matrix_growth_slope,
            "truncated_at": report.truncated_at,
            "levels": len(report.levels),
            "notes": list(report.notes),
        }
        stages.append(StageStatus("cascade", "ok"))
    except RegularityError as exc:
        verdicts["cascade"] = {"error": f"{type(exc).__name__}: {exc}"}
        stages.append(StageStatus("cascade", "failed", str(exc)))

    floor = RESOLUTION_RADII * grid.h
    if reg.radii:
        usable = tuple(r for r in reg.radii if r > floor)
        skipped = tuple(r for r in reg.radii if r <= floor)
    else:
        top = min(0.25, 0.45 * grid.side)
        lo = floor * 1.05
        usable = tuple(np.geomspace(lo, top, 10)) if lo < top else ()
        skipped = ()
    if usable:
        mod = loglip_modulus(solution.theta, center, usable, samples=reg.samples)
        dump_modulus(out.path("modulus.csv"), mod)
        increasing_into_origin = all(
            small >= large for small, large in zip(mod.ratios[1:], mod.ratios[:-1])
        )
        verdicts["modulus"] = {
            "max_ratio": max(mod.ratios),
            "monotone_blowup": bool(increasing_into_origin and len(mod.ratios) > 1),
            "skipped_radii": list(skipped),
            "skipped_count": len(skipped),
        }
        stages.append(StageStatus("modulus", "ok"))
    else:
        verdicts["modulus"] = {
            "error": "all requested radii are at or below the resolution floor",
            "skipped_radii": list(skipped),
            "skipped_count": len(skipped),
        }
        stages.append(StageStatus("modulus", "skipped", "no usable radii"))

    try:
        stab = stability_regression(
            spec,
            reg.stability_scales,
            settings=settings,
            window_half_width=reg.window_half_width,
            outer_tol=config.solver.outer_tol,
            max_outer=config.solver.max_outer,
        )
        dump_stability(out.path("stability.csv"), stab)
        verdicts["stability"] = {
            "fitted_order": stab.fitted_order,
            "threshold": STABILITY_THRESHOLD,
            "passed": bool(stab.fitted_order >= STABILITY_THRESHOLD)
            if math.isfinite(stab.fitted_order)
            else None,
        }
        stages.append(StageStatus("stability", "ok"))
    except (RegularityError, ValueError) as exc:
        verdicts["stability"] = {"error": f"{type(exc).__name__}: {exc}"}
        stages.append(StageStatus("stability", "failed", str(exc)))

    _write_json(out.path("verdicts.json"), verdicts)
    return verdicts, stages


SWEEP_METRICS = {
    "lambdaPlus": "theta_sup",
    "lambdaScale": "distance",
    "gridSize": "error",
    "rho": "fitted_decay_exponent",
}


def _manufactured_error(config: ExperimentConfig, sol: CoupledSolution) -> float:
    """Sup error against the separable sine solution, when it applies.

    Valid only for a constant exponent 2 and a product-of-sines source: the
    potential equation is then the linear Poisson problem with the analytic
    solution amplitude/(2 pi^2) sin(pi x) sin(pi y).
    """
    coeff = config.coefficients
    if not (
        coeff.sigma_family == "constant"
        and coeff.sigma_value == 2.0
        and coeff.f_kind == "product_sines"
    ):
        return math.nan
    grid = sol.u.grid
    xs, ys = grid.meshes()
    ext = config.grid.extent
    exact = (
        coeff.f_amplitude
        * (ext / np.pi) ** 2
        / 2.0
        * np.sin(np.pi * xs / ext)
        * np.sin(np.pi * ys / ext)
    )
    return float(np.max(np.abs(sol.u.values - exact)))


def sweep_row(config_text: str, axis: str, value: float) -> dict:
    """Run one sweep configuration and report headline metrics.

    Module-level so process pools can ship it to workers; all file output
    stays with the caller.
    """
    row = {
        "value": value,
        "converged": False,
        "outer_iterations": 0,
        "final_diff": math.nan,
        "metric": math.nan,
        "note": "",
    }
    try:
        config = parse_config(config_text)
        if axis == "gridSize":
            config = replace(config, grid=replace(config.grid, nx=int(value)))
        elif axis == "lambdaPlus":
            coeff = replace(
                config.coefficients, lambda_family="constant",
                lambda_value=value, lambda_plus=value,
            )
            config = replace(config, coefficients=coeff)
        elif axis == "rho":
            if not 0.0 < value < 1.0:
                raise ValueError(f"rho = {value:g} outside (0, 1)")
        spec = build_spec(config)
        settings = build_settings(config)

        if axis == "lambdaScale":
            stab = stability_regression(
                spec,
                (value,),
                settings=settings,
                window_half_width=config.regularity.window_half_width,
                outer_tol=config.solver.outer_tol,
                max_outer=config.solver.max_outer,
            )
            row.update(converged=True, metric=stab.distances[0])
            row["final_diff"] = 0.0
            return row

        sol = fixed_point(
            spec,
            relaxation=config.solver.relaxation,
            outer_tol=config.solver.outer_tol,
            max_outer=config.solver.max_outer,
            settings=settings,
        )
        row["converged"] = sol.converged
        row["outer_iterations"] = sol.outer_iterations
        row["final_diff"] = sol.history[-1].theta_diff_sup if sol.history else 0.0
        if axis == "lambdaPlus":
            row["metric"] = float(np.max(np.abs(sol.theta.values)))
        elif axis == "gridSize":
            row["metric"] = _manufactured_error(config, sol)
        elif axis == "rho":
            _, transform = scale_system(spec, config.regularity.delta)
            theta_k = ScalarField(
                sol.theta.grid, sol.theta.values / transform.K
            )
            report = dyadic_cascade(
                theta_k,
                (config.regularity.center_x, config.regularity.center_y),
                value,
                config.regularity.n_max,
                samples=config.regularity.samples,
                trace_tol=config.regularity.trace_tol,
            )
            row["metric"] = report.fitted_decay_exponent
            if not math.isfinite(report.fitted_decay_exponent) and report.notes:
                row["note"] = "; ".join(report.notes)
    except SOLVER_ERRORS as exc:
        row["note"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(config: ExperimentConfig, out: OutputDir, workers: int = 1):
    """Sweep one parameter axis; one CSV row per value, failures recorded."""
    axis = config.sweep.axis
    if axis is None:
        raise ConfigError("sweep requested but [sweep] axis is not set")
    values = config.sweep.values
    metric_name = SWEEP_METRICS[axis]
    if workers > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(sweep_row, [config.text] * len(values), [axis] * len(values), values)
            )
    else:
        rows = [sweep_row(config.text, axis, v) for v in values]

    lines = [f"value,converged,outer_iterations,final_diff,{metric_name},note"]
    for row in rows:
        value = row["value"]
        value_str = str(int(value)) if axis == "gridSize" else repr(float(value))
        note = row["note"]
        if not note and not math.isfinite(row["metric"]):
            note = f"{metric_name} undefined for this configuration"
        lines.append(
            ",".join(
                [
                    value_str,
                    str(bool(row["converged"])).lower(),
                    str(int(row["outer_iterations"])),
                    repr(float(row["final_diff"])),
                    repr(float(row["metric"])),
                    note.replace(",", ";"),
                ]
            )
        )
    out.path("sweep.csv").write_text("\n".join(lines) + "\n")
    return rows
