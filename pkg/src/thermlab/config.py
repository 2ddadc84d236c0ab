"""Line-oriented configuration files for experiment runs.

The format is deliberately tiny: ``[section]`` headers, ``key = value``
pairs, ``#`` comments.  Every key has a default, so the empty file is a
valid configuration describing the baseline problem (affine-clamped
exponent law in [1.5, 4], constant heat coefficient 0.1, unit source).
Parse failures name the offending key and line number.

Source fields come from a closed whitelist of named formulas rather than an
expression language, which keeps run configurations reproducible and diffs
reviewable:

* ``constant``: f = value
* ``product_sines``: f = amplitude * sin(pi x') sin(pi y')
* ``radial_power``: f = amplitude * r'^power from the domain center
* ``quadratic``: f = amplitude * r'^2 from the domain center

where primed coordinates are normalized by the domain extent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupled import (
    AffineClampedLaw,
    CoefficientSpec,
    ConstantLaw,
    SolverSettings,
    TabulatedLaw,
)
from .fields import Grid2D, ScalarField
from .px_laplace import RegularizationSchedule


class ConfigError(Exception):
    """A configuration file could not be parsed or validated."""


SECTIONS = ("grid", "coefficients", "solver", "regularity", "output", "sweep")
LAW_FAMILIES = ("affine", "constant", "tabulated")
SOURCE_KINDS = ("constant", "product_sines", "radial_power", "quadratic")
SWEEP_AXES = ("lambdaPlus", "lambdaScale", "gridSize", "rho")


@dataclass(frozen=True)
class GridSection:
    nx: int = 65
    extent: float = 1.0


@dataclass(frozen=True)
class CoefficientSection:
    sigma_family: str = "affine"
    sigma_value: float = 2.0
    sigma_intercept: float = 2.0
    sigma_slope: float = 1.0
    sigma_lower: float = 1.5
    sigma_upper: float = 4.0
    sigma_points: tuple = ()
    sigma_values: tuple = ()
    sigma_minus: float = 1.5
    c_sigma: float = 1.0
    lambda_family: str = "constant"
    lambda_value: float = 0.1
    lambda_intercept: float = 0.1
    lambda_slope: float = 0.0
    lambda_lower: float = 0.0
    lambda_upper: float = 0.1
    lambda_points: tuple = ()
    lambda_values: tuple = ()
    lambda_plus: float = 0.1
    f_kind: str = "constant"
    f_value: float = 1.0
    f_amplitude: float = 1.0
    f_power: float = 1.0
    c_f: float | None = None


@dataclass(frozen=True)
class SolverSection:
    px_tol: float = 1e-8
    px_max_iters: int = 400
    outer_tol: float = 1e-8
    max_outer: int = 50
    relaxation: float = 1.0
    schedule: tuple = ()
    poisson_tol: float = 1e-12
    seed: int = 1234


@dataclass(frozen=True)
class RegularitySection:
    rho: float = 0.5
    n_max: int = 5
    center_x: float = 0.5
    center_y: float = 0.5
    radii: tuple = ()
    delta: float = 0.05
    trace_tol: float | None = None
    samples: int = 400
    stability_scales: tuple = (1.0, 0.5, 0.25, 0.125)
    window_half_width: float = 0.25


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class SweepSection:
    axis: str | None = None
    values: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSection
    coefficients: CoefficientSection
    solver: SolverSection
    regularity: RegularitySection
    output: OutputSection
    sweep: SweepSection
    text: str


def _raw_pairs(text: str):
    """Yield ((section, key), (value, line_no)) with syntax errors located."""
    section = None
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header {line!r}")
            name = line[1:-1].strip()
            if name not in SECTIONS:
                raise ConfigError(
                    f"line {lineno}: unknown section [{name}]; expected one of "
                    + ", ".join(SECTIONS)
                )
            section = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if (section, key) in seen:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} in [{section}] "
                f"(first set on line {seen[(section, key)]})"
            )
        seen[(section, key)] = lineno
        yield (section, key), (value, lineno)


class _Raw:
    """Typed access to parsed pairs, tracking which keys were consumed."""

    def __init__(self, text: str):
        self.pairs = dict(_raw_pairs(text))
        self.consumed = set()

    def _fetch(self, section, key):
        self.consumed.add((section, key))
        return self.pairs.get((section, key))

    def _convert(self, section, key, conv, default, kind):
        entry = self._fetch(section, key)
        if entry is None:
            return default
        value, lineno = entry
        try:
            return conv(value)
        except (ValueError, TypeError):
            raise ConfigError(
                f"line {lineno}: [{section}] {key} = {value!r} is not {kind}"
            ) from None

    def number(self, section, key, default):
        return self._convert(section, key, float, default, "a number")

    def integer(self, section, key, default):
        return self._convert(section, key, int, default, "an integer")

    def numbers(self, section, key, default):
        def conv(value):
            if not value:
                return ()
            return tuple(float(part) for part in value.split(","))

        return self._convert(section, key, conv, default, "a comma-separated number list")

    def word(self, section, key, default, choices=None):
        entry = self._fetch(section, key)
        if entry is None:
            return default
        value, lineno = entry
        if choices is not None and value not in choices:
            raise ConfigError(
                f"line {lineno}: [{section}] {key} = {value!r}; expected one of "
                + ", ".join(choices)
            )
        return value

    def optional_number(self, section, key):
        def conv(value):
            if value in ("", "none"):
                return None
            return float(value)

        return self._convert(section, key, conv, None, "a number or 'none'")

    def words(self, section, key, default, choices):
        def conv(value):
            parts = tuple(part.strip() for part in value.split(",") if part.strip())
            for part in parts:
                if part not in choices:
                    raise ValueError
            return parts

        return self._convert(
            section, key, conv, default, "a comma-separated subset of " + ", ".join(choices)
        )

    def reject_unconsumed(self):
        leftovers = sorted(
            (lineno, section, key)
            for (section, key), (_, lineno) in self.pairs.items()
            if (section, key) not in self.consumed
        )
        if leftovers:
            lineno, section, key = leftovers[0]
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")


def parse_config(text: str) -> ExperimentConfig:
    raw = _Raw(text)
    d = GridSection()
    grid = GridSection(
        nx=raw.integer("grid", "nx", d.nx),
        extent=raw.number("grid", "extent", d.extent),
    )
    if grid.nx < 17:
        raise ConfigError("[grid] nx must be at least 17")
    if grid.extent <= 0.0:
        raise ConfigError("[grid] extent must be positive")

    c = CoefficientSection()
    coeff = CoefficientSection(
        sigma_family=raw.word("coefficients", "sigma_family", c.sigma_family, LAW_FAMILIES),
        sigma_value=raw.number("coefficients", "sigma_value", c.sigma_value),
        sigma_intercept=raw.number("coefficients", "sigma_intercept", c.sigma_intercept),
        sigma_slope=raw.number("coefficients", "sigma_slope", c.sigma_slope),
        sigma_lower=raw.number("coefficients", "sigma_lower", c.sigma_lower),
        sigma_upper=raw.number("coefficients", "sigma_upper", c.sigma_upper),
        sigma_points=raw.numbers("coefficients", "sigma_points", c.sigma_points),
        sigma_values=raw.numbers("coefficients", "sigma_values", c.sigma_values),
        sigma_minus=raw.number("coefficients", "sigma_minus", c.sigma_minus),
        c_sigma=raw.number("coefficients", "c_sigma", c.c_sigma),
        lambda_family=raw.word("coefficients", "lambda_family", c.lambda_family, LAW_FAMILIES),
        lambda_value=raw.number("coefficients", "lambda_value", c.lambda_value),
        lambda_intercept=raw.number("coefficients", "lambda_intercept", c.lambda_intercept),
        lambda_slope=raw.number("coefficients", "lambda_slope", c.lambda_slope),
        lambda_lower=raw.number("coefficients", "lambda_lower", c.lambda_lower),
        lambda_upper=raw.number("coefficients", "lambda_upper", c.lambda_upper),
        lambda_points=raw.numbers("coefficients", "lambda_points", c.lambda_points),
        lambda_values=raw.numbers("coefficients", "lambda_values", c.lambda_values),
        lambda_plus=raw.number("coefficients", "lambda_plus", c.lambda_plus),
        f_kind=raw.word("coefficients", "f_kind", c.f_kind, SOURCE_KINDS),
        f_value=raw.number("coefficients", "f_value", c.f_value),
        f_amplitude=raw.number("coefficients", "f_amplitude", c.f_amplitude),
        f_power=raw.number("coefficients", "f_power", c.f_power),
        c_f=raw.optional_number("coefficients", "c_f"),
    )

    s = SolverSection()
    solver = SolverSection(
        px_tol=raw.number("solver", "px_tol", s.px_tol),
        px_max_iters=raw.integer("solver", "px_max_iters", s.px_max_iters),
        outer_tol=raw.number("solver", "outer_tol", s.outer_tol),
        max_outer=raw.integer("solver", "max_outer", s.max_outer),
        relaxation=raw.number("solver", "relaxation", s.relaxation),
        schedule=raw.numbers("solver", "schedule", s.schedule),
        poisson_tol=raw.number("solver", "poisson_tol", s.poisson_tol),
        seed=raw.integer("solver", "seed", s.seed),
    )

    r = RegularitySection()
    reg = RegularitySection(
        rho=raw.number("regularity", "rho", r.rho),
        n_max=raw.integer("regularity", "n_max", r.n_max),
        center_x=raw.number("regularity", "center_x", r.center_x),
        center_y=raw.number("regularity", "center_y", r.center_y),
        radii=raw.numbers("regularity", "radii", r.radii),
        delta=raw.number("regularity", "delta", r.delta),
        trace_tol=raw.optional_number("regularity", "trace_tol"),
        samples=raw.integer("regularity", "samples", r.samples),
        stability_scales=raw.numbers("regularity", "stability_scales", r.stability_scales),
        window_half_width=raw.number("regularity", "window_half_width", r.window_half_width),
    )
    if not 0.0 < reg.rho < 1.0:
        raise ConfigError("[regularity] rho must lie in (0, 1)")
    if reg.n_max < 1:
        raise ConfigError("[regularity] n_max must be at least 1")
    if reg.delta <= 0.0:
        raise ConfigError("[regularity] delta must be positive")

    o = OutputSection()
    output = OutputSection(
        directory=raw.word("output", "directory", o.directory),
        formats=raw.words("output", "formats", o.formats, ("csv", "json")),
    )

    axis = raw.word("sweep", "axis", None, SWEEP_AXES)
    sweep = SweepSection(axis=axis, values=raw.numbers("sweep", "values", ()))
    if sweep.axis is not None and sweep.axis == "gridSize":
        for v in sweep.values:
            if v != int(v) or int(v) < 17:
                raise ConfigError("[sweep] gridSize values must be integers >= 17")

    raw.reject_unconsumed()
    return ExperimentConfig(
        grid=grid,
        coefficients=coeff,
        solver=solver,
        regularity=reg,
        output=output,
        sweep=sweep,
        text=text,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _law(raw: CoefficientSection, prefix: str):
    family = getattr(raw, f"{prefix}_family")
    if family == "constant":
        return ConstantLaw(getattr(raw, f"{prefix}_value"))
    if family == "affine":
        return AffineClampedLaw(
            intercept=getattr(raw, f"{prefix}_intercept"),
            slope=getattr(raw, f"{prefix}_slope"),
            lower=getattr(raw, f"{prefix}_lower"),
            upper=getattr(raw, f"{prefix}_upper"),
        )
    points = getattr(raw, f"{prefix}_points")
    values = getattr(raw, f"{prefix}_values")
    if len(points) != len(values) or len(points) < 2:
        raise ConfigError(
            f"[coefficients] {prefix}_points and {prefix}_values must be "
            "equal-length lists with at least two entries"
        )
    return TabulatedLaw(points=points, values=values)


def build_grid(config: ExperimentConfig) -> Grid2D:
    nx = config.grid.nx
    return Grid2D(nx=nx, ny=nx, h=config.grid.extent / (nx - 1), origin=(0.0, 0.0))


def build_source(config: ExperimentConfig, grid: Grid2D) -> ScalarField:
    kind = config.coefficients.f_kind
    if kind == "constant":
        return ScalarField.constant(grid, config.coefficients.f_value)
    xs, ys = grid.meshes()
    ext = config.grid.extent
    xn, yn = xs / ext, ys / ext
    amp = config.coefficients.f_amplitude
    if kind == "product_sines":
        vals = amp * np.sin(np.pi * xn) * np.sin(np.pi * yn)
    elif kind == "radial_power":
        rn = np.hypot(xn - 0.5, yn - 0.5)
        vals = amp * rn ** config.coefficients.f_power
    else:  # quadratic
        vals = amp * ((xn - 0.5) ** 2 + (yn - 0.5) ** 2)
    return ScalarField(grid, vals)


def build_spec(config: ExperimentConfig) -> CoefficientSpec:
    """Materialize the coefficient specification the config describes."""
    grid = build_grid(config)
    f = build_source(config, grid)
    c_f = config.coefficients.c_f
    if c_f is None:
        c_f = float(np.max(np.abs(f.values)))
    return CoefficientSpec(
        sigma=_law(config.coefficients, "sigma"),
        sigma_minus=config.coefficients.sigma_minus,
        c_sigma=config.coefficients.c_sigma,
        lam=_law(config.coefficients, "lambda"),
        lambda_plus=config.coefficients.lambda_plus,
        f=f,
        c_f=c_f,
    )


def build_settings(config: ExperimentConfig) -> SolverSettings:
    schedule = None
    if config.solver.schedule:
        try:
            schedule = RegularizationSchedule(config.solver.schedule)
        except ValueError as exc:
            raise ConfigError(f"[solver] schedule: {exc}") from None
    return SolverSettings(
        px_tol=config.solver.px_tol,
        px_max_iters=config.solver.px_max_iters,
        schedule=schedule,
        poisson_tol=config.solver.poisson_tol,
    )
