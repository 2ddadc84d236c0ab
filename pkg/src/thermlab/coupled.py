"""Coupled solver for the thermistor-type system.

The system couples a variable-exponent diffusion problem for the potential u
with a Poisson problem for the temperature theta:

    -div(|Du|^(sigma(theta)-2) Du) = f,      u = 0 on the boundary,
    -laplace(theta) = lambda(theta) |Du|^sigma(theta),   theta = 0 on the boundary.

One application of the operator T freezes the temperature: it builds the
exponent field p = sigma(theta*), solves the p(x)-problem for u, forms the
heat source lambda(theta*) (|Du|^2 + eps^2)^(p/2) with the regularization eps
the inner solver actually finished on, and solves the Poisson problem.  A
(optionally damped) fixed-point iteration on T produces the coupled solution.

Coefficient laws are restricted to families with computable Lipschitz and sup
bounds (constant, affine-clamped, tabulated with linear interpolation), so
the standing assumptions on the data can be checked by direct sampling.  The
scaling normalization theta -> theta / K with K = max(1, sup|lambda| / delta)
maps a solution of the system to a solution of the rescaled system exactly,
which gives a strong consistency check on the whole pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .fields import ScalarField, VectorField, gradient, sup_norm
from .poisson import solve_poisson
from .px_laplace import (
    ExponentField,
    RegularizationSchedule,
    exponent_threshold,
    solve_px,
)


class CoupledError(Exception):
    """Base class for coupled-solver failures."""


class InvalidCoefficientSpec(CoupledError):
    """The coefficient data violates one of the standing assumptions."""


# Temperatures are probed on [-PROBE_RANGE, PROBE_RANGE] when sampling the
# coefficient laws; solutions of interest live well inside this interval.
PROBE_RANGE = 10.0
PROBE_COUNT = 4001


def _probes() -> np.ndarray:
    return np.linspace(-PROBE_RANGE, PROBE_RANGE, PROBE_COUNT)


@dataclass(frozen=True)
class ConstantLaw:
    """Temperature-independent coefficient."""

    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidCoefficientSpec("constant law value must be finite")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.value)

    def scale_input(self, k: float) -> "ConstantLaw":
        return self

    def scale_output(self, c: float) -> "ConstantLaw":
        return ConstantLaw(self.value * c)

    @property
    def upper_clamp(self):
        return None


@dataclass(frozen=True)
class AffineClampedLaw:
    """t -> clamp(intercept + slope * t, lower, upper)."""

    intercept: float
    slope: float
    lower: float
    upper: float

    def __post_init__(self):
        vals = (self.intercept, self.slope, self.lower, self.upper)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidCoefficientSpec("affine-clamped law needs finite parameters")
        if self.lower > self.upper:
            raise InvalidCoefficientSpec(
                f"clamp interval is empty: [{self.lower}, {self.upper}]"
            )

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(self.intercept + self.slope * t, self.lower, self.upper)

    def scale_input(self, k: float) -> "AffineClampedLaw":
        return AffineClampedLaw(self.intercept, self.slope * k, self.lower, self.upper)

    def scale_output(self, c: float) -> "AffineClampedLaw":
        if c <= 0.0:
            raise InvalidCoefficientSpec("output scale must be positive")
        return AffineClampedLaw(
            self.intercept * c, self.slope * c, self.lower * c, self.upper * c
        )

    @property
    def upper_clamp(self) -> float:
        return self.upper


@dataclass(frozen=True)
class TabulatedLaw:
    """Piecewise-linear interpolation of (point, value) samples.

    Outside the table the law extends by its end values, so it stays bounded
    and Lipschitz with the same constants as on the table.
    """

    points: tuple
    values: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if pts.ndim != 1 or pts.size < 2 or vals.shape != pts.shape:
            raise InvalidCoefficientSpec("table needs matching 1-d points/values, at least two")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals))):
            raise InvalidCoefficientSpec("table entries must be finite")
        if np.any(np.diff(pts) <= 0.0):
            raise InvalidCoefficientSpec("table points must strictly increase")
        object.__setattr__(self, "points", tuple(float(p) for p in pts))
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.interp(t, np.asarray(self.points), np.asarray(self.values))

    def scale_input(self, k: float) -> "TabulatedLaw":
        if k <= 0.0:
            raise InvalidCoefficientSpec("input scale must be positive")
        return TabulatedLaw(tuple(p / k for p in self.points), self.values)

    def scale_output(self, c: float) -> "TabulatedLaw":
        return TabulatedLaw(self.points, tuple(v * c for v in self.values))

    @property
    def upper_clamp(self):
        return None


CoefficientLaw = Union[ConstantLaw, AffineClampedLaw, TabulatedLaw]


@dataclass(frozen=True)
class CoefficientSpec:
    """Coefficient data for the coupled system.

    sigma_minus, c_sigma, lambda_plus, c_f are the claimed bounds: lower bound
    of the exponent law, its Lipschitz constant, the sup bound of the heat
    coefficient, and the sup bound of the source.  validate_assumptions checks
    the laws against these claims by sampling.
    """

    sigma: CoefficientLaw
    sigma_minus: float
    c_sigma: float
    lam: CoefficientLaw
    lambda_plus: float
    f: ScalarField
    c_f: float


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str
    probe: float | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> tuple:
        return tuple(c for c in self.checks if not c.passed)


def validate_assumptions(spec: CoefficientSpec, d: int = 2) -> ValidationReport:
    """Check the standing assumptions on the coefficient data by sampling.

    Returns a report with one definite pass/fail entry per assumption; a
    failing entry records the probe temperature that witnessed the violation
    where one exists.  Nothing is raised.
    """
    if d < 2:
        raise ValueError("dimension must be at least 2")
    probes = _probes()
    checks = []

    # Exponent lower bound: sigma_minus must clear the duality threshold
    # strictly, and the law must never dip below sigma_minus.
    threshold = exponent_threshold(d)
    sig_vals = np.asarray(spec.sigma(probes), dtype=float)
    if not spec.sigma_minus > threshold:
        checks.append(AssumptionCheck(
            "exponent-lower-bound", False,
            f"sigma_minus = {spec.sigma_minus:g} does not exceed 2d/(d+2) = {threshold:g}",
        ))
    else:
        low = int(np.argmin(sig_vals))
        if sig_vals[low] < spec.sigma_minus - 1e-12:
            checks.append(AssumptionCheck(
                "exponent-lower-bound", False,
                f"sigma({probes[low]:g}) = {sig_vals[low]:g} < sigma_minus = {spec.sigma_minus:g}",
                probe=float(probes[low]),
            ))
        else:
            checks.append(AssumptionCheck(
                "exponent-lower-bound", True,
                f"sigma_minus = {spec.sigma_minus:g} > 2d/(d+2) = {threshold:g}",
            ))

    # Lipschitz bound on the exponent law, sampled on consecutive probe pairs.
    dt = probes[1] - probes[0]
    ratios = np.abs(np.diff(sig_vals)) / dt
    worst = int(np.argmax(ratios))
    if ratios[worst] > spec.c_sigma * (1.0 + 1e-9):
        checks.append(AssumptionCheck(
            "exponent-lipschitz", False,
            f"sampled ratio {ratios[worst]:g} near t = {probes[worst]:g} exceeds "
            f"c_sigma = {spec.c_sigma:g}",
            probe=float(probes[worst]),
        ))
    else:
        checks.append(AssumptionCheck(
            "exponent-lipschitz", True,
            f"max sampled ratio {ratios[worst]:g} <= c_sigma = {spec.c_sigma:g}",
        ))

    # Heat coefficient sup bound.
    lam_vals = np.abs(np.asarray(spec.lam(probes), dtype=float))
    peak = int(np.argmax(lam_vals))
    if lam_vals[peak] > spec.lambda_plus * (1.0 + 1e-12):
        checks.append(AssumptionCheck(
            "heat-coefficient-bound", False,
            f"|lambda({probes[peak]:g})| = {lam_vals[peak]:g} exceeds "
            f"lambda_plus = {spec.lambda_plus:g}",
            probe=float(probes[peak]),
        ))
    else:
        checks.append(AssumptionCheck(
            "heat-coefficient-bound", True,
            f"sup |lambda| = {lam_vals[peak]:g} <= lambda_plus = {spec.lambda_plus:g}",
        ))

    # Source sup bound.
    f_sup = sup_norm(spec.f)
    if f_sup > spec.c_f * (1.0 + 1e-12):
        checks.append(AssumptionCheck(
            "source-bound", False,
            f"sup |f| = {f_sup:g} exceeds c_f = {spec.c_f:g}",
        ))
    else:
        checks.append(AssumptionCheck(
            "source-bound", True,
            f"sup |f| = {f_sup:g} <= c_f = {spec.c_f:g}",
        ))

    return ValidationReport(checks=tuple(checks))


@dataclass(frozen=True)
class SolverSettings:
    """Inner-solver knobs shared by every application of T."""

    px_tol: float = 1e-8
    px_max_iters: int = 400
    schedule: RegularizationSchedule | None = None
    poisson_tol: float = 1e-12
    poisson_max_iters: int | None = None
    cg_tol: float = 1e-10


@dataclass(frozen=True)
class TApplication:
    """One application of the frozen-temperature operator."""

    theta: ScalarField
    u: ScalarField
    grad_u: VectorField
    px_residual: float
    px_iterations: int
    px_converged: bool
    poisson_residual: float
    clamp_count: int
    final_epsilon: float


def apply_T(
    theta_star: ScalarField,
    spec: CoefficientSpec,
    settings: SolverSettings | None = None,
    u0: ScalarField | None = None,
) -> TApplication:
    """Apply the frozen-temperature operator once.

    Builds p = sigma(theta_star), solves the p(x)-problem for u, then solves
    -laplace(theta) = lambda(theta_star) (|Du|^2 + eps^2)^(p/2) with eps the
    regularization the inner solve finished on.  clamp_count reports how many
    nodes sat on the exponent law's upper clamp, if the law has one.
    """
    settings = settings if settings is not None else SolverSettings()
    grid = spec.f.grid
    if theta_star.grid != grid:
        raise CoupledError("theta_star lives on a different grid than f")
    p_vals = np.asarray(spec.sigma(theta_star.values), dtype=float)
    upper = spec.sigma.upper_clamp
    if upper is None:
        clamp_count = 0
        p_max = float(np.max(p_vals))
    else:
        clamp_count = int(np.count_nonzero(p_vals >= upper - 1e-12))
        p_max = float(upper)
    pfield = ExponentField(
        ScalarField(grid, p_vals), p_min=spec.sigma_minus, p_max=p_max
    )
    px = solve_px(
        pfield,
        spec.f,
        schedule=settings.schedule,
        tol=settings.px_tol,
        max_iters=settings.px_max_iters,
        u0=u0,
        cg_tol=settings.cg_tol,
    )
    eps = px.final_epsilon
    gx, gy = px.grad_u.values[..., 0], px.grad_u.values[..., 1]
    speed2 = gx * gx + gy * gy
    rhs = np.asarray(spec.lam(theta_star.values), dtype=float) * np.power(
        speed2 + eps * eps, 0.5 * p_vals
    )
    heat = solve_poisson(
        ScalarField(grid, rhs),
        tol=settings.poisson_tol,
        max_iters=settings.poisson_max_iters,
    )
    return TApplication(
        theta=heat.theta,
        u=px.u,
        grad_u=px.grad_u,
        px_residual=px.residual_sup,
        px_iterations=px.iterations,
        px_converged=px.converged,
        poisson_residual=heat.residual_sup,
        clamp_count=clamp_count,
        final_epsilon=eps,
    )


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    theta_diff_sup: float
    px_residual: float
    poisson_residual: float
    clamp_count: int


@dataclass(frozen=True)
class CoupledSolution:
    u: ScalarField
    theta: ScalarField
    grad_u: VectorField
    outer_iterations: int
    history: tuple
    converged: bool


def fixed_point(
    spec: CoefficientSpec,
    relaxation: float = 1.0,
    outer_tol: float = 1e-8,
    max_outer: int = 50,
    settings: SolverSettings | None = None,
) -> CoupledSolution:
    """Iterate the frozen-temperature operator to a coupled solution.

    Starts from theta* = 0, updates theta* <- (1 - w) theta* + w T(theta*),
    and stops once consecutive iterates agree to outer_tol in sup norm.  When
    the budget runs out, the best (last) iterate is returned with the
    converged flag cleared; that outcome usually means the heat coefficient
    is too large for this configuration to contract.
    """
    if not 0.0 < relaxation <= 1.0:
        raise ValueError("relaxation must lie in (0, 1]")
    if max_outer < 1:
        raise ValueError("need at least one outer iteration")
    report = validate_assumptions(spec)
    if not report.all_passed:
        names = ", ".join(c.name for c in report.failed())
        raise InvalidCoefficientSpec(f"coefficient data fails validation: {names}")

    grid = spec.f.grid
    theta_star = ScalarField.zeros(grid)
    warm: ScalarField | None = None
    history: list[HistoryRow] = []
    converged = False
    app: TApplication | None = None
    for k in range(1, max_outer + 1):
        app = apply_T(theta_star, spec, settings, u0=warm)
        mixed = (1.0 - relaxation) * theta_star.values + relaxation * app.theta.values
        diff = float(np.max(np.abs(mixed - theta_star.values)))
        history.append(HistoryRow(
            iteration=k,
            theta_diff_sup=diff,
            px_residual=app.px_residual,
            poisson_residual=app.poisson_residual,
            clamp_count=app.clamp_count,
        ))
        theta_star = ScalarField(grid, mixed)
        warm = app.u
        if diff <= outer_tol:
            converged = True
            break
    assert app is not None
    return CoupledSolution(
        u=app.u,
        theta=theta_star,
        grad_u=app.grad_u,
        outer_iterations=len(history),
        history=tuple(history),
        converged=converged,
    )


HISTORY_HEADER = "iter,theta_diff_sup,px_residual,poisson_residual,clamp_count"


def dump_history(path, history: Sequence[HistoryRow]) -> None:
    """Write the outer-iteration history in the documented CSV schema."""
    lines = [HISTORY_HEADER]
    for row in history:
        lines.append(
            f"{row.iteration},{repr(float(row.theta_diff_sup))},"
            f"{repr(float(row.px_residual))},{repr(float(row.poisson_residual))},"
            f"{row.clamp_count}"
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class BallInvarianceReport:
    alpha: float
    sup_value: float
    sup_gradient: float
    holder_quotient: float
    proxy_norm: float
    within_unit_ball: bool


def ball_invariance_check(
    target: Union[CoupledSolution, ScalarField], alpha: float
) -> BallInvarianceReport:
    """Discrete Hölder-gradient proxy norm of the temperature.

    The proxy is the largest of sup |theta|, sup |D theta|, and the alpha-
    Hölder quotient of D theta taken over every node pair at dyadic
    separations (axis-aligned and diagonal offsets of 1, 2, 4, ... nodes).
    The report states whether the proxy stays within the unit ball.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    theta = target.theta if isinstance(target, CoupledSolution) else target
    grid = theta.grid
    grad = gradient(theta)
    gx, gy = grad.values[..., 0], grad.values[..., 1]
    sup_value = float(np.max(np.abs(theta.values)))
    sup_gradient = float(np.max(np.sqrt(gx * gx + gy * gy)))
    quotient = _holder_quotient(gx, gy, grid.h, alpha)
    proxy = max(sup_value, sup_gradient, quotient)
    return BallInvarianceReport(
        alpha=alpha,
        sup_value=sup_value,
        sup_gradient=sup_gradient,
        holder_quotient=quotient,
        proxy_norm=proxy,
        within_unit_ball=bool(proxy <= 1.0),
    )


def _shift_diff(a: np.ndarray, di: int, dj: int) -> np.ndarray:
    n, m = a.shape
    return a[di:, dj:] - a[: n - di, : m - dj]


def _holder_quotient(gx: np.ndarray, gy: np.ndarray, h: float, alpha: float) -> float:
    """Max of |Dtheta(x) - Dtheta(y)| / |x - y|^alpha over dyadic-offset pairs."""
    best = 0.0
    n = gx.shape[0]
    step = 1
    while step <= n - 1:
        for di, dj in ((step, 0), (0, step), (step, step)):
            dist = h * math.hypot(di, dj)
            dgx = _shift_diff(gx, di, dj)
            dgy = _shift_diff(gy, di, dj)
            gap = float(np.max(np.sqrt(dgx * dgx + dgy * dgy)))
            best = max(best, gap / dist**alpha)
        step *= 2
    return best


@dataclass(frozen=True)
class ScalingTransform:
    """Temperature rescaling theta_K = theta / K targeting sup|lambda_K| <= delta."""

    K: float
    delta: float

    def __post_init__(self):
        if self.K < 1.0 or not math.isfinite(self.K):
            raise ValueError("scaling factor must be a finite number >= 1")
        if self.delta <= 0.0:
            raise ValueError("target smallness must be positive")


def scale_system(
    spec: CoefficientSpec, delta: float
) -> tuple[CoefficientSpec, ScalingTransform]:
    """Rescale the coefficient laws so the heat coefficient is small.

    With K = max(1, sup|lambda| / delta), the pair (u, theta / K) solves the
    system with coefficients sigma_K(t) = sigma(K t) and
    lambda_K(t) = lambda(K t) / K, and sup |lambda_K| <= delta by
    construction.  When the coefficient is already small the spec is returned
    unchanged with K = 1.
    """
    if delta <= 0.0:
        raise ValueError("target smallness must be positive")
    probes = _probes()
    lam_sup = float(np.max(np.abs(np.asarray(spec.lam(probes), dtype=float))))
    if lam_sup <= delta:
        return spec, ScalingTransform(K=1.0, delta=delta)
    K = lam_sup / delta
    scaled = replace(
        spec,
        sigma=spec.sigma.scale_input(K),
        c_sigma=spec.c_sigma * K,
        lam=spec.lam.scale_input(K).scale_output(1.0 / K),
        lambda_plus=delta,
    )
    return scaled, ScalingTransform(K=K, delta=delta)
