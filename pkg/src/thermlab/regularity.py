"""Regularity experiments for the coupled temperature field.

This module turns a chain of interior estimates into computable experiments:

* harmonic approximation: how far is theta from the discretely harmonic
  function sharing its boundary values on an interior window;
* paraboloid cascade: build second-order polynomials P_n that track theta on
  shrinking balls B(center, rho^n), each level improving the previous one by
  the second-order Taylor polynomial of a harmonic replacement of the
  residual; the decay rate of sup |theta - P_n| over the balls is the
  quantity of interest, with rho^(2n) the target;
* coefficient limits: the cascade's constant and linear coefficients must
  converge to the value and gradient of theta at the center, at rates
  rho^(2n) and rho^n;
* Log-Lipschitz modulus: oscillation of theta around its tangent plane over
  shrinking balls, compared against r^2 ln(1/r);
* modulus inequalities: the elementary comparisons sigma <= sigma ln(1/sigma)
  <= sigma^gamma / ((1-gamma) e) on (0, 1/e];
* stability and perturbation trends: distances to harmonic extensions as the
  heat coefficient is scaled down, and continuity of u under source
  perturbations.

Everything works on sampled balls and extracted windows, so all experiments
are interior by construction; centers are snapped to grid nodes.  Windows
near the domain boundary are clipped by the window machinery, which flattens
the earliest cascade levels on small domains; least-squares fits therefore
exclude the first level, and each level records whether its window was
clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .coupled import CoefficientSpec, CoupledSolution, SolverSettings, fixed_point
from .fields import (
    RadiusBelowResolution,
    ScalarField,
    Window,
    extract,
    nearest_node,
    sample_ball,
    window_around,
)
from .poisson import derivatives_at, harmonic_extension


class RegularityError(Exception):
    """Base class for failures in the regularity experiments."""


class TraceTooLarge(RegularityError):
    """The harmonic replacement's Hessian has too much trace.

    This signals that the replacement is not resolving harmonicity at the
    current grid spacing, so projecting the matrix to trace-free would hide a
    real defect rather than remove discretization noise.
    """


class ResolutionExhausted(RegularityError):
    """No cascade level fits above the resolution floor."""


SQRT2 = math.sqrt(2.0)

# Balls below this multiple of h are considered unresolved.
RESOLUTION_RADII = 8.0


def _frobenius(m: np.ndarray) -> float:
    return float(np.sqrt(np.sum(m * m)))


def interpolation_tolerance(h: float, hessian_scale: float) -> float:
    """Scale of bilinear sampling error for a field with curvature ~ scale."""
    return h * h * max(1.0, hessian_scale)


def trace_tolerance(h: float, hessian: np.ndarray) -> float:
    """Largest Hessian trace attributable to discretization.

    A discretely harmonic function carries an O(h^2) trace residual through
    the fourth-order stencils, so the cutoff scales with h^2 and with the
    size of the matrix itself.  This is deliberately conservative: fields
    with fourth derivatives much larger than their Hessian at the center can
    exceed it at moderate resolutions, and callers doing that knowingly can
    pass an explicit tolerance instead.
    """
    return 10.0 * h * h * max(1.0, _frobenius(hessian))


@dataclass(frozen=True)
class Paraboloid:
    """Second-order polynomial a + b.x + x^T M x / 2 in centered coordinates.

    The coordinates are displacements from the cascade center, matching the
    convention that a is the value and b the gradient at the center.
    """

    a: float
    b: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float).reshape(2)
        m = np.array(self.M, dtype=float).reshape(2, 2)
        if not (math.isfinite(self.a) and np.all(np.isfinite(b)) and np.all(np.isfinite(m))):
            raise RegularityError("paraboloid coefficients must be finite")
        if abs(m[0, 1] - m[1, 0]) > 1e-12 * max(1.0, _frobenius(m)):
            raise RegularityError("paraboloid matrix must be symmetric")
        b.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "M", m)

    @classmethod
    def zero(cls) -> "Paraboloid":
        return cls(0.0, np.zeros(2), np.zeros((2, 2)))

    def evaluate(self, rel: np.ndarray) -> np.ndarray:
        """Evaluate at an (S, 2) array of displacements from the center."""
        rel = np.asarray(rel, dtype=float)
        if rel.ndim == 1:
            rel = rel[None, :]
        quad = 0.5 * np.einsum("si,ij,sj->s", rel, self.M, rel)
        return self.a + rel @ self.b + quad

    @property
    def trace(self) -> float:
        return float(self.M[0, 0] + self.M[1, 1])


def _make_trace_free(m: np.ndarray) -> np.ndarray:
    shift = 0.5 * (m[0, 0] + m[1, 1])
    out = m.copy()
    out[0, 0] -= shift
    out[1, 1] -= shift
    return out


@dataclass(frozen=True)
class ApproximationResult:
    """Harmonic replacement of a field on a window, and the sup distance."""

    harmonic: ScalarField
    distance: float
    window: Window


def approximation_experiment(theta: ScalarField, window: Window) -> ApproximationResult:
    """Replace theta on a window by the harmonic extension of its rim values.

    Returns the replacement (a field on the window's own sub-grid) together
    with the sup distance over all window nodes.  The smaller the distance,
    the closer theta is to harmonic on that window.
    """
    patch = extract(theta, window)
    res = harmonic_extension(patch, tol=1e-12)
    distance = float(np.max(np.abs(patch.values - res.theta.values)))
    return ApproximationResult(harmonic=res.theta, distance=distance, window=window)


def _node_point(grid, idx: tuple[int, int]) -> tuple[float, float]:
    return (grid.origin[0] + idx[0] * grid.h, grid.origin[1] + idx[1] * grid.h)


def _ball_sup_error(
    theta: ScalarField,
    center: tuple[float, float],
    radius: float,
    paraboloid: Paraboloid,
    samples: int,
) -> float:
    pts = sample_ball(theta, center, radius, samples=samples)
    rel = np.array([[x - center[0], y - center[1]] for (x, y), _ in pts])
    vals = np.array([v for _, v in pts])
    return float(np.max(np.abs(vals - paraboloid.evaluate(rel))))


@dataclass(frozen=True)
class _Replacement:
    value: float
    gradient: np.ndarray
    hessian_raw: np.ndarray
    trace_residual: float
    window: Window
    clipped: bool


def _harmonic_replacement(
    field: ScalarField, center: tuple[float, float], half_width: float
) -> _Replacement:
    """Harmonic extension of field's rim values on a window, Taylor data at center.

    The window is the bounding box of the ball of radius half_width around
    the center, clipped to the grid; `clipped` records whether the request
    had to shrink.
    """
    grid = field.grid
    window = window_around(grid, center, half_width)
    requested = int(math.floor(half_width / grid.h + 1e-12))
    clipped = window.n < 2 * requested + 1
    patch = extract(field, window)
    res = harmonic_extension(patch, tol=1e-12)
    nd = derivatives_at(res.theta, center)
    tr = float(nd.hessian[0, 0] + nd.hessian[1, 1])
    return _Replacement(
        value=nd.value,
        gradient=nd.gradient,
        hessian_raw=nd.hessian,
        trace_residual=abs(tr),
        window=window,
        clipped=clipped,
    )


def first_paraboloid(
    theta: ScalarField,
    center: tuple[float, float],
    rho: float,
    samples: int = 400,
    trace_tol: float | None = None,
) -> tuple[Paraboloid, float]:
    """Build the base paraboloid from a harmonic replacement at scale rho.

    The replacement lives on the bounding box of B(center, rho * sqrt(2));
    its value, gradient, and trace-free-projected Hessian at the center form
    the paraboloid.  Raises TraceTooLarge when the Hessian's trace exceeds
    the discretization allowance, meaning the replacement is not harmonic
    enough at this resolution.  Returns the paraboloid and the sampled sup of
    |theta - P| over B(center, rho).
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    grid = theta.grid
    if rho < RESOLUTION_RADII * grid.h:
        raise ResolutionExhausted(
            f"ball radius {rho:g} is below the resolution floor "
            f"{RESOLUTION_RADII * grid.h:g}"
        )
    snapped = _node_point(grid, nearest_node(grid, center))
    rep = _harmonic_replacement(theta, snapped, SQRT2 * rho)
    tol = trace_tolerance(grid.h, rep.hessian_raw) if trace_tol is None else trace_tol
    if rep.trace_residual > tol:
        raise TraceTooLarge(
            f"replacement Hessian trace {rep.trace_residual:.3e} exceeds "
            f"allowance {tol:.3e}; refine the grid"
        )
    p = Paraboloid(rep.value, rep.gradient, _make_trace_free(rep.hessian_raw))
    err = _ball_sup_error(theta, snapped, rho, p, samples)
    return p, err


@dataclass(frozen=True)
class CascadeLevel:
    """One rung of the paraboloid cascade.

    increment is |da| + rho^(n-1) |db| + rho^(2(n-1)) |dM| for the step from
    the previous level, the scale-weighted size of the correction; the raw
    component magnitudes are kept alongside.  trace_residual is the Hessian
    trace of the harmonic replacement before projection.
    """

    n: int
    paraboloid: Paraboloid
    sup_error: float
    trace_residual: float
    increment_a: float
    increment_b: float
    increment_M: float
    increment: float
    window_clipped: bool


@dataclass(frozen=True)
class CascadeReport:
    rho: float
    center: tuple[float, float]
    levels: tuple
    fitted_decay_exponent: float
    matrix_growth_slope: float
    truncated_at: int | None
    notes: tuple


def usable_levels(levels):
    """Levels that can enter rate fits.

    The first level is a transient of the window geometry; levels whose
    replacement window was clipped by the domain never realize the inflated
    window the construction calls for (on a small domain they degenerate to
    the whole grid), so they are transients too.  Roundoff-level sup errors
    carry no rate information either.
    """
    return [
        lvl
        for lvl in levels
        if lvl.n >= 2 and not lvl.window_clipped and lvl.sup_error > 1e-14
    ]


def _fit_decay_exponent(levels, rho: float) -> tuple[float, tuple]:
    """Slope of log sup_error against level, in units of log(1/rho)."""
    notes = []
    pts = [(lvl.n, lvl.sup_error) for lvl in usable_levels(levels)]
    if len(pts) < 2:
        notes.append("decay fit skipped: fewer than two usable levels")
        return math.nan, tuple(notes)
    ns = np.array([n for n, _ in pts], dtype=float)
    es = np.log(np.array([e for _, e in pts]))
    slope = float(np.polyfit(ns, es, 1)[0])
    notes.append(
        f"decay fit over levels {[int(n) for n in ns]} "
        "(first level and clipped-window levels excluded)"
    )
    return slope / math.log(rho), tuple(notes)


def dyadic_cascade(
    theta: ScalarField,
    center: tuple[float, float],
    rho: float,
    n_max: int,
    samples: int = 400,
    trace_tol: float | None = None,
) -> CascadeReport:
    """Build the paraboloid cascade P_1, ..., P_n down to the resolution floor.

    Level 1 comes from first_paraboloid.  Each later level adds the Taylor
    polynomial of a harmonic replacement of the residual theta - P_k, taken
    on the bounding box of B(center, sqrt(2) rho^k); the replacement's
    Hessian is projected to trace-free before it enters, so every P_n has
    exactly zero trace and the recorded increments are exactly the
    paraboloid differences.  Levels whose ball radius rho^n would drop below
    8h are truncated away and noted in the report.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if n_max < 1:
        raise ValueError("need at least one cascade level")
    grid = theta.grid
    snapped = _node_point(grid, nearest_node(grid, center))
    floor = RESOLUTION_RADII * grid.h
    usable = n_max
    while usable >= 1 and rho**usable < floor:
        usable -= 1
    if usable < 1:
        raise ResolutionExhausted(
            f"rho = {rho:g} is below the resolution floor {floor:g} already at level 1"
        )
    notes = []
    truncated_at = None
    if usable < n_max:
        truncated_at = usable
        notes.append(
            f"levels beyond {usable} dropped: rho^n < {RESOLUTION_RADII:g}h"
        )

    levels = []
    rep = _harmonic_replacement(theta, snapped, SQRT2 * rho)
    tol = trace_tolerance(grid.h, rep.hessian_raw) if trace_tol is None else trace_tol
    if rep.trace_residual > tol:
        raise TraceTooLarge(
            f"level 1 replacement trace {rep.trace_residual:.3e} exceeds {tol:.3e}"
        )
    current = Paraboloid(rep.value, rep.gradient, _make_trace_free(rep.hessian_raw))
    err = _ball_sup_error(theta, snapped, rho, current, samples)
    levels.append(CascadeLevel(
        n=1,
        paraboloid=current,
        sup_error=err,
        trace_residual=rep.trace_residual,
        increment_a=abs(current.a),
        increment_b=float(np.linalg.norm(current.b)),
        increment_M=_frobenius(current.M),
        increment=abs(current.a)
        + float(np.linalg.norm(current.b))
        + _frobenius(current.M),
        window_clipped=rep.clipped,
    ))

    xs, ys = theta.grid.meshes()
    for k in range(1, usable):
        # residual of the current paraboloid, then its harmonic replacement
        # on the window matched to scale rho^k
        rel = np.stack(
            [(xs - snapped[0]).ravel(), (ys - snapped[1]).ravel()], axis=1
        )
        resid_vals = theta.values - current.evaluate(rel).reshape(theta.values.shape)
        residual = ScalarField(grid, resid_vals)
        rep = _harmonic_replacement(residual, snapped, SQRT2 * rho**k)
        tol = trace_tolerance(grid.h, rep.hessian_raw) if trace_tol is None else trace_tol
        if rep.trace_residual > tol:
            raise TraceTooLarge(
                f"level {k + 1} replacement trace {rep.trace_residual:.3e} "
                f"exceeds {tol:.3e}"
            )
        da = rep.value
        db = rep.gradient
        dm = _make_trace_free(rep.hessian_raw)
        nxt = Paraboloid(current.a + da, current.b + db, current.M + dm)
        n = k + 1
        err = _ball_sup_error(theta, snapped, rho**n, nxt, samples)
        inc_a = abs(da)
        inc_b = float(np.linalg.norm(db))
        inc_m = _frobenius(dm)
        levels.append(CascadeLevel(
            n=n,
            paraboloid=nxt,
            sup_error=err,
            trace_residual=rep.trace_residual,
            increment_a=inc_a,
            increment_b=inc_b,
            increment_M=inc_m,
            increment=inc_a + rho ** (n - 1) * inc_b + rho ** (2 * (n - 1)) * inc_m,
            window_clipped=rep.clipped,
        ))
        current = nxt

    exponent, fit_notes = _fit_decay_exponent(levels, rho)
    notes.extend(fit_notes)
    mags = np.array([_frobenius(lvl.paraboloid.M) for lvl in levels])
    ns = np.array([lvl.n for lvl in levels], dtype=float)
    if len(levels) >= 2:
        growth = float(np.polyfit(ns, mags, 1)[0])
    else:
        growth = 0.0
    return CascadeReport(
        rho=rho,
        center=snapped,
        levels=tuple(levels),
        fitted_decay_exponent=exponent,
        matrix_growth_slope=growth,
        truncated_at=truncated_at,
        notes=tuple(notes),
    )


CASCADE_HEADER = "n,a,b1,b2,M11,M12,M22,trace_residual,sup_error,increment"


def dump_cascade(path, report: CascadeReport) -> None:
    lines = [CASCADE_HEADER]
    for lvl in report.levels:
        p = lvl.paraboloid
        cells = [
            str(lvl.n),
            repr(float(p.a)),
            repr(float(p.b[0])),
            repr(float(p.b[1])),
            repr(float(p.M[0, 0])),
            repr(float(p.M[0, 1])),
            repr(float(p.M[1, 1])),
            repr(float(lvl.trace_residual)),
            repr(float(lvl.sup_error)),
            repr(float(lvl.increment)),
        ]
        lines.append(",".join(cells))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class CoefficientLimits:
    """Residuals of cascade coefficients against the field at the center.

    a_residuals[n] = |a_n - theta(center)| should decay like rho^(2n), and
    b_residuals[n] = |b_n - Dtheta(center)| like rho^n.  Slopes are fitted in
    log space, excluding the first level; residuals at roundoff make the
    corresponding slope NaN and set the exact flag.
    """

    levels: tuple
    a_residuals: tuple
    b_residuals: tuple
    a_slope: float
    b_slope: float
    a_exact: bool
    b_exact: bool


def coefficient_limits(
    report: CascadeReport, theta: ScalarField, center: tuple[float, float]
) -> CoefficientLimits:
    grid = theta.grid
    snapped = _node_point(grid, nearest_node(grid, center))
    nd = derivatives_at(theta, snapped)
    value, grad = nd.value, nd.gradient
    ns = tuple(lvl.n for lvl in report.levels)
    a_res = tuple(abs(lvl.paraboloid.a - value) for lvl in report.levels)
    b_res = tuple(
        float(np.linalg.norm(lvl.paraboloid.b - grad)) for lvl in report.levels
    )
    fit_ns = {lvl.n for lvl in usable_levels(report.levels)}

    def fit(res):
        pts = [(n, r) for n, r in zip(ns, res) if n in fit_ns and r > 1e-14]
        if len(pts) < 2:
            return math.nan, True
        xs = np.array([n for n, _ in pts], dtype=float)
        ys = np.log(np.array([r for _, r in pts]))
        return float(np.polyfit(xs, ys, 1)[0]), False

    a_slope, a_exact = fit(a_res)
    b_slope, b_exact = fit(b_res)
    return CoefficientLimits(
        levels=ns,
        a_residuals=a_res,
        b_residuals=b_res,
        a_slope=a_slope,
        b_slope=b_slope,
        a_exact=a_exact,
        b_exact=b_exact,
    )


@dataclass(frozen=True)
class ModulusReport:
    """Oscillation of theta around its tangent plane on shrinking balls.

    ratios[i] = oscillations[i] / (r^2 ln(1/r)); an estimator for the
    borderline modulus r^2 ln(1/r) produces approximately constant ratios.
    Radii are reported in decreasing order; sample sets are nested (each
    larger ball reuses the smaller balls' points), which makes the
    oscillation sequence monotone in r by construction.
    """

    center: tuple[float, float]
    radii: tuple
    oscillations: tuple
    ratios: tuple


def loglip_modulus(
    theta: ScalarField,
    center: tuple[float, float],
    radii,
    samples: int = 400,
) -> ModulusReport:
    """Measure sup |theta - tangent plane| over balls against r^2 ln(1/r)."""
    grid = theta.grid
    snapped = _node_point(grid, nearest_node(grid, center))
    rs = sorted(float(r) for r in radii)
    if not rs:
        raise ValueError("need at least one radius")
    floor = RESOLUTION_RADII * grid.h
    if rs[0] <= floor:
        raise RadiusBelowResolution(
            f"radius {rs[0]:g} is at or below the resolution floor {floor:g}"
        )
    if rs[-1] >= 1.0:
        raise ValueError("radii must stay below 1 for the log factor")
    nd = derivatives_at(theta, snapped)
    value, grad = nd.value, nd.gradient

    oscs = []
    running = 0.0
    for r in rs:
        pts = sample_ball(theta, snapped, r, samples=samples)
        rel = np.array([[x - snapped[0], y - snapped[1]] for (x, y), _ in pts])
        vals = np.array([v for _, v in pts])
        plane = value + rel @ grad
        running = max(running, float(np.max(np.abs(vals - plane))))
        oscs.append(running)
    ratios = [o / (r * r * math.log(1.0 / r)) for r, o in zip(rs, oscs)]
    order = slice(None, None, -1)
    return ModulusReport(
        center=snapped,
        radii=tuple(rs[order]),
        oscillations=tuple(oscs[order]),
        ratios=tuple(ratios[order]),
    )


MODULUS_HEADER = "r,oscillation,ratio"


def dump_modulus(path, report: ModulusReport) -> None:
    lines = [MODULUS_HEADER]
    for r, o, q in zip(report.radii, report.oscillations, report.ratios):
        lines.append(f"{repr(float(r))},{repr(float(o))},{repr(float(q))}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class ModulusInequalityRow:
    sigma: float
    lower: float
    middle: float
    upper: float
    left_ok: bool
    right_ok: bool


@dataclass(frozen=True)
class ModulusInequalityTable:
    gamma: float
    rows: tuple

    @property
    def all_passed(self) -> bool:
        return all(r.left_ok and r.right_ok for r in self.rows)


def modulus_inequalities(gamma: float, sigmas) -> ModulusInequalityTable:
    """Check sigma <= sigma ln(1/sigma) <= sigma^gamma / ((1-gamma) e).

    Valid for sigma in (0, 1/e]; the left inequality is tight at sigma = 1/e
    and the right-hand constant blows up as gamma approaches 1.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    rows = []
    slack = 1.0 + 1e-12
    for s in sigmas:
        s = float(s)
        if not 0.0 < s <= 1.0 / math.e + 1e-15:
            raise ValueError(f"sigma = {s:g} outside (0, 1/e]")
        middle = s * math.log(1.0 / s)
        upper = s**gamma / ((1.0 - gamma) * math.e)
        rows.append(ModulusInequalityRow(
            sigma=s,
            lower=s,
            middle=middle,
            upper=upper,
            left_ok=bool(s <= middle * slack),
            right_ok=bool(middle <= upper * slack),
        ))
    return ModulusInequalityTable(gamma=gamma, rows=tuple(rows))


@dataclass(frozen=True)
class StabilityReport:
    """Distances to harmonic extensions as the heat coefficient shrinks."""

    scales: tuple
    distances: tuple
    fitted_order: float


def stability_regression(
    spec: CoefficientSpec,
    lambda_scales,
    settings: SolverSettings | None = None,
    window_half_width: float = 0.25,
    outer_tol: float = 1e-8,
    max_outer: int = 50,
) -> StabilityReport:
    """Solve the coupled system at scaled heat coefficients and measure
    how fast the temperature approaches a harmonic function.

    For each scale s the coefficient law becomes s * lambda; the distance is
    the harmonic-approximation distance of the converged temperature on the
    centered window of the given half-width.  The fitted order is the slope
    of log(distance) against log(s) over the positive scales; the heat
    source scales linearly with the coefficient, so the expected order is 1.
    """
    scales = [float(s) for s in lambda_scales]
    if any(s < 0.0 for s in scales):
        raise ValueError("scales must be nonnegative")
    grid = spec.f.grid
    center = (
        grid.origin[0] + 0.5 * grid.side,
        grid.origin[1] + 0.5 * grid.side,
    )
    distances = []
    for s in scales:
        if s == 0.0:
            distances.append(0.0)
            continue
        scaled = replace(
            spec,
            lam=spec.lam.scale_output(s),
            lambda_plus=spec.lambda_plus * s,
        )
        sol = fixed_point(
            scaled, outer_tol=outer_tol, max_outer=max_outer, settings=settings
        )
        if not sol.converged:
            raise RegularityError(
                f"coupled solve at scale {s:g} did not converge; "
                "stability trend would be meaningless"
            )
        window = window_around(grid, center, window_half_width)
        distances.append(approximation_experiment(sol.theta, window).distance)

    pts = [(s, d) for s, d in zip(scales, distances) if s > 0.0 and d > 1e-15]
    if len(pts) >= 2:
        xs = np.log(np.array([s for s, _ in pts]))
        ys = np.log(np.array([d for _, d in pts]))
        order = float(np.polyfit(xs, ys, 1)[0])
    else:
        order = math.nan
    return StabilityReport(
        scales=tuple(scales), distances=tuple(distances), fitted_order=order
    )


STABILITY_HEADER = "scale,distance"


def dump_stability(path, report: StabilityReport) -> None:
    lines = [STABILITY_HEADER]
    for s, d in zip(report.scales, report.distances):
        lines.append(f"{repr(float(s))},{repr(float(d))}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class PerturbationReport:
    """Continuity of the potential under sup-norm source perturbations."""

    magnitudes: tuple
    u_distances: tuple
    monotone: bool


def source_perturbation_trend(
    spec: CoefficientSpec,
    magnitudes,
    settings: SolverSettings | None = None,
    outer_tol: float = 1e-8,
    max_outer: int = 50,
) -> PerturbationReport:
    """Perturb the source by constant shifts and track the potential.

    For each magnitude eta the source becomes f + eta (so the sup distance
    of the data is exactly eta) and the coupled system is re-solved; the
    report records ||u_eta - u|| and whether it shrinks monotonically as the
    perturbation does.
    """
    mags = sorted((float(m) for m in magnitudes), reverse=True)
    if not mags or mags[-1] <= 0.0:
        raise ValueError("perturbation magnitudes must be positive")
    base = fixed_point(spec, outer_tol=outer_tol, max_outer=max_outer, settings=settings)
    if not base.converged:
        raise RegularityError("base coupled solve did not converge")
    grid = spec.f.grid
    distances = []
    for eta in mags:
        bumped = replace(
            spec,
            f=ScalarField(grid, spec.f.values + eta),
            c_f=spec.c_f + eta,
        )
        sol = fixed_point(bumped, outer_tol=outer_tol, max_outer=max_outer, settings=settings)
        if not sol.converged:
            raise RegularityError(f"perturbed solve at eta = {eta:g} did not converge")
        distances.append(float(np.max(np.abs(sol.u.values - base.u.values))))
    monotone = all(b <= a * (1.0 + 1e-9) for a, b in zip(distances, distances[1:]))
    return PerturbationReport(
        magnitudes=tuple(mags), u_distances=tuple(distances), monotone=monotone
    )
