"""Acceptance suite: one test per headline requirement, run at full scale.

Every tolerance here is pinned; run with ``pytest -v`` to get one pass/fail
line per criterion.  The two expensive fixtures (the production-size coupled
solve and the disk experiments) are shared across the tests that need them.
"""

import math
import time

import numpy as np
import pytest

from thermlab.coupled import (
    AffineClampedLaw,
    CoefficientSpec,
    ConstantLaw,
    SolverSettings,
    fixed_point,
    scale_system,
    validate_assumptions,
)
from thermlab.fields import Grid2D, ScalarField, boundary_mask, window_around
from thermlab.px_laplace import (
    ExponentField,
    energy,
    energy_gradient,
    flux,
    solve_px,
)
from thermlab.regularity import (
    approximation_experiment,
    dyadic_cascade,
    interpolation_tolerance,
    loglip_modulus,
    modulus_inequalities,
    stability_regression,
    trace_tolerance,
    usable_levels,
)

RHO = 0.5
DELTA = 0.05
TIGHT = SolverSettings(px_tol=1e-8, px_max_iters=400)


def baseline_spec(nx, lambda_plus=0.1):
    """sigma(t) = 2 + t clamped to [1.5, 4], lambda constant, f = 1."""
    grid = Grid2D.unit_square(nx)
    return CoefficientSpec(
        sigma=AffineClampedLaw(intercept=2.0, slope=1.0, lower=1.5, upper=4.0),
        sigma_minus=1.5,
        c_sigma=1.0,
        lam=ConstantLaw(lambda_plus),
        lambda_plus=lambda_plus,
        f=ScalarField.constant(grid, 1.0),
        c_f=1.0,
    )


def interior_noise(grid, rng, scale=1.0):
    vals = scale * rng.standard_normal((grid.nx, grid.ny))
    vals[boundary_mask(grid)] = 0.0
    return ScalarField(grid, vals)


@pytest.fixture(scope="module")
def solve_h65():
    """Baseline coupled solve at h = 1/65."""
    spec = baseline_spec(66)
    sol = fixed_point(spec, outer_tol=1e-8, max_outer=50, settings=TIGHT)
    return spec, sol


@pytest.fixture(scope="module")
def solve_fine():
    """Baseline coupled solve at the largest acceptance grid (257 x 257)."""
    spec = baseline_spec(257)
    sol = fixed_point(spec, outer_tol=1e-8, max_outer=50, settings=TIGHT)
    assert sol.converged
    return spec, sol


def test_01_energy_gradient_matches_finite_differences():
    """Directional derivatives of the energy agree with central differences
    to relative error 1e-6: ten random directions for each of five random
    (u, p, f, eps) configurations, in under ten seconds."""
    start = time.time()
    rng = np.random.default_rng(2024)
    grid = Grid2D.unit_square(33)
    tau = 1e-6
    worst = 0.0
    for _ in range(5):
        u = interior_noise(grid, rng, scale=0.1)
        pvals = 1.3 + 4.7 * rng.random((grid.nx, grid.ny))
        pfield = ExponentField(ScalarField(grid, pvals), p_min=1.2, p_max=6.1)
        f = ScalarField(grid, rng.standard_normal((grid.nx, grid.ny)))
        eps = float(10.0 ** rng.uniform(-4, -2))
        grad = energy_gradient(u, pfield, f, eps).values
        for _ in range(10):
            v = interior_noise(grid, rng).values
            up = ScalarField(grid, u.values + tau * v)
            um = ScalarField(grid, u.values - tau * v)
            fd = (energy(up, pfield, f, eps) - energy(um, pfield, f, eps)) / (2 * tau)
            an = float(np.sum(grad * v))
            worst = max(worst, abs(an - fd) / abs(an))
    assert worst <= 1e-6
    assert time.time() - start < 10.0


def test_02_manufactured_solution_second_order():
    """For p = 2 and f = 2 pi^2 sin(pi x) sin(pi y) the solver reproduces
    sin(pi x) sin(pi y); halving h from 1/64 to 1/128 divides the sup error
    by a factor in [3.5, 4.5]."""
    start = time.time()
    errors = {}
    for nx in (65, 129):
        grid = Grid2D.unit_square(nx)
        xs, ys = grid.meshes()
        exact = np.sin(np.pi * xs) * np.sin(np.pi * ys)
        f = ScalarField(grid, 2.0 * np.pi**2 * exact)
        pfield = ExponentField(ScalarField.constant(grid, 2.0), p_min=1.5, p_max=4.0)
        result = solve_px(pfield, f, tol=1e-9)
        assert result.converged
        errors[nx] = float(np.max(np.abs(result.u.values - exact)))
    ratio = errors[65] / errors[129]
    assert 3.5 <= ratio <= 4.5
    assert time.time() - start < 30.0


def radial_disk_error(p, max_iters):
    """Solve -div(|Du|^{p-2} Du) = 1 on the unit disk (via the inscribed-disk
    mask on a 257 x 257 grid over [0,2]^2, h = 1/128) and return the relative
    sup error along the two gridlines through the center against the exact
    radial profile c_p (1 - r^{p/(p-1)}), c_p = ((p-1)/p) * 2^{-1/(p-1)}."""
    nx = 257
    h = 2.0 / (nx - 1)
    grid = Grid2D(nx, nx, h=h, origin=(0.0, 0.0))
    xs, ys = grid.meshes()
    r = np.hypot(xs - 1.0, ys - 1.0)
    free = r < 1.0
    free[0, :] = free[-1, :] = free[:, 0] = free[:, -1] = False
    pfield = ExponentField(
        ScalarField.constant(grid, p), p_min=min(p, 1.2), p_max=max(p, 4.0)
    )
    f = ScalarField.constant(grid, 1.0)
    result = solve_px(f=f, pfield=pfield, tol=1e-8, max_iters=max_iters, free_mask=free)
    q = p / (p - 1.0)
    c = (p - 1.0) / p * 2.0 ** (-1.0 / (p - 1.0))
    exact = np.where(r < 1.0, c * (1.0 - np.minimum(r, 1.0) ** q), 0.0)
    mid = (nx - 1) // 2
    num_line = np.concatenate([result.u.values[mid, :], result.u.values[:, mid]])
    exact_line = np.concatenate([exact[mid, :], exact[:, mid]])
    return float(np.max(np.abs(num_line - exact_line)) / np.max(np.abs(exact_line)))


def test_03_radial_profile_degenerate_and_singular():
    """The p = 4 and p = 1.5 radial solutions on the unit disk match the
    closed-form profile to 2% along gridlines through the center at h = 1/128.
    The singular case runs on a fixed Picard budget; its error is checked on
    the returned best iterate."""
    start = time.time()
    assert radial_disk_error(4.0, max_iters=400) <= 0.02
    assert radial_disk_error(1.5, max_iters=150) <= 0.02
    assert time.time() - start < 120.0


def test_04_flux_monotone_and_continuous_at_two():
    """The regularized flux is monotone over ten thousand random gradient
    pairs for p in {1.2, 2, 3, 6} and eps in {0, 1e-4}, and crossing p = 2
    changes it by no more than O(delta |g| (1 + |ln(|g|^2 + eps^2)|))."""
    start = time.time()
    rng = np.random.default_rng(314)
    n = 10_000
    g1 = rng.standard_normal((n, 2))
    g2 = rng.standard_normal((n, 2))
    for p in (1.2, 2.0, 3.0, 6.0):
        for eps in (0.0, 1e-4):
            prod = np.sum((flux(g1, p, eps) - flux(g2, p, eps)) * (g1 - g2), axis=1)
            assert np.min(prod) >= -1e-12

    delta = 1e-6
    g = rng.standard_normal((2000, 2)) * 3.0
    for eps in (0.0, 1e-4):
        above = flux(g, 2.0 + delta, eps)
        below = flux(g, 2.0 - delta, eps)
        diff = np.hypot(*(above - below).T)
        mag = np.hypot(g[:, 0], g[:, 1])
        bound = 2.0 * delta * mag * (1.0 + np.abs(np.log(mag * mag + eps * eps)))
        assert np.all(diff <= bound)
    assert time.time() - start < 5.0


def test_05_fixed_point_converges_at_h65(solve_h65):
    """The baseline coupled system at h = 1/65 converges with strictly
    decreasing outer differences to 1e-8 within 50 iterations, and the fixed
    point is insensitive to the inner tolerance: re-solving with the inner
    target tightened 100x moves theta by at most 1e-6 in sup norm."""
    start = time.time()
    spec, sol = solve_h65
    assert sol.converged
    assert sol.outer_iterations <= 50
    diffs = [row.theta_diff_sup for row in sol.history]
    assert diffs[-1] <= 1e-8
    assert all(later < earlier for earlier, later in zip(diffs, diffs[1:]))

    tighter = SolverSettings(px_tol=1e-10, px_max_iters=600)
    sol2 = fixed_point(spec, outer_tol=1e-8, max_outer=50, settings=tighter)
    drift = float(np.max(np.abs(sol.theta.values - sol2.theta.values)))
    assert drift <= 1e-6
    assert time.time() - start < 120.0


def test_06_scaling_equivalence(solve_h65):
    """With lambda = 2 delta and delta = 0.05 the scaled system has K = 2,
    and K * theta_K reproduces the unscaled theta to 1e-8 in sup norm."""
    start = time.time()
    spec, sol = solve_h65
    scaled, transform = scale_system(spec, DELTA)
    assert transform.K == 2.0
    sol_scaled = fixed_point(scaled, outer_tol=1e-8, max_outer=50, settings=TIGHT)
    assert sol_scaled.converged
    mismatch = float(
        np.max(np.abs(transform.K * sol_scaled.theta.values - sol.theta.values))
    )
    assert mismatch <= 1e-8
    assert time.time() - start < 120.0


def test_07_cascade_exact_on_trace_free_quadratic():
    """On a synthetic trace-free quadratic the cascade is exact: every level's
    sup error stays within 10x the interpolation tolerance, every matrix trace
    stays within the trace tolerance, and the paraboloid stops changing."""
    start = time.time()
    grid = Grid2D.unit_square(65)
    xs, ys = grid.meshes()
    dx, dy = xs - 0.5, ys - 0.5
    m = np.array([[2.0, 0.5], [0.5, -2.0]])  # symmetric, trace-free
    theta = ScalarField(
        grid,
        3.0
        + 0.5 * dx
        - 0.25 * dy
        + 0.5 * (m[0, 0] * dx * dx + 2 * m[0, 1] * dx * dy + m[1, 1] * dy * dy),
    )
    report = dyadic_cascade(theta, (0.5, 0.5), RHO, 5)
    tol = interpolation_tolerance(grid.h, float(np.sqrt(np.sum(m * m))))
    assert len(report.levels) >= 3
    for lvl in report.levels:
        assert lvl.sup_error <= 10.0 * tol
        assert abs(lvl.paraboloid.trace) <= trace_tolerance(grid.h, lvl.paraboloid.M)
    for lvl in report.levels[1:]:
        assert lvl.increment <= 1e-8
    assert time.time() - start < 5.0


def test_08_cascade_decay_on_baseline(solve_fine):
    """After rescaling the solved temperature so the harmonic-approximation
    distance passes at delta = 0.05, the dyadic cascade at rho = 1/2 decays
    with fitted exponent >= 1.9 over the usable levels, the paraboloid
    matrices grow at most linearly, and the update increments are bounded by
    a single constant fitted at the first usable level times rho^{2(n-1)}."""
    start = time.time()
    spec, sol = solve_fine
    scaled, transform = scale_system(spec, DELTA)
    theta_k = ScalarField(sol.theta.grid, sol.theta.values / transform.K)

    window = window_around(sol.theta.grid, (0.5, 0.5), 0.25)
    approx = approximation_experiment(theta_k, window)
    assert approx.distance <= DELTA * RHO**2

    report = dyadic_cascade(theta_k, (0.5, 0.5), RHO, 5)
    assert report.fitted_decay_exponent >= 1.9

    assert math.isfinite(report.matrix_growth_slope)
    assert abs(report.matrix_growth_slope) <= 1.0  # at most linear growth

    usable = usable_levels(report.levels)
    assert len(usable) >= 2
    first = usable[0]
    fitted_c = first.increment / RHO ** (2 * (first.n - 1))
    for lvl in usable[1:]:
        assert lvl.increment <= 3.0 * fitted_c * RHO ** (2 * (lvl.n - 1))
    assert time.time() - start < 180.0


def test_09_loglip_modulus(solve_fine):
    """The oscillation ratio osc(r) / (r^2 ln(1/r)) is constant to within 15%
    across radii in (8h, 1/4] for the synthetic borderline profile, and for
    the solved baseline temperature it stays uniformly bounded with no
    monotone blow-up toward small radii."""
    start = time.time()
    _, sol = solve_fine
    grid = sol.theta.grid
    radii = tuple(np.geomspace(8 * grid.h * 1.05, 0.25, 10))

    xs, ys = grid.meshes()
    r2 = (xs - 0.5) ** 2 + (ys - 0.5) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        borderline = np.where(r2 > 0.0, -0.5 * r2 * np.log(r2), 0.0)
    field = ScalarField(grid, borderline)
    mod = loglip_modulus(field, (0.5, 0.5), radii)
    for ratio in mod.ratios:
        assert abs(ratio - 1.0) <= 0.15

    mod_theta = loglip_modulus(sol.theta, (0.5, 0.5), radii)
    fitted_c = max(mod_theta.ratios)
    assert math.isfinite(fitted_c)
    assert fitted_c <= 0.01  # tiny against the borderline profile's 1.0
    # ratios are ordered from the largest radius down; blow-up toward the
    # origin would make the sequence increasing
    rr = list(mod_theta.ratios)
    assert not all(later > earlier for earlier, later in zip(rr, rr[1:]))
    assert time.time() - start < 60.0


def test_10_stability_regression():
    """Scaling the heat coefficient by {1, 1/2, 1/4, 1/8} scales the distance
    to the harmonic extension with fitted order >= 0.9."""
    start = time.time()
    spec = baseline_spec(65)
    report = stability_regression(
        spec, (1.0, 0.5, 0.25, 0.125), settings=TIGHT
    )
    assert report.fitted_order >= 0.9
    assert time.time() - start < 300.0


def test_11_modulus_inequalities():
    """sigma <= sigma ln(1/sigma) <= sigma^gamma / ((1-gamma) e) holds on the
    full grid of one thousand log-spaced sigma values in (0, 1/e] crossed
    with five gamma values."""
    start = time.time()
    sigmas = np.geomspace(1e-8, 1.0 / math.e, 1000)
    for gamma in (0.1, 0.25, 0.5, 0.75, 0.9):
        table = modulus_inequalities(gamma, sigmas)
        assert all(row.left_ok and row.right_ok for row in table.rows)
    assert time.time() - start < 1.0


def test_12_assumption_validators():
    """The exponent lower-bound check passes at sigma_minus = 1.5 in the
    plane, fails at 0.9, fails exactly at the 4-dimensional threshold 4/3
    (the inequality is strict), and a steep exponent law fails the Lipschitz
    check."""
    start = time.time()
    report = validate_assumptions(baseline_spec(17), d=2)
    assert report.all_passed

    bad = baseline_spec(17)
    bad = CoefficientSpec(
        sigma=AffineClampedLaw(intercept=1.0, slope=0.05, lower=0.9, upper=1.2),
        sigma_minus=0.9,
        c_sigma=0.05,
        lam=bad.lam,
        lambda_plus=bad.lambda_plus,
        f=bad.f,
        c_f=bad.c_f,
    )
    checks = {c.name: c.passed for c in validate_assumptions(bad, d=2).checks}
    assert checks["exponent-lower-bound"] is False

    marginal = baseline_spec(17)
    marginal = CoefficientSpec(
        sigma=AffineClampedLaw(intercept=4 / 3, slope=0.0, lower=4 / 3, upper=4 / 3),
        sigma_minus=4 / 3,
        c_sigma=0.0,
        lam=marginal.lam,
        lambda_plus=marginal.lambda_plus,
        f=marginal.f,
        c_f=marginal.c_f,
    )
    checks = {c.name: c.passed for c in validate_assumptions(marginal, d=4).checks}
    assert checks["exponent-lower-bound"] is False

    steep = baseline_spec(17)
    steep = CoefficientSpec(
        sigma=AffineClampedLaw(intercept=2.0, slope=5.0, lower=1.5, upper=4.0),
        sigma_minus=1.5,
        c_sigma=1.0,
        lam=steep.lam,
        lambda_plus=steep.lambda_plus,
        f=steep.f,
        c_f=steep.c_f,
    )
    checks = {c.name: c.passed for c in validate_assumptions(steep, d=2).checks}
    assert checks["exponent-lipschitz"] is False
    assert time.time() - start < 1.0
