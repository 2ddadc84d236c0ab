"""Discrete Poisson and Laplace solves on square grids.

The heat half of the coupled system asks for -laplace(theta) = g with theta
vanishing on the boundary.  The regularity experiments additionally replace a
window of theta by the discretely harmonic function sharing its boundary
values, and then read off value, gradient, and Hessian of that replacement at
the window center.  All of it reduces to the classical 5-point system, which
is symmetric positive definite and safe to hand to conjugate gradients.

Derivatives at a node use fourth-order central stencils (a 5x5 patch), so the
evaluation point must keep a margin of four grid spacings from the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fields import Grid2D, ScalarField, nearest_node


class PoissonError(Exception):
    """Base class for failures in the linear solves."""


class MaxIterationsExceeded(PoissonError):
    """Conjugate gradients ran out of budget before reaching tolerance."""


class TooCloseToBoundary(PoissonError):
    """Stencil evaluation requested within the 4h boundary margin."""


@dataclass(frozen=True)
class PoissonResult:
    """Outcome of a 5-point solve.

    theta respects its boundary condition exactly (the rim is never part of
    the unknown set).  residual_sup is the interior sup norm of the raw PDE
    residual, in the units of the right-hand side.
    """

    theta: ScalarField
    residual_sup: float
    iterations: int


# First- and second-derivative stencils on offsets (-2, -1, 0, 1, 2).
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


class NodalDerivatives(NamedTuple):
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _neg_laplacian_interior(x: np.ndarray, h2: float) -> np.ndarray:
    """Apply -laplace via the 5-point stencil; rim rows of the result are 0."""
    out = np.zeros_like(x)
    out[1:-1, 1:-1] = (
        4.0 * x[1:-1, 1:-1]
        - x[2:, 1:-1]
        - x[:-2, 1:-1]
        - x[1:-1, 2:]
        - x[1:-1, :-2]
    ) / h2
    return out


def _cg_interior(b: np.ndarray, h2: float, tol: float, max_iters: int) -> tuple[np.ndarray, int]:
    """Solve the pinned-rim 5-point system A x = b by plain CG.

    b must vanish on the rim.  Stops when the l2 residual drops below
    tol * ||b||; returns the solution (zero rim) and the iteration count.
    """
    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x, 0
    r = b.copy()
    d = r.copy()
    rr = float(np.sum(r * r))
    target = tol * b_norm
    for k in range(1, max_iters + 1):
        ad = _neg_laplacian_interior(d, h2)
        dad = float(np.sum(d * ad))
        if dad <= 0.0:
            raise PoissonError("5-point operator lost positive definiteness")
        alpha = rr / dad
        x += alpha * d
        r -= alpha * ad
        rr_new = float(np.sum(r * r))
        if np.sqrt(rr_new) <= target:
            return x, k
        d = r + (rr_new / rr) * d
        rr = rr_new
    achieved = float(np.sqrt(rr) / b_norm)
    raise MaxIterationsExceeded(
        f"conjugate gradients spent {max_iters} iterations without reaching "
        f"relative residual {tol:g} (got {achieved:g})"
    )


def _default_budget(grid: Grid2D) -> int:
    return 40 * max(grid.nx, grid.ny)


def solve_poisson(
    g: ScalarField,
    tol: float = 1e-12,
    max_iters: int | None = None,
) -> PoissonResult:
    """Solve -laplace(theta) = g with theta = 0 on the grid boundary.

    The stopping rule is relative: the l2 residual of the 5-point system is
    driven below tol times the l2 norm of g.  Raises MaxIterationsExceeded
    when the budget (default 40 times the grid side) runs out.
    """
    grid = g.grid
    if not np.all(np.isfinite(g.values)):
        raise PoissonError("source term contains non-finite entries")
    budget = _default_budget(grid) if max_iters is None else int(max_iters)
    h2 = grid.h * grid.h
    b = np.zeros_like(g.values)
    b[1:-1, 1:-1] = g.values[1:-1, 1:-1]
    x, iterations = _cg_interior(b, h2, tol, budget)
    residual = _neg_laplacian_interior(x, h2) - b
    theta = ScalarField(grid, x)
    return PoissonResult(
        theta=theta,
        residual_sup=float(np.max(np.abs(residual))),
        iterations=iterations,
    )


def harmonic_extension(
    boundary: ScalarField,
    tol: float = 1e-12,
    max_iters: int | None = None,
) -> PoissonResult:
    """Fill the interior with the discretely harmonic extension of rim data.

    Only the rim entries of `boundary` are read; whatever the interior holds
    is ignored and replaced.  The result agrees with the rim data exactly and
    satisfies the 5-point Laplace equation inside, up to the CG tolerance.
    """
    grid = boundary.grid
    rim = boundary.values.copy()
    if not np.all(np.isfinite(rim[0, :])) or not np.all(np.isfinite(rim[-1, :])) \
            or not np.all(np.isfinite(rim[:, 0])) or not np.all(np.isfinite(rim[:, -1])):
        raise PoissonError("boundary data contains non-finite entries")
    rim[1:-1, 1:-1] = 0.0
    budget = _default_budget(grid) if max_iters is None else int(max_iters)
    h2 = grid.h * grid.h
    # Fold the inhomogeneous rim into the right-hand side and solve for the
    # zero-rim correction.
    b = -_neg_laplacian_interior(rim, h2)
    x, iterations = _cg_interior(b, h2, tol, budget)
    values = rim + x
    residual = _neg_laplacian_interior(values, h2)
    theta = ScalarField(grid, values)
    return PoissonResult(
        theta=theta,
        residual_sup=float(np.max(np.abs(residual))),
        iterations=iterations,
    )


def derivatives_at(h: ScalarField, center: tuple[float, float]) -> NodalDerivatives:
    """Value, gradient, and Hessian of a grid function at a node.

    The center is snapped to the nearest grid node and must keep at least
    four grid spacings of distance from every side of the grid extent;
    otherwise TooCloseToBoundary is raised.  Gradient and Hessian come from
    fourth-order central stencils on the surrounding 5x5 patch, so they are
    exact for polynomials up to degree four (the mixed term up to products of
    such).  The Hessian is symmetric by construction: its off-diagonal entry
    is computed once and mirrored.
    """
    grid = h.grid
    i, j = nearest_node(grid, center)
    x = grid.origin[0] + i * grid.h
    y = grid.origin[1] + j * grid.h
    (x0, x1), (y0, y1) = grid.extent
    margin = 4.0 * grid.h - 1e-9 * grid.h
    if min(x - x0, x1 - x, y - y0, y1 - y) < margin:
        raise TooCloseToBoundary(
            f"node ({x:g}, {y:g}) is within 4h = {4.0 * grid.h:g} of the boundary"
        )
    patch = h.values[i - 2 : i + 3, j - 2 : j + 3]
    hh = grid.h
    value = float(h.values[i, j])
    gx = float(_D1 @ patch[:, 2]) / hh
    gy = float(patch[2, :] @ _D1) / hh
    hxx = float(_D2 @ patch[:, 2]) / (hh * hh)
    hyy = float(patch[2, :] @ _D2) / (hh * hh)
    hxy = float(_D1 @ patch @ _D1) / (hh * hh)
    hessian = np.array([[hxx, hxy], [hxy, hyy]])
    return NodalDerivatives(value=value, gradient=np.array([gx, gy]), hessian=hessian)
