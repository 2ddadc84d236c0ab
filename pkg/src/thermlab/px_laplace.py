"""Variable-exponent flow solver: -div(|Du|^(p(x)-2) Du) = f with u = 0 on the rim.

Discretization.  The continuous energy

    E[u] = int (1/p(x)) (|Du|^2 + eps^2)^(p(x)/2) - f u

is discretized cell by cell: on each grid cell the squared gradient is the
mean of the two one-sided x-differences squared plus the mean of the two
one-sided y-differences squared (trapezoidal quadrature of |Du|^2 for the
bilinear interpolant), and the exponent is the mean of the four corner values.
The payoff is that the discrete energy is an exact potential: its first
variation is computable in closed form, and for p = 2 it collapses to the
classical 5-point Laplacian times h^2.  The source term is integrated nodally
with weight h^2 at interior nodes.

Degeneracy.  The flux weight (|Du|^2 + eps^2)^((p-2)/2) collapses (p > 2) or
blows up (p < 2) where Du = 0, so the solver never works at eps = 0.  Instead
it walks a fixed continuation ladder of regularization parameters, and within
each rung runs a frozen-weight (lagged diffusivity) iteration: freeze the
weight at the current iterate, solve the resulting symmetric positive
definite linear system by preconditioned conjugate gradients, then backtrack
along the step until the true energy decreases.  Energy decrease is monotone
by construction inside each rung.

Convergence is declared when the sup norm of the energy gradient falls below
tol * (1 + sup|f|) * h^2: gradient entries carry the h^2 quadrature factor, so
this matches a pointwise PDE residual of tol * (1 + sup|f|).
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .fields import Grid2D, ScalarField, VectorField, boundary_mask, gradient

__all__ = [
    "DEFAULT_SCHEDULE",
    "ExponentField",
    "NonfiniteEnergy",
    "PxSolveResult",
    "RegularizationSchedule",
    "SingularFlux",
    "energy",
    "energy_gradient",
    "exponent_threshold",
    "flux",
    "solve_px",
]

log = logging.getLogger(__name__)


class SingularFlux(Exception):
    """flux was evaluated at an exact singularity (eps = 0, p < 2, g = 0)."""


class NonfiniteEnergy(Exception):
    """The discrete energy or its gradient overflowed to inf/nan."""


def exponent_threshold(d: int) -> float:
    """Lower exponent threshold 2d/(d+2) below which the coupling is not admissible."""
    if d < 1:
        raise ValueError("dimension must be positive")
    return 2.0 * d / (d + 2.0)


@dataclass(frozen=True)
class ExponentField:
    """Nodewise exponent p(x) with certified bounds p_min <= p(x) <= p_max.

    p_min must sit strictly above the admissibility threshold 2d/(d+2) (= 1 in
    the plane) and p_max must be finite; the bounds are checked against the
    actual node values at construction.
    """

    p: ScalarField
    p_min: float
    p_max: float

    def __post_init__(self) -> None:
        if not (self.p_min > exponent_threshold(2)):
            raise ValueError(
                f"p_min = {self.p_min} must exceed the planar threshold {exponent_threshold(2)}"
            )
        if not math.isfinite(self.p_max):
            raise ValueError("p_max must be finite")
        lo = float(np.min(self.p.values))
        hi = float(np.max(self.p.values))
        if lo < self.p_min - 1e-12 or hi > self.p_max + 1e-12:
            raise ValueError(
                f"exponent values span [{lo:.6g}, {hi:.6g}], outside [{self.p_min}, {self.p_max}]"
            )

    @classmethod
    def constant(cls, grid: Grid2D, value: float, p_max: float | None = None) -> "ExponentField":
        p_max = value if p_max is None else p_max
        return cls(ScalarField.constant(grid, value), p_min=value, p_max=p_max)


@dataclass(frozen=True)
class RegularizationSchedule:
    """Strictly decreasing ladder of positive regularization parameters."""

    epsilons: tuple[float, ...] = (1e-2, 1e-4, 1e-6, 1e-8)

    def __post_init__(self) -> None:
        if not self.epsilons:
            raise ValueError("schedule must contain at least one epsilon")
        if any(e <= 0.0 for e in self.epsilons):
            raise ValueError("regularization parameters must be positive")
        if any(nxt >= cur for cur, nxt in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("regularization parameters must decrease strictly")


DEFAULT_SCHEDULE = RegularizationSchedule()


@dataclass
class PxSolveResult:
    u: ScalarField
    grad_u: VectorField
    energy: float
    residual_sup: float
    iterations: int
    converged: bool
    final_epsilon: float
    # (stage index, energy after each accepted step) for monotonicity audits
    stage_energies: list[tuple[int, float]] = field(default_factory=list)


def flux(g, p, eps: float):
    """Regularized flux (|g|^2 + eps^2)^((p-2)/2) g, vectorized over g and p.

    ``g`` is an array whose last axis has length 2 (or a VectorField).  With
    eps = 0 the weight is singular at g = 0 whenever p < 2; that exact hit
    raises SingularFlux rather than returning inf.
    """
    if isinstance(g, VectorField):
        g = g.values
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != 2:
        raise ValueError("flux expects vectors along the last axis of length 2")
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    p_arr = np.asarray(p, dtype=np.float64)
    mag2 = g[..., 0] ** 2 + g[..., 1] ** 2
    if eps == 0.0 and np.any((p_arr < 2.0) & (mag2 == 0.0)):
        raise SingularFlux("flux weight is singular at g = 0 with eps = 0 and p < 2")
    with np.errstate(divide="ignore"):
        weight = np.power(mag2 + eps * eps, (p_arr - 2.0) / 2.0)
    weight = np.where(mag2 + eps * eps == 0.0, 0.0, weight)  # p >= 2, g = 0, eps = 0
    return weight[..., None] * g


# ---------------------------------------------------------------------------
# cell-based energy machinery (raw array layer)
# ---------------------------------------------------------------------------


def _cell_exponents(p_nodes: np.ndarray) -> np.ndarray:
    return 0.25 * (p_nodes[:-1, :-1] + p_nodes[1:, :-1] + p_nodes[:-1, 1:] + p_nodes[1:, 1:])


def _cell_q(u: np.ndarray, h: float) -> np.ndarray:
    """Mean-square gradient per cell for the bilinear interpolant of u."""
    dxa = u[1:, :-1] - u[:-1, :-1]
    dxb = u[1:, 1:] - u[:-1, 1:]
    dya = u[:-1, 1:] - u[:-1, :-1]
    dyb = u[1:, 1:] - u[1:, :-1]
    return 0.5 * (dxa * dxa + dxb * dxb + dya * dya + dyb * dyb) / (h * h)


def _energy_raw(u: np.ndarray, p_cells: np.ndarray, f: np.ndarray, eps: float, h: float) -> float:
    q = _cell_q(u, h)
    with np.errstate(over="ignore"):
        density = np.power(q + eps * eps, 0.5 * p_cells) / p_cells
    return float(h * h * (density.sum() - np.sum(f * u)))


def _cell_weights(u: np.ndarray, p_cells: np.ndarray, eps: float, h: float) -> np.ndarray:
    q = _cell_q(u, h)
    return np.power(q + eps * eps, 0.5 * (p_cells - 2.0))


def _edge_weights(w_cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold cell weights onto edges: each edge averages its adjacent cells / 4."""
    nxm1, nym1 = w_cells.shape
    wx = np.empty((nxm1, nym1 + 1))
    wx[:, 1:-1] = 0.25 * (w_cells[:, :-1] + w_cells[:, 1:])
    wx[:, 0] = 0.25 * w_cells[:, 0]
    wx[:, -1] = 0.25 * w_cells[:, -1]
    wy = np.empty((nxm1 + 1, nym1))
    wy[1:-1, :] = 0.25 * (w_cells[:-1, :] + w_cells[1:, :])
    wy[0, :] = 0.25 * w_cells[0, :]
    wy[-1, :] = 0.25 * w_cells[-1, :]
    return wx, wy


def _apply_edge_operator(
    v: np.ndarray, wx: np.ndarray, wy: np.ndarray, free: np.ndarray
) -> np.ndarray:
    """Frozen-weight operator; equals h^2 times the weighted 5-point form."""
    fx = 2.0 * wx * (v[1:, :] - v[:-1, :])
    fy = 2.0 * wy * (v[:, 1:] - v[:, :-1])
    out = np.zeros_like(v)
    out[:-1, :] -= fx
    out[1:, :] += fx
    out[:, :-1] -= fy
    out[:, 1:] += fy
    out[~free] = 0.0
    return out


def _edge_diagonal(wx: np.ndarray, wy: np.ndarray, free: np.ndarray) -> np.ndarray:
    diag = np.zeros((wy.shape[0], wx.shape[1]))
    diag[:-1, :] += 2.0 * wx
    diag[1:, :] += 2.0 * wx
    diag[:, :-1] += 2.0 * wy
    diag[:, 1:] += 2.0 * wy
    diag[~free] = 1.0
    return diag


def _gradient_raw(
    u: np.ndarray, p_cells: np.ndarray, f: np.ndarray, eps: float, h: float, free: np.ndarray
) -> np.ndarray:
    w = _cell_weights(u, p_cells, eps, h)
    wx, wy = _edge_weights(w)
    g = _apply_edge_operator(u, wx, wy, free)
    g[free] -= (h * h) * f[free]
    return g


def _pcg(apply_a, b, x0, diag, rel_tol, max_iters):
    """Jacobi-preconditioned conjugate gradients on masked 2D arrays."""
    x = x0.copy()
    r = b - apply_a(x)
    b_norm = math.sqrt(float(np.sum(b * b)))
    if b_norm == 0.0:
        return np.zeros_like(b), 0
    z = r / diag
    p = z.copy()
    rz = float(np.sum(r * z))
    iters = 0
    target = rel_tol * b_norm
    while math.sqrt(float(np.sum(r * r))) > target and iters < max_iters:
        ap = apply_a(p)
        pap = float(np.sum(p * ap))
        if pap <= 0.0:
            break  # loss of positive definiteness at roundoff level
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        z = r / diag
        rz_next = float(np.sum(r * z))
        p = z + (rz_next / rz) * p
        rz = rz_next
        iters += 1
    return x, iters


def _check_boundary_zero(u: ScalarField) -> None:
    rim = boundary_mask(u.grid)
    if np.any(u.values[rim] != 0.0):
        raise ValueError("u must vanish identically on the rim")


def _validated_arrays(u: ScalarField, pfield: ExponentField, f: ScalarField):
    if u.grid != pfield.p.grid or u.grid != f.grid:
        raise ValueError("u, exponent field, and source must share one grid")
    _check_boundary_zero(u)
    return u.values, _cell_exponents(pfield.p.values), f.values


def energy(u: ScalarField, pfield: ExponentField, f: ScalarField, eps: float) -> float:
    """Discrete regularized energy of u (u must vanish on the rim)."""
    uv, p_cells, fv = _validated_arrays(u, pfield, f)
    value = _energy_raw(uv, p_cells, fv, eps, u.grid.h)
    if not math.isfinite(value):
        raise NonfiniteEnergy(f"energy overflowed (p_max = {pfield.p_max})")
    return value


def energy_gradient(u: ScalarField, pfield: ExponentField, f: ScalarField, eps: float) -> ScalarField:
    """Exact nodewise first variation of ``energy``; zero entries on the rim.

    At interior nodes this is the discrete -div(flux) - f scaled by the h^2
    quadrature weight; for p = 2 it reduces to (-Lap u - f) h^2 exactly.
    """
    uv, p_cells, fv = _validated_arrays(u, pfield, f)
    free = ~boundary_mask(u.grid)
    g = _gradient_raw(uv, p_cells, fv, eps, u.grid.h, free)
    if not np.all(np.isfinite(g)):
        raise NonfiniteEnergy("energy gradient overflowed")
    return ScalarField(u.grid, g)


def solve_px(
    pfield: ExponentField,
    f: ScalarField,
    schedule: RegularizationSchedule | None = None,
    tol: float = 1e-8,
    max_iters: int = 400,
    *,
    free_mask: np.ndarray | None = None,
    u0: ScalarField | None = None,
    cg_tol: float = 1e-10,
    cg_max_iters: int | None = None,
) -> PxSolveResult:
    """Minimize the regularized energy down the continuation ladder.

    ``free_mask`` optionally marks the unknown nodes (True = solve for it);
    it must be False on the rim.  Nodes outside the mask are clamped to zero,
    which is how sub-square domains such as the inscribed disk are handled.
    ``u0`` warm-starts the iteration.  Returns the best iterate with
    converged=False when the Picard budget ``max_iters`` runs out.
    """
    schedule = schedule or DEFAULT_SCHEDULE
    grid = pfield.p.grid
    if f.grid != grid:
        raise ValueError("source grid does not match exponent grid")
    h = grid.h
    rim = boundary_mask(grid)
    if free_mask is None:
        free = ~rim
    else:
        free = np.asarray(free_mask, dtype=bool)
        if free.shape != (grid.nx, grid.ny):
            raise ValueError("free_mask shape does not match the grid")
        if np.any(free & rim):
            raise ValueError("free_mask must exclude the rim")
    p_cells = _cell_exponents(pfield.p.values)
    fv = f.values
    f_sup = float(np.max(np.abs(fv)))
    final_tol = tol * (1.0 + f_sup) * h * h
    eps_last = schedule.epsilons[-1]

    if f_sup == 0.0 and u0 is None:
        # The strictly convex energy is minimized by u = 0 when f = 0.
        u = ScalarField.zeros(grid)
        e0 = _energy_raw(u.values, p_cells, fv, eps_last, h)
        return PxSolveResult(
            u=u,
            grad_u=gradient(u),
            energy=e0,
            residual_sup=0.0,
            iterations=0,
            converged=True,
            final_epsilon=eps_last,
        )

    u = np.zeros((grid.nx, grid.ny)) if u0 is None else u0.values.copy()
    u[~free] = 0.0
    cg_cap = cg_max_iters if cg_max_iters is not None else 100 * grid.nx
    iterations = 0
    budget_exhausted = False
    stage_energies: list[tuple[int, float]] = []

    for stage, eps in enumerate(schedule.epsilons):
        is_last = stage == len(schedule.epsilons) - 1
        if is_last:
            stage_tol = final_tol
        else:
            # An intermediate rung only needs to land within reach of the next
            # one.  The gradient gap between neighboring rungs scales like the
            # rung's own epsilon, so chasing anything tighter wastes Picard
            # steps (and would drag a warm start away from its answer).
            stage_tol = max(final_tol, eps * (1.0 + f_sup) * h * h)
        while True:
            g = _gradient_raw(u, p_cells, fv, eps, h, free)
            gs = float(np.max(np.abs(g)))
            if not math.isfinite(gs):
                raise NonfiniteEnergy("energy gradient overflowed during the solve")
            if gs <= stage_tol:
                break
            if iterations >= max_iters:
                budget_exhausted = True
                break
            e_here = _energy_raw(u, p_cells, fv, eps, h)
            if not math.isfinite(e_here):
                raise NonfiniteEnergy("energy overflowed during the solve")
            w = _cell_weights(u, p_cells, eps, h)
            wx, wy = _edge_weights(w)
            diag = _edge_diagonal(wx, wy, free)
            b = np.where(free, (h * h) * fv, 0.0)
            u_hat, _ = _pcg(
                lambda v: _apply_edge_operator(v, wx, wy, free),
                b,
                u,
                diag,
                cg_tol,
                cg_cap,
            )
            step = u_hat - u
            g_dot_d = float(np.sum(g * step))
            t = 1.0
            accepted = None
            for _ in range(60):
                cand = u + t * step
                e_cand = _energy_raw(cand, p_cells, fv, eps, h)
                if math.isfinite(e_cand) and e_cand <= e_here + 1e-4 * t * min(g_dot_d, 0.0):
                    accepted = (cand, e_cand)
                    break
                t *= 0.5
            if accepted is None:
                # Energy floor reached at this rung; move on.
                log.debug("px stage %d stalled at |grad| = %.3e", stage, gs)
                break
            u, e_now = accepted
            iterations += 1
            stage_energies.append((stage, e_now))
        if budget_exhausted:
            break

    g = _gradient_raw(u, p_cells, fv, eps_last, h, free)
    gs = float(np.max(np.abs(g)))
    e_final = _energy_raw(u, p_cells, fv, eps_last, h)
    converged = bool(gs <= final_tol) and not budget_exhausted
    if budget_exhausted:
        log.warning(
            "px solve hit the Picard budget (%d iterations) at |grad| = %.3e (target %.3e)",
            max_iters,
            gs,
            final_tol,
        )
    u_field = ScalarField(grid, u)
    return PxSolveResult(
        u=u_field,
        grad_u=gradient(u_field),
        energy=e_final,
        residual_sup=gs,
        iterations=iterations,
        converged=converged,
        final_epsilon=eps_last,
        stage_energies=stage_energies,
    )
