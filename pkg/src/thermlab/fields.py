"""Uniform-grid scalar and vector fields with the discrete calculus used everywhere else.

The whole laboratory works on a single kind of mesh: a square, uniformly spaced
node grid covering a closed square domain.  A scalar field stores one float64
value per node, a vector field stores two.  On top of that this module provides

* second-order gradients (centered inside, one-sided at the rim),
* the classical 5-point Laplacian,
* deterministic quasi-uniform sampling of closed balls by bilinear
  interpolation (concentric rings plus the center point), and
* CSV / raw dumps so runs can be archived and re-read bit for bit.

Fields are immutable after construction: the value arrays are copied in and
marked read-only, so instances are safe to share across threads and worker
processes without locks.
"""

from dataclasses import dataclass
import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "BallOutOfDomain",
    "EmptyInput",
    "FieldError",
    "Grid2D",
    "RadiusBelowResolution",
    "ScalarField",
    "VectorField",
    "Window",
    "boundary_mask",
    "dump_csv",
    "dump_raw",
    "extract",
    "full_window",
    "gradient",
    "interpolate",
    "laplacian",
    "load_csv",
    "load_raw",
    "nearest_node",
    "sample_ball",
    "sup_norm",
    "window_around",
]

MIN_NODES = 17


class FieldError(Exception):
    """Base class for grid/field contract violations."""


class BallOutOfDomain(FieldError):
    """A requested ball is not contained in the grid's closed extent."""


class RadiusBelowResolution(FieldError):
    """A requested ball radius is below the resolvable minimum (4h)."""


class EmptyInput(FieldError):
    """An aggregate was asked for on an empty collection."""


@dataclass(frozen=True)
class Grid2D:
    """Square node grid: ``nx`` by ``ny`` nodes, spacing ``h``, lower-left ``origin``.

    Node (i, j) sits at (origin_x + i*h, origin_y + j*h).  The closed extent is
    the square [origin_x, origin_x + (nx-1)h] x [origin_y, origin_y + (ny-1)h];
    the default constructor arguments give the unit square with h = 1/(nx-1).
    """

    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.nx != self.ny:
            raise ValueError(f"grid must be square in node count, got {self.nx} x {self.ny}")
        if self.nx < MIN_NODES:
            raise ValueError(f"grid needs at least {MIN_NODES} nodes per side, got {self.nx}")
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ValueError(f"grid spacing must be positive and finite, got {self.h}")

    @classmethod
    def unit_square(cls, nx: int) -> "Grid2D":
        return cls(nx=nx, ny=nx, h=1.0 / (nx - 1))

    @property
    def side(self) -> float:
        return (self.nx - 1) * self.h

    @property
    def extent(self) -> tuple[tuple[float, float], tuple[float, float]]:
        x0, y0 = self.origin
        return ((x0, x0 + (self.nx - 1) * self.h), (y0, y0 + (self.ny - 1) * self.h))

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays X, Y of shape (nx, ny), indexed [i, j]."""
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")

    def contains(self, point: tuple[float, float], slack: float = 1e-12) -> bool:
        (x0, x1), (y0, y1) = self.extent
        s = slack * max(1.0, self.side)
        return (x0 - s <= point[0] <= x1 + s) and (y0 - s <= point[1] <= y1 + s)


def _frozen_array(values, shape_tail: tuple[int, ...], grid: Grid2D) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    expected = (grid.nx, grid.ny) + shape_tail
    if arr.shape != expected:
        raise ValueError(f"values shape {arr.shape} does not match grid shape {expected}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must all be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarField:
    """One float64 per node.  Values are validated finite and frozen on construction."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen_array(self.values, (), self.grid))

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        X, Y = grid.meshes()
        return cls(grid, np.asarray(fn(X, Y), dtype=np.float64))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField":
        return cls(grid, np.zeros((grid.nx, grid.ny)))

    @classmethod
    def constant(cls, grid: Grid2D, c: float) -> "ScalarField":
        return cls(grid, np.full((grid.nx, grid.ny), float(c)))


@dataclass(frozen=True)
class VectorField:
    """Two float64 components per node, stored as shape (nx, ny, 2)."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen_array(self.values, (2,), self.grid))

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.hypot(self.values[..., 0], self.values[..., 1]))


def boundary_mask(grid: Grid2D) -> np.ndarray:
    """Boolean (nx, ny) mask that is True exactly on the rim nodes."""
    mask = np.zeros((grid.nx, grid.ny), dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask


def gradient(phi: ScalarField) -> VectorField:
    """Second-order discrete gradient.

    Centered differences at interior nodes, second-order one-sided stencils on
    the rim.  Exact for affine and quadratic node data (the one-sided 3-point
    stencil is exact on quadratics as well).
    """
    gx, gy = np.gradient(phi.values, phi.grid.h, edge_order=2)
    return VectorField(phi.grid, np.stack([gx, gy], axis=-1))


def laplacian(phi: ScalarField) -> ScalarField:
    """5-point Laplacian at interior nodes; rim entries are zero by convention."""
    u = phi.values
    h2 = phi.grid.h * phi.grid.h
    out = np.zeros_like(u)
    out[1:-1, 1:-1] = (
        u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4.0 * u[1:-1, 1:-1]
    ) / h2
    return ScalarField(phi.grid, out)


def nearest_node(grid: Grid2D, point: tuple[float, float]) -> tuple[int, int]:
    """Indices of the grid node closest to ``point`` (clipped into the grid)."""
    i = int(round((point[0] - grid.origin[0]) / grid.h))
    j = int(round((point[1] - grid.origin[1]) / grid.h))
    return min(max(i, 0), grid.nx - 1), min(max(j, 0), grid.ny - 1)


def interpolate(phi: ScalarField, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``phi`` at an (S, 2) array of in-domain points.

    Exact for node data sampled from a bilinear function.  Points on the upper
    extent edges are folded into the last cell so the closed square is covered.
    """
    g = phi.grid
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    tx = (pts[:, 0] - g.origin[0]) / g.h
    ty = (pts[:, 1] - g.origin[1]) / g.h
    eps = 1e-12 * max(1.0, g.nx)
    if np.any(tx < -eps) or np.any(tx > g.nx - 1 + eps) or np.any(ty < -eps) or np.any(ty > g.ny - 1 + eps):
        raise BallOutOfDomain("interpolation point outside the grid extent")
    i = np.clip(np.floor(tx).astype(int), 0, g.nx - 2)
    j = np.clip(np.floor(ty).astype(int), 0, g.ny - 2)
    fx = np.clip(tx - i, 0.0, 1.0)
    fy = np.clip(ty - j, 0.0, 1.0)
    v = phi.values
    v00 = v[i, j]
    v10 = v[i + 1, j]
    v01 = v[i, j + 1]
    v11 = v[i + 1, j + 1]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )


def _ring_layout(radius: float, samples: int) -> np.ndarray:
    """Deterministic quasi-uniform offsets covering the closed ball of ``radius``.

    One center point plus concentric rings whose point counts grow linearly
    with ring index, which keeps the areal density roughly constant.  The
    outermost ring sits exactly on the boundary circle.  Exactly ``samples``
    offsets are returned for any requested count.
    """
    if samples < 1:
        raise EmptyInput("sample count must be at least 1")
    if samples == 1:
        return np.zeros((1, 2))
    rings = max(1, int(round(math.sqrt(samples / math.pi))))
    remaining = samples - 1
    if rings > remaining:
        rings = remaining
    weights = np.arange(1, rings + 1, dtype=np.float64)
    raw = remaining * weights / weights.sum()
    counts = np.maximum(1, np.floor(raw).astype(int))
    # Hand out the remainder deterministically, outermost rings first, so the
    # total is exact.
    deficit = remaining - int(counts.sum())
    k = rings - 1
    while deficit > 0:
        counts[k] += 1
        deficit -= 1
        k = rings - 1 if k == 0 else k - 1
    while deficit < 0:
        for k in range(rings):
            if counts[k] > 1:
                counts[k] -= 1
                deficit += 1
                break
    chunks = [np.zeros((1, 2))]
    for ring, count in enumerate(counts, start=1):
        r = radius * ring / rings
        stagger = (math.pi / count) * (ring % 2)
        angles = 2.0 * math.pi * np.arange(count) / count + stagger
        chunks.append(np.column_stack([r * np.cos(angles), r * np.sin(angles)]))
    return np.concatenate(chunks, axis=0)


def sample_ball(
    phi: ScalarField,
    center: tuple[float, float],
    radius: float,
    samples: int = 400,
) -> list[tuple[tuple[float, float], float]]:
    """Sample ``phi`` over the closed ball B(center, radius) by bilinear interpolation.

    The layout is deterministic for fixed inputs and includes the boundary
    circle.  Raises RadiusBelowResolution when radius < 4h and BallOutOfDomain
    when the ball is not contained in the closed extent.
    """
    g = phi.grid
    if radius < 4.0 * g.h:
        raise RadiusBelowResolution(
            f"ball radius {radius:.6g} is below the resolvable minimum 4h = {4.0 * g.h:.6g}"
        )
    (x0, x1), (y0, y1) = g.extent
    slack = 1e-12 * max(1.0, g.side)
    if (
        center[0] - radius < x0 - slack
        or center[0] + radius > x1 + slack
        or center[1] - radius < y0 - slack
        or center[1] + radius > y1 + slack
    ):
        raise BallOutOfDomain(
            f"ball B(({center[0]:.6g}, {center[1]:.6g}), {radius:.6g}) leaves the extent"
        )
    offsets = _ring_layout(radius, samples)
    pts = offsets + np.asarray(center, dtype=np.float64)
    # Clip roundoff-level overhang so boundary-circle points stay interpolable.
    pts[:, 0] = np.clip(pts[:, 0], x0, x1)
    pts[:, 1] = np.clip(pts[:, 1], y0, y1)
    vals = interpolate(phi, pts)
    return [((float(p[0]), float(p[1])), float(v)) for p, v in zip(pts, vals)]


def sup_norm(data) -> float:
    """Sup norm of a ScalarField, VectorField, plain array, or ball-sample list."""
    if isinstance(data, ScalarField):
        return float(np.max(np.abs(data.values)))
    if isinstance(data, VectorField):
        return float(np.max(np.hypot(data.values[..., 0], data.values[..., 1])))
    if isinstance(data, np.ndarray):
        if data.size == 0:
            raise EmptyInput("sup norm of an empty array")
        return float(np.max(np.abs(data)))
    seq = list(data)
    if not seq:
        raise EmptyInput("sup norm of an empty sample list")
    if isinstance(seq[0], tuple) and len(seq[0]) == 2 and isinstance(seq[0][0], tuple):
        return max(abs(v) for _, v in seq)
    return max(abs(float(v)) for v in seq)


@dataclass(frozen=True)
class Window:
    """Square node window [i0, i0+n) x [j0, j0+n) of a parent grid."""

    i0: int
    j0: int
    n: int


def full_window(grid: Grid2D) -> Window:
    return Window(0, 0, grid.nx)


def window_around(grid: Grid2D, center: tuple[float, float], half_width: float) -> Window:
    """Largest symmetric square window around the node nearest ``center``.

    The half-width request is truncated to whole node counts and clipped so the
    window stays inside the grid; the result is always symmetric about the
    center node and at least MIN_NODES wide.
    """
    ic, jc = nearest_node(grid, center)
    m = int(math.floor(half_width / grid.h + 1e-12))
    s = min(m, ic, grid.nx - 1 - ic, jc, grid.ny - 1 - jc)
    if 2 * s + 1 < MIN_NODES:
        raise ValueError(
            f"window around ({center[0]:.4g}, {center[1]:.4g}) would span {2 * s + 1} nodes, "
            f"need at least {MIN_NODES}"
        )
    return Window(ic - s, jc - s, 2 * s + 1)


def extract(phi: ScalarField, window: Window) -> ScalarField:
    """Restrict a field to a window, producing a field on its own sub-grid."""
    g = phi.grid
    if window.i0 < 0 or window.j0 < 0 or window.i0 + window.n > g.nx or window.j0 + window.n > g.ny:
        raise ValueError("window does not fit inside the grid")
    sub = Grid2D(
        nx=window.n,
        ny=window.n,
        h=g.h,
        origin=(g.origin[0] + window.i0 * g.h, g.origin[1] + window.j0 * g.h),
    )
    vals = phi.values[window.i0 : window.i0 + window.n, window.j0 : window.j0 + window.n]
    return ScalarField(sub, vals)


# ---------------------------------------------------------------------------
# archival I/O
# ---------------------------------------------------------------------------

CSV_HEADER = "x,y,value"


def dump_csv(phi: ScalarField, path) -> None:
    """Write one node per row, row-major (x varies slowest), header ``x,y,value``.

    Floats are rendered with repr-level precision so a round trip is exact.
    """
    g = phi.grid
    xs, ys = g.xs(), g.ys()
    lines = [CSV_HEADER]
    for i in range(g.nx):
        x = repr(float(xs[i]))
        for j in range(g.ny):
            lines.append(f"{x},{float(ys[j])!r},{float(phi.values[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_csv(path) -> ScalarField:
    """Rebuild a field from a dump_csv file, inferring the grid from the rows."""
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != CSV_HEADER:
        raise ValueError(f"unexpected field CSV header in {path}")
    rows = [line.split(",") for line in text[1:]]
    if not rows:
        raise EmptyInput(f"field CSV {path} has no data rows")
    data = np.array([[float(a), float(b), float(c)] for a, b, c in rows])
    x = data[:, 0]
    ny = int(np.argmax(x != x[0])) if np.any(x != x[0]) else len(x)
    if ny <= 0 or len(x) % ny != 0:
        raise ValueError(f"field CSV {path} is not a row-major grid dump")
    nx = len(x) // ny
    ys = data[:ny, 1]
    h = float(ys[1] - ys[0]) if ny > 1 else float(data[ny, 0] - data[0, 0])
    grid = Grid2D(nx=nx, ny=ny, h=h, origin=(float(x[0]), float(ys[0])))
    return ScalarField(grid, data[:, 2].reshape(nx, ny))


def dump_raw(phi: ScalarField, base_path) -> tuple[Path, Path]:
    """Write little-endian float64 row-major values plus a JSON grid sidecar."""
    base = Path(base_path)
    raw_path = base.with_suffix(".raw")
    meta_path = base.with_suffix(".json")
    raw_path.write_bytes(np.ascontiguousarray(phi.values, dtype="<f8").tobytes())
    meta = {
        "nx": phi.grid.nx,
        "ny": phi.grid.ny,
        "h": phi.grid.h,
        "origin": list(phi.grid.origin),
        "dtype": "<f8",
        "order": "row-major",
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return raw_path, meta_path


def load_raw(base_path) -> ScalarField:
    base = Path(base_path)
    meta = json.loads(base.with_suffix(".json").read_text())
    grid = Grid2D(
        nx=int(meta["nx"]),
        ny=int(meta["ny"]),
        h=float(meta["h"]),
        origin=(float(meta["origin"][0]), float(meta["origin"][1])),
    )
    buf = np.frombuffer(base.with_suffix(".raw").read_bytes(), dtype="<f8")
    return ScalarField(grid, buf.reshape(grid.nx, grid.ny))
