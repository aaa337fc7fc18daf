"""Structured Cartesian grids, sampled fields, and second-order
finite-difference vector calculus.

Differential operators use central differences and return fields on the
one-node-interior grid, so compositions shrink the domain naturally and
every returned value is a genuine stencil evaluation.  Grids and field
values are frozen after construction (arrays are marked read-only), which
keeps all operations here pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Grid3",
    "ScalarGrid",
    "VectorGrid",
    "sample_scalar",
    "sample_vector",
    "gradient",
    "divergence",
    "curl",
    "directional",
    "norm",
    "dot",
    "cross",
    "write_csv",
    "read_csv",
    "write_vtk",
]

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Grid3:
    """Uniform Cartesian grid: origin, positive spacing, node counts."""

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self):
        if any(h <= 0 for h in self.spacing):
            raise ValueError("grid spacing must be positive")
        if any(n < 1 for n in self.counts):
            raise ValueError("grid counts must be positive")

    @staticmethod
    def cube(lo: float, hi: float, n: int) -> "Grid3":
        h = (hi - lo) / (n - 1)
        return Grid3((lo, lo, lo), (h, h, h), (n, n, n))

    @property
    def n_nodes(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            self.origin[i] + self.spacing[i] * np.arange(self.counts[i]) for i in range(3)
        )

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ax = self.axes()
        return tuple(np.meshgrid(*ax, indexing="ij"))

    def interior(self, margin: int = 1) -> "Grid3":
        if any(n <= 2 * margin for n in self.counts):
            raise ValueError("grid too small for the requested interior margin")
        return Grid3(
            tuple(self.origin[i] + margin * self.spacing[i] for i in range(3)),
            self.spacing,
            tuple(n - 2 * margin for n in self.counts),
        )

    def coarsen(self) -> "Grid3":
        """Every-other-node subgrid; requires odd counts."""
        if any(n % 2 == 0 for n in self.counts):
            raise ValueError("coarsening requires odd node counts along every axis")
        return Grid3(self.origin, tuple(2 * h for h in self.spacing), tuple((n + 1) // 2 for n in self.counts))


def _freeze(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=float)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class ScalarGrid:
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.counts:
            raise ValueError(f"scalar values shape {self.values.shape} != grid counts {self.grid.counts}")
        object.__setattr__(self, "values", _freeze(self.values))

    def interior(self, margin: int = 1) -> "ScalarGrid":
        s = (slice(margin, -margin),) * 3
        return ScalarGrid(self.grid.interior(margin), self.values[s])

    def coarsen(self) -> "ScalarGrid":
        return ScalarGrid(self.grid.coarsen(), self.values[::2, ::2, ::2])


@dataclass(frozen=True)
class VectorGrid:
    grid: Grid3
    values: np.ndarray  # shape (3, nx, ny, nz)

    def __post_init__(self):
        if self.values.shape != (3, *self.grid.counts):
            raise ValueError(f"vector values shape {self.values.shape} != (3, *{self.grid.counts})")
        object.__setattr__(self, "values", _freeze(self.values))

    def interior(self, margin: int = 1) -> "VectorGrid":
        s = (slice(None),) + (slice(margin, -margin),) * 3
        return VectorGrid(self.grid.interior(margin), self.values[s])

    def coarsen(self) -> "VectorGrid":
        return VectorGrid(self.grid.coarsen(), self.values[:, ::2, ::2, ::2])

    def magnitude_squared(self) -> ScalarGrid:
        return ScalarGrid(self.grid, np.einsum("cijk,cijk->ijk", self.values, self.values))

    def component(self, c: int) -> ScalarGrid:
        return ScalarGrid(self.grid, self.values[c])


# -- sampling -------------------------------------------------------------------


def _check_finite(values: np.ndarray, grid: Grid3, label: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        node = idx[-3:]
        coords = tuple(grid.origin[i] + grid.spacing[i] * node[i] for i in range(3))
        raise ValueError(f"{label} is not finite at node {tuple(int(i) for i in node)} (x, y, z) = {coords}")


def sample_scalar(f: Callable, grid: Grid3) -> ScalarGrid:
    """Sample f(X, Y, Z) -> array on every node; rejects non-finite values."""
    X, Y, Z = grid.meshgrid()
    values = np.broadcast_to(np.asarray(f(X, Y, Z), dtype=float), grid.counts).copy()
    _check_finite(values, grid, "sampled scalar field")
    return ScalarGrid(grid, values)


def sample_vector(f: Callable, grid: Grid3) -> VectorGrid:
    """Sample f(X, Y, Z) -> (3, ...) array on every node."""
    X, Y, Z = grid.meshgrid()
    values = np.asarray(f(X, Y, Z), dtype=float)
    values = np.broadcast_to(values, (3, *grid.counts)).copy()
    _check_finite(values, grid, "sampled vector field")
    return VectorGrid(grid, values)


# -- central differences -----------------------------------------------------------


def _axis_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central difference along one axis, on the one-node interior."""
    lo = [slice(1, -1)] * 3
    hi = [slice(1, -1)] * 3
    lo[axis] = slice(0, -2)
    hi[axis] = slice(2, None)
    return (values[tuple(hi)] - values[tuple(lo)]) / (2.0 * h)


def _require_stencil_room(grid: Grid3) -> None:
    if any(n < 5 for n in grid.counts):
        raise ValueError("stencil requires at least 5 nodes along every axis")


def gradient(f: ScalarGrid) -> VectorGrid:
    _require_stencil_room(f.grid)
    h = f.grid.spacing
    comps = [_axis_diff(f.values, axis, h[axis]) for axis in range(3)]
    return VectorGrid(f.grid.interior(), np.stack(comps))


def divergence(v: VectorGrid) -> ScalarGrid:
    _require_stencil_room(v.grid)
    h = v.grid.spacing
    total = sum(_axis_diff(v.values[axis], axis, h[axis]) for axis in range(3))
    return ScalarGrid(v.grid.interior(), total)


def curl(v: VectorGrid) -> VectorGrid:
    _require_stencil_room(v.grid)
    h = v.grid.spacing

    def d(comp, axis):
        return _axis_diff(v.values[comp], axis, h[axis])

    out = np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])
    return VectorGrid(v.grid.interior(), out)


def directional(v: VectorGrid, f: ScalarGrid) -> ScalarGrid:
    """v . grad f on the interior of the shared grid."""
    if v.grid != f.grid:
        raise ValueError("directional derivative requires matching grids")
    g = gradient(f)
    vi = v.interior()
    return ScalarGrid(g.grid, np.einsum("cijk,cijk->ijk", vi.values, g.values))


def dot(a: VectorGrid, b: VectorGrid) -> ScalarGrid:
    if a.grid != b.grid:
        raise ValueError("dot product requires matching grids")
    return ScalarGrid(a.grid, np.einsum("cijk,cijk->ijk", a.values, b.values))


def cross(a: VectorGrid, b: VectorGrid) -> VectorGrid:
    if a.grid != b.grid:
        raise ValueError("cross product requires matching grids")
    ax, ay, az = a.values
    bx, by, bz = b.values
    return VectorGrid(a.grid, np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx]))


# -- norms ---------------------------------------------------------------------------


def norm(field: ScalarGrid | VectorGrid, kind: str = "linf", mask: np.ndarray | None = None) -> float:
    """Linf or L2 (root mean square) norm; vectors enter through their
    pointwise Euclidean magnitude.  ``mask`` selects nodes."""
    if isinstance(field, VectorGrid):
        pointwise = np.sqrt(np.einsum("cijk,cijk->ijk", field.values, field.values))
    else:
        pointwise = np.abs(field.values)
    if mask is not None:
        if mask.shape != pointwise.shape:
            raise ValueError("mask shape does not match field shape")
        pointwise = pointwise[mask]
    if pointwise.size == 0:
        raise ValueError("norm over an empty node set")
    if kind == "linf":
        return float(np.max(pointwise))
    if kind == "l2":
        return float(np.sqrt(np.mean(pointwise**2)))
    raise ValueError(f"unknown norm kind {kind!r}")


def sphere_mask(grid: Grid3, radius: float) -> np.ndarray:
    X, Y, Z = grid.meshgrid()
    return X * X + Y * Y + Z * Z <= radius * radius


# -- export / import --------------------------------------------------------------------


def write_csv(path, grid: Grid3, columns: dict[str, np.ndarray]) -> None:
    """One node per row, row-major with z fastest; floats at 17 significant
    digits so a read-back is bit-faithful."""
    X, Y, Z = grid.meshgrid()
    names = ["x", "y", "z", *columns.keys()]
    data = [X, Y, Z]
    for name, values in columns.items():
        if values.shape != grid.counts:
            raise ValueError(f"column {name!r} has shape {values.shape}, expected {grid.counts}")
        data.append(values)
    flat = np.column_stack([d.reshape(-1) for d in data])
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, flat, fmt=_FLOAT_FMT, delimiter=",")


def read_csv(path) -> tuple[Grid3, dict[str, np.ndarray]]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header[:3] != ["x", "y", "z"]:
        raise ValueError(f"{path}: expected x,y,z coordinate columns first")
    cols = {name: data[:, i] for i, name in enumerate(header)}
    grid = _infer_grid(cols["x"], cols["y"], cols["z"], path)
    out = {}
    for name in header[3:]:
        out[name] = cols[name].reshape(grid.counts)
    return grid, out


def _infer_grid(x: np.ndarray, y: np.ndarray, z: np.ndarray, path) -> Grid3:
    def axis_values(a):
        vals = np.unique(a)
        return vals

    xs, ys, zs = axis_values(x), axis_values(y), axis_values(z)
    counts = (len(xs), len(ys), len(zs))
    if counts[0] * counts[1] * counts[2] != x.size:
        raise ValueError(f"{path}: nodes do not form a full tensor grid")

    def spacing_of(vals, label):
        if len(vals) == 1:
            return 1.0
        steps = np.diff(vals)
        h = steps[0]
        if not np.allclose(steps, h, rtol=1e-12, atol=1e-12 * max(1.0, abs(vals[-1] - vals[0]))):
            raise ValueError(f"{path}: {label} coordinates are not uniformly spaced")
        return float(h)

    nx, ny, nz = counts
    # compare against the file's own coordinate values, not regenerated ones
    if not (
        np.array_equal(np.repeat(xs, ny * nz), x)
        and np.array_equal(np.tile(np.repeat(ys, nz), nx), y)
        and np.array_equal(np.tile(zs, nx * ny), z)
    ):
        raise ValueError(f"{path}: rows are not in row-major z-fastest order")
    return Grid3(
        (float(xs[0]), float(ys[0]), float(zs[0])),
        (spacing_of(xs, "x"), spacing_of(ys, "y"), spacing_of(zs, "z")),
        counts,
    )


def write_vtk(path, grid: Grid3, scalars: dict[str, np.ndarray], vectors: dict[str, np.ndarray], title: str = "plasmeq fields") -> None:
    """Legacy ASCII STRUCTURED_POINTS writer (x varies fastest on disk)."""
    nx, ny, nz = grid.counts

    def flat(values):
        # (i, j, k) C-order -> VTK x-fastest ordering
        return values.transpose(2, 1, 0).reshape(-1)

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        fh.write("ORIGIN " + " ".join(_FLOAT_FMT % v for v in grid.origin) + "\n")
        fh.write("SPACING " + " ".join(_FLOAT_FMT % v for v in grid.spacing) + "\n")
        fh.write(f"POINT_DATA {grid.n_nodes}\n")
        for name, values in vectors.items():
            fh.write(f"VECTORS {name} double\n")
            stacked = np.column_stack([flat(values[c]) for c in range(3)])
            np.savetxt(fh, stacked, fmt=_FLOAT_FMT, delimiter=" ")
        for name, values in scalars.items():
            fh.write(f"SCALARS {name} double\n")
            fh.write("LOOKUP_TABLE default\n")
            np.savetxt(fh, flat(values), fmt=_FLOAT_FMT)
