"""Uniform Cartesian grids, node-valued scalar fields, and the source
distance factor.

Index convention: node multi-indices are linearized last-axis-fastest
(C order), i.e. in 2D ``k = i0 * n1 + i1`` and in 3D
``k = (i0 * n1 + i1) * n2 + i2``.  Physical node coordinates are
``origin + h * multi_index`` (no cell centering).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Invalid grid geometry or mismatched fields."""


@dataclass(frozen=True)
class RegularGrid:
    """Uniform-spacing Cartesian mesh in 2 or 3 dimensions.

    Parameters
    ----------
    counts : tuple of int
        Nodes per axis, each >= 3 (second-order stencils need two
        interior neighbors).
    spacing : float
        Node spacing h, identical along every axis.
    origin : tuple of float
        Physical coordinate of node (0, 0[, 0]).
    """

    counts: tuple[int, ...]
    spacing: float
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) not in (2, 3):
            raise GridError(f"grid must be 2D or 3D, got {len(counts)} axes")
        if any(c < 3 for c in counts):
            raise GridError(f"every axis needs >= 3 nodes, got {counts}")
        if not (float(self.spacing) > 0.0):
            raise GridError(f"spacing must be positive, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin) if self.origin else (0.0,) * len(counts)
        if len(origin) != len(counts):
            raise GridError("origin and counts dimensionality differ")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def strides(self) -> tuple[int, ...]:
        """Linear-index stride of a unit step along each axis."""
        s = [1] * self.dim
        for a in range(self.dim - 2, -1, -1):
            s[a] = s[a + 1] * self.counts[a + 1]
        return tuple(s)

    def linearize(self, idx) -> int:
        idx = tuple(int(i) for i in idx)
        if len(idx) != self.dim:
            raise GridError(f"index {idx} has wrong dimensionality")
        for i, n in zip(idx, self.counts):
            if not (0 <= i < n):
                raise GridError(f"index {idx} outside grid {self.counts}")
        return int(sum(i * s for i, s in zip(idx, self.strides)))

    def delinearize(self, k: int) -> tuple[int, ...]:
        k = int(k)
        if not (0 <= k < self.n_nodes):
            raise GridError(f"linear index {k} outside grid of {self.n_nodes} nodes")
        out = []
        for s in self.strides:
            out.append(k // s)
            k -= out[-1] * s
        return tuple(out)

    def node_coords(self, idx) -> np.ndarray:
        return np.asarray(self.origin) + self.spacing * np.asarray(idx, dtype=float)

    def coords_arrays(self) -> list[np.ndarray]:
        """Per-axis coordinate arrays broadcastable to shape ``counts``."""
        out = []
        for a in range(self.dim):
            c = self.origin[a] + self.spacing * np.arange(self.counts[a])
            shape = [1] * self.dim
            shape[a] = self.counts[a]
            out.append(c.reshape(shape))
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RegularGrid)
            and self.counts == other.counts
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def __hash__(self):
        return hash((self.counts, self.spacing, self.origin))


@dataclass(frozen=True)
class ScalarField:
    """One real value per grid node, stored in linear-index order."""

    grid: RegularGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.grid.n_nodes:
            raise GridError(
                f"field length {v.size} != node count {self.grid.n_nodes}"
            )
        object.__setattr__(self, "values", v)

    def as_grid_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.counts)

    @classmethod
    def from_grid_array(cls, grid: RegularGrid, arr) -> "ScalarField":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != grid.counts:
            raise GridError(f"array shape {arr.shape} != grid counts {grid.counts}")
        return cls(grid, arr.reshape(-1))

    @classmethod
    def full(cls, grid: RegularGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.n_nodes, float(value)))


@dataclass(frozen=True)
class SourceSpec:
    """On-grid point-source location as a node multi-index."""

    index: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))

    def linear(self, grid: RegularGrid) -> int:
        return grid.linearize(self.index)


@dataclass(frozen=True)
class DistanceFactor:
    """Euclidean distance from the source and its unit gradient.

    ``tau0(x) = |x - x0|`` exactly; ``grad[a]`` holds component a of
    ``(x - x0)/|x - x0|``.  At the source itself the gradient is the
    canonical unit vector along the first axis, so the gradient has unit
    norm at every node.
    """

    tau0: ScalarField
    grad: tuple[ScalarField, ...]

    @property
    def grid(self) -> RegularGrid:
        return self.tau0.grid


def build_distance_factor(grid: RegularGrid, src: SourceSpec) -> DistanceFactor:
    """Distance factor for a point source at an exact grid node.

    Raises
    ------
    GridError
        If the source index is off-grid.
    """
    k0 = src.linear(grid)  # validates on-grid
    deltas = []
    for a, c in enumerate(grid.coords_arrays()):
        x0a = grid.origin[a] + grid.spacing * src.index[a]
        deltas.append(c - x0a)
    r2 = sum(d * d for d in deltas)
    tau0 = np.sqrt(np.broadcast_to(r2, grid.counts)).reshape(-1)
    grads = []
    with np.errstate(invalid="ignore", divide="ignore"):
        for d in deltas:
            g = np.broadcast_to(d, grid.counts).reshape(-1) / tau0
            grads.append(g.copy())
    for a in range(grid.dim):
        grads[a][k0] = 1.0 if a == 0 else 0.0
    return DistanceFactor(
        tau0=ScalarField(grid, tau0),
        grad=tuple(ScalarField(grid, g) for g in grads),
    )


def _check_same_grid(a: ScalarField, b: ScalarField):
    if a.grid != b.grid:
        raise GridError("fields live on different grids")


def linf_error(approx: ScalarField, exact: ScalarField) -> float:
    """Maximum absolute nodal error."""
    _check_same_grid(approx, exact)
    return float(np.max(np.abs(approx.values - exact.values)))


def mean_l2_error(approx: ScalarField, exact: ScalarField) -> float:
    """l2 norm of the nodal error divided by sqrt(number of nodes)."""
    _check_same_grid(approx, exact)
    d = approx.values - exact.values
    return float(np.linalg.norm(d) / np.sqrt(d.size))
