"""Sensitivities of the factored march by triangular substitution.

A completed solve fixes the upwind operator rows; differentiating the
implicit residual f(m, tau1) = 0 w.r.t. m gives the Jacobian J = A^{-1}
with A assembled from the recorded stencils.  Permuted by acceptance
order A is lower triangular, so J and J^T apply in O(nnz) by forward and
back substitution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .fastmarch import MODE_FACTORED, FmSolution, SolverError
from .grid import DistanceFactor, GridError, RegularGrid, ScalarField


@dataclass(frozen=True)
class SensitivityOperator:
    """CSR rows of A = J^{-1} plus the acceptance permutation."""

    grid: RegularGrid
    acceptance_order: np.ndarray = field(repr=False)
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    data: np.ndarray = field(repr=False)
    diag: np.ndarray = field(repr=False)
    source_node: int

    @property
    def n(self) -> int:
        return self.grid.n_nodes

    # raw-array fast paths used by the inversion inner loops
    def solve_lower(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.n, np.float64)
        _k.forward_subst(self.acceptance_order, self.indptr, self.indices,
                         self.data, self.diag, v, out)
        return out

    def solve_upper_transpose(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.n, np.float64)
        work = np.empty(self.n, np.float64)
        _k.transpose_subst(self.acceptance_order, self.indptr, self.indices,
                           self.data, self.diag, v, out, work)
        return out

    def apply_A(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.n, np.float64)
        _k.csr_matvec(self.indptr, self.indices, self.data, v, out)
        return out

    def to_coo(self):
        """(rows, cols, values) of A for dense oracles and debugging."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64),
                         np.diff(self.indptr))
        return rows, self.indices.copy(), self.data.copy()

    def dump_coo(self, path):
        rows, cols, vals = self.to_coo()
        with open(path, "w") as f:
            for r, c, v in zip(rows, cols, vals):
                f.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def assemble_operator(sol: FmSolution, dist: DistanceFactor,
                      grid: RegularGrid | None = None) -> SensitivityOperator:
    """Build A from the stencil records of a factored solve.

    Raises SolverError if a row references a node accepted later than its
    own (triangularity violation) or a diagonal entry is not strictly
    positive; both indicate corrupted records.
    """
    if sol.config.mode != MODE_FACTORED:
        raise GridError("sensitivities are defined for factored solves")
    if grid is None:
        grid = sol.grid
    if grid != sol.grid or dist.grid != grid:
        raise GridError("solution, distance factor, and grid disagree")
    n = grid.n_nodes
    src = sol.source.linear(grid)
    strides = np.asarray(grid.strides, dtype=np.int64)
    tau0 = dist.tau0.values
    p0 = np.stack([g.values for g in dist.grad])

    counts = np.empty(n, np.int64)
    _k.count_row_nnz(n, grid.dim, sol.rec_dir, sol.rec_ord, src, counts)
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], np.int64)
    data = np.empty(indptr[-1], np.float64)
    diag = np.empty(n, np.float64)
    _k.fill_rows(n, grid.dim, strides, grid.spacing, tau0, p0,
                 sol.tau1.values, sol.rec_dir, sol.rec_ord, sol.rec_plain,
                 src, indptr, indices, data, diag)

    bad = _k.check_triangular(sol.acceptance_order, indptr, indices)
    if bad >= 0:
        raise SolverError(f"row {bad} references a node accepted later")
    if np.min(diag) <= 0.0:
        raise SolverError("non-positive diagonal in the sensitivity operator")
    return SensitivityOperator(grid=grid,
                               acceptance_order=sol.acceptance_order,
                               indptr=indptr, indices=indices, data=data,
                               diag=diag, source_node=src)


def _check_field(S: SensitivityOperator, v: ScalarField) -> np.ndarray:
    if v.grid != S.grid:
        raise GridError("vector lives on a different grid")
    return v.values


def apply_jacobian(S: SensitivityOperator, v: ScalarField) -> ScalarField:
    """e = J v, i.e. the solution of A e = v by forward substitution."""
    return ScalarField(S.grid, S.solve_lower(_check_field(S, v)))


def apply_jacobian_transpose(S: SensitivityOperator, v: ScalarField) -> ScalarField:
    """J^T v via back substitution on A^T."""
    return ScalarField(S.grid, S.solve_upper_transpose(_check_field(S, v)))
