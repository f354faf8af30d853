"""Convergence studies and work-unit timing.

A work unit is the median time of evaluating the eikonal residual
|grad tau|^2 - m over the whole grid with central-difference gradients
into preallocated buffers, so solver timings can be reported in a
machine-relative cost measure.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .analytic import AnalyticCase, eval_case
from .fastmarch import FmConfig, fm_solve
from .grid import RegularGrid, ScalarField, build_distance_factor, linf_error, mean_l2_error


@dataclass(frozen=True)
class WorkUnit:
    seconds: float
    reps: int


def eikonal_residual(tau: ScalarField, m: ScalarField) -> ScalarField:
    """Central-difference residual field (one-sided on the boundary)."""
    grid = tau.grid
    out = np.empty(grid.n_nodes)
    _k.eikonal_residual_central(
        grid.dim, np.asarray(grid.counts, np.int64),
        np.asarray(grid.strides, np.int64), grid.spacing,
        tau.values, m.values, out)
    return ScalarField(grid, out)


def measure_work_unit(grid: RegularGrid, reps: int = 5) -> WorkUnit:
    """Median-of-reps residual-evaluation time, allocation excluded."""
    reps = max(5, int(reps))
    counts = np.asarray(grid.counts, np.int64)
    strides = np.asarray(grid.strides, np.int64)
    tau = np.random.default_rng(0).random(grid.n_nodes) + 1.0
    m = np.ones(grid.n_nodes)
    out = np.empty(grid.n_nodes)
    _k.eikonal_residual_central(grid.dim, counts, strides, grid.spacing,
                                tau, m, out)  # warm-up
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        _k.eikonal_residual_central(grid.dim, counts, strides, grid.spacing,
                                    tau, m, out)
        times.append(time.perf_counter() - t0)
    return WorkUnit(seconds=float(np.median(times)), reps=reps)


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    dims: str
    order: int
    linf: float
    mean_l2: float
    seconds: float
    work_units: float


@dataclass(frozen=True)
class ConvergenceReport:
    rows: tuple[ConvergenceRow, ...]

    def slopes(self) -> dict[int, tuple[float, float]]:
        """Per order: fitted log2 slopes of (linf, mean_l2) vs h, or NaN
        with a single h."""
        out = {}
        for order in sorted({r.order for r in self.rows}):
            rs = [r for r in self.rows if r.order == order]
            if len(rs) < 2:
                out[order] = (float("nan"), float("nan"))
                continue
            lh = np.log2([r.h for r in rs])
            s_inf = np.polyfit(lh, np.log2([r.linf for r in rs]), 1)[0]
            s_l2 = np.polyfit(lh, np.log2([r.mean_l2 for r in rs]), 1)[0]
            out[order] = (float(s_inf), float(s_l2))
        return out

    def to_csv(self, path_or_buf):
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            f = open(path_or_buf, "w", newline="")
            close = True
        else:
            f = path_or_buf
        try:
            w = csv.writer(f)
            w.writerow(["h", "n", "order", "linf", "mean_l2", "seconds",
                        "work_units"])
            for r in self.rows:
                w.writerow([repr(r.h), r.dims, r.order, repr(r.linf),
                            repr(r.mean_l2), repr(r.seconds),
                            repr(r.work_units)])
        finally:
            if close:
                f.close()

    @classmethod
    def from_csv(cls, path_or_buf) -> "ConvergenceReport":
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            f = open(path_or_buf, newline="")
            close = True
        else:
            f = path_or_buf
        try:
            rd = csv.reader(f)
            header = next(rd)
            if header != ["h", "n", "order", "linf", "mean_l2", "seconds",
                          "work_units"]:
                raise ValueError("unexpected convergence CSV header")
            rows = tuple(
                ConvergenceRow(float(r[0]), r[1], int(r[2]), float(r[3]),
                               float(r[4]), float(r[5]), float(r[6]))
                for r in rd if r
            )
        finally:
            if close:
                f.close()
        return cls(rows)


def solve_case(case: AnalyticCase, h: float, cfg: FmConfig):
    """Solve one analytic case; returns (errors on tau, seconds, solution,
    grid)."""
    grid = case.grid_for(h)
    src = case.source_spec(grid)
    m, tau_exact, _ = eval_case(case, grid)
    dist = build_distance_factor(grid, src) if cfg.mode == "factored" else None
    t0 = time.perf_counter()
    sol = fm_solve(grid, m, src, dist, cfg)
    seconds = time.perf_counter() - t0
    tau = sol.travel_time(dist)
    return (linf_error(tau, tau_exact), mean_l2_error(tau, tau_exact),
            seconds, sol, grid)


def run_convergence(case: AnalyticCase, h_list, orders,
                    mode: str = "factored",
                    enforce_monotonicity: bool = False) -> ConvergenceReport:
    """One row per (h, order), h sorted decreasing; work units measured
    once per grid."""
    rows = []
    for h in sorted(h_list, reverse=True):
        grid = case.grid_for(h)
        unit = measure_work_unit(grid)
        dims = "x".join(str(c) for c in grid.counts)
        for order in orders:
            cfg = FmConfig(order=order, mode=mode,
                           enforce_monotonicity=enforce_monotonicity)
            linf, ml2, seconds, _, _ = solve_case(case, h, cfg)
            rows.append(ConvergenceRow(h=h, dims=dims, order=order,
                                       linf=linf, mean_l2=ml2,
                                       seconds=seconds,
                                       work_units=seconds / unit.seconds))
    return ConvergenceReport(tuple(rows))
