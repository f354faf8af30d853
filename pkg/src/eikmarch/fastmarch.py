"""Fast marching solver for the plain and factored eikonal equations.

The march processes nodes in increasing arrival time through a stale-entry
min-heap; each front node is updated from known neighbors only, by solving
a piecewise quadratic whose terms come from first- or second-order upwind
differences.  In factored mode the unknown is the smooth factor tau1 and
the arrival time is tau0 * tau1; in plain mode the unknown is the travel
time itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as _k
from .grid import DistanceFactor, GridError, RegularGrid, ScalarField, SourceSpec

MODE_FACTORED = "factored"
MODE_PLAIN = "plain"


class SolverError(RuntimeError):
    """Internal solver failure; indicates a bug, not bad input."""


@dataclass(frozen=True)
class FmConfig:
    """Solver settings: stencil order, equation form, and the optional
    monotone fallback of the factored scheme."""

    order: int = 1
    mode: str = MODE_FACTORED
    enforce_monotonicity: bool = False

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if self.mode not in (MODE_FACTORED, MODE_PLAIN):
            raise ValueError(f"unknown mode {self.mode!r}")


class AxisStencil(NamedTuple):
    direction: str | None  # 'backward' | 'forward' | None
    approx_order: int      # 0 when no derivative was retained on the axis
    used_plain_fallback: bool


class QuadraticTerm(NamedTuple):
    alpha: float
    beta: float


_DIR_NAMES = {_k.DIR_NONE: None, _k.DIR_BACKWARD: "backward", _k.DIR_FORWARD: "forward"}


@dataclass(frozen=True)
class FmSolution:
    """March output: the solved field, the acceptance permutation, and the
    per-node upwind stencils actually used (the raw int8 arrays; use
    :meth:`stencil` for a readable view of one node)."""

    grid: RegularGrid
    config: FmConfig
    source: SourceSpec
    tau1: ScalarField
    acceptance_order: np.ndarray
    rec_dir: np.ndarray
    rec_ord: np.ndarray
    rec_plain: np.ndarray

    def stencil(self, k: int) -> tuple[AxisStencil, ...]:
        return tuple(
            AxisStencil(
                _DIR_NAMES[int(self.rec_dir[k, a])],
                int(self.rec_ord[k, a]),
                bool(self.rec_plain[k, a]),
            )
            for a in range(self.grid.dim)
        )

    def travel_time(self, dist: DistanceFactor | None = None) -> ScalarField:
        """tau0 * tau1 in factored mode; tau1 already is tau in plain mode."""
        if self.config.mode == MODE_PLAIN:
            return self.tau1
        if dist is None:
            raise ValueError("factored solution needs the distance factor")
        return ScalarField(self.grid, dist.tau0.values * self.tau1.values)


def _grid_arrays(grid: RegularGrid):
    counts = np.asarray(grid.counts, dtype=np.int64)
    strides = np.asarray(grid.strides, dtype=np.int64)
    return counts, strides


_DUMMY_TAU0 = np.empty(0, np.float64)
_DUMMY_P0 = np.empty((0, 0), np.float64)


def fm_solve(grid: RegularGrid, m: ScalarField, src: SourceSpec,
             dist: DistanceFactor | None, cfg: FmConfig) -> FmSolution:
    """Run the march for squared slowness ``m`` from a point source.

    Raises
    ------
    GridError
        For non-positive slowness, mismatched grids, or an off-grid source.
    SolverError
        If a front node admits no valid upwind term (unreachable by
        construction).
    """
    if m.grid != grid:
        raise GridError("slowness field lives on a different grid")
    if np.min(m.values) <= 0.0:
        raise GridError("non-positive slowness: m must be > 0 everywhere")
    k0 = src.linear(grid)
    factored = cfg.mode == MODE_FACTORED
    if factored:
        if dist is None:
            raise GridError("factored mode requires a distance factor")
        if dist.grid != grid:
            raise GridError("distance factor lives on a different grid")
        tau0 = dist.tau0.values
        p0 = np.stack([g.values for g in dist.grad])
    else:
        tau0 = _DUMMY_TAU0
        p0 = _DUMMY_P0

    counts, strides = _grid_arrays(grid)
    n = grid.n_nodes
    tau1 = np.empty(n, np.float64)
    state = np.empty(n, np.uint8)
    accept = np.empty(n, np.int64)
    rec_dir = np.empty((n, grid.dim), np.int8)
    rec_ord = np.empty((n, grid.dim), np.int8)
    rec_plain = np.empty((n, grid.dim), np.uint8)

    na = _k.fm_march(grid.dim, counts, strides, grid.spacing, cfg.order,
                     factored, cfg.enforce_monotonicity, tau0, p0, m.values,
                     k0, tau1, state, accept, rec_dir, rec_ord, rec_plain)
    if na != n:
        raise SolverError(
            f"march accepted {na} of {n} nodes (no valid upwind term found)"
        )
    return FmSolution(grid=grid, config=cfg, source=src,
                      tau1=ScalarField(grid, tau1), acceptance_order=accept,
                      rec_dir=rec_dir, rec_ord=rec_ord, rec_plain=rec_plain)


def solve_piecewise_quadratic(alphas, betas, kappa: float):
    """Solve sum_k max(alpha_k (t - beta_k), 0)^2 = kappa^2 by the
    drop-largest-beta validity loop.  Returns (value, retained_mask)."""
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    betas = np.ascontiguousarray(betas, dtype=np.float64)
    if alphas.shape != betas.shape:
        raise ValueError("alphas and betas differ in length")
    keep = np.ones(alphas.size, np.uint8)
    t = _k.solve_piecewise(alphas, betas, keep, alphas.size, float(kappa) ** 2)
    if not np.isfinite(t):
        raise SolverError("no valid term set")
    return float(t), keep.astype(bool)


def assemble_terms(node, directions, orders, tau1, dist: DistanceFactor | None,
                   grid: RegularGrid, mode: str = MODE_FACTORED,
                   plain_fallback=None) -> list[QuadraticTerm]:
    """Upwind quadratic terms (alpha, beta) for the given per-axis choices.

    ``directions`` holds 'backward'/'forward'/None per axis, ``orders`` 1
    or 2, ``tau1`` the neighbor value array (flat or grid-shaped).  Terms
    whose alpha falls under the near-zero guard are not emitted.
    """
    factored = mode == MODE_FACTORED
    vals = np.asarray(tau1, dtype=np.float64).reshape(-1)
    k = grid.linearize(node)
    h = grid.spacing
    if plain_fallback is None:
        plain_fallback = [False] * grid.dim
    out = []
    for a in range(grid.dim):
        d = directions[a]
        if d is None:
            continue
        if d not in ("backward", "forward"):
            raise ValueError(f"bad direction {d!r}")
        step = -grid.strides[a] if d == "backward" else grid.strides[a]
        sgn = 1.0 if d == "backward" else -1.0
        nb1 = k + step
        nb2 = nb1 + step
        o = int(orders[a])
        t1nb2 = vals[nb2] if o == 2 else 0.0
        if factored:
            t0j = dist.tau0.values[k]
            g = dist.grad[a].values[k]
            t0nb1 = dist.tau0.values[nb1]
            t0nb2 = dist.tau0.values[nb2] if o == 2 else 0.0
        else:
            t0j = 1.0
            g = 0.0
            t0nb1 = 1.0
            t0nb2 = 0.0
        alpha, beta, ok = _k.term_coeffs(
            factored, bool(plain_fallback[a]), o, sgn, h, t0j, g,
            vals[nb1], t1nb2, t0nb1, t0nb2,
        )
        if ok:
            out.append(QuadraticTerm(float(alpha), float(beta)))
    return out


def local_update(node, known, tau1, dist: DistanceFactor | None,
                 m: ScalarField, cfg: FmConfig):
    """One front-node update against an explicit known mask.

    Returns (value, stencil tuple).  Raises ValueError when the node has
    no known neighbor (precondition of the march).
    """
    grid = m.grid
    k = grid.linearize(node)
    known = np.asarray(known, dtype=bool).reshape(-1)
    if known.size != grid.n_nodes:
        raise GridError("known mask has wrong length")
    state = np.where(known, _k.KNOWN, _k.FAR).astype(np.uint8)
    vals = np.asarray(tau1, dtype=np.float64).reshape(-1)
    factored = cfg.mode == MODE_FACTORED
    if factored:
        tau0 = dist.tau0.values
        p0 = np.stack([g.values for g in dist.grad])
    else:
        tau0 = _DUMMY_TAU0
        p0 = _DUMMY_P0
    counts, strides = _grid_arrays(grid)
    sc_dir = np.empty(3, np.int8)
    sc_ord = np.empty(3, np.int8)
    sc_plain = np.empty(3, np.uint8)
    sc_nb1 = np.empty(3, np.int64)
    sc_nb2 = np.empty(3, np.int64)
    sc_alpha = np.empty(3, np.float64)
    sc_beta = np.empty(3, np.float64)
    sc_keep = np.empty(3, np.uint8)
    val = _k.local_update(k, grid.dim, counts, strides, grid.spacing,
                          cfg.order, factored, cfg.enforce_monotonicity,
                          vals, state, tau0, p0, m.values,
                          sc_dir, sc_ord, sc_plain, sc_nb1, sc_nb2,
                          sc_alpha, sc_beta, sc_keep)
    if val < 0.0:
        raise ValueError("node has no known neighbor (or no valid term)")
    record = tuple(
        AxisStencil(_DIR_NAMES[int(sc_dir[a])], int(sc_ord[a]), bool(sc_plain[a]))
        for a in range(grid.dim)
    )
    return float(val), record


class FrontHeap:
    """Array-backed binary min-heap of (key, node) with a known mask.

    Duplicate entries per node are allowed; re-insertion replaces the
    decrease-key operation and entries whose node is already known are
    skipped on extraction.  Equal keys extract the smaller node index
    first.
    """

    def __init__(self, n_nodes: int, capacity: int = 64):
        self._keys = np.empty(max(capacity, 16), np.float64)
        self._nodes = np.empty(max(capacity, 16), np.int64)
        self._size = 0
        self.known = np.zeros(n_nodes, bool)

    def __len__(self) -> int:
        return self._size

    def insert(self, key: float, node: int):
        if self._size >= self._keys.size:
            self._keys = np.resize(self._keys, 2 * self._keys.size)
            self._nodes = np.resize(self._nodes, 2 * self._nodes.size)
        self._size = _k.heap_push(self._keys, self._nodes, self._size,
                                  float(key), int(node))

    def mark_known(self, node: int):
        self.known[node] = True

    def extract_min(self):
        """Smallest non-stale entry, or None when only stale entries remain."""
        while self._size > 0:
            key, node, self._size = _k.heap_pop(self._keys, self._nodes, self._size)
            if not self.known[node]:
                return float(key), int(node)
        return None
