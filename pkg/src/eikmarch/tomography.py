"""First-arrival travel-time tomography by Gauss-Newton.

The data misfit is 0.5 * sum_i |P^T (tau0_i * tau1_i(m)) - d_obs_i|^2
with the factored march as the forward model; gradients chain the
per-source Jacobian transpose (a back substitution) through the bound
parameterization, and the Gauss-Newton direction problem is solved by a
fixed number of plain CG steps using Hessian-vector products only.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fastmarch import FmConfig, fm_solve
from .grid import (GridError, RegularGrid, ScalarField, SourceSpec,
                   build_distance_factor)
from .sensitivity import SensitivityOperator, assemble_operator


def _thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("EIK_THREADS", "1")))
    except ValueError:
        return 1


def _map_sources(fn, items):
    """Apply fn per source, optionally threaded, preserving order."""
    cap = _thread_cap()
    if cap <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(cap, len(items))) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class Survey:
    """Acquisition geometry plus observed times.

    Receivers are shared across all sources; ``receivers`` holds linear
    node indices and ``d_obs`` is the n_src x n_rec matrix of observed
    travel times.
    """

    grid: RegularGrid
    sources: tuple[SourceSpec, ...]
    receivers: np.ndarray = field(repr=False)
    d_obs: np.ndarray = field(repr=False)

    def __post_init__(self):
        rec = np.asarray(self.receivers, dtype=np.int64).reshape(-1)
        d = np.asarray(self.d_obs, dtype=np.float64)
        if rec.size and (rec.min() < 0 or rec.max() >= self.grid.n_nodes):
            raise GridError("receiver index off-grid")
        for s in self.sources:
            s.linear(self.grid)  # validates
        if d.shape != (len(self.sources), rec.size):
            raise GridError(
                f"d_obs shape {d.shape} != (n_src, n_rec) = "
                f"({len(self.sources)}, {rec.size})"
            )
        if not np.all(np.isfinite(d)) or (d.size and d.min() < 0):
            raise GridError("d_obs must be finite and non-negative")
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "receivers", rec)
        object.__setattr__(self, "d_obs", d)

    @property
    def n_src(self) -> int:
        return len(self.sources)

    @property
    def n_rec(self) -> int:
        return self.receivers.size


@dataclass(frozen=True)
class SurveyGeometry:
    """Sources and shared receivers, before data exists."""

    sources: tuple[SourceSpec, ...]
    receivers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(
            self, "receivers",
            np.asarray(self.receivers, dtype=np.int64).reshape(-1),
        )


@dataclass(frozen=True)
class BoundMap:
    """Smooth increasing bijection from the real line onto (m_lo, m_hi),
    fixing the midpoint: m = (m_hi-m_lo)/2 * (tanh(t) + 1) + m_lo with
    t = 2/(m_hi-m_lo) * (x - (m_hi+m_lo)/2)."""

    m_lo: float
    m_hi: float

    def __post_init__(self):
        if not (0.0 < self.m_lo < self.m_hi):
            raise ValueError("bounds must satisfy 0 < m_lo < m_hi")

    def _t(self, x):
        mid = 0.5 * (self.m_hi + self.m_lo)
        return 2.0 / (self.m_hi - self.m_lo) * (np.asarray(x, float) - mid)

    def apply(self, x):
        half = 0.5 * (self.m_hi - self.m_lo)
        return half * (np.tanh(self._t(x)) + 1.0) + self.m_lo

    def deriv(self, x):
        return 1.0 / np.cosh(self._t(x)) ** 2

    def inverse(self, m):
        m = np.asarray(m, float)
        if np.any(m <= self.m_lo) or np.any(m >= self.m_hi):
            raise ValueError("value outside the open bound interval")
        half = 0.5 * (self.m_hi - self.m_lo)
        mid = 0.5 * (self.m_hi + self.m_lo)
        return mid + half * np.arctanh((m - self.m_lo) / half - 1.0)


def bound_map_apply(b: BoundMap, x):
    return b.apply(x)


def bound_map_deriv(b: BoundMap, x):
    return b.deriv(x)


@dataclass(frozen=True)
class InversionConfig:
    """Gauss-Newton settings; ``mprime_ref`` is both the regularization
    reference and the default starting model."""

    bounds: BoundMap
    mprime_ref: ScalarField
    alpha: float = 0.5
    n_gn: int = 10
    n_cg: int = 8
    ls_shrink: float = 0.5
    ls_max: int = 10
    armijo_c: float = 1e-4
    fm_order: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.n_gn < 1 or self.n_cg < 1:
            raise ValueError("n_gn and n_cg must be >= 1")

    @property
    def fm_config(self) -> FmConfig:
        return FmConfig(order=self.fm_order, mode="factored")


@dataclass(frozen=True)
class InversionResult:
    m_final: ScalarField
    mprime_final: ScalarField
    history: tuple[dict, ...]
    stopped_early: bool


# ---------------------------------------------------------------------------
# forward modeling
# ---------------------------------------------------------------------------

def _solve_one(grid, m_field, src, cfg: FmConfig):
    dist = build_distance_factor(grid, src)
    sol = fm_solve(grid, m_field, src, dist, cfg)
    return dist, sol


def forward_data(m: ScalarField, survey: Survey, cfg: FmConfig) -> np.ndarray:
    """Predicted travel times, one row per source, sampled at receivers."""
    grid = m.grid

    def run(src):
        dist, sol = _solve_one(grid, m, src, cfg)
        return (dist.tau0.values * sol.tau1.values)[survey.receivers]

    rows = _map_sources(run, list(survey.sources))
    return np.vstack(rows) if rows else np.zeros((0, survey.n_rec))


def synthesize_survey(m_true: ScalarField, geometry: SurveyGeometry,
                      cfg: FmConfig, noise_rel: float = 0.01,
                      seed: int = 0) -> Survey:
    """Survey with data from m_true plus white Gaussian noise of standard
    deviation noise_rel * mean(|clean|); clamped at zero so travel times
    stay physical.  Seeded and reproducible."""
    blank = Survey(m_true.grid, geometry.sources, geometry.receivers,
                   np.zeros((len(geometry.sources), geometry.receivers.size)))
    clean = forward_data(m_true, blank, cfg)
    if noise_rel > 0.0:
        sigma = noise_rel * np.mean(np.abs(clean))
        rng = np.random.default_rng(seed)
        d = np.maximum(clean + rng.normal(0.0, sigma, clean.shape), 0.0)
    else:
        d = clean
    return Survey(m_true.grid, geometry.sources, geometry.receivers, d)


# ---------------------------------------------------------------------------
# regularization: PSD Neumann Laplacian quadratic form on m'
# ---------------------------------------------------------------------------

def neg_laplacian_apply(grid: RegularGrid, v: np.ndarray) -> np.ndarray:
    """Negative discrete Laplacian (5/7-point, Neumann boundary, 1/h^2
    scaling); positive semi-definite with constants in its nullspace."""
    u = v.reshape(grid.counts)
    out = np.zeros_like(u)
    inv_h2 = 1.0 / grid.spacing ** 2
    for a in range(grid.dim):
        d = np.diff(u, axis=a)
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[a] = slice(1, None)
        hi[a] = slice(None, -1)
        # out[i] accumulates (u[i] - u[i-1]) + (u[i] - u[i+1]); a missing
        # boundary neighbor contributes nothing (zero-flux ghost)
        out[tuple(lo)] += d
        out[tuple(hi)] -= d
    return (out * inv_h2).reshape(-1)


def regularization(mprime: ScalarField, mprime_ref: ScalarField):
    """(value, gradient field, hessian-apply) of
    R = 0.5 (m'-m'_ref)^T L (m'-m'_ref)."""
    if mprime.grid != mprime_ref.grid:
        raise GridError("reference model lives on a different grid")
    grid = mprime.grid
    delta = mprime.values - mprime_ref.values
    ld = neg_laplacian_apply(grid, delta)
    value = 0.5 * float(delta @ ld)

    def hess_apply(v: np.ndarray) -> np.ndarray:
        return neg_laplacian_apply(grid, v)

    return value, ScalarField(grid, ld), hess_apply


# ---------------------------------------------------------------------------
# objective, gradient, Gauss-Newton
# ---------------------------------------------------------------------------

def _scatter(n, receivers, values):
    out = np.zeros(n)
    np.add.at(out, receivers, values)
    return out


@dataclass(frozen=True)
class _SourceBundle:
    tau0: np.ndarray
    pred: np.ndarray          # predicted times at receivers
    op: SensitivityOperator | None


def _forward_bundles(mprime_vals, grid, survey, cfg: InversionConfig,
                     with_ops: bool):
    m_field = ScalarField(grid, cfg.bounds.apply(mprime_vals))
    fm_cfg = cfg.fm_config

    def run(src):
        dist, sol = _solve_one(grid, m_field, src, fm_cfg)
        pred = (dist.tau0.values * sol.tau1.values)[survey.receivers]
        op = assemble_operator(sol, dist) if with_ops else None
        return _SourceBundle(dist.tau0.values, pred, op)

    return _map_sources(run, list(survey.sources))


def _misfit(bundles, survey) -> float:
    return 0.5 * float(
        sum(np.sum((b.pred - survey.d_obs[i]) ** 2)
            for i, b in enumerate(bundles))
    )


def data_misfit(m: ScalarField, survey: Survey, cfg: FmConfig) -> float:
    """0.5 * sum of squared data residuals at the given physical model."""
    pred = forward_data(m, survey, cfg)
    return 0.5 * float(np.sum((pred - survey.d_obs) ** 2))


def objective(mprime: ScalarField, survey: Survey,
              cfg: InversionConfig) -> tuple[float, ScalarField]:
    """Objective value and its gradient in the unconstrained variable."""
    phi, grad, _, _ = _objective_full(mprime.values, mprime.grid, survey, cfg)
    return phi, ScalarField(mprime.grid, grad)


def _objective_full(mp_vals, grid, survey, cfg: InversionConfig):
    bundles = _forward_bundles(mp_vals, grid, survey, cfg, with_ops=True)
    mis = _misfit(bundles, survey)
    rval, rgrad, _ = regularization(ScalarField(grid, mp_vals), cfg.mprime_ref)
    n = grid.n_nodes
    g_m = np.zeros(n)
    for i, b in enumerate(bundles):
        res = b.pred - survey.d_obs[i]
        y = _scatter(n, survey.receivers, res) * b.tau0
        g_m += b.op.solve_upper_transpose(y)
    bd = cfg.bounds.deriv(mp_vals)
    grad = bd * g_m + cfg.alpha * rgrad.values
    phi = mis + cfg.alpha * rval
    return phi, grad, mis, bundles


def _phi_only(mp_vals, grid, survey, cfg: InversionConfig):
    bundles = _forward_bundles(mp_vals, grid, survey, cfg, with_ops=False)
    mis = _misfit(bundles, survey)
    rval, _, _ = regularization(ScalarField(grid, mp_vals), cfg.mprime_ref)
    return mis + cfg.alpha * rval, mis, rval

def gn_hessian_apply(bundles, survey, cfg: InversionConfig,
                     grid: RegularGrid, bd: np.ndarray):
    """H v for the Gauss-Newton model Hessian at the linearization point,
    with the bound-map chain rule folded into J on both sides."""
    n = grid.n_nodes

    def apply(v: np.ndarray) -> np.ndarray:
        out = cfg.alpha * neg_laplacian_apply(grid, v)
        u = bd * v
        for b in bundles:
            t = b.op.solve_lower(u)
            smp = (b.tau0 * t)[survey.receivers]
            z = _scatter(n, survey.receivers, smp) * b.tau0
            out += bd * b.op.solve_upper_transpose(z)
        return out

    return apply


def _cg(apply_h, b, steps: int) -> np.ndarray:
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    if rs == 0.0:
        return x
    for _ in range(steps):
        hp = apply_h(p)
        php = float(p @ hp)
        if php <= 0.0:
            break
        a = rs / php
        x += a * p
        r -= a * hp
        rs_new = float(r @ r)
        if rs_new == 0.0:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def gauss_newton(survey: Survey, cfg: InversionConfig,
                 mprime_init: ScalarField | None = None) -> InversionResult:
    """Bounded Gauss-Newton with fixed inner CG steps and Armijo
    backtracking; accepted steps never increase the objective.  If the
    line search cannot decrease it, iteration stops early at the best
    iterate (flagged in the last history row)."""
    grid = survey.grid
    mp = (mprime_init.values if mprime_init is not None
          else cfg.mprime_ref.values).copy()
    if mprime_init is not None and mprime_init.grid != grid:
        raise GridError("initial model lives on a different grid")

    history: list[dict] = []
    stopped = False
    phi, grad, mis, bundles = _objective_full(mp, grid, survey, cfg)
    rval = (phi - mis) / cfg.alpha if cfg.alpha > 0 else 0.0
    history.append(dict(iteration=0, misfit=mis, reg=rval, mu=0.0, phi=phi,
                        line_search_failed=False))

    for it in range(1, cfg.n_gn + 1):
        bd = cfg.bounds.deriv(mp)
        h_apply = gn_hessian_apply(bundles, survey, cfg, grid, bd)
        step = _cg(h_apply, -grad, cfg.n_cg)
        slope = float(grad @ step)
        if slope > 0.0:  # CG returned an ascent direction; fall back
            step = -grad
            slope = float(grad @ step)
        mu = 1.0
        accepted = False
        for _ in range(cfg.ls_max + 1):
            cand = mp + mu * step
            phi_c, mis_c, rval_c = _phi_only(cand, grid, survey, cfg)
            if phi_c <= phi + cfg.armijo_c * mu * slope:
                accepted = True
                break
            mu *= cfg.ls_shrink
        if not accepted:
            stopped = True
            history.append(dict(iteration=it, misfit=mis, reg=rval, mu=0.0,
                                phi=phi, line_search_failed=True))
            break
        mp = cand
        phi, grad, mis, bundles = _objective_full(mp, grid, survey, cfg)
        rval = (phi - mis) / cfg.alpha if cfg.alpha > 0 else 0.0
        history.append(dict(iteration=it, misfit=mis, reg=rval, mu=mu,
                            phi=phi, line_search_failed=False))

    mp_field = ScalarField(grid, mp)
    return InversionResult(
        m_final=ScalarField(grid, cfg.bounds.apply(mp)),
        mprime_final=mp_field,
        history=tuple(history),
        stopped_early=stopped,
    )


# ---------------------------------------------------------------------------
# desk-scale synthetic problem
# ---------------------------------------------------------------------------

def two_layer_model(grid: RegularGrid, v_top: float = 1.5,
                    v_bottom: float = 3.25, interface_frac: float = 0.45,
                    smooth_passes: int = 6) -> ScalarField:
    """Squared slowness of a smoothed two-layer medium whose velocity
    increases with depth (the last grid axis)."""
    depth_axis = grid.dim - 1
    nz = grid.counts[depth_axis]
    z = np.arange(nz, dtype=float) / (nz - 1)
    v = np.where(z < interface_frac, v_top, v_bottom)
    for _ in range(smooth_passes):
        v = np.convolve(np.pad(v, 1, mode="edge"), [0.25, 0.5, 0.25],
                        mode="valid")
    shape = [1] * grid.dim
    shape[depth_axis] = nz
    vol = np.broadcast_to(v.reshape(shape), grid.counts)
    return ScalarField.from_grid_array(grid, 1.0 / vol ** 2)


def gradient_model(grid: RegularGrid, v_top: float = 1.6,
                   v_bottom: float = 3.4) -> ScalarField:
    """Squared slowness of a linear velocity gradient with depth."""
    depth_axis = grid.dim - 1
    nz = grid.counts[depth_axis]
    z = np.arange(nz, dtype=float) / (nz - 1)
    v = v_top + (v_bottom - v_top) * z
    shape = [1] * grid.dim
    shape[depth_axis] = nz
    vol = np.broadcast_to(v.reshape(shape), grid.counts)
    return ScalarField.from_grid_array(grid, 1.0 / vol ** 2)


def surface_geometry(grid: RegularGrid, source_every: int = 5) -> SurveyGeometry:
    """Sources every ``source_every`` nodes and receivers at every node of
    the surface row (depth index 0 along the last axis)."""
    n0 = grid.counts[0]
    if grid.dim == 2:
        sources = tuple(SourceSpec((i, 0)) for i in range(0, n0, source_every))
        receivers = np.array([grid.linearize((i, 0)) for i in range(n0)],
                             dtype=np.int64)
    else:
        n1 = grid.counts[1]
        sources = tuple(SourceSpec((i, j, 0))
                        for i in range(0, n0, source_every)
                        for j in range(0, n1, source_every))
        receivers = np.array([grid.linearize((i, j, 0))
                              for i in range(n0) for j in range(n1)],
                             dtype=np.int64)
    return SurveyGeometry(sources, receivers)


def make_desk_problem(seed: int = 7, noise_rel: float = 0.01,
                      alpha: float = 0.5, n_gn: int = 10, n_cg: int = 8,
                      fm_order: int = 1):
    """The 64x32 two-layer benchmark: 13 surface sources, 64 surface
    receivers.  Returns (m_true, survey, config, noise_floor_misfit)."""
    grid = RegularGrid((64, 32), 0.3)
    m_true = two_layer_model(grid)
    geom = surface_geometry(grid, source_every=5)
    fm_cfg = FmConfig(order=fm_order, mode="factored")
    survey = synthesize_survey(m_true, geom, fm_cfg, noise_rel=noise_rel,
                               seed=seed)
    clean = forward_data(m_true, survey, fm_cfg)
    noise_floor = 0.5 * float(np.sum((survey.d_obs - clean) ** 2))
    bounds = BoundMap(1.0 / 4.5 ** 2, 1.0)
    m_ref = gradient_model(grid)
    mprime_ref = ScalarField(grid, bounds.inverse(m_ref.values))
    cfg = InversionConfig(bounds=bounds, mprime_ref=mprime_ref, alpha=alpha,
                          n_gn=n_gn, n_cg=n_cg, fm_order=fm_order)
    return m_true, survey, cfg, noise_floor
