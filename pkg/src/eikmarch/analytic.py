"""Analytic media with closed-form first-arrival solutions.

Three heterogeneous cases are provided for verification: constant
gradient of squared slowness ('cgss'), constant gradient of velocity
('cgv'), and a Gaussian smooth factor ('gauss'), plus a homogeneous
'const' medium.  Each case evaluates the squared slowness m, the exact
travel time, and the exact smooth factor tau1 on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridError, RegularGrid, ScalarField, SourceSpec

KIND_CGSS = "cgss"
KIND_CGV = "cgv"
KIND_GAUSS = "gauss"
KIND_CONST = "const"

_KINDS = (KIND_CGSS, KIND_CGV, KIND_GAUSS, KIND_CONST)

# 2D cases share one rectangle; 3D cases another
_DOMAIN_2D = ((0.0, 4.0), (0.0, 8.0))
_DOMAIN_3D = ((0.0, 0.8), (0.0, 1.6), (0.0, 1.6))


@dataclass(frozen=True)
class AnalyticCase:
    """Case parameters in physical coordinates.

    The gradient direction of the cgss/cgv media is the unit vector along
    the first axis.  ``source`` must land exactly on a node of any grid
    the case is evaluated on; the Gaussian center is floored to the
    closest grid node per evaluation.
    """

    kind: str
    domain: tuple[tuple[float, float], ...]
    source: tuple[float, ...]
    a: float = 0.0
    s0: float = 1.0
    sigma: tuple[float, ...] = ()
    center: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown case kind {self.kind!r}")
        if self.kind == KIND_GAUSS:
            if len(self.sigma) != self.dim or len(self.center) != self.dim:
                raise ValueError("gauss case needs sigma and center per axis")
            if any(s <= 0 for s in self.sigma):
                raise ValueError("gauss sigma entries must be positive")
        elif self.kind in (KIND_CGSS, KIND_CGV) and self.s0 <= 0:
            raise ValueError("s0 must be positive")

    @property
    def dim(self) -> int:
        return len(self.domain)

    def grid_for(self, h: float) -> RegularGrid:
        """Grid tiling the case domain at spacing h (h must divide every
        extent)."""
        counts = []
        for lo, hi in self.domain:
            steps = (hi - lo) / h
            if abs(steps - round(steps)) > 1e-9:
                raise GridError(f"h={h} does not tile extent {hi - lo}")
            counts.append(int(round(steps)) + 1)
        return RegularGrid(tuple(counts), h, tuple(lo for lo, _ in self.domain))

    def source_spec(self, grid: RegularGrid) -> SourceSpec:
        idx = []
        for a in range(self.dim):
            steps = (self.source[a] - grid.origin[a]) / grid.spacing
            if abs(steps - round(steps)) > 1e-9:
                raise GridError(f"source {self.source} is not a node of the grid")
            idx.append(int(round(steps)))
        return SourceSpec(tuple(idx))


def default_params(kind: str, dim: int) -> AnalyticCase:
    """The benchmark parameterization of each case in 2 or 3 dimensions."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    domain = _DOMAIN_2D if dim == 2 else _DOMAIN_3D
    src2, src3 = (0.0, 4.0), (0.0, 0.8, 0.8)
    if kind == KIND_CGSS:
        return AnalyticCase(kind, domain, src2 if dim == 2 else src3,
                            a=-0.4 if dim == 2 else -1.65, s0=2.0)
    if kind == KIND_CGV:
        return AnalyticCase(kind, domain, src2 if dim == 2 else src3,
                            a=1.0, s0=2.0)
    if kind == KIND_GAUSS:
        if dim == 2:
            return AnalyticCase(kind, domain, (1.0, 2.0),
                                sigma=(0.1, 0.4), center=(4.0 / 3.0, 2.0))
        return AnalyticCase(kind, domain, (0.2, 0.4, 0.4),
                            sigma=(0.2, 0.4, 0.1), center=(0.4, 1.6 / 3.0, 0.4))
    if kind == KIND_CONST:
        ctr = (2.0, 4.0) if dim == 2 else (0.4, 0.8, 0.8)
        return AnalyticCase(kind, domain, ctr, s0=1.0)
    raise ValueError(f"unknown case kind {kind!r}")


def _offsets(case: AnalyticCase, grid: RegularGrid):
    """Per-axis coordinate offsets from the source, broadcastable."""
    coords = grid.coords_arrays()
    return [coords[a] - case.source[a] for a in range(case.dim)]


def gauss_center_on_grid(case: AnalyticCase, grid: RegularGrid) -> np.ndarray:
    """Gaussian center floored to the closest grid node below it."""
    out = []
    for a in range(case.dim):
        steps = np.floor((case.center[a] - grid.origin[a]) / grid.spacing + 1e-9)
        out.append(grid.origin[a] + grid.spacing * steps)
    return np.asarray(out)


def gauss_tau1_and_gradient(case: AnalyticCase, grid: RegularGrid):
    """tau1 of the Gaussian case and its hand-derived gradient.

    tau1 = exp(-q)/2 + 1/2 with q = sum_a sigma_a (x_a - c_a)^2, so
    d tau1 / d x_a = -sigma_a (x_a - c_a) exp(-q).
    """
    c = gauss_center_on_grid(case, grid)
    coords = grid.coords_arrays()
    q = np.zeros(grid.counts)
    for a in range(case.dim):
        q = q + case.sigma[a] * (coords[a] - c[a]) ** 2
    eq = np.exp(-q)
    tau1 = 0.5 * eq + 0.5
    grads = [
        np.broadcast_to(-case.sigma[a] * (coords[a] - c[a]), grid.counts) * eq
        for a in range(case.dim)
    ]
    return tau1.reshape(-1), [g.reshape(-1) for g in grads]


def eval_case(case: AnalyticCase, grid: RegularGrid):
    """(m, tau_exact, tau1_exact) fields of the case on the grid.

    Raises GridError if the medium loses positivity anywhere on the grid
    or the closed form leaves its real domain.
    """
    src = case.source_spec(grid)
    k0 = src.linear(grid)
    offs = _offsets(case, grid)
    r2 = sum(d * d for d in offs)
    r = np.sqrt(np.broadcast_to(r2, grid.counts)).reshape(-1)
    x1c = np.broadcast_to(offs[0], grid.counts).reshape(-1)

    if case.kind == KIND_CONST:
        m = np.full(grid.n_nodes, case.s0 ** 2)
        tau = case.s0 * r
        tau1 = np.full(grid.n_nodes, case.s0)
    elif case.kind == KIND_CGSS:
        m = case.s0 ** 2 + 2.0 * case.a * x1c
        if np.min(m) <= 0.0:
            raise GridError("cgss medium loses positivity on this grid")
        sbar2 = case.s0 ** 2 + case.a * x1c
        inner = sbar2 ** 2 - case.a ** 2 * r * r
        if np.min(inner) < 0.0:
            raise GridError("cgss closed form leaves its real domain")
        # stable at a = 0: sigma^2 -> r^2 / sbar^2
        sigma2 = 2.0 * r * r / (sbar2 + np.sqrt(inner))
        sigma = np.sqrt(sigma2)
        tau = sbar2 * sigma - (case.a ** 2 / 6.0) * sigma ** 3
        tau1 = _divide_by_tau0(tau, r, at_source=case.s0, k0=k0)
    elif case.kind == KIND_CGV:
        vden = 1.0 / case.s0 + case.a * x1c
        if np.min(vden) <= 0.0:
            raise GridError("cgv medium loses positivity on this grid")
        kappa = 1.0 / vden
        m = kappa ** 2
        if case.a == 0.0:
            tau = case.s0 * r
        else:
            arg = 1.0 + 0.5 * case.s0 * case.a ** 2 * kappa * r * r
            tau = np.arccosh(arg) / case.a
        tau1 = _divide_by_tau0(tau, r, at_source=case.s0, k0=k0)
    elif case.kind == KIND_GAUSS:
        tau1, grads = gauss_tau1_and_gradient(case, grid)
        # m = |tau0 grad(tau1) + tau1 grad(tau0)|^2 with the exact gradients
        m = np.zeros(grid.n_nodes)
        with np.errstate(invalid="ignore", divide="ignore"):
            for a in range(case.dim):
                u = np.broadcast_to(offs[a], grid.counts).reshape(-1) / r
                comp = r * grads[a] + tau1 * u
                m += comp * comp
        m[k0] = tau1[k0] ** 2
        tau = r * tau1
    else:  # pragma: no cover
        raise ValueError(case.kind)

    if np.min(m) <= 0.0:
        raise GridError("medium loses positivity on this grid")
    return (
        ScalarField(grid, m),
        ScalarField(grid, tau),
        ScalarField(grid, tau1),
    )


def _divide_by_tau0(tau, r, at_source, k0):
    with np.errstate(invalid="ignore", divide="ignore"):
        tau1 = tau / r
    tau1[k0] = at_source
    return tau1
