import math

import numpy as np
import pytest

from eikmarch import (FmConfig, GridError, RegularGrid, ScalarField,
                      SourceSpec, build_distance_factor, default_params,
                      eval_case, fm_solve, linf_error, mean_l2_error)
from oracles import fast_sweep_first_order, smooth_random_kappa


def solve_analytic(kind, dim, h, order, mode="factored", enforce=False):
    case = default_params(kind, dim)
    grid = case.grid_for(h)
    src = case.source_spec(grid)
    m, tau_exact, tau1_exact = eval_case(case, grid)
    dist = build_distance_factor(grid, src) if mode == "factored" else None
    cfg = FmConfig(order=order, mode=mode, enforce_monotonicity=enforce)
    sol = fm_solve(grid, m, src, dist, cfg)
    return sol, dist, m, tau_exact, tau1_exact, grid


class TestHomogeneous:
    @pytest.mark.parametrize("order", [1, 2])
    @pytest.mark.parametrize("counts,src", [((41, 41), (20, 20)),
                                            ((13, 13, 13), (6, 6, 6)),
                                            ((31, 21), (0, 0))])
    def test_factored_exact_on_constant_kappa(self, order, counts, src):
        grid = RegularGrid(counts, 0.05)
        m = ScalarField.full(grid, 2.25)  # kappa = 1.5
        spec = SourceSpec(src)
        dist = build_distance_factor(grid, spec)
        sol = fm_solve(grid, m, spec, dist, FmConfig(order=order))
        assert np.max(np.abs(sol.tau1.values - 1.5)) <= 1e-10


class TestPlainHandCase:
    def test_3x3_center_source(self):
        grid = RegularGrid((3, 3), 1.0)
        m = ScalarField.full(grid, 1.0)
        sol = fm_solve(grid, m, SourceSpec((1, 1)), None,
                       FmConfig(order=1, mode="plain"))
        tau = sol.tau1.as_grid_array()
        corner = 1.0 + 1.0 / math.sqrt(2)
        assert tau[1, 1] == 0.0
        for idx in ((0, 1), (1, 0), (1, 2), (2, 1)):
            assert tau[idx] == pytest.approx(1.0, abs=1e-14)
        for idx in ((0, 0), (0, 2), (2, 0), (2, 2)):
            assert tau[idx] == pytest.approx(corner, abs=1e-14)


class TestPaperErrors:
    def test_cgss_2d_first_and_second_order(self):
        sol, dist, _, tau_exact, _, _ = solve_analytic("cgss", 2, 1 / 40, 1)
        tau = sol.travel_time(dist)
        assert linf_error(tau, tau_exact) == pytest.approx(3.71e-3, rel=0.15)
        assert mean_l2_error(tau, tau_exact) == pytest.approx(9.42e-4, rel=0.15)
        sol, dist, _, tau_exact, _, _ = solve_analytic("cgss", 2, 1 / 40, 2)
        tau = sol.travel_time(dist)
        assert linf_error(tau, tau_exact) == pytest.approx(9.33e-5, rel=0.15)
        assert mean_l2_error(tau, tau_exact) == pytest.approx(9.26e-6, rel=0.15)


class TestSweepingOracle:
    def test_2d_random_grids(self, rng):
        for _ in range(10):
            n0, n1 = (int(rng.integers(3, 18)) for _ in range(2))
            h = float(rng.uniform(0.05, 0.5))
            kappa = smooth_random_kappa((n0, n1), rng)
            src = tuple(int(rng.integers(0, n)) for n in (n0, n1))
            grid = RegularGrid((n0, n1), h)
            m = ScalarField.from_grid_array(grid, kappa ** 2)
            sol = fm_solve(grid, m, SourceSpec(src), None,
                           FmConfig(order=1, mode="plain"))
            ref = fast_sweep_first_order((n0, n1), h, kappa, src)
            assert np.max(np.abs(sol.tau1.as_grid_array() - ref)) <= 1e-12

    def test_3d_random_grids(self, rng):
        for _ in range(3):
            dims = tuple(int(rng.integers(3, 10)) for _ in range(3))
            h = float(rng.uniform(0.05, 0.5))
            kappa = smooth_random_kappa(dims, rng)
            src = tuple(int(rng.integers(0, n)) for n in dims)
            grid = RegularGrid(dims, h)
            m = ScalarField.from_grid_array(grid, kappa ** 2)
            sol = fm_solve(grid, m, SourceSpec(src), None,
                           FmConfig(order=1, mode="plain"))
            ref = fast_sweep_first_order(dims, h, kappa, src)
            assert np.max(np.abs(sol.tau1.as_grid_array() - ref)) <= 1e-12


class TestAcceptanceOrder:
    def test_permutation_source_first(self):
        sol, _, _, _, _, grid = solve_analytic("cgss", 2, 0.25, 2)
        order = sol.acceptance_order
        assert sorted(order.tolist()) == list(range(grid.n_nodes))
        assert order[0] == sol.source.linear(grid)

    @pytest.mark.parametrize("kind", ["cgss", "cgv", "gauss"])
    def test_plain_first_order_monotone(self, kind):
        sol, _, _, _, _, _ = solve_analytic(kind, 2, 0.05, 1, mode="plain")
        seq = sol.tau1.values[sol.acceptance_order]
        assert np.all(np.diff(seq) >= 0.0)

    def test_plain_monotone_on_random_media(self, rng):
        for _ in range(8):
            dims = tuple(int(rng.integers(4, 15)) for _ in range(2))
            kappa = smooth_random_kappa(dims, rng)
            grid = RegularGrid(dims, float(rng.uniform(0.05, 0.4)))
            m = ScalarField.from_grid_array(grid, kappa ** 2)
            src = SourceSpec(tuple(int(rng.integers(0, n)) for n in dims))
            sol = fm_solve(grid, m, src, None, FmConfig(order=1, mode="plain"))
            assert np.all(np.diff(sol.tau1.values[sol.acceptance_order]) >= 0.0)

    @pytest.mark.parametrize("kind", ["cgv", "gauss"])
    @pytest.mark.parametrize("order", [1, 2])
    def test_factored_monotone_with_enforcement(self, kind, order):
        sol, dist, _, _, _, _ = solve_analytic(kind, 2, 0.05, order,
                                               enforce=True)
        prod = (dist.tau0.values * sol.tau1.values)[sol.acceptance_order]
        assert np.all(np.diff(prod) >= 0.0)


class TestDeterminism:
    def test_bit_identical_runs(self):
        a, dist, *_ = solve_analytic("gauss", 2, 0.1, 2)
        b, _, *_ = solve_analytic("gauss", 2, 0.1, 2)
        assert np.array_equal(a.tau1.values, b.tau1.values)
        assert np.array_equal(a.acceptance_order, b.acceptance_order)
        assert np.array_equal(a.rec_dir, b.rec_dir)
        assert np.array_equal(a.rec_ord, b.rec_ord)
        assert np.array_equal(a.rec_plain, b.rec_plain)


class TestStencilRecords:
    def _product(self, sol, dist):
        if sol.config.mode == "plain":
            return sol.tau1.values
        return dist.tau0.values * sol.tau1.values

    @pytest.mark.parametrize("mode", ["factored", "plain"])
    def test_second_order_gate(self, mode):
        sol, dist, *_ , grid = solve_analytic("cgv", 2, 0.1, 2, mode=mode)
        prod = self._product(sol, dist)
        pos = np.empty(grid.n_nodes, np.int64)
        pos[sol.acceptance_order] = np.arange(grid.n_nodes)
        strides = grid.strides
        checked = 0
        for k in range(grid.n_nodes):
            for a in range(grid.dim):
                if sol.rec_ord[k, a] != 2:
                    continue
                step = -strides[a] if sol.rec_dir[k, a] == 1 else strides[a]
                nb1, nb2 = k + step, k + 2 * step
                assert pos[nb1] < pos[k] and pos[nb2] < pos[k]
                if sol.rec_dir[k, a] == 1:
                    assert prod[nb1] >= prod[nb2]
                else:
                    assert prod[nb1] > prod[nb2]
                checked += 1
        assert checked > 0

    def test_validity_of_retained_terms(self):
        from eikmarch.fastmarch import assemble_terms
        sol, dist, m, _, _, grid = solve_analytic("gauss", 2, 0.1, 2)
        rng = np.random.default_rng(0)
        names = {1: "backward", 2: "forward"}
        for k in rng.choice(grid.n_nodes, 200, replace=False):
            if k == sol.source.linear(grid):
                continue
            dirs = [names.get(int(d)) for d in sol.rec_dir[k]]
            orders = [max(int(o), 1) for o in sol.rec_ord[k]]
            terms = assemble_terms(grid.delinearize(k), dirs, orders,
                                   sol.tau1.values, dist, grid,
                                   plain_fallback=sol.rec_plain[k].tolist())
            slack = 1e-14 * (dist.tau0.values[k] / grid.spacing + 1.0)
            for t in terms:
                assert t.alpha * (sol.tau1.values[k] - t.beta) > -slack


class TestInputValidation:
    def test_nonpositive_slowness(self):
        grid = RegularGrid((5, 5), 1.0)
        vals = np.ones(25)
        vals[7] = 0.0
        with pytest.raises(GridError, match="non-positive"):
            fm_solve(grid, ScalarField(grid, vals), SourceSpec((2, 2)),
                     build_distance_factor(grid, SourceSpec((2, 2))),
                     FmConfig())

    def test_factored_needs_distance(self):
        grid = RegularGrid((5, 5), 1.0)
        with pytest.raises(GridError):
            fm_solve(grid, ScalarField.full(grid, 1.0), SourceSpec((2, 2)),
                     None, FmConfig())

    def test_off_grid_source(self):
        grid = RegularGrid((5, 5), 1.0)
        with pytest.raises(GridError):
            fm_solve(grid, ScalarField.full(grid, 1.0), SourceSpec((9, 2)),
                     None, FmConfig(mode="plain"))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            FmConfig(order=3)
        with pytest.raises(ValueError):
            FmConfig(mode="magic")


class TestConcurrency:
    def test_shared_inputs_across_threads(self):
        from concurrent.futures import ThreadPoolExecutor
        case = default_params("cgss", 2)
        grid = case.grid_for(0.1)
        src = case.source_spec(grid)
        m, _, _ = eval_case(case, grid)
        dist = build_distance_factor(grid, src)
        cfg = FmConfig(order=2)

        def run(_):
            return fm_solve(grid, m, src, dist, cfg).tau1.values

        with ThreadPoolExecutor(max_workers=4) as ex:
            results = list(ex.map(run, range(4)))
        for r in results[1:]:
            assert np.array_equal(results[0], r)


class TestStencilAccessor:
    def test_readable_view(self):
        grid = RegularGrid((3, 3), 1.0)
        m = ScalarField.full(grid, 1.0)
        src = SourceSpec((1, 1))
        dist = build_distance_factor(grid, src)
        sol = fm_solve(grid, m, src, dist, FmConfig(order=1))
        rec = sol.stencil(grid.linearize((0, 1)))
        assert rec[0].direction == "forward"  # toward the center source
        assert rec[0].approx_order == 1
        assert rec[0].used_plain_fallback is False
        assert rec[1].direction is None
        src_rec = sol.stencil(src.linear(grid))
        assert all(axis.direction is None for axis in src_rec)


class TestEnforcementStress:
    def test_random_media_monotone_and_consistent(self, rng):
        from eikmarch import assemble_operator
        for _ in range(12):
            dims = tuple(int(rng.integers(5, 24)) for _ in range(2))
            grid = RegularGrid(dims, float(rng.uniform(0.02, 0.3)))
            kappa = smooth_random_kappa(dims, rng, 0.4, 2.5)
            m = ScalarField.from_grid_array(grid, kappa ** 2)
            src = SourceSpec(tuple(int(rng.integers(0, n)) for n in dims))
            dist = build_distance_factor(grid, src)
            for order in (1, 2):
                sol = fm_solve(grid, m, src, dist,
                               FmConfig(order=order,
                                        enforce_monotonicity=True))
                prod = (dist.tau0.values * sol.tau1.values)
                assert np.all(np.diff(prod[sol.acceptance_order]) >= 0.0)
                S = assemble_operator(sol, dist)
                resid = np.abs(S.apply_A(sol.tau1.values) - 2 * m.values)
                assert np.max(resid / (2 * m.values)) <= 1e-10
