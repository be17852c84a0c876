import numpy as np
import pytest

from chcontrol import (ControlSchedule, Field, Grid, ModelParams, Numerics,
                       QuadraticProliferation, dot_product_test, fit_loglog_slope,
                       frechet_remainder_sweep, inner_product, norm_h, preset_field,
                       simulate, solve_adjoint, solve_linearized, step)
from chcontrol.sensitivity import adjoint_step, linearized_step
from helpers import smooth_field, smooth_schedule


def tight_params(**kw):
    defaults = dict(beta_u=1.0, t_final=0.04, tau=5e-3,
                    numerics=Numerics(cg_tol=1e-13))
    defaults.update(kw)
    return ModelParams(**defaults)


def coupled_instance(grid):
    """Strong nutrient feedback so second-order signals dominate solver noise."""
    phi0 = preset_field("tanh_ball", grid, center=2.0, radius=1.0, width=0.4)
    sigma0 = Field.full(grid, 0.5)
    target = preset_field("tanh_ball", grid, center=2.0, radius=0.7, width=0.4)
    params = ModelParams(proliferation=QuadraticProliferation(p0=2.0),
                         beta_q=1.0, beta_omega=0.5, beta_u=0.1,
                         t_final=0.2, tau=5e-3, phi_q=target, phi_omega=target,
                         phi0=phi0, sigma0=sigma0, numerics=Numerics(cg_tol=1e-13))
    u = ControlSchedule.constant(grid, params.n_steps, 0.0, u_min=-2.0, u_max=2.0)
    h = smooth_schedule(grid, params.n_steps, seed=7, amplitude=2.0)
    return params, u, h


class TestLinearizedStep:
    def test_zero_direction_maps_to_zero(self):
        g = Grid.line(16, 4.0)
        params = tight_params()
        phi_b, sigma_b = smooth_field(g, 1, 0.8), smooth_field(g, 2, 0.5)
        zero = Field.zeros(g)
        xi1, rho1 = linearized_step(params, phi_b, sigma_b, zero, zero, zero)
        assert np.all(xi1.values == 0.0) and np.all(rho1.values == 0.0)

    def test_doubling_is_exact(self):
        g = Grid.line(16, 4.0)
        params = tight_params()
        phi_b, sigma_b = smooth_field(g, 1, 0.8), smooth_field(g, 2, 0.5)
        xi, rho, h = smooth_field(g, 3, 1.0), smooth_field(g, 4, 1.0), smooth_field(g, 5, 1.0)
        a1, b1 = linearized_step(params, phi_b, sigma_b, xi, rho, h)
        a2, b2 = linearized_step(params, phi_b, sigma_b, 2.0 * xi, 2.0 * rho, 2.0 * h)
        assert np.array_equal(a2.values, 2.0 * a1.values)
        assert np.array_equal(b2.values, 2.0 * b1.values)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_central_difference_of_step(self, seed):
        g = Grid.line(16, 4.0)
        params = tight_params()
        phi_b = smooth_field(g, seed * 31 + 1, 0.8)
        sigma_b = smooth_field(g, seed * 31 + 2, 0.5)
        xi = smooth_field(g, seed * 31 + 3, 1.0)
        rho = smooth_field(g, seed * 31 + 4, 1.0)
        h = smooth_field(g, seed * 31 + 5, 1.0)
        eps = 1e-5
        plus = step(params, phi_b + eps * xi, sigma_b + eps * rho, eps * h)
        minus = step(params, phi_b + (-eps) * xi, sigma_b + (-eps) * rho, (-eps) * h)
        lin = linearized_step(params, phi_b, sigma_b, xi, rho, h)
        for fd_pair, exact in zip(zip(plus, minus), lin):
            fd = (fd_pair[0].values - fd_pair[1].values) / (2 * eps)
            rel = np.linalg.norm(fd - exact.values) / np.linalg.norm(exact.values)
            assert rel <= 1e-5


class TestSolveLinearized:
    def test_zero_direction(self):
        g = Grid.line(16, 4.0)
        params = tight_params()
        u = smooth_schedule(g, params.n_steps, seed=3, amplitude=0.5)
        base = simulate(params, u, phi0=smooth_field(g, 1, 0.8), sigma0=smooth_field(g, 2, 0.5))
        lin = solve_linearized(params, base, ControlSchedule.constant(g, params.n_steps, 0.0))
        for n in range(lin.n_steps + 1):
            assert np.all(lin.xi[n].values == 0.0)
            assert np.all(lin.rho[n].values == 0.0)

    def test_linearity_in_direction(self):
        g = Grid.line(16, 4.0)
        params = tight_params()
        u = smooth_schedule(g, params.n_steps, seed=3, amplitude=0.5)
        base = simulate(params, u, phi0=smooth_field(g, 1, 0.8), sigma0=smooth_field(g, 2, 0.5))
        h1 = smooth_schedule(g, params.n_steps, seed=5, amplitude=1.0)
        h2 = smooth_schedule(g, params.n_steps, seed=6, amplitude=1.0)
        alpha = 1.7
        combo = solve_linearized(params, base, h1.scaled(alpha) + h2)
        a = solve_linearized(params, base, h1)
        b = solve_linearized(params, base, h2)
        for n in range(combo.n_steps + 1):
            expected = alpha * a.xi[n].values + b.xi[n].values
            scale = max(np.max(np.abs(expected)), 1e-30)
            assert np.max(np.abs(combo.xi[n].values - expected)) <= 1e-12 * scale

    def test_remainder_is_second_order(self):
        g = Grid.line(16, 4.0)
        params, u, h = coupled_instance(g)
        rows = frechet_remainder_sweep(params, u, h)
        slope = fit_loglog_slope(rows)
        assert 1.9 <= slope <= 2.1

    def test_derived_potential_direction(self):
        from chcontrol import f_deriv, neumann_laplacian

        g = Grid.line(16, 4.0)
        params, u, h = coupled_instance(g)
        base = simulate(params, u)
        lin = solve_linearized(params, base, h)
        n = 3
        xi = lin.xi[n]
        expected = -neumann_laplacian(xi).values \
            + f_deriv(params.potential, 2, base.phi[n].values) * xi.values
        assert np.allclose(lin.eta(n).values, expected, rtol=0, atol=1e-14)


class TestAdjointStep:
    def test_zero_costate_zero_source(self):
        g = Grid.line(16, 4.0)
        params = tight_params()
        phi_b, sigma_b = smooth_field(g, 1, 0.8), smooth_field(g, 2, 0.5)
        zero = Field.zeros(g)
        p, r, lift = adjoint_step(params, phi_b, sigma_b, zero, zero)
        assert np.all(p.values == 0.0) and np.all(r.values == 0.0)
        assert np.all(lift.values == 0.0)

    def test_single_step_transpose_identity(self):
        g = Grid.line(16, 4.0)
        params = tight_params()
        phi_b, sigma_b = smooth_field(g, 1, 0.8), smooth_field(g, 2, 0.5)
        xi, rho, h = smooth_field(g, 3, 1.0), smooth_field(g, 4, 1.0), smooth_field(g, 5, 1.0)
        p_in, r_in = smooth_field(g, 6, 1.0), smooth_field(g, 7, 1.0)
        xi1, rho1 = linearized_step(params, phi_b, sigma_b, xi, rho, h)
        p0, r0, lift = adjoint_step(params, phi_b, sigma_b, p_in, r_in)
        lhs = inner_product(xi1, p_in) + inner_product(rho1, r_in)
        rhs = inner_product(xi, p0) + inner_product(rho, r0) \
            + params.tau * inner_product(h, lift)
        assert abs(lhs - rhs) <= 1e-11 * max(abs(lhs), abs(rhs))

    def test_matches_dense_transpose(self):
        g = Grid.line(8, 4.0)
        params = tight_params()
        phi_b, sigma_b = smooth_field(g, 1, 0.8), smooth_field(g, 2, 0.5)
        n = g.n_cells
        jac = np.zeros((2 * n, 3 * n))
        for j in range(3 * n):
            e = np.zeros(3 * n)
            e[j] = 1.0
            a, b = linearized_step(params, phi_b, sigma_b, Field(g, e[:n]),
                                   Field(g, e[n:2 * n]), Field(g, e[2 * n:]))
            jac[:, j] = np.concatenate([a.values.ravel(), b.values.ravel()])
        jac_t = np.zeros((3 * n, 2 * n))
        for j in range(2 * n):
            e = np.zeros(2 * n)
            e[j] = 1.0
            p0, r0, lift = adjoint_step(params, phi_b, sigma_b, Field(g, e[:n]),
                                        Field(g, e[n:]))
            jac_t[:, j] = np.concatenate([p0.values.ravel(), r0.values.ravel(),
                                          params.tau * lift.values.ravel()])
        gap = np.max(np.abs(jac.T - jac_t)) / max(1.0, np.max(np.abs(jac)))
        assert gap <= 1e-9


class TestSolveAdjoint:
    def test_zero_weights_give_zero_adjoint(self):
        g = Grid.line(16, 4.0)
        params = tight_params(beta_q=0.0, beta_omega=0.0, beta_u=1.0)
        u = smooth_schedule(g, params.n_steps, seed=3, amplitude=0.5)
        base = simulate(params, u, phi0=smooth_field(g, 1, 0.8), sigma0=smooth_field(g, 2, 0.5))
        adj = solve_adjoint(params, base)
        for n in range(adj.n_steps + 1):
            assert np.all(adj.p[n].values == 0.0)
            assert np.all(adj.r[n].values == 0.0)

    def test_terminal_conditions(self):
        g = Grid.line(16, 4.0)
        target = smooth_field(g, 9, 0.3)
        params = tight_params(beta_q=0.0, beta_omega=2.0, beta_u=1.0, phi_omega=target)
        u = smooth_schedule(g, params.n_steps, seed=3, amplitude=0.5)
        base = simulate(params, u, phi0=smooth_field(g, 1, 0.8), sigma0=smooth_field(g, 2, 0.5))
        adj = solve_adjoint(params, base)
        n_final = adj.n_steps
        expected = 2.0 * (base.phi[n_final].values - target.values)
        assert np.array_equal(adj.p[n_final].values, expected)
        assert np.all(adj.r[n_final].values == 0.0)

    def test_matched_terminal_state_gives_zero_adjoint(self):
        g = Grid.line(16, 4.0)
        params = tight_params(beta_q=0.0, beta_omega=1.0, beta_u=1.0)
        u = ControlSchedule.constant(g, params.n_steps, 0.0)
        base = simulate(params, u, phi0=Field.full(g, 1.0), sigma0=Field.zeros(g))
        params.phi_omega = base.phi[base.n_steps]
        adj = solve_adjoint(params, base)
        for n in range(adj.n_steps + 1):
            assert np.max(np.abs(adj.p[n].values)) <= 1e-12
            assert np.max(np.abs(adj.r[n].values)) <= 1e-12

    def test_backward_norms_bounded(self):
        g = Grid.line(16, 4.0)
        params, u, _ = coupled_instance(g)
        base = simulate(params, u)
        adj = solve_adjoint(params, base)
        norms = [norm_h(adj.p[n]) + norm_h(adj.r[n]) for n in range(adj.n_steps + 1)]
        assert max(norms) <= 100.0 * (norms[-1] + 1.0)

    def test_derived_costate_field(self):
        from chcontrol import neumann_laplacian, p_deriv

        g = Grid.line(16, 4.0)
        params, u, _ = coupled_instance(g)
        base = simulate(params, u)
        adj = solve_adjoint(params, base)
        n = 2
        expected = neumann_laplacian(adj.p[n]).values \
            - p_deriv(params.proliferation, 0, base.phi[n].values) \
            * (adj.p[n].values - adj.r[n].values)
        assert np.allclose(adj.q(n).values, expected, rtol=0, atol=1e-14)


class TestReducedGradient:
    def test_zero_adjoint_gives_weighted_control(self):
        from chcontrol import reduced_gradient

        g = Grid.line(16, 4.0)
        params = tight_params(beta_q=0.0, beta_omega=0.0, beta_u=1.0)
        u = smooth_schedule(g, params.n_steps, seed=3, amplitude=0.5)
        base = simulate(params, u, phi0=smooth_field(g, 1, 0.8),
                        sigma0=smooth_field(g, 2, 0.5))
        grad = reduced_gradient(params, u, solve_adjoint(params, base))
        for n in range(len(u)):
            assert np.array_equal(grad[n].values, u[n].values)

    def test_zero_control_weight_gives_lift_alone(self):
        from chcontrol import reduced_gradient

        g = Grid.line(16, 4.0)
        params = tight_params(beta_q=1.0, beta_omega=0.0, beta_u=0.0,
                              phi_q=Field.zeros(g))
        u = smooth_schedule(g, params.n_steps, seed=3, amplitude=0.5)
        base = simulate(params, u, phi0=smooth_field(g, 1, 0.8),
                        sigma0=smooth_field(g, 2, 0.5))
        adj = solve_adjoint(params, base)
        grad = reduced_gradient(params, u, adj)
        for n in range(len(u)):
            assert np.array_equal(grad[n].values, adj.r_lift[n].values)

    def test_length_mismatch(self):
        from chcontrol import reduced_gradient

        g = Grid.line(16, 4.0)
        params = tight_params()
        u = smooth_schedule(g, params.n_steps, seed=3, amplitude=0.5)
        base = simulate(params, u, phi0=smooth_field(g, 1, 0.8),
                        sigma0=smooth_field(g, 2, 0.5))
        adj = solve_adjoint(params, base)
        short = smooth_schedule(g, params.n_steps - 1, seed=4, amplitude=0.5)
        with pytest.raises(ValueError):
            reduced_gradient(params, short, adj)


class TestDotProductTest:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_discrepancy_within_bound(self, seed):
        g = Grid.line(16, 4.0)
        params = tight_params()
        assert dot_product_test(params, g, 8, seed) <= 1e-10

    def test_two_dimensional_instance(self):
        g = Grid.box(8, 6, 4.0, 3.0)
        params = tight_params()
        assert dot_product_test(params, g, 4, 0) <= 1e-10

    def test_tightening_cg_does_not_degrade(self):
        g = Grid.line(16, 4.0)
        loose = dot_product_test(tight_params(numerics=Numerics(cg_tol=1e-12)), g, 8, 0)
        tight = dot_product_test(tight_params(numerics=Numerics(cg_tol=1e-14)), g, 8, 0)
        assert loose <= 1e-10 and tight <= 1e-10
        assert tight <= 2.0 * loose + 1e-12
