"""Gradient machinery, verified three independent ways.

1. Transpose identities: the backward sweep is the exact transpose of the
   forward linearization, so paired inner products must match to solver
   precision (single step and full horizon).
2. State Taylor remainder: the linearized trajectory is the derivative of
   the control-to-state map, so the remainder shrinks at second order.
3. Cost Taylor remainder and a centered directional derivative: the
   adjoint-assembled gradient matches finite differences of the reduced
   cost.
"""

from chcontrol import (ControlSchedule, Field, Grid, ModelParams, Numerics,
                       QuadraticProliferation, cost_taylor_sweep,
                       directional_derivative_check, dot_product_test,
                       fit_loglog_slope, frechet_remainder_sweep, preset_field)

grid = Grid.line(16, 4.0)
target = preset_field("tanh_ball", grid, center=2.0, radius=0.7, width=0.4)
params = ModelParams(
    proliferation=QuadraticProliferation(p0=2.0),
    beta_q=1.0, beta_omega=0.5, beta_u=0.1,
    t_final=0.2, tau=5e-3,
    phi_q=target, phi_omega=target,
    phi0=preset_field("tanh_ball", grid, center=2.0, radius=1.0, width=0.4),
    sigma0=Field.full(grid, 0.5),
    numerics=Numerics(cg_tol=1e-13))

print("1) transpose identities (worst relative defect per seed)")
for seed in (0, 1, 2):
    gap = dot_product_test(params, grid, 8, seed)
    print(f"   seed {seed}: {gap:.3e}")

u = ControlSchedule.constant(grid, params.n_steps, 0.0, u_min=-2.0, u_max=2.0)
h = ControlSchedule(grid, [preset_field("filtered_noise", grid, seed=7063 + n,
                                        amplitude=2.0)
                           for n in range(params.n_steps)])

print("\n2) state Taylor remainder |phi(u+eps*h) - phi(u) - eps*xi|")
rows = frechet_remainder_sweep(params, u, h)
for eps, rem in rows:
    print(f"   eps={eps:<8g} remainder={rem:.3e}")
print(f"   fitted slope: {fit_loglog_slope(rows):.4f} (expected 2)")

print("\n3) cost Taylor remainder |J(u+eps*h) - J(u) - eps*<g,h>|")
rows, slope, pairing = cost_taylor_sweep(params, u, h)
for eps, rem in rows:
    print(f"   eps={eps:<8g} remainder={rem:.3e}")
print(f"   fitted slope: {slope:.4f} (expected 2), <g,h> = {pairing:.6e}")
rel = directional_derivative_check(params, u, h, eps=1e-3)
print(f"   centered difference vs <g,h>: relative error {rel:.3e}")
