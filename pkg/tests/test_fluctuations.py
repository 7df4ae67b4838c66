"""Tests for the linear fluctuation solvers.

The quantitative anchor is a scalar Ornstein-Uhlenbeck reduction: with
constant coefficient fields u = north, v = c e1 the noise term of z_eps is
c e2 dW(x), so each spatial cosine mode obeys

    a_{n+1} = (a_n + (c/gamma0) sqrt(M_k) f_k dB_n) / (1 + dt xi_k^2/gamma0)

with f_k the mollifier transform at sqrt(eps) xi_k.  That recursion is pinned
deterministically (exact arithmetic) and in distribution (Monte Carlo variance
against both the discrete geometric sum and the continuum OU variance
sigma^2/(2 gamma0 xi^2) (1 - exp(-2 xi^2 T/gamma0))).

The structural check rho = Lambda(z) holds at the discrete level by linearity
of the shared stepper, so it is asserted near Picard tolerance rather than at
a loose modeling tolerance.
"""

import math

import numpy as np
import pytest

from wavemaplab.families import geodesic_bump, tangent_bump
from wavemaplab.fluctuations import (
    FluctuationInputs,
    LambdaResult,
    apply_theta,
    audit_coupling,
    compute_y_eps,
    coupled_wave_increments,
    heat_kernel,
    solve_lambda,
    solve_rho,
    solve_z_eps,
    solve_z_limit,
    trajectory_norm,
)
from wavemaplab.grid import GridSpec, norm
from wavemaplab.heatflow import HeatRunConfig, run_heatflow
from wavemaplab.noise import (
    NoiseTable,
    apply_Q_eps,
    cell_masses,
    gaussian_mollifier,
    make_fractional_density,
    make_noise_table,
    mollify,
    rescale,
    sample_all_increments,
)
from wavemaplab.wavemap import WaveRunConfig, make_state, run_wavemap

H_DEFAULT = 0.75
NORTH = np.array([0.0, 0.0, 1.0])


def constant_traj(grid, vec):
    out = np.empty((grid.n_steps + 1, grid.n_points, 3))
    out[:] = np.asarray(vec)
    return out


def zero_table(grid, seed=0):
    return NoiseTable(seed, grid, np.zeros((grid.n_steps, 2, grid.n_points // 2)))


def make_inputs(grid, *, heat_u=None, wave_u=None, wave_v=None, table=None,
                eps=0.25, gamma0=2.0, H=H_DEFAULT):
    if heat_u is None:
        heat_u = constant_traj(grid, NORTH)
    if table is None:
        table = zero_table(grid)
    return FluctuationInputs(
        heat_u=heat_u, table=table, moll=gaussian_mollifier(), H=H,
        eps=eps, gamma0=gamma0, grid=grid, wave_u=wave_u, wave_v=wave_v,
    )


class TestInputsValidation:
    def test_shape_mismatch_rejected(self):
        grid = GridSpec(5.0, 64, 0.01, 10)
        bad = np.zeros((grid.n_steps, grid.n_points, 3))
        with pytest.raises(ValueError, match="heat trajectory"):
            make_inputs(grid, heat_u=bad)

    def test_wave_pair_required_together(self):
        grid = GridSpec(5.0, 64, 0.01, 10)
        with pytest.raises(ValueError, match="together"):
            make_inputs(grid, wave_u=constant_traj(grid, NORTH))

    def test_table_grid_must_match(self):
        grid = GridSpec(5.0, 64, 0.01, 10)
        other = GridSpec(5.0, 64, 0.01, 12)
        with pytest.raises(ValueError, match="table"):
            make_inputs(grid, table=zero_table(other))

    def test_hurst_range(self):
        grid = GridSpec(5.0, 64, 0.01, 10)
        with pytest.raises(ValueError, match="H"):
            make_inputs(grid, H=0.3)

    def test_initial_gap_zero_without_wave(self):
        grid = GridSpec(5.0, 64, 0.01, 10)
        assert np.all(make_inputs(grid).initial_gap == 0.0)

    def test_initial_gap_scaling(self):
        grid = GridSpec(5.0, 64, 0.01, 4)
        heat = constant_traj(grid, NORTH)
        wave = heat.copy()
        wave[0, :, 0] += 0.01
        eps = 0.25
        inp = make_inputs(grid, heat_u=heat, wave_u=wave,
                          wave_v=np.zeros_like(wave), eps=eps)
        expected = eps ** (H_DEFAULT / 2 - 1) * 0.01
        assert np.allclose(inp.initial_gap[:, 0], expected, rtol=1e-12)
        assert np.all(inp.initial_gap[:, 1:] == 0.0)

    def test_wave_required_for_z_eps(self):
        grid = GridSpec(5.0, 64, 0.01, 4)
        with pytest.raises(ValueError, match="wave"):
            solve_z_eps(make_inputs(grid))


class TestCouplingAudit:
    def test_same_object_passes(self):
        grid = GridSpec(5.0, 64, 0.01, 4)
        table = zero_table(grid)
        audit_coupling(make_inputs(grid, table=table), table)

    def test_equal_but_distinct_tables_fail(self):
        grid = GridSpec(5.0, 64, 0.01, 4)
        with pytest.raises(ValueError, match="audit"):
            audit_coupling(make_inputs(grid, table=zero_table(grid)), zero_table(grid))


class TestZeroCases:
    def test_all_solvers_exactly_zero_on_zero_input(self):
        grid = GridSpec(5.0, 64, 0.01, 20)
        heat = constant_traj(grid, NORTH)
        inp = make_inputs(grid, heat_u=heat, wave_u=heat.copy(),
                          wave_v=np.zeros_like(heat))
        for traj in (solve_z_eps(inp), solve_z_limit(inp),
                     solve_rho(inp, "rho_eps"), solve_rho(inp, "rho_limit")):
            assert np.all(traj == 0.0)

    def test_z_limit_zero_for_static_heat_flow(self):
        # constant-in-time u has zero update quotient, so the limit noise
        # coefficient u x u_t vanishes even with noise switched on
        grid = GridSpec(5.0, 64, 0.01, 20)
        inp = make_inputs(grid, table=make_noise_table(3, grid))
        assert np.all(solve_z_limit(inp) == 0.0)

    def test_unknown_variant(self):
        grid = GridSpec(5.0, 64, 0.01, 4)
        with pytest.raises(ValueError, match="variant"):
            solve_rho(make_inputs(grid), "rho_between")


class TestModePin:
    """Deterministic single-mode drive reproduces the scalar recursion."""

    def test_cos_and_sin_modes(self):
        L, N, dt, n, k = 5.0, 64, 0.01, 6, 3
        grid = GridSpec(L, N, dt, n)
        eps, gamma0, c = 0.25, 2.0, 0.7
        inc = np.zeros((n, 2, N // 2))
        cosvals = [0.9, -0.4, 0.2, 0.0, 1.3, -0.8]
        sinvals = [0.1, 0.5, -0.6, 0.7, 0.0, 0.3]
        inc[:, 0, k] = cosvals
        inc[:, 1, k] = sinvals
        table = NoiseTable(11, grid, inc)

        wave_u = constant_traj(grid, NORTH)
        wave_v = constant_traj(grid, [c, 0.0, 0.0])
        inp = make_inputs(grid, wave_u=wave_u, wave_v=wave_v, table=table,
                          eps=eps, gamma0=gamma0)
        z = solve_z_eps(inp)

        frac = make_fractional_density(H_DEFAULT)
        mk = cell_masses(frac, grid)[k]
        xi = math.pi * k / L
        fk = float(gaussian_mollifier().fourier_transform(math.sqrt(eps) * xi))
        r = 1.0 / (1.0 + dt * xi * xi / gamma0)

        a = b = 0.0
        for step in range(n):
            a = (a + (c / gamma0) * math.sqrt(mk) * fk * cosvals[step]) * r
            b = (b + (c / gamma0) * math.sqrt(mk) * fk * sinvals[step]) * r
            spec = np.fft.rfft(z[step + 1, :, 1])
            a_num = (2.0 / N) * (-1) ** k * spec[k].real
            b_num = -(2.0 / N) * (-1) ** k * spec[k].imag
            assert a_num == pytest.approx(a, abs=1e-15, rel=1e-12)
            assert b_num == pytest.approx(b, abs=1e-15, rel=1e-12)
        # nothing leaks into other components or modes
        assert np.all(z[:, :, 0] == 0.0)
        assert np.all(z[:, :, 2] == 0.0)
        spec_final = np.fft.rfft(z[-1, :, 1]) / N
        mask = np.ones(N // 2 + 1, bool)
        mask[k] = False
        assert np.max(np.abs(spec_final[mask])) < 1e-15


class TestModeVariance:
    """Monte Carlo variance of one mode against the OU closed forms."""

    def test_variance_matches_ou(self):
        L, N, dt, n, k = 5.0, 64, 0.01, 50, 3
        grid = GridSpec(L, N, dt, n)
        eps, gamma0, c = 0.25, 2.0, 0.7
        n_paths = 1000

        wave_u = constant_traj(grid, NORTH)
        wave_v = constant_traj(grid, [c, 0.0, 0.0])
        frac = make_fractional_density(H_DEFAULT)
        mk = cell_masses(frac, grid)[k]
        xi = math.pi * k / L
        fk = float(gaussian_mollifier().fourier_transform(math.sqrt(eps) * xi))
        sigma = c * math.sqrt(mk) * fk

        finals = np.empty(n_paths)
        for p in range(n_paths):
            table = make_noise_table(20_000 + p, grid)
            inp = make_inputs(grid, wave_u=wave_u, wave_v=wave_v, table=table,
                              eps=eps, gamma0=gamma0)
            z = solve_z_eps(inp)
            spec = np.fft.rfft(z[-1, :, 1])
            finals[p] = (2.0 / N) * (-1) ** k * spec[k].real

        var_hat = finals.var(ddof=1)
        r = 1.0 / (1.0 + dt * xi * xi / gamma0)
        var_disc = (sigma / gamma0) ** 2 * dt * r * r * (1 - r ** (2 * n)) / (1 - r * r)
        T = n * dt
        var_cont = sigma**2 / (2 * gamma0 * xi**2) * (1 - math.exp(-2 * xi**2 * T / gamma0))

        se = var_disc * math.sqrt(2.0 / (n_paths - 1))
        assert abs(var_hat - var_disc) <= 3 * se
        # the discrete variance sits within a few percent of continuum OU
        assert abs(var_disc - var_cont) <= 0.05 * var_cont
        assert abs(var_hat - var_cont) <= 3 * se + 0.05 * var_cont

    def test_mean_is_zero(self):
        # driven modes are centered; check the full field mean pointwise
        L, N, dt, n = 5.0, 32, 0.02, 25
        grid = GridSpec(L, N, dt, n)
        c, gamma0 = 0.5, 2.0
        wave_u = constant_traj(grid, NORTH)
        wave_v = constant_traj(grid, [c, 0.0, 0.0])
        n_paths = 200
        finals = np.empty((n_paths, N))
        for p in range(n_paths):
            table = make_noise_table(40_000 + p, grid)
            inp = make_inputs(grid, wave_u=wave_u, wave_v=wave_v, table=table,
                              gamma0=gamma0)
            finals[p] = solve_z_eps(inp)[-1, :, 1]
        mean = finals.mean(axis=0)
        se = finals.std(axis=0, ddof=1) / math.sqrt(n_paths)
        assert np.all(np.abs(mean) <= 5 * se + 1e-12)


class TestRhoSolvers:
    def test_rho_zero_for_constant_heat_and_no_gap(self):
        # constant u kills both the reaction (Du = 0) and the limit noise
        grid = GridSpec(5.0, 64, 0.01, 20)
        inp = make_inputs(grid, table=make_noise_table(7, grid))
        assert np.all(solve_rho(inp, "rho_limit") == 0.0)

    def test_self_convergence_order_one(self):
        # frozen coefficient fields, zero noise, nonzero initial gap:
        # Richardson triple at dt, dt/2, dt/4
        L, N, T = 5.0, 64, 0.4
        eps = 0.25
        results = {}
        for n_steps in (40, 80, 160):
            grid = GridSpec(L, N, T / n_steps, n_steps)
            bump_a = geodesic_bump(grid, amplitude=1.2, width=1.0)
            bump_b = geodesic_bump(grid, amplitude=0.9, width=1.3)
            heat = np.broadcast_to(bump_a, (n_steps + 1, N, 3)).copy()
            wave = np.broadcast_to(bump_b, (n_steps + 1, N, 3)).copy()
            inp = make_inputs(grid, heat_u=heat, wave_u=wave,
                              wave_v=np.zeros_like(wave), eps=eps)
            results[n_steps] = solve_rho(inp, "rho_eps")[-1]
        g_ref = GridSpec(L, N, T / 40, 40)
        e1 = norm(results[40] - results[80], g_ref, "L2")
        e2 = norm(results[80] - results[160], g_ref, "L2")
        order = math.log2(e1 / e2)
        assert 0.8 <= order <= 1.5

    def test_y_eps_formula_and_validation(self):
        grid = GridSpec(5.0, 32, 0.01, 3)
        wave = constant_traj(grid, NORTH)
        heat = constant_traj(grid, NORTH)
        wave[:, :, 0] += 0.02
        y = compute_y_eps(wave, heat, 0.25, H_DEFAULT)
        assert y.shape == wave.shape
        assert np.allclose(y[:, :, 0], 0.25 ** (H_DEFAULT / 2 - 1) * 0.02, rtol=1e-12)
        with pytest.raises(ValueError, match="shapes"):
            compute_y_eps(wave[:-1], heat, 0.25, H_DEFAULT)


def smooth_test_trajectory(grid, seed, n_modes=3, scale=0.4):
    """Smooth space-time vector field for exercising Theta and Lambda."""
    rng = np.random.default_rng(seed)
    t = grid.times[:, None]
    out = np.zeros((grid.n_steps + 1, grid.n_points, 3))
    for _ in range(n_modes):
        kx = rng.integers(0, 4)
        comp = rng.integers(0, 3)
        amp = scale * rng.standard_normal()
        phase = rng.uniform(0, 2 * math.pi)
        rate = rng.uniform(0.0, 2.0)
        profile = np.cos(grid.freq[kx] * grid.x + phase)[None, :]
        out[:, :, comp] += amp * np.exp(-rate * t) * profile
    return out


@pytest.fixture(scope="module")
def heat_setup():
    grid = GridSpec(5.0, 96, 0.005, 60)
    u0 = geodesic_bump(grid, amplitude=1.2, width=1.0)
    cfg = HeatRunConfig(gamma0=2.0, grid=grid, scheme="semi_implicit")
    traj, _ = run_heatflow(u0, cfg)
    return grid, traj.u


class TestThetaAndLambda:
    def test_theta_of_zero_is_xi(self, heat_setup):
        grid, heat_u = heat_setup
        xi = smooth_test_trajectory(grid, 1)
        zero = np.zeros_like(xi)
        out = apply_theta(zero, xi, heat_u, 2.0, grid)
        assert np.array_equal(out, xi)

    def test_theta_shape_mismatch(self, heat_setup):
        grid, heat_u = heat_setup
        xi = smooth_test_trajectory(grid, 1)
        with pytest.raises(ValueError, match="matched"):
            apply_theta(xi[:-1], xi[:-1], heat_u, 2.0, grid)

    def test_lambda_identity_for_constant_map(self):
        # Du = 0 collapses Theta to the identity so Lambda(xi) = xi in one pass
        grid = GridSpec(5.0, 48, 0.01, 30)
        heat_u = constant_traj(grid, NORTH)
        xi = smooth_test_trajectory(grid, 2)
        res = solve_lambda(xi, heat_u, 2.0, grid)
        assert res.iterations == 1
        assert np.array_equal(res.traj, xi)

    def test_lambda_fixed_point_residual(self, heat_setup):
        grid, heat_u = heat_setup
        xi = smooth_test_trajectory(grid, 3)
        res = solve_lambda(xi, heat_u, 2.0, grid, tol=1e-12)
        again = apply_theta(res.traj, xi, heat_u, 2.0, grid)
        resid = trajectory_norm(again - res.traj, grid)
        assert resid <= 1e-8 * trajectory_norm(xi, grid)
        assert res.bound_constant > 0.0

    def test_lambda_linearity(self, heat_setup):
        grid, heat_u = heat_setup
        xi1 = smooth_test_trajectory(grid, 4)
        xi2 = smooth_test_trajectory(grid, 5)
        r1 = solve_lambda(xi1, heat_u, 2.0, grid, tol=1e-12)
        r2 = solve_lambda(xi2, heat_u, 2.0, grid, tol=1e-12)
        r12 = solve_lambda(xi1 + xi2, heat_u, 2.0, grid, tol=1e-12)
        gap = trajectory_norm(r12.traj - r1.traj - r2.traj, grid)
        assert gap <= 1e-8 * trajectory_norm(r12.traj, grid)

    def test_lambda_nonconvergence_reported(self):
        # gamma0 small and a huge reaction make Theta expansive
        grid = GridSpec(5.0, 48, 0.05, 40)
        big = geodesic_bump(grid, amplitude=1.4, width=0.4)
        heat_u = np.broadcast_to(big, (grid.n_steps + 1, grid.n_points, 3)).copy()
        xi = smooth_test_trajectory(grid, 6)
        with pytest.raises(RuntimeError, match="converge"):
            solve_lambda(xi, heat_u, 0.02, grid, max_iter=8)


class TestStructuralIdentity:
    def test_rho_limit_equals_lambda_of_z_limit(self):
        grid = GridSpec(5.0, 64, 0.01, 50)
        u0 = geodesic_bump(grid, amplitude=1.2, width=1.0)
        gamma0 = 2.0
        cfg = HeatRunConfig(gamma0=gamma0, grid=grid, scheme="semi_implicit")
        traj, _ = run_heatflow(u0, cfg)
        table = make_noise_table(5, grid)
        inp = make_inputs(grid, heat_u=traj.u, table=table, gamma0=gamma0)

        z = solve_z_limit(inp)
        rho = solve_rho(inp, "rho_limit")
        lam = solve_lambda(z, traj.u, gamma0, grid, tol=1e-12)
        rel = trajectory_norm(rho - lam.traj, grid) / trajectory_norm(rho, grid)
        assert rel <= 1e-6


class TestCoupledIncrements:
    def test_mode_factor(self):
        grid = GridSpec(5.0, 64, 0.01, 4)
        table = make_noise_table(9, grid)
        eps, H = 0.25, H_DEFAULT
        moll = gaussian_mollifier()
        frac = make_fractional_density(H)
        raw = sample_all_increments(table, frac)
        coupled = coupled_wave_increments(table, moll, H, eps)
        assert coupled.shape == raw.shape
        spec_raw = np.fft.rfft(raw[0])
        spec_cpl = np.fft.rfft(coupled[0])
        k = 5
        factor = eps ** ((1 - H) / 2) * moll.fourier_transform(math.sqrt(eps) * grid.freq[k])
        assert spec_cpl[k] == pytest.approx(spec_raw[k] * factor, rel=1e-12)

    def test_matches_apply_q_eps(self):
        grid = GridSpec(5.0, 64, 0.01, 4)
        table = make_noise_table(9, grid)
        eps, H = 0.0625, H_DEFAULT
        moll = gaussian_mollifier()
        raw = sample_all_increments(table, make_fractional_density(H))
        expected = eps ** ((1 - H) / 2) * apply_Q_eps(raw, moll, eps, grid)
        got = coupled_wave_increments(table, moll, H, eps)
        assert np.allclose(got, expected, rtol=1e-14, atol=0.0)


class TestSecondMomentStability:
    def test_z_eps_second_moment_stable_under_dt_refinement(self):
        # coupled Brownian paths via table coarsening; the mean of the
        # squared L2(0,T;L2) norm should move by well under 10 percent
        L, N, T = 5.0, 64, 0.2
        eps, gamma, H = 0.25, 0.5, H_DEFAULT
        moll = gaussian_mollifier()
        frac = make_fractional_density(H)
        drive = rescale(mollify(frac, moll), eps)
        n_fine, n_coarse = 80, 40
        g_fine = GridSpec(L, N, T / n_fine, n_fine)
        g_coarse = GridSpec(L, N, T / n_coarse, n_coarse)
        u0 = geodesic_bump(g_fine, amplitude=1.0, width=1.0)
        v0 = np.zeros_like(u0)
        n_paths = 60

        def one_resolution(grid, table):
            cfg = WaveRunConfig(eps=eps, gamma=gamma, grid=grid, density=drive,
                                record_energy=False)
            inc = eps ** ((1 - H) / 2) * apply_Q_eps(
                sample_all_increments(table, frac), moll, eps, grid)
            traj, _ = run_wavemap(make_state(u0, v0), cfg, increments=inc,
                                  snapshot_stride=1)
            heat = np.broadcast_to(u0, (grid.n_steps + 1, N, 3)).copy()
            inp = FluctuationInputs(heat_u=heat, table=table, moll=moll, H=H,
                                    eps=eps, gamma0=cfg.gamma0, grid=grid,
                                    wave_u=traj.u, wave_v=traj.v)
            return trajectory_norm(solve_z_eps(inp), grid) ** 2

        from wavemaplab.noise import coarsen

        sq_f = np.empty(n_paths)
        sq_c = np.empty(n_paths)
        for p in range(n_paths):
            t_fine = make_noise_table(60_000 + p, g_fine)
            t_coarse = coarsen(t_fine, 2)
            sq_f[p] = one_resolution(g_fine, t_fine)
            sq_c[p] = one_resolution(g_coarse, t_coarse)
        m_f, m_c = sq_f.mean(), sq_c.mean()
        assert m_f > 0
        assert abs(m_f - m_c) <= 0.10 * m_f


class TestTrajectoryNormAndKernel:
    def test_constant_field_norm(self):
        grid = GridSpec(5.0, 64, 0.01, 100)
        traj = constant_traj(grid, [0.3, 0.0, 0.0])
        expected = 0.3 * math.sqrt(2 * grid.half_length * grid.horizon)
        assert trajectory_norm(traj, grid) == pytest.approx(expected, rel=1e-12)

    def test_single_snapshot_is_zero(self):
        grid = GridSpec(5.0, 64, 0.01, 0)
        assert trajectory_norm(constant_traj(grid, NORTH), grid) == 0.0

    @pytest.mark.parametrize("t", [0.1, 1.0])
    def test_heat_kernel_l2_norm(self, t):
        grid = GridSpec(10.0, 512, 0.01, 1)
        g = heat_kernel(grid, t)
        expected = (8 * math.pi * t) ** -0.25
        assert norm(g, grid, "L2") == pytest.approx(expected, rel=1e-6)

    def test_heat_kernel_mass(self):
        grid = GridSpec(10.0, 512, 0.01, 1)
        g = heat_kernel(grid, 0.5)
        assert grid.dx * g.sum() == pytest.approx(1.0, rel=1e-8)

    def test_heat_kernel_rejects_nonpositive_time(self):
        grid = GridSpec(10.0, 512, 0.01, 1)
        with pytest.raises(ValueError, match="positive"):
            heat_kernel(grid, 0.0)
