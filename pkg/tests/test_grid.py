"""Grid calculus: analytic derivative oracles, norm values, and the discrete
identities (Parseval, integration by parts, linearity) as property tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavemaplab.grid import (
    GridSpec,
    check_domain_size,
    derivative,
    inner,
    minimum_half_length,
    norm,
    support_radius,
)

GRID = GridSpec(half_length=10.0, n_points=256, dt=0.01, n_steps=10)


def random_field(seed, grid=GRID, vec=False):
    rng = np.random.default_rng(seed)
    shape = (grid.n_points, 3) if vec else (grid.n_points,)
    return rng.standard_normal(shape)


class TestGridSpec:
    def test_dx_exact(self):
        assert GRID.dx == 2 * 10.0 / 256

    def test_x_range(self):
        assert GRID.x[0] == -10.0
        assert GRID.x[-1] == pytest.approx(10.0 - GRID.dx)

    def test_freq_lattice(self):
        # xi_k = pi k / L on the one-sided half
        assert GRID.freq[1] == pytest.approx(np.pi / 10.0)
        assert len(GRID.freq) == 129

    def test_rejects_odd_n(self):
        with pytest.raises(ValueError):
            GridSpec(10.0, 255, 0.01, 10)

    def test_rejects_tiny_n(self):
        with pytest.raises(ValueError):
            GridSpec(10.0, 4, 0.01, 10)

    def test_horizon(self):
        assert GRID.horizon == pytest.approx(0.1)


class TestDerivative:
    def test_sin_eigenfunction(self):
        x = GRID.x
        f = np.sin(np.pi * x / 10.0)
        expect = (np.pi / 10.0) * np.cos(np.pi * x / 10.0)
        got = derivative(f, GRID, 1)
        assert np.max(np.abs(got - expect)) < 1e-13

    def test_constant_second_derivative(self):
        f = np.full(GRID.n_points, 3.7)
        assert np.max(np.abs(derivative(f, GRID, 2))) < 1e-13

    def test_gaussian_second_derivative(self):
        # exp(-x^2) decays below double precision at |x|=10, so the periodic
        # spectral derivative sees an effectively smooth compact function
        x = GRID.x
        f = np.exp(-(x**2))
        expect = (4 * x**2 - 2) * np.exp(-(x**2))
        got = derivative(f, GRID, 2)
        assert np.max(np.abs(got - expect)) < 1e-8

    def test_vec3_componentwise(self):
        f = random_field(1, vec=True)
        got = derivative(f, GRID, 1)
        for c in range(3):
            assert np.allclose(got[:, c], derivative(f[:, c], GRID, 1))

    def test_bad_order(self):
        with pytest.raises(ValueError):
            derivative(random_field(0), GRID, 3)


class TestNorm:
    def test_zero_field_all_kinds(self):
        z = np.zeros(GRID.n_points)
        for kind in ("L2", "H1", "Linf"):
            assert norm(z, GRID, kind) == 0.0
        assert norm(z, GRID, "Hdot", k=1) == 0.0

    def test_cosine_l2(self):
        # integral of cos^2(pi x/L) over [-L, L) is L
        f = np.cos(np.pi * GRID.x / 10.0)
        assert norm(f, GRID, "L2") == pytest.approx(np.sqrt(10.0), rel=1e-12)

    def test_bump_hdot1_vs_quadrature(self):
        # theta0 = A exp(-x^2): |theta0'|_{L2} = A (pi/2)^{1/4}
        from scipy.integrate import quad

        A = 1.5
        f = A * np.exp(-(GRID.x**2))
        val, _ = quad(lambda x: (A * -2 * x * np.exp(-(x**2))) ** 2, -10, 10)
        assert norm(f, GRID, "Hdot", k=1) == pytest.approx(np.sqrt(val), rel=1e-10)
        assert norm(f, GRID, "Hdot", k=1) == pytest.approx(A * (np.pi / 2) ** 0.25, rel=1e-10)

    def test_hdot_string_spelling(self):
        f = random_field(3)
        assert norm(f, GRID, "Hdot_2") == norm(f, GRID, "Hdot", k=2)

    def test_hdot_k_cap(self):
        with pytest.raises(ValueError):
            norm(random_field(4), GRID, "Hdot", k=GRID.n_points // 4 + 1)

    def test_h1_combines(self):
        f = random_field(5)
        expect = np.hypot(norm(f, GRID, "L2"), norm(f, GRID, "Hdot", k=1))
        assert norm(f, GRID, "H1") == pytest.approx(expect, rel=1e-14)

    def test_linf_vec3(self):
        f = np.zeros((GRID.n_points, 3))
        f[7] = [3.0, 4.0, 0.0]
        assert norm(f, GRID, "Linf") == pytest.approx(5.0)


class TestInner:
    def test_inner_equals_l2_squared(self):
        f = random_field(6)
        assert inner(f, f, GRID) == pytest.approx(norm(f, GRID, "L2") ** 2, rel=1e-13)

    def test_orthogonal_modes(self):
        x = GRID.x
        f = np.sin(3 * np.pi * x / 10.0)
        g = np.sin(5 * np.pi * x / 10.0)
        assert abs(inner(f, g, GRID)) < 1e-12

    def test_sine_self_pairing(self):
        f = np.sin(np.pi * GRID.x / 10.0)
        assert inner(f, f, GRID) == pytest.approx(10.0, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            inner(random_field(7), random_field(8, vec=True), GRID)


@st.composite
def smooth_fields(draw):
    """Band-limited random fields: a handful of low Fourier modes."""
    n_modes = draw(st.integers(1, 6))
    amps = draw(
        st.lists(
            st.floats(-3, 3, allow_nan=False, allow_infinity=False),
            min_size=2 * n_modes,
            max_size=2 * n_modes,
        )
    )
    x = GRID.x
    f = np.zeros_like(x)
    for m in range(n_modes):
        f += amps[2 * m] * np.cos((m + 1) * np.pi * x / 10.0)
        f += amps[2 * m + 1] * np.sin((m + 1) * np.pi * x / 10.0)
    return f


class TestProperties:
    @given(smooth_fields(), smooth_fields(), st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=40, deadline=None)
    def test_derivative_linear(self, f, g, a, b):
        lhs = derivative(a * f + b * g, GRID, 1)
        rhs = a * derivative(f, GRID, 1) + b * derivative(g, GRID, 1)
        scale = max(np.max(np.abs(rhs)), 1.0)
        assert np.max(np.abs(lhs - rhs)) / scale < 1e-12

    @given(smooth_fields())
    @settings(max_examples=40, deadline=None)
    def test_parseval(self, f):
        spec = np.fft.rfft(f)
        n = GRID.n_points
        mag2 = np.abs(spec) ** 2
        total = (mag2[0] + mag2[n // 2] + 2 * mag2[1 : n // 2].sum()) / n
        lhs = norm(f, GRID, "L2") ** 2
        rhs = GRID.dx * total
        assert abs(lhs - rhs) <= 1e-10 * max(rhs, 1e-30)

    @given(smooth_fields(), smooth_fields())
    @settings(max_examples=40, deadline=None)
    def test_integration_by_parts(self, f, g):
        lhs = inner(derivative(f, GRID, 1), g, GRID)
        rhs = -inner(f, derivative(g, GRID, 1), GRID)
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) / scale < 1e-10


class TestDomainSizing:
    def test_support_radius_bump(self):
        f = np.exp(-(GRID.x**2))
        r = support_radius(f, GRID, tol=1e-9)
        assert 4.0 < r < 6.0  # exp(-16) ~ 1e-7 > tol, exp(-36) ~ 1e-16 < tol

    def test_support_radius_constant(self):
        assert support_radius(np.ones(GRID.n_points), GRID) == 0.0

    def test_minimum_half_length(self):
        # support 3, horizon 1, eps 0.25 -> 3 + 1/0.5 + 2 = 7
        assert minimum_half_length(3.0, 1.0, 0.25) == pytest.approx(7.0)

    def test_check_passes_and_fails(self):
        check_domain_size(GRID, support=3.0, horizon=1.0, eps_min=0.25)
        with pytest.raises(ValueError):
            check_domain_size(GRID, support=3.0, horizon=10.0, eps_min=0.01)
