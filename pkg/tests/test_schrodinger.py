import numpy as np
import pytest

from mkin.errors import Rejection
from mkin.grid import GridSpec, ScalarField, integrate
from mkin.schrodinger import (
    PhysicalConstants,
    PotentialSpec,
    energy,
    gaussian_packet,
    harmonic_coherent,
    harmonic_ground,
    norm,
    overlap,
    propagate,
)

OMEGA = 1.0


@pytest.fixture(scope="module")
def c():
    return PhysicalConstants(1.0, 1.0)


@pytest.fixture(scope="module")
def hgrid():
    return GridSpec((-8.0,), (8.0,), (512,), (True,))


class TestInitialConditions:
    def test_harmonic_ground_is_real_gaussian(self, c, hgrid):
        psi = harmonic_ground(hgrid, c, (OMEGA,))
        assert abs(norm(psi) - 1.0) < 1e-10
        assert np.abs(psi.values.imag).max() < 1e-14
        # density variance sigma0^2 = hbar / (2 m omega)
        x = hgrid.axis_coords(0)
        var = integrate(np.abs(psi.values) ** 2 * x**2, hgrid)
        assert var == pytest.approx(c.hbar / (2 * c.mass * OMEGA), rel=1e-8)

    def test_packet_zero_momentum_even(self, c):
        grid = GridSpec((-10.0,), (10.0,), (256,), (True,))
        psi = gaussian_packet(grid, (0.0,), (1.0,), (0.0,))
        v = psi.values
        assert np.abs(v[1:] - v[1:][::-1]).max() < 1e-12  # node 0 is its own image

    def test_packet_momentum_sets_phase_gradient(self, c):
        # checked downstream: V = hbar k0 / m uniform on the density core
        from mkin.madelung import extract_velocity

        grid = GridSpec((-10.0,), (10.0,), (512,), (True,))
        k0 = 2.0 * np.pi * 8 / 20.0  # on-grid wavenumber
        psi = gaussian_packet(grid, (0.0,), (1.0,), (k0,))
        V = extract_velocity(psi, c).values[0]
        f = np.abs(psi.values) ** 2
        core = f > 1e-4 * f.max()
        assert np.abs(V[core] - c.hbar * k0 / c.mass).max() < 1e-8

    def test_under_resolved_width_rejected(self, c):
        grid = GridSpec((-10.0,), (10.0,), (64,), (True,))
        with pytest.raises(Rejection):
            gaussian_packet(grid, (0.0,), (0.5,), (0.0,))  # 4 cells = 1.25

    def test_norms_all_scenarios(self, c, hgrid):
        for psi in (
            harmonic_ground(hgrid, c, (OMEGA,)),
            harmonic_coherent(hgrid, c, (OMEGA,), (1.0,)),
            gaussian_packet(hgrid, (0.0,), (1.0,), (1.0,)),
        ):
            assert abs(norm(psi) - 1.0) < 1e-10


class TestPropagate:
    def test_free_packet_spreading(self, c):
        # sigma(t)^2 = sigma0^2 (1 + (hbar t / 2 m sigma0^2)^2), width from
        # quadrature of |psi|^2 x^2 (the independent oracle)
        sigma0 = 1.0
        grid = GridSpec((-40.0,), (40.0,), (1024,), (True,))
        psi = gaussian_packet(grid, (0.0,), (sigma0,), (0.0,))
        t_char = c.mass * sigma0**2 / c.hbar
        dt = t_char / 200.0
        steps = 400  # t = 2 t_char
        out = propagate(psi, PotentialSpec("free"), c, dt, steps)
        t = steps * dt
        x = grid.axis_coords(0)
        var = integrate(np.abs(out.values) ** 2 * x**2, grid)
        expected = sigma0**2 * (1.0 + (c.hbar * t / (2 * c.mass * sigma0**2)) ** 2)
        assert var == pytest.approx(expected, rel=1e-6)

    def test_ground_state_stationary_over_period(self, c, hgrid):
        pot = PotentialSpec("harmonic", (OMEGA,))
        psi0 = harmonic_ground(hgrid, c, (OMEGA,))
        T = 2.0 * np.pi / OMEGA
        steps = 2000
        psiT = propagate(psi0, pot, c, T / steps, steps)
        assert abs(abs(overlap(psiT, psi0)) - 1.0) < 1e-8

    def test_zero_steps_identity(self, c, hgrid):
        psi = harmonic_ground(hgrid, c, (OMEGA,))
        out = propagate(psi, PotentialSpec("free"), c, 0.1, 0)
        assert out.values.tobytes() == psi.values.tobytes()

    def test_norm_conserved(self, c, hgrid):
        pot = PotentialSpec("harmonic", (OMEGA,))
        psi = harmonic_coherent(hgrid, c, (OMEGA,), (1.5,))
        out = propagate(psi, pot, c, 2e-3, 1500)
        assert abs(norm(out) - 1.0) < 1e-10

    def test_energy_drift(self, c, hgrid):
        pot = PotentialSpec("harmonic", (OMEGA,))
        psi = harmonic_coherent(hgrid, c, (OMEGA,), (1.0,))
        e0 = energy(psi, pot, c)
        out = propagate(psi, pot, c, 1e-3, 4000)
        assert abs(energy(out, pot, c) - e0) / abs(e0) < 1e-6

    def test_time_reversal(self, c, hgrid):
        pot = PotentialSpec("harmonic", (OMEGA,))
        psi = harmonic_coherent(hgrid, c, (OMEGA,), (1.0,))
        fwd = propagate(psi, pot, c, 2e-3, 500)
        back = propagate(fwd, pot, c, -2e-3, 500)
        l2 = np.sqrt(integrate(np.abs(back.values - psi.values) ** 2, hgrid))
        assert l2 < 1e-8

    def test_non_periodic_grid_rejected(self, c):
        grid = GridSpec((-8.0,), (8.0,), (64,), (False,))
        psi_vals = np.exp(-grid.axis_coords(0) ** 2).astype(complex)
        from mkin.grid import ComplexField

        psi = ComplexField(grid, psi_vals)
        with pytest.raises(Rejection):
            propagate(psi, PotentialSpec("free"), c, 1e-3, 1)

    def test_large_kick_warns(self, c, hgrid):
        pot = PotentialSpec("harmonic", (4.0,))
        psi = harmonic_ground(hgrid, c, (4.0,))
        with pytest.warns(UserWarning, match="kick"):
            propagate(psi, pot, c, 0.05, 1)


class TestPotential:
    def test_harmonic_frequencies_positive(self):
        with pytest.raises(Exception):
            PotentialSpec("harmonic", (-1.0,))

    def test_custom_potential_finite(self):
        with pytest.raises(Exception):
            PotentialSpec("custom", tabulated=np.array([np.inf]))

    def test_custom_shape_checked(self, c, hgrid):
        from mkin.schrodinger import potential_on_grid

        spec = PotentialSpec("custom", tabulated=np.zeros(7))
        with pytest.raises(Exception):
            potential_on_grid(spec, hgrid, c)
