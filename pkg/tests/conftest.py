import numpy as np
import pytest

from mkin.grid import GridSpec
from mkin.madelung import FluidState, extract_fluid_state
from mkin.grid import ScalarField, VectorField
from mkin.schrodinger import (
    PhysicalConstants,
    PotentialSpec,
    harmonic_ground,
    propagate,
)

OMEGA = 1.0


@pytest.fixture(scope="session")
def constants():
    return PhysicalConstants(hbar=1.0, mass=1.0)


@pytest.fixture(scope="session")
def harmonic_setup(constants):
    """Ground-state scenario: psi, extracted state, potential (n=512 grid)."""
    grid = GridSpec((-8.0,), (8.0,), (512,), (True,))
    pot = PotentialSpec("harmonic", (OMEGA,))
    psi = harmonic_ground(grid, constants, (OMEGA,))
    state = extract_fluid_state(psi, pot, constants)
    return {"grid": grid, "potential": pot, "psi": psi, "state": state}


def gaussian_state(
    grid: GridSpec,
    constants,
    sigma: float,
    T: float,
    V_slope: float = 0.0,
    time: float = 0.0,
    mean: float = 0.0,
) -> FluidState:
    """Synthetic 1d FluidState with analytic Gaussian density and linear V.

    Force field set for the harmonic ground state (F = 0 when V_slope = 0);
    used by closure/tracer tests that need exact fields free of solver noise.
    """
    x = grid.axis_coords(0)
    f = np.exp(-((x - mean) ** 2) / (2.0 * sigma**2)) / np.sqrt(2.0 * np.pi * sigma**2)
    floor = 1e-10 * f.max()
    mask = f >= floor
    V = V_slope * (x - mean)
    S = constants.mass * V_slope * (x - mean) ** 2 / 2.0
    glnf = (-(x - mean) / sigma**2)[None, :]
    grad_V = np.full((1, 1, x.size), V_slope)
    return FluidState(
        f=ScalarField(grid, f, time),
        S=ScalarField(grid, S, time),
        V=VectorField(grid, V[None, :], time),
        U_qm=ScalarField(grid, np.zeros_like(x), time),
        F=VectorField(grid, np.zeros((1, x.size)), time),
        T=np.array([T]),
        time=time,
        mask=mask,
        floor=floor,
        mass=constants.mass,
        _grad_lnf=glnf,
        _grad_V=grad_V,
    )
