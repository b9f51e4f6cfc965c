"""Reference spectral solver for i hbar dpsi/dt = [-hbar^2/(2m) lap + U] psi.

Strang split-step on a periodic box: half kick exp(-i U dt / 2 hbar) in
position space, full drift exp(-i hbar k^2 dt / 2m) in Fourier space, half
kick.  Norm-preserving to round-off, second order in dt.

Scenarios produce the initial wavefunction:

* ``gaussian_packet``: density variance sigma0^2 per axis, plane-wave momentum
  hbar*k0, so sigma(t)^2 = sigma0^2 (1 + (hbar t / 2 m sigma0^2)^2) when free.
* ``harmonic_ground``: sigma0^2 = hbar/(2 m omega) per axis (stationary).
* ``harmonic_coherent``: ground-state Gaussian displaced from the well center.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, Rejection
from .grid import ComplexField, GridSpec, integrate

__all__ = [
    "PhysicalConstants",
    "PotentialSpec",
    "potential_on_grid",
    "gaussian_packet",
    "harmonic_ground",
    "harmonic_coherent",
    "propagate",
    "norm",
    "energy",
    "overlap",
]


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ConfigError("hbar and mass must be strictly positive")


@dataclass(frozen=True)
class PotentialSpec:
    """kind in {'free', 'harmonic', 'custom'}; omega per axis for harmonic."""

    kind: str = "free"
    omega: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    tabulated: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("free", "harmonic", "custom"):
            raise ConfigError(f"unknown potential kind {self.kind!r}")
        if self.kind == "harmonic" and any(w <= 0 for w in self.omega):
            raise ConfigError("harmonic frequencies must be positive")
        if self.kind == "custom":
            if self.tabulated is None or not np.all(np.isfinite(self.tabulated)):
                raise ConfigError("custom potential must be finite and tabulated")


def potential_on_grid(spec: PotentialSpec, grid: GridSpec, constants: PhysicalConstants) -> np.ndarray:
    if spec.kind == "free":
        return np.zeros(grid.shape)
    if spec.kind == "custom":
        tab = np.asarray(spec.tabulated, dtype=float)
        if tab.shape != grid.shape:
            raise ConfigError("tabulated potential shape does not match the grid")
        return tab
    center = spec.center or (0.0,) * grid.dim
    U = np.zeros(grid.shape)
    mesh = grid.meshgrid()
    for k, w in enumerate(spec.omega):
        U = U + 0.5 * constants.mass * w**2 * (mesh[k] - center[k]) ** 2
    return U


def potential_gradient_on_grid(
    spec: PotentialSpec, grid: GridSpec, constants: PhysicalConstants
) -> np.ndarray:
    """grad U: analytic for free/harmonic, grid operators for tabulated."""
    d = grid.dim
    if spec.kind == "free":
        return np.zeros((d, *grid.shape))
    if spec.kind == "harmonic":
        center = spec.center or (0.0,) * d
        mesh = grid.meshgrid()
        out = np.zeros((d, *grid.shape))
        for k, w in enumerate(spec.omega):
            out[k] = constants.mass * w**2 * (mesh[k] - center[k])
        return out
    from .grid import axis_derivative

    U = potential_on_grid(spec, grid, constants)
    return np.stack([axis_derivative(U, grid, k) for k in range(d)])


def _check_resolved(grid: GridSpec, sigma: tuple[float, ...]) -> None:
    for k, s in enumerate(sigma):
        if s < 4.0 * grid.spacing(k):
            raise Rejection(
                f"axis {k}: packet width {s:g} under-resolved (< 4 cells of {grid.spacing(k):g})"
            )


def _normalize(grid: GridSpec, psi: np.ndarray, time: float = 0.0) -> ComplexField:
    nrm = integrate(np.abs(psi) ** 2, grid)
    return ComplexField(grid, psi / np.sqrt(nrm), time)


def gaussian_packet(
    grid: GridSpec,
    center: tuple[float, ...],
    sigma0: tuple[float, ...],
    k0: tuple[float, ...],
) -> ComplexField:
    """Minimum-uncertainty packet with |psi|^2 variance sigma0^2 per axis."""
    _check_resolved(grid, sigma0)
    mesh = grid.meshgrid()
    psi = np.ones(grid.shape, dtype=complex)
    for k in range(grid.dim):
        x = mesh[k] - center[k]
        psi = psi * np.exp(-(x**2) / (4.0 * sigma0[k] ** 2) + 1j * k0[k] * mesh[k])
    return _normalize(grid, psi)


def harmonic_ground(
    grid: GridSpec,
    constants: PhysicalConstants,
    omega: tuple[float, ...],
    center: tuple[float, ...] | None = None,
) -> ComplexField:
    center = center or (0.0,) * grid.dim
    sigma = tuple(np.sqrt(constants.hbar / (2.0 * constants.mass * w)) for w in omega)
    return gaussian_packet(grid, center, sigma, (0.0,) * grid.dim)


def harmonic_coherent(
    grid: GridSpec,
    constants: PhysicalConstants,
    omega: tuple[float, ...],
    displacement: tuple[float, ...],
    center: tuple[float, ...] | None = None,
) -> ComplexField:
    center = center or (0.0,) * grid.dim
    shifted = tuple(c + d for c, d in zip(center, displacement))
    sigma = tuple(np.sqrt(constants.hbar / (2.0 * constants.mass * w)) for w in omega)
    return gaussian_packet(grid, shifted, sigma, (0.0,) * grid.dim)


def _ksq(grid: GridSpec) -> np.ndarray:
    ksq = np.zeros(grid.shape)
    for ax in range(grid.dim):
        k = 2.0 * np.pi * np.fft.fftfreq(grid.n[ax], d=grid.spacing(ax))
        shape = [1] * grid.dim
        shape[ax] = grid.n[ax]
        ksq = ksq + k.reshape(shape) ** 2
    return ksq


def propagate(
    psi: ComplexField,
    potential: PotentialSpec,
    constants: PhysicalConstants,
    dt: float,
    steps: int,
) -> ComplexField:
    """Advance ``steps`` Strang steps of size dt.  steps=0 returns a copy."""
    grid = psi.grid
    if not all(grid.periodic):
        raise Rejection("split-step propagation requires a fully periodic grid")
    if steps == 0:
        return psi.copy()
    U = potential_on_grid(potential, grid, constants)
    if dt * np.max(np.abs(U)) / constants.hbar > 0.5:
        warnings.warn("dt*max|U|/hbar > 0.5: kick phase under-resolved", stacklevel=2)
    half_kick = np.exp(-0.5j * U * dt / constants.hbar)
    drift = np.exp(-0.5j * constants.hbar * _ksq(grid) * dt / constants.mass)
    values = psi.values
    for _ in range(steps):
        values = half_kick * values
        values = np.fft.ifftn(drift * np.fft.fftn(values))
        values = half_kick * values
    return ComplexField(grid, values, psi.time + steps * dt)


def norm(psi: ComplexField) -> float:
    return integrate(np.abs(psi.values) ** 2, psi.grid)


def overlap(a: ComplexField, b: ComplexField) -> complex:
    from .grid import quadrature_weights

    w = quadrature_weights(a.grid)
    return complex(np.sum(np.conj(a.values) * b.values * w))


def energy(psi: ComplexField, potential: PotentialSpec, constants: PhysicalConstants) -> float:
    """<psi|H|psi> via the spectral kinetic term (periodic grids only)."""
    grid = psi.grid
    if not all(grid.periodic):
        raise Rejection("spectral energy evaluation requires a periodic grid")
    psik = np.fft.fftn(psi.values)
    # Parseval: sum |psik|^2 / N = sum |psi|^2, node weight h per axis
    cell = np.prod([grid.spacing(k) for k in range(grid.dim)])
    kin_density = 0.5 * constants.hbar**2 / constants.mass * _ksq(grid) * np.abs(psik) ** 2
    kinetic = float(np.sum(kin_density)) / psi.values.size * cell
    U = potential_on_grid(potential, grid, constants)
    pot = integrate(U * np.abs(psi.values) ** 2, grid)
    return kinetic + pot
