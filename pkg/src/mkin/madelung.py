"""Quantum fluid fields extracted from psi and the equations they satisfy.

With psi = sqrt(f) exp(i S / hbar):

    f     = |psi|^2                                  (probability density)
    V     = hbar Im(psi* grad psi) / (m f) = grad S / m
    U_qm  = -(hbar^2/2m) (1/2 lap ln f + 1/4 |grad ln f|^2) + U
    F     = -grad U_qm
    T_i   = (hbar^2 / 4m) int f (d_i ln f)^2 dr      (directional temperature)

and f, V obey the continuity and quantum Newton equations

    Df/Dt + f div V = 0,        DV/Dt = F / m.

U_qm is evaluated through the algebraically equivalent form
(1/2) lap f / f - (1/4) |grad f|^2 / f^2, which never differentiates ln f
across near-node regions.  Nodes (f below a relative floor) are masked;
masked values of V and U_qm are filled with the nearest unmasked value.

Momentum-fluctuation bookkeeping: the spectral variance of -i hbar d_i splits
into a density part m T_i and a phase part <(d_i S)^2> - <d_i S>^2, and the
uncertainty products <(dr_i)^2><(dp_i)^2> stay above hbar^2/4.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import Rejection
from .grid import (
    ComplexField,
    GridSpec,
    ScalarField,
    VectorField,
    axis_derivative,
    divergence,
    gradient,
    integrate,
    laplacian,
    quadrature_weights,
    read_field,
    write_field,
)
from .schrodinger import PhysicalConstants

__all__ = [
    "FluidState",
    "GaugeSpec",
    "DEFAULT_FLOOR_REL",
    "extract_density",
    "extract_velocity",
    "extract_phase",
    "quantum_potential",
    "quantum_force",
    "directional_temperatures",
    "extract_fluid_state",
    "apply_gauge",
    "hydro_residuals",
    "vorticity",
    "reconstruct_psi",
    "fill_nearest",
    "mean_position",
    "position_variance",
    "momentum_spectral",
    "momentum_parts",
    "heisenberg_products",
    "write_fluid_state",
    "read_fluid_state",
]

DEFAULT_FLOOR_REL = 1e-10

#: Fourier modes below this fraction of the peak are round-off noise
SPECTRAL_FLOOR = 1e-15


def fill_nearest(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace entries outside ``mask`` with the nearest in-mask value."""
    if mask.all():
        return values
    if not mask.any():
        raise Rejection("field is masked everywhere (all below density floor)")
    idx = ndimage.distance_transform_edt(~mask, return_distances=False, return_indices=True)
    return values[tuple(idx)]


@dataclass
class FluidState:
    """Snapshot of the quantum fluid fields plus the per-axis temperatures."""

    f: ScalarField
    S: ScalarField
    V: VectorField
    U_qm: ScalarField
    F: VectorField
    T: np.ndarray
    time: float
    mask: np.ndarray
    floor: float
    mass: float = 1.0
    _grad_lnf: np.ndarray | None = field(default=None, repr=False)
    _grad_V: np.ndarray | None = field(default=None, repr=False)

    @property
    def grid(self) -> GridSpec:
        return self.f.grid

    def grad_lnf(self) -> np.ndarray:
        """grad f / f, nearest-filled off the mask; shape (d, *shape)."""
        if self._grad_lnf is None:
            gf = gradient(self.f).values
            out = gf / np.maximum(self.f.values, self.floor)
            self._grad_lnf = np.stack([fill_nearest(out[k], self.mask) for k in range(out.shape[0])])
        return self._grad_lnf

    def grad_V(self) -> np.ndarray:
        """grad_V[j, k] = d_j V_k; shape (d, d, *shape)."""
        if self._grad_V is None:
            d = self.grid.dim
            out = np.empty((d, d) + self.grid.shape)
            for j in range(d):
                for k in range(d):
                    out[j, k] = axis_derivative(self.V.values[k], self.grid, j)
            self._grad_V = out
        return self._grad_V


@dataclass(frozen=True)
class GaugeSpec:
    """Tabulated gauge function z(t); linear interpolation between samples."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        z = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != z.shape or t.size < 2:
            raise Rejection("gauge table needs matching 1d times/values, >= 2 samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(z))):
            raise Rejection("gauge table contains non-finite entries")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", z)

    def z(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def integral(self, t0: float, t1: float) -> float:
        """int_{t0}^{t1} z dt by trapezoid on the refined sample set."""
        pts = np.unique(np.concatenate([[t0, t1], self.times[(self.times > min(t0, t1)) & (self.times < max(t0, t1))]]))
        zs = np.interp(pts, self.times, self.values)
        val = np.trapezoid(zs, pts)
        return float(val if t1 >= t0 else -val)


# ---------------------------------------------------------------------------
# field extraction
# ---------------------------------------------------------------------------

def extract_density(psi: ComplexField) -> ScalarField:
    if not np.all(np.isfinite(psi.values)):
        raise Rejection("psi contains non-finite entries")
    return ScalarField(psi.grid, np.abs(psi.values) ** 2, psi.time)


def _density_mask(f: np.ndarray, floor_rel: float):
    fmax = float(f.max())
    if not fmax > 0.0:
        raise Rejection("density vanishes everywhere")
    floor = floor_rel * fmax
    return f >= floor, floor


def extract_velocity(
    psi: ComplexField, constants: PhysicalConstants, floor_rel: float = DEFAULT_FLOOR_REL
) -> VectorField:
    """V = hbar Im(psi* grad psi) / (m |psi|^2), nearest-filled below the floor."""
    f = np.abs(psi.values) ** 2
    mask, floor = _density_mask(f, floor_rel)
    if not mask.any():
        raise Rejection("density below floor everywhere; velocity undefined")
    grid = psi.grid
    comps = np.empty((grid.dim, *grid.shape))
    denom = constants.mass * np.maximum(f, floor)
    for k in range(grid.dim):
        dpsi = axis_derivative(psi.values, grid, k, spectral_floor=SPECTRAL_FLOOR)
        vk = constants.hbar * np.imag(np.conj(psi.values) * dpsi) / denom
        comps[k] = fill_nearest(vk, mask)
    return VectorField(grid, comps, psi.time)


def _axis_winding(theta: np.ndarray, grid: GridSpec, axis: int) -> int:
    """Integer phase winding along a periodic axis (0 for trivial phases)."""
    th = np.moveaxis(theta, axis, -1)
    line = th.reshape(-1, th.shape[-1])[0]
    incs = np.angle(np.exp(1j * (np.diff(line, append=line[0]))))
    return int(np.round(np.sum(incs) / (2.0 * np.pi)))


def extract_phase(
    psi: ComplexField, constants: PhysicalConstants, floor_rel: float = DEFAULT_FLOOR_REL
) -> ScalarField:
    """S = hbar * unwrapped arg(psi), single branch (no vortices).

    Plane-wave windings on periodic axes are removed before unwrapping and
    restored as an explicit linear term, so S is smooth and single-valued on
    the box even when psi carries integer winding.
    """
    f = np.abs(psi.values) ** 2
    mask, _ = _density_mask(f, floor_rel)
    theta = np.angle(psi.values)
    grid = psi.grid
    mesh = grid.meshgrid()
    linear = np.zeros(grid.shape)
    for ax in range(grid.dim):
        if grid.periodic[ax]:
            w = _axis_winding(theta, grid, ax)
            if w != 0:
                L = grid.upper[ax] - grid.lower[ax]
                linear = linear + 2.0 * np.pi * w * (mesh[ax] - grid.lower[ax]) / L
    residual = np.angle(np.exp(1j * (theta - linear)))
    for ax in range(grid.dim):
        residual = np.unwrap(residual, axis=ax)
    theta_u = residual + linear
    # unwrap picks the smallest jump per cell; detect aliasing by comparing
    # against the velocity-implied increment m V h / hbar, which comes from
    # psi itself rather than from the folded angle
    V = extract_velocity(psi, constants, floor_rel).values
    for ax in range(grid.dim):
        h = grid.spacing(ax)
        d_phase = np.diff(theta_u, axis=ax)
        v_mid = 0.5 * (
            np.take(V[ax], range(mask.shape[ax] - 1), axis=ax)
            + np.take(V[ax], range(1, mask.shape[ax]), axis=ax)
        )
        d_vel = constants.mass * v_mid * h / constants.hbar
        both = np.logical_and(
            np.take(mask, range(mask.shape[ax] - 1), axis=ax),
            np.take(mask, range(1, mask.shape[ax]), axis=ax),
        )
        if np.any(np.abs(d_phase - d_vel)[both] > np.pi):
            raise Rejection(
                f"phase too coarse on axis {ax}: unwrapped increment disagrees "
                "with the velocity-implied increment by more than pi"
            )
    return ScalarField(grid, constants.hbar * theta_u, psi.time)


def quantum_potential(
    f: ScalarField,
    U: ScalarField | np.ndarray,
    constants: PhysicalConstants,
    floor_rel: float = DEFAULT_FLOOR_REL,
) -> ScalarField:
    """U_qm = -(hbar^2/2m)(1/2 lap ln f + 1/4 |grad ln f|^2) + U.

    Evaluated as -(hbar^2/2m) lap(sqrt f)/sqrt f + U, the same expression
    algebraically, but all differentiation acts on the smooth amplitude
    sqrt(f); only the final division is masked and nearest-filled.  That
    keeps near-node noise amplification at the sqrt(f) level instead of f.
    """
    fv = f.values
    mask, floor = _density_mask(fv, floor_rel)
    s = np.sqrt(np.maximum(fv, 0.0))
    lap_s = np.zeros(f.grid.shape)
    for k in range(f.grid.dim):
        lap_s += axis_derivative(s, f.grid, k, order=2, spectral_floor=SPECTRAL_FLOOR)
    bohm = lap_s / np.maximum(s, np.sqrt(floor))
    uq = -(constants.hbar**2 / (2.0 * constants.mass)) * fill_nearest(bohm, mask)
    Uv = U.values if isinstance(U, ScalarField) else np.asarray(U)
    return ScalarField(f.grid, uq + Uv, f.time)


def quantum_force(u_qm: ScalarField) -> VectorField:
    g = gradient(u_qm)
    return VectorField(u_qm.grid, -g.values, u_qm.time)


def directional_temperatures(
    f: ScalarField,
    constants: PhysicalConstants,
    floor_rel: float = DEFAULT_FLOOR_REL,
    warn_nonpositive: bool = True,
) -> np.ndarray:
    """T_i = (hbar^2/4m) int f (d_i ln f)^2 dr = (hbar^2/m) int (d_i sqrt f)^2 dr."""
    fv = f.values
    mask, _ = _density_mask(fv, floor_rel)
    grid = f.grid
    s = np.sqrt(np.maximum(fv, 0.0))
    T = np.empty(grid.dim)
    for k in range(grid.dim):
        ds = axis_derivative(s, grid, k, spectral_floor=SPECTRAL_FLOOR)
        integrand = np.where(mask, ds**2, 0.0)
        T[k] = constants.hbar**2 / constants.mass * integrate(integrand, grid)
    if warn_nonpositive and np.any(T <= 1e-14 * max(T.max(), 1.0)):
        import warnings

        warnings.warn("directional temperature vanishes (uniform density?)", stacklevel=2)
    return T


def extract_fluid_state(
    psi: ComplexField,
    potential,
    constants: PhysicalConstants,
    floor_rel: float = DEFAULT_FLOOR_REL,
) -> FluidState:
    """Full Madelung pipeline at one time instant.

    ``potential`` is a PotentialSpec (grad U analytic for free/harmonic) or a
    plain array/ScalarField of U values (grad U by the grid operators).

    Every derived field, including F = -grad U_qm and the velocity gradient
    the closures need, comes from spectral/4th-order derivatives of psi and
    sqrt(f) directly; divisions by the density are masked and nearest-filled
    afterwards, and nothing differentiates a filled field.
    """
    from .schrodinger import PotentialSpec, potential_gradient_on_grid, potential_on_grid

    grid = psi.grid
    d = grid.dim
    if isinstance(potential, PotentialSpec):
        U = potential_on_grid(potential, grid, constants)
        grad_U = potential_gradient_on_grid(potential, grid, constants)
    else:
        U = potential.values if isinstance(potential, ScalarField) else np.asarray(potential)
        grad_U = gradient(ScalarField(grid, U, psi.time)).values

    f = extract_density(psi)
    mask, floor = _density_mask(f.values, floor_rel)
    if not mask.any():
        raise Rejection("density below floor everywhere")
    s = np.abs(psi.values)
    s_safe = np.maximum(s, np.sqrt(floor))
    f_safe = np.maximum(f.values, floor)

    dpsi = [axis_derivative(psi.values, grid, k, spectral_floor=SPECTRAL_FLOOR) for k in range(d)]
    ds = [axis_derivative(s, grid, k, spectral_floor=SPECTRAL_FLOOR) for k in range(d)]
    lap_s = np.zeros(grid.shape)
    for k in range(d):
        lap_s += axis_derivative(s, grid, k, order=2, spectral_floor=SPECTRAL_FLOOR)

    hbar, m = constants.hbar, constants.mass
    glnf = np.stack([fill_nearest(2.0 * ds[k] / s_safe, mask) for k in range(d)])
    V = np.stack(
        [fill_nearest(hbar * np.imag(np.conj(psi.values) * dpsi[k]) / (m * f_safe), mask)
         for k in range(d)]
    )
    grad_V = np.empty((d, d, *grid.shape))
    for j in range(d):
        for k in range(j, d):
            d2 = axis_derivative(dpsi[k], grid, j, spectral_floor=SPECTRAL_FLOOR)
            num = np.imag(np.conj(dpsi[j]) * dpsi[k] + np.conj(psi.values) * d2)
            gv = hbar / m * num / f_safe - V[k] * glnf[j]
            grad_V[j, k] = fill_nearest(gv, mask)
            if k != j:
                # grad S is curl-free, so d_j V_k = d_k V_j; symmetrize exactly
                grad_V[k, j] = grad_V[j, k]

    bohm = fill_nearest(lap_s / s_safe, mask)
    uqm = ScalarField(grid, -(hbar**2 / (2.0 * m)) * bohm + U, psi.time)
    Fv = np.empty((d, *grid.shape))
    for k in range(d):
        dlap = axis_derivative(lap_s, grid, k, spectral_floor=SPECTRAL_FLOOR)
        fb = hbar**2 / (2.0 * m) * (dlap / s_safe - lap_s * ds[k] / s_safe**2)
        Fv[k] = fill_nearest(fb, mask) - grad_U[k]
    F = VectorField(grid, Fv, psi.time)

    S = extract_phase(psi, constants, floor_rel)
    T = directional_temperatures(f, constants, floor_rel, warn_nonpositive=False)
    return FluidState(
        f=f, S=S, V=VectorField(grid, V, psi.time), U_qm=uqm, F=F, T=T,
        time=psi.time, mask=mask, floor=floor, mass=constants.mass,
        _grad_lnf=glnf, _grad_V=grad_V,
    )


# ---------------------------------------------------------------------------
# gauge transformation and residuals
# ---------------------------------------------------------------------------

def apply_gauge(
    state: FluidState, U: ScalarField, gauge: GaugeSpec, t0: float = 0.0
) -> tuple[FluidState, ScalarField]:
    """S -> S - int z dt', U -> U + z(t); f, V, U_qm - U and F untouched."""
    zt = gauge.z(state.time)
    shift = gauge.integral(t0, state.time)
    S_new = ScalarField(state.S.grid, state.S.values - shift, state.S.time)
    U_new = ScalarField(U.grid, U.values + zt, U.time)
    uqm_new = ScalarField(state.U_qm.grid, state.U_qm.values + zt, state.U_qm.time)
    new_state = replace(state, S=S_new, U_qm=uqm_new)
    return new_state, U_new


def hydro_residuals(
    states: list[FluidState], time_stencil: str = "centered"
) -> tuple[ScalarField, VectorField]:
    """Continuity and quantum-Newton residuals at the middle snapshot.

    residual_c = Df/Dt + f div V,   residual_n = DV/Dt - F/m,
    with the time derivative from neighbouring snapshots and every spatial
    term from the middle one.  div V comes from the snapshot's own velocity
    gradient (derived from psi at extraction), never from re-differentiating
    the nearest-filled V field.  Entries outside the intersection of the
    three density masks are zeroed: filled values at a moving mask edge
    would otherwise corrupt the time derivative.
    ``time_stencil='forward'`` drops to first order (convergence-test control).
    """
    if len(states) < 3:
        raise Rejection("need >= 3 consecutive snapshots for time differencing")
    mid = len(states) // 2
    a, b, c = states[mid - 1], states[mid], states[mid + 1]
    if not (a.grid == b.grid == c.grid):
        raise Rejection("snapshots live on different grids")
    dt1, dt2 = b.time - a.time, c.time - b.time
    if not np.isclose(dt1, dt2, rtol=1e-8):
        raise Rejection("snapshots are not uniformly spaced in time")
    if time_stencil == "centered":
        dfdt = (c.f.values - a.f.values) / (dt1 + dt2)
        dVdt = (c.V.values - a.V.values) / (dt1 + dt2)
    elif time_stencil == "forward":
        dfdt = (c.f.values - b.f.values) / dt2
        dVdt = (c.V.values - b.V.values) / dt2
    else:
        raise Rejection(f"unknown time stencil {time_stencil!r}")
    grid = b.grid
    grad_f = gradient(b.f).values
    gV = b.grad_V()
    div_V = np.einsum("kk...->...", gV)
    res_c = dfdt + np.einsum("k...,k...->...", b.V.values, grad_f) + b.f.values * div_V
    adv = np.einsum("j...,jk...->k...", b.V.values, gV)
    res_n = dVdt + adv - b.F.values / b.mass
    mask = a.mask & b.mask & c.mask
    res_c = np.where(mask, res_c, 0.0)
    res_n = np.where(mask[None], res_n, 0.0)
    return ScalarField(grid, res_c, b.time), VectorField(grid, res_n, b.time)


def vorticity(V: VectorField) -> ScalarField | VectorField:
    """curl of V: scalar for d=2, 3-vector for d=3; rejected for d=1."""
    d = V.grid.dim
    if d == 1:
        raise Rejection("vorticity undefined in one dimension")
    dv = lambda k, ax: axis_derivative(V.values[k], V.grid, ax)
    if d == 2:
        return ScalarField(V.grid, dv(1, 0) - dv(0, 1), V.time)
    curl = np.stack(
        [dv(2, 1) - dv(1, 2), dv(0, 2) - dv(2, 0), dv(1, 0) - dv(0, 1)]
    )
    return VectorField(V.grid, curl, V.time)


def reconstruct_psi(state: FluidState, constants: PhysicalConstants) -> ComplexField:
    """sqrt(f) exp(i S / hbar), the Madelung round trip."""
    values = np.sqrt(np.maximum(state.f.values, 0.0)) * np.exp(1j * state.S.values / constants.hbar)
    return ComplexField(state.grid, values, state.time)


# ---------------------------------------------------------------------------
# Heisenberg diagnostics
# ---------------------------------------------------------------------------

def mean_position(f: ScalarField) -> np.ndarray:
    mesh = f.grid.meshgrid()
    return np.array([integrate(f.values * mesh[k], f.grid) for k in range(f.grid.dim)])


def position_variance(f: ScalarField) -> np.ndarray:
    mesh = f.grid.meshgrid()
    mu = mean_position(f)
    return np.array(
        [integrate(f.values * (mesh[k] - mu[k]) ** 2, f.grid) for k in range(f.grid.dim)]
    )


def momentum_spectral(psi: ComplexField, constants: PhysicalConstants):
    """(<p_i>, <(dp_i)^2>) per axis from the Fourier representation of psi."""
    grid = psi.grid
    if not all(grid.periodic):
        raise Rejection("spectral momentum moments require a periodic grid")
    psik = np.fft.fftn(psi.values)
    w = np.abs(psik) ** 2
    w /= w.sum()
    mean = np.empty(grid.dim)
    var = np.empty(grid.dim)
    for ax in range(grid.dim):
        k = 2.0 * np.pi * np.fft.fftfreq(grid.n[ax], d=grid.spacing(ax))
        shape = [1] * grid.dim
        shape[ax] = grid.n[ax]
        p = constants.hbar * k.reshape(shape)
        mean[ax] = float(np.sum(p * w))
        var[ax] = float(np.sum(p**2 * w)) - mean[ax] ** 2
    return mean, var


def momentum_parts(state: FluidState, constants: PhysicalConstants):
    """Density part m*T_i and phase part <(d_i S)^2> - <d_i S>^2 (via m V_i)."""
    part_a = constants.mass * state.T
    d = state.grid.dim
    part_b = np.empty(d)
    for k in range(d):
        pk = constants.mass * state.V.values[k]
        mean = integrate(state.f.values * pk, state.grid)
        part_b[k] = integrate(state.f.values * pk**2, state.grid) - mean**2
    return part_a, part_b


def heisenberg_products(state: FluidState, psi: ComplexField, constants: PhysicalConstants):
    """Per-axis dict of uncertainty products and their ingredients."""
    dr2 = position_variance(state.f)
    _, dp2 = momentum_spectral(psi, constants)
    part_a, part_b = momentum_parts(state, constants)
    return {
        "position_variance": dr2,
        "momentum_variance_spectral": dp2,
        "part_density": part_a,
        "part_phase": part_b,
        "product": dr2 * dp2,
        "product_modified": dr2 * (part_a + part_b),
    }


# ---------------------------------------------------------------------------
# snapshot I/O: MKFLD channels (f, S, V1..Vd, Uqm, F1..Fd) + JSON sidecar
# ---------------------------------------------------------------------------

def write_fluid_state(path, state: FluidState, constants: PhysicalConstants, psi: ComplexField | None = None):
    d = state.grid.dim
    channels = (
        ["f", "S"]
        + [f"V{k+1}" for k in range(d)]
        + ["Uqm"]
        + [f"F{k+1}" for k in range(d)]
        + [f"glnf{k+1}" for k in range(d)]
        + [f"dV{j+1}{k+1}" for j in range(d) for k in range(d)]
    )
    comps = np.concatenate(
        [state.f.values[None], state.S.values[None], state.V.values,
         state.U_qm.values[None], state.F.values,
         state.grad_lnf(), state.grad_V().reshape(d * d, *state.grid.shape)]
    )
    write_field(path, state.grid, state.time, comps)
    sidecar = {
        "time": state.time,
        "channels": channels,
        "T": [float(t) for t in state.T],
        "floor": state.floor,
        "mass": constants.mass,
        "hbar": constants.hbar,
        "norms": {"f": integrate(state.f)},
    }
    if psi is not None:
        h = heisenberg_products(state, psi, constants)
        sidecar["heisenberg"] = {k: [float(x) for x in v] for k, v in h.items()}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def read_fluid_state(path) -> tuple[FluidState, PhysicalConstants]:
    grid, time, comps = read_field(path)
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    d = grid.dim
    f = ScalarField(grid, comps[0], time)
    S = ScalarField(grid, comps[1], time)
    V = VectorField(grid, comps[2 : 2 + d], time)
    uqm = ScalarField(grid, comps[2 + d], time)
    F = VectorField(grid, comps[3 + d : 3 + 2 * d], time)
    glnf = comps[3 + 2 * d : 3 + 3 * d].copy()
    grad_V = comps[3 + 3 * d : 3 + 3 * d + d * d].reshape(d, d, *grid.shape).copy()
    floor = float(sidecar["floor"])
    constants = PhysicalConstants(hbar=float(sidecar["hbar"]), mass=float(sidecar["mass"]))
    state = FluidState(
        f=f, S=S, V=V, U_qm=uqm, F=F,
        T=np.array(sidecar["T"], dtype=float),
        time=time, mask=f.values >= floor, floor=floor, mass=constants.mass,
        _grad_lnf=glnf, _grad_V=grad_V,
    )
    return state, constants
