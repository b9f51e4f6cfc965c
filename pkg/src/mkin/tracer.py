"""Phase-space dynamical system: sampling, characteristics, Liouville weights.

Particles follow dr/dt = v, dv/dt = K/m with the mean-field force of the
selected closure, integrated by classical RK4 against snapshot fields that
interpolate linearly in time and with 4th-order (cubic Lagrange) stencils in
space.  The Liouville exponent

    logJ(t) = int_t0^t div_v(K/m) dt'

rides along as an extra RK4 component using the analytic velocity divergence
of K (exact for every closure here), so exp(logJ) g(x(t), t) = g(x0, t0)
can be checked to integrator accuracy.

Particles that enter a node-masked region (density below the floor) are
frozen and excluded from moments; walls apply bounce-back re-insertion
v -> 2 V_w - v with the position reflected about the wall plane.

Sampling is counter-based (Philox keyed by the seed), so a given seed
reproduces the ensemble bit-for-bit regardless of scheduling.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

from .closure import (
    ClosureSpec,
    RawMoments,
    dlnT_dt_series,
    force_maxwellian_arrays,
    force_positional_arrays,
    force_raw_arrays,
    log_maxwellian,
    positional_grids,
    raw_closure_grids,
)
from .errors import Rejection
from .grid import GridSpec, ScalarField, VectorField, cubic_interpolate
from .kde import linear_bin, silverman_bandwidth, smooth
from .madelung import FluidState, fill_nearest

__all__ = [
    "ParticleEnsemble",
    "BoundaryGeometry",
    "FieldSeries",
    "TrajectoryLog",
    "sample_maxwellian",
    "advance",
    "bounce_back",
    "deposit",
    "wall_consistency_check",
    "liouville_ratios",
    "write_ensemble",
    "read_ensemble",
]

ENSEMBLE_MAGIC = b"MKENS1"


@dataclass
class ParticleEnsemble:
    positions: np.ndarray  # (N, d)
    velocities: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)
    logJ: np.ndarray  # (N,)
    alive: np.ndarray  # (N,) bool
    time: float
    seed: int

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1] if self.positions.ndim == 2 else 0

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.positions.copy(), self.velocities.copy(), self.weights.copy(),
            self.logJ.copy(), self.alive.copy(), self.time, self.seed,
        )


@dataclass(frozen=True)
class BoundaryGeometry:
    """Per-axis boundary kind; walls sit at the grid bounds."""

    kinds: tuple[str, ...]  # 'periodic' or 'wall'
    v_wall: tuple[float, ...] = ()  # wall velocity along its own axis
    f_wall: tuple[float, ...] = ()  # prescribed boundary density

    def __post_init__(self):
        for k in self.kinds:
            if k not in ("periodic", "wall"):
                raise Rejection(f"unknown boundary kind {k!r}")
        if not self.v_wall:
            object.__setattr__(self, "v_wall", (0.0,) * len(self.kinds))
        if not self.f_wall:
            object.__setattr__(self, "f_wall", (0.0,) * len(self.kinds))

    @classmethod
    def from_grid(cls, grid: GridSpec, v_wall=None, f_wall=None) -> "BoundaryGeometry":
        kinds = tuple("periodic" if p else "wall" for p in grid.periodic)
        d = grid.dim
        return cls(kinds, tuple(v_wall or (0.0,) * d), tuple(f_wall or (0.0,) * d))

    def validate(self, grid: GridSpec) -> None:
        for ax, k in enumerate(self.kinds):
            if k == "wall" and grid.periodic[ax]:
                raise Rejection(f"axis {ax}: wall declared on a periodic axis")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))


def _sample_positions(state: FluidState, n: int, rng: np.random.Generator) -> np.ndarray:
    grid = state.grid
    d = grid.dim
    f = state.f.values
    if d == 1:
        x = grid.axis_coords(0)
        h = grid.spacing(0)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * h)])
        if cdf[-1] <= 0:
            raise Rejection("density not normalizable on the grid")
        cdf /= cdf[-1]
        u = rng.random(n)
        return np.interp(u, cdf, x)[:, None]
    fmax = float(f.max())
    if fmax <= 0:
        raise Rejection("density not normalizable on the grid")
    lo = np.array(grid.lower)
    span = np.array(grid.upper) - lo
    out = np.empty((n, d))
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 1024)
        cand = lo + span * rng.random((m, d))
        fv = np.maximum(cubic_interpolate(f, grid, cand), 0.0)
        acc = rng.random(m) * fmax * 1.0000001 < fv
        take = min(int(acc.sum()), n - filled)
        out[filled : filled + take] = cand[acc][:take]
        filled += take
    return out


def sample_maxwellian(
    state: FluidState,
    n: int,
    seed: int,
    k_profile: np.ndarray | None = None,
) -> ParticleEnsemble:
    """Positions from f, velocities Gaussian with per-axis variance T_i/m.

    With a positional k profile the local variance is k_i(x) T_i / m, i.e.
    the ensemble samples the position-dependent Maxwellian.
    """
    d = state.grid.dim
    if np.any(state.T <= 0):
        raise Rejection("cannot sample with non-positive temperatures")
    if n == 0:
        empty = np.empty((0, d))
        return ParticleEnsemble(
            empty, empty.copy(), np.empty(0), np.zeros(0), np.ones(0, bool), state.time, seed
        )
    rng = _rng(seed)
    pos = _sample_positions(state, n, rng)
    normals = rng.standard_normal((n, d))
    V_at = cubic_interpolate(state.V.values, state.grid, pos).T
    T_at = np.broadcast_to(state.T, (n, d))
    if k_profile is not None:
        k_at = np.maximum(cubic_interpolate(np.asarray(k_profile, float), state.grid, pos).T, 1e-12)
        T_at = k_at * state.T
    vel = V_at + normals * np.sqrt(T_at / state.mass)
    w = np.full(n, 1.0 / n)
    return ParticleEnsemble(pos, vel, w, np.zeros(n), np.ones(n, bool), state.time, seed)


# ---------------------------------------------------------------------------
# time-interpolable field series
# ---------------------------------------------------------------------------

class FieldSeries:
    """FluidState snapshots packed for fast force evaluation at particles.

    Channels per snapshot: f, V, F, grad ln f, grad V, trace grad V, plus the
    closure-specific grids (divergence terms for raw moments, k / grad ln k
    for positional temperatures).  dln T_i/dt comes from centered differences
    of the snapshot temperatures: the single source of truth for the closure.
    """

    def __init__(
        self,
        states: list[FluidState],
        closure: ClosureSpec | None = None,
        moments: list[RawMoments] | None = None,
    ):
        if not states:
            raise Rejection("field series needs at least one snapshot")
        states = sorted(states, key=lambda s: s.time)
        self.states = states
        self.closure = closure or ClosureSpec("maxwellian")
        self.grid = states[0].grid
        self.mass = states[0].mass
        self.floor = max(s.floor for s in states)
        self.times = np.array([s.time for s in states])
        if len(states) > 1 and np.any(np.diff(self.times) <= 0):
            raise Rejection("snapshots must have strictly increasing times")
        d = self.grid.dim
        if self.closure.kind == "raw_moments":
            if moments is None or len(moments) != len(states):
                raise Rejection("raw-moment closure needs one RawMoments per snapshot")
        self.T = np.array([s.T for s in states])
        self.dlnT = dlnT_dt_series(self.times, self.T)

        layout = {}
        c = 0

        def reserve(name, count):
            nonlocal c
            layout[name] = slice(c, c + count)
            c += count

        reserve("f", 1)
        reserve("V", d)
        reserve("F", d)
        reserve("glnf", d)
        reserve("gradV", d * d)
        reserve("trG", 1)
        if self.closure.kind == "raw_moments":
            reserve("divpi_f", d)
            reserve("divq_f", d)
        if self.closure.kind == "positional_temperature":
            reserve("k", d)
            reserve("glnk", d * d)
        self.layout = layout
        shape = self.grid.shape
        self.packed = np.empty((len(states), c, *shape))
        for j, s in enumerate(states):
            P = self.packed[j]
            P[layout["f"]] = s.f.values[None]
            P[layout["V"]] = s.V.values
            P[layout["F"]] = s.F.values
            P[layout["glnf"]] = s.grad_lnf()
            gV = s.grad_V()
            P[layout["gradV"]] = gV.reshape(d * d, *shape)
            P[layout["trG"]] = np.einsum("kk...->...", gV)[None]
            if self.closure.kind == "raw_moments":
                dpi, dq = raw_closure_grids(s, moments[j])
                P[layout["divpi_f"]] = dpi
                P[layout["divq_f"]] = dq
            if self.closure.kind == "positional_temperature":
                k, glnk = positional_grids(s, self.closure)
                P[layout["k"]] = k
                P[layout["glnk"]] = glnk.reshape(d * d, *shape)
        self._cache: dict[float, "FieldTable"] = {}

    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def table(self, t: float) -> "FieldTable":
        key = round(float(t), 12)
        if key in self._cache:
            return self._cache[key]
        if len(self.states) == 1:
            blended, T, dlnT = self.packed[0], self.T[0], self.dlnT[0]
        else:
            eps = 1e-9 * max(1.0, abs(float(self.times[-1])))
            if t < self.times[0] - eps or t > self.times[-1] + eps:
                raise Rejection(f"time {t} outside the field series span {self.span()}")
            j = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.states) - 2))
            w = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
            w = float(np.clip(w, 0.0, 1.0))
            blended = (1.0 - w) * self.packed[j] + w * self.packed[j + 1]
            T = (1.0 - w) * self.T[j] + w * self.T[j + 1]
            dlnT = (1.0 - w) * self.dlnT[j] + w * self.dlnT[j + 1]
        tab = FieldTable(self, blended, T, dlnT, float(t))
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[key] = tab
        return tab

    def stability_dt(self) -> float:
        """dt bound from dt * max|dK/dv| / m < 0.1."""
        rate = 0.0
        for j in range(len(self.states)):
            g = np.abs(self.packed[j, self.layout["gradV"]]).max()
            rate = max(rate, g + 0.5 * float(np.abs(self.dlnT[j]).max()))
        return 0.1 / rate if rate > 0 else np.inf


class FieldTable:
    """Fields at one instant; evaluates K and div_v(K/m) at particle positions."""

    def __init__(self, series: FieldSeries, packed, T, dlnT, time):
        self.series = series
        self.packed = packed
        self.T = T
        self.dlnT = dlnT
        self.time = time

    def probe(self, r: np.ndarray) -> np.ndarray:
        return cubic_interpolate(self.packed, self.series.grid, r)

    def _slice(self, probe, name):
        return probe[self.series.layout[name]]

    def force_and_vdiv(self, r: np.ndarray, v: np.ndarray):
        d = self.series.grid.dim
        m = self.series.mass
        pr = self.probe(r)
        V = self._slice(pr, "V").T
        u = v - V
        F = self._slice(pr, "F").T
        glnf = self._slice(pr, "glnf").T
        gradV = np.moveaxis(self._slice(pr, "gradV"), -1, 0).reshape(-1, d, d)
        trG = self._slice(pr, "trG")[0]
        kind = self.series.closure.kind
        if kind == "maxwellian":
            K = force_maxwellian_arrays(m, u, F, glnf, gradV, self.T, self.dlnT)
            vdiv = trG + 0.5 * float(np.sum(self.dlnT))
        elif kind == "raw_moments":
            dpi = self._slice(pr, "divpi_f").T
            dq = self._slice(pr, "divq_f").T
            K = force_raw_arrays(m, u, F, dpi, gradV, self.T, self.dlnT, dq)
            vdiv = trG + 0.5 * np.sum(self.dlnT + 3.0 * dq / self.T, axis=1)
        elif kind == "positional_temperature":
            k_at = self._slice(pr, "k").T
            glnk = np.moveaxis(self._slice(pr, "glnk"), -1, 0).reshape(-1, d, d)
            T_loc = np.maximum(k_at, 1e-12) * self.T
            v_dot_glnk = np.einsum("mi,mji->mj", V, glnk)
            K = force_positional_arrays(
                m, u, F, glnf, gradV, T_loc, self.dlnT, v_dot_glnk, glnk
            )
            vdiv = (
                trG
                + 0.5 * float(np.sum(self.dlnT))
                + 0.5 * np.sum(v_dot_glnk, axis=1)
                + np.einsum("mi,mii->m", u, glnk)
            )
        else:  # pragma: no cover
            raise Rejection(f"unknown closure {kind!r}")
        return K, vdiv

    def density(self, r: np.ndarray) -> np.ndarray:
        return cubic_interpolate(
            self.packed[self.series.layout["f"]], self.series.grid, r
        )[0]


# ---------------------------------------------------------------------------
# boundary conditions
# ---------------------------------------------------------------------------

def bounce_back(ensemble: ParticleEnsemble, geometry: BoundaryGeometry, grid: GridSpec):
    """Re-insert wall-crossing particles with v -> 2 V_w - v (full reversal).

    Positions reflect about the wall plane.  A particle exactly co-moving
    with the wall (|v - V_w| = 0) is left in place and flagged.
    """
    geometry.validate(grid)
    r, v = ensemble.positions, ensemble.velocities
    report = {"reflected": 0, "stuck": 0}
    for ax, kind in enumerate(geometry.kinds):
        if kind != "wall":
            continue
        vw = np.zeros(grid.dim)
        vw[ax] = geometry.v_wall[ax]
        for bound, side in ((grid.lower[ax], "lower"), (grid.upper[ax], "upper")):
            crossed = (r[:, ax] < bound) if side == "lower" else (r[:, ax] > bound)
            crossed &= ensemble.alive
            if not crossed.any():
                continue
            rel = v[crossed] - vw
            stuck = np.all(rel == 0.0, axis=1)
            report["stuck"] += int(stuck.sum())
            move = np.where(crossed)[0][~stuck]
            r[move, ax] = 2.0 * bound - r[move, ax]
            v[move] = 2.0 * vw - v[move]
            report["reflected"] += move.size
    return ensemble, report


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    indices: np.ndarray
    times: np.ndarray
    positions: np.ndarray  # (K, m, d)
    velocities: np.ndarray
    logJ: np.ndarray  # (K, m)

    def to_csv(self, path):
        d = self.positions.shape[2]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "particle"]
                + [f"r{k+1}" for k in range(d)]
                + [f"v{k+1}" for k in range(d)]
                + ["logJ"]
            )
            for i, t in enumerate(self.times):
                for j, p in enumerate(self.indices):
                    writer.writerow(
                        [repr(float(t)), int(p)]
                        + [repr(float(x)) for x in self.positions[i, j]]
                        + [repr(float(x)) for x in self.velocities[i, j]]
                        + [repr(float(self.logJ[i, j]))]
                    )


def advance(
    ensemble: ParticleEnsemble,
    series: FieldSeries,
    dt: float,
    steps: int,
    geometry: BoundaryGeometry | None = None,
    record_indices=None,
    record_every: int = 1,
) -> tuple[ParticleEnsemble, dict]:
    """RK4 on (r, v, logJ); returns the advanced ensemble and a run report."""
    ens = ensemble.copy()
    if steps == 0:
        return ens, {"frozen": 0, "reflected": 0, "stuck": 0, "trajectory": None}
    bound = series.stability_dt()
    if dt > bound:
        import warnings

        warnings.warn(f"dt={dt:g} exceeds the stability bound {bound:g}", stacklevel=2)
    if geometry is not None:
        geometry.validate(series.grid)
    log = None
    if record_indices is not None:
        record_indices = np.asarray(record_indices, dtype=int)
        n_rec = steps // record_every + 1
        d = series.grid.dim
        log = TrajectoryLog(
            record_indices,
            np.empty(n_rec),
            np.empty((n_rec, record_indices.size, d)),
            np.empty((n_rec, record_indices.size, d)),
            np.empty((n_rec, record_indices.size)),
        )
        _snap_log(log, 0, ens)
    t = ens.time
    frozen = reflected = stuck = 0
    rec_row = 1
    for step in range(steps):
        alive = ens.alive
        if alive.any():
            r = ens.positions[alive]
            v = ens.velocities[alive]
            tab0 = series.table(t)
            tabh = series.table(t + 0.5 * dt)
            tab1 = series.table(t + dt)

            a1, l1 = tab0.force_and_vdiv(r, v)
            a1 /= series.mass
            r2 = r + 0.5 * dt * v
            v2 = v + 0.5 * dt * a1
            a2, l2 = tabh.force_and_vdiv(r2, v2)
            a2 /= series.mass
            r3 = r + 0.5 * dt * v2
            v3 = v + 0.5 * dt * a2
            a3, l3 = tabh.force_and_vdiv(r3, v3)
            a3 /= series.mass
            r4 = r + dt * v3
            v4 = v + dt * a3
            a4, l4 = tab1.force_and_vdiv(r4, v4)
            a4 /= series.mass

            ens.positions[alive] = r + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
            ens.velocities[alive] = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            ens.logJ[alive] += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)

            if geometry is not None:
                ens, rep = bounce_back(ens, geometry, series.grid)
                reflected += rep["reflected"]
                stuck += rep["stuck"]
            # node handling: freeze particles that entered f < floor
            f_new = tab1.density(ens.positions[alive])
            entered = f_new < series.floor
            if entered.any():
                idx = np.where(alive)[0][entered]
                ens.alive[idx] = False
                frozen += idx.size
        t += dt
        ens.time = t
        if log is not None and (step + 1) % record_every == 0:
            _snap_log(log, rec_row, ens)
            rec_row += 1
    report = {"frozen": frozen, "reflected": reflected, "stuck": stuck, "trajectory": log}
    return ens, report


def _snap_log(log: TrajectoryLog, row: int, ens: ParticleEnsemble) -> None:
    log.times[row] = ens.time
    log.positions[row] = ens.positions[log.indices]
    log.velocities[row] = ens.velocities[log.indices]
    log.logJ[row] = ens.logJ[log.indices]


# ---------------------------------------------------------------------------
# deposition and diagnostics
# ---------------------------------------------------------------------------

def deposit(
    ensemble: ParticleEnsemble,
    grid: GridSpec,
    bandwidth=None,
    mass: float = 1.0,
    min_alive: int = 2,
):
    """Kernel-density estimates (f_hat, V_hat, T_hat) from the alive particles."""
    alive = ensemble.alive
    if int(alive.sum()) < min_alive:
        raise Rejection("too few alive particles to deposit")
    pos = ensemble.positions[alive]
    vel = ensemble.velocities[alive]
    w = ensemble.weights[alive]
    bw = silverman_bandwidth(pos, w) if bandwidth is None else np.asarray(bandwidth, float)
    from .grid import quadrature_weights

    qw = quadrature_weights(grid)
    mass_grid = smooth(linear_bin(pos, w, grid), grid, bw)
    f_hat = mass_grid / qw
    d = grid.dim
    V_hat = np.empty((d, *grid.shape))
    guard = mass_grid > 1e-14 * float(mass_grid.max())
    for k in range(d):
        mom = smooth(linear_bin(pos, w * vel[:, k], grid), grid, bw)
        V_hat[k] = fill_nearest(np.where(guard, mom / np.where(guard, mass_grid, 1.0), 0.0), guard)
    V_at = cubic_interpolate(V_hat, grid, pos).T
    u = vel - V_at
    wsum = float(w.sum())
    T_hat = mass * (w @ u**2) / wsum
    return (
        ScalarField(grid, f_hat, ensemble.time),
        VectorField(grid, V_hat, ensemble.time),
        T_hat,
    )


def wall_consistency_check(
    ensemble: ParticleEnsemble,
    geometry: BoundaryGeometry,
    grid: GridSpec,
    shell_width: int = 3,
    min_population: int = 10,
) -> dict:
    """Mean shell velocity vs V_w and shell density vs f_w, with error bars."""
    geometry.validate(grid)
    alive = ensemble.alive
    pos = ensemble.positions[alive]
    vel = ensemble.velocities[alive]
    w = ensemble.weights[alive]
    walls = []
    for ax, kind in enumerate(geometry.kinds):
        if kind != "wall":
            continue
        h = grid.spacing(ax)
        width = shell_width * h
        for bound, side in ((grid.lower[ax], "lower"), (grid.upper[ax], "upper")):
            inside = (
                pos[:, ax] <= bound + width if side == "lower" else pos[:, ax] >= bound - width
            )
            n_in = int(inside.sum())
            vw = np.zeros(grid.dim)
            vw[ax] = geometry.v_wall[ax]
            entry = {
                "axis": ax,
                "side": side,
                "population": n_in,
                "v_wall": vw.tolist(),
                "f_wall": geometry.f_wall[ax],
            }
            if n_in < min_population:
                entry["conclusive"] = False
                walls.append(entry)
                continue
            vv = vel[inside]
            mean_v = vv.mean(axis=0)
            se_v = vv.std(axis=0, ddof=1) / np.sqrt(n_in)
            shell_volume = width * np.prod(
                [grid.upper[k] - grid.lower[k] for k in range(grid.dim) if k != ax]
            )
            mass_in = float(w[inside].sum())
            dens = mass_in / shell_volume
            se_dens = float(np.sqrt(np.sum(w[inside] ** 2))) / shell_volume
            entry.update(
                {
                    "conclusive": True,
                    "mean_velocity": mean_v.tolist(),
                    "se_velocity": se_v.tolist(),
                    "velocity_ok": bool(np.all(np.abs(mean_v - vw) <= 4.0 * np.maximum(se_v, 1e-300))),
                    "density": dens,
                    "se_density": se_dens,
                    "density_gap": dens - geometry.f_wall[ax],
                }
            )
            walls.append(entry)
    return {"walls": walls, "conclusive": all(e.get("conclusive", False) for e in walls) if walls else False}


def liouville_ratios(
    state0: FluidState, state_t: FluidState, ens0: ParticleEnsemble, ens_t: ParticleEnsemble
) -> np.ndarray:
    """exp(logJ) g_M(x_t, t) / g_M(x_0, t0) per still-alive particle (== 1 ideally)."""
    ok = ens0.alive & ens_t.alive
    lg0 = log_maxwellian(state0, ens0.positions[ok], ens0.velocities[ok])
    lgt = log_maxwellian(state_t, ens_t.positions[ok], ens_t.velocities[ok])
    return np.exp(ens_t.logJ[ok] - ens0.logJ[ok] + lgt - lg0)


# ---------------------------------------------------------------------------
# checkpoint I/O (magic "MKENS1")
# ---------------------------------------------------------------------------

def _record_dtype(d: int) -> np.dtype:
    return np.dtype(
        [("r", "<f8", (d,)), ("v", "<f8", (d,)), ("w", "<f8"), ("logJ", "<f8"), ("alive", "u1")]
    )


def write_ensemble(path, ensemble: ParticleEnsemble) -> None:
    d = ensemble.dim
    rec = np.empty(ensemble.n, dtype=_record_dtype(d))
    rec["r"] = ensemble.positions
    rec["v"] = ensemble.velocities
    rec["w"] = ensemble.weights
    rec["logJ"] = ensemble.logJ
    rec["alive"] = ensemble.alive.astype("u1")
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<qqdq", ensemble.n, d, float(ensemble.time), int(ensemble.seed)))
        fh.write(rec.tobytes())


def read_ensemble(path) -> ParticleEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != ENSEMBLE_MAGIC:
            raise Rejection(f"{path}: bad magic {magic!r}, expected {ENSEMBLE_MAGIC!r}")
        n, d, time, seed = struct.unpack("<qqdq", fh.read(32))
        rec = np.frombuffer(fh.read(n * _record_dtype(d).itemsize), dtype=_record_dtype(d))
    return ParticleEnsemble(
        rec["r"].astype(float).reshape(n, d),
        rec["v"].astype(float).reshape(n, d),
        rec["w"].astype(float),
        rec["logJ"].astype(float),
        rec["alive"].astype(bool),
        time,
        seed,
    )
