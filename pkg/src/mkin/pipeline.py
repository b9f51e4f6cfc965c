"""End-to-end scenario runs: solve -> extract -> close -> trace -> verify.

``run`` is literally ``solve`` followed by ``trace``: the solver stage writes
psi and fluid-state snapshots to disk and the tracer stage reads them back,
so a full run and a split solve/trace pair are bit-identical by construction
for the same seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import closure as cl
from . import config as cfgmod
from . import madelung as md
from . import schrodinger as sch
from . import tracer as tr
from .config import ScenarioConfig, dump_config
from .errors import ConfigError, Rejection
from .grid import ComplexField, GridSpec, export_csv, integrate, read_field, write_field
from .verify import (
    VerificationReport,
    check_correspondence,
    check_kinetic_heisenberg,
    heisenberg_field_checks,
)

__all__ = ["build_problem", "solve", "trace", "run_pipeline", "load_fields"]


def build_problem(cfg: ScenarioConfig):
    cfg.validate()
    g = cfg.grid
    grid = GridSpec(
        tuple(float(x) for x in g["lower"]),
        tuple(float(x) for x in g["upper"]),
        tuple(int(x) for x in g["n"]),
        tuple(bool(x) for x in g["periodic"]),
    )
    constants = sch.PhysicalConstants(cfg.constants["hbar"], cfg.constants["mass"])
    kind = cfg.scenario["kind"]
    if kind == "gaussian_packet":
        potential = sch.PotentialSpec("free")
    else:
        potential = sch.PotentialSpec(
            "harmonic", tuple(float(w) for w in cfg.scenario["omega"]),
            tuple(float(c) for c in cfg.scenario["center"]),
        )
    return grid, constants, potential


def initial_psi(cfg: ScenarioConfig, grid: GridSpec, constants) -> ComplexField:
    s = cfg.scenario
    d = grid.dim
    center = tuple(float(c) for c in s["center"])
    if s["kind"] == "gaussian_packet":
        return sch.gaussian_packet(
            grid, center, tuple(float(x) for x in s["sigma0"]),
            tuple(float(k) for k in s["k0"]),
        )
    omega = tuple(float(w) for w in s["omega"])
    if s["kind"] == "harmonic_ground":
        return sch.harmonic_ground(grid, constants, omega, center)
    return sch.harmonic_coherent(
        grid, constants, omega, tuple(float(x) for x in s["displacement"]), center
    )


def _snapshot_schedule(cfg: ScenarioConfig):
    run = cfg.run
    stride = int(run["snapshot_stride"])
    dt = float(run["dt_field"])
    chunks = max(1, round(float(run["t_end"]) / (dt * stride)))
    return dt, stride, chunks, chunks * stride * dt


@dataclass
class SolveResult:
    grid: GridSpec
    constants: sch.PhysicalConstants
    potential: sch.PotentialSpec
    psis: list
    states: list
    t_end: float


def solve(cfg: ScenarioConfig, outdir: str | None = None) -> SolveResult:
    """Reference solve + Madelung extraction; snapshots written if outdir set."""
    grid, constants, potential = build_problem(cfg)
    psi = initial_psi(cfg, grid, constants)
    dt, stride, chunks, t_end = _snapshot_schedule(cfg)
    psis = [psi]
    for _ in range(chunks):
        psi = sch.propagate(psi, potential, constants, dt, stride)
        psis.append(psi)
    states = [md.extract_fluid_state(p, potential, constants) for p in psis]
    if outdir is not None:
        fields_dir = os.path.join(outdir, "fields")
        os.makedirs(fields_dir, exist_ok=True)
        dump_config(cfg, os.path.join(outdir, "config.resolved.ini"))
        for j, (p, st) in enumerate(zip(psis, states)):
            write_field(
                os.path.join(fields_dir, f"psi_{j:04d}.mkfld"),
                grid, p.time, np.stack([p.values.real, p.values.imag]),
            )
            md.write_fluid_state(
                os.path.join(fields_dir, f"state_{j:04d}.mkfld"), st, constants, psi=p
            )
        if "csv" in cfg.output.get("formats", []):
            final = states[-1]
            export_csv(
                os.path.join(outdir, "fields_final.csv"), grid,
                np.concatenate([final.f.values[None], final.V.values]),
                names=["f"] + [f"V{k+1}" for k in range(grid.dim)],
            )
    return SolveResult(grid, constants, potential, psis, states, t_end)


def load_fields(outdir: str):
    """Read back the psi and fluid-state snapshots written by ``solve``."""
    fields_dir = os.path.join(outdir, "fields")
    if not os.path.isdir(fields_dir):
        raise ConfigError(f"no fields directory under {outdir}")
    names = sorted(f for f in os.listdir(fields_dir) if f.startswith("state_") and f.endswith(".mkfld"))
    states, psis = [], []
    constants = None
    for name in names:
        st, constants = md.read_fluid_state(os.path.join(fields_dir, name))
        states.append(st)
        pgrid, ptime, comps = read_field(os.path.join(fields_dir, name.replace("state_", "psi_")))
        psis.append(ComplexField(pgrid, comps[0] + 1j * comps[1], ptime))
    if not states:
        raise ConfigError(f"no snapshots found under {fields_dir}")
    return states, psis, constants


def _geometry(cfg: ScenarioConfig, grid: GridSpec) -> tr.BoundaryGeometry | None:
    kinds = tuple(cfg.boundary["kinds"])
    if all(k == "periodic" for k in kinds):
        return None
    return tr.BoundaryGeometry(
        kinds,
        tuple(float(v) for v in cfg.boundary["v_wall"]),
        tuple(float(v) for v in cfg.boundary["f_wall"]),
    )


def _closure_spec(cfg: ScenarioConfig, grid: GridSpec) -> cl.ClosureSpec:
    kind = cfg.closure["kind"]
    k_profile = None
    if kind == "positional_temperature":
        path = cfg.closure["k_profile_file"]
        if not path:
            raise ConfigError("positional closure requires closure.k_profile_file")
        kgrid, _, comps = read_field(path)
        if kgrid != grid:
            raise ConfigError("k profile grid does not match the scenario grid")
        k_profile = comps
    return cl.ClosureSpec(kind, k_profile)


def _gauge(cfg: ScenarioConfig) -> md.GaugeSpec | None:
    path = cfg.closure["gauge_z_file"]
    if not path:
        return None
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    return md.GaugeSpec(table[:, 0], table[:, 1])


def trace(cfg: ScenarioConfig, outdir: str, report: VerificationReport | None = None):
    """Particle stage against saved fields, verification checks, report."""
    states, psis, constants = load_fields(outdir)
    grid = states[0].grid
    scenario = cfg.scenario["kind"]
    report = report if report is not None else VerificationReport()
    report.meta.setdefault("scenario", scenario)
    report.meta["config"] = cfg.to_dict()
    report.meta["seed"] = cfg.resolve_seed()
    report.meta["grid_n"] = list(grid.n)
    report.meta["n_particles"] = int(cfg.ensemble["n_particles"])
    report.meta["dt_particle"] = float(cfg.run["dt_particle"])
    report.meta["closure"] = cfg.closure["kind"]

    potential = build_problem(cfg)[2]
    for p in psis:
        report.add(
            "psi_norm", integrate(np.abs(p.values) ** 2, grid), 1.0, 1e-10,
            comparator="abs_le", scenario=scenario, time=p.time,
        )
    energies = [sch.energy(p, potential, constants) for p in psis]
    scale = max(abs(energies[0]), 1e-30)
    report.add(
        "energy_drift", max(abs(e - energies[0]) for e in energies) / scale, 0.0,
        1e-6, comparator="abs_le", scenario=scenario,
    )
    for st, p in zip(states, psis):
        report.extend(heisenberg_field_checks(st, p, constants, scenario=scenario))

    gauge = _gauge(cfg)
    if gauge is not None:
        U0 = sch.potential_on_grid(potential, grid, constants)
        st_g, _ = md.apply_gauge(states[-1], md.ScalarField(grid, U0), gauge)
        stable = (
            np.array_equal(st_g.f.values, states[-1].f.values)
            and np.array_equal(st_g.V.values, states[-1].V.values)
            and np.array_equal(st_g.F.values, states[-1].F.values)
        )
        report.add(
            "gauge_bit_stability", 0.0 if stable else 1.0, 0.0, 0.0,
            comparator="abs_le", scenario=scenario,
        )

    spec = _closure_spec(cfg, grid)
    geometry = _geometry(cfg, grid)
    n = int(cfg.ensemble["n_particles"])
    seed = report.meta["seed"]
    bandwidth = None
    if float(cfg.ensemble["bandwidth"]) > 0:
        bandwidth = np.full(grid.dim, float(cfg.ensemble["bandwidth"]))
    ens0 = tr.sample_maxwellian(states[0], n, seed, k_profile=spec.k_profile)
    os.makedirs(outdir, exist_ok=True)
    tr.write_ensemble(os.path.join(outdir, "ensemble_initial.mkens"), ens0)

    t_end = float(states[-1].time)
    dt_p = float(cfg.run["dt_particle"])
    steps = max(1, round(t_end / dt_p))
    dt_p = t_end / steps
    rec_idx = np.arange(min(8, n)) if n else None
    rec_every = max(1, steps // 200)

    if spec.kind == "raw_moments":
        ens = ens0
        log = None
        frozen = reflected = 0
        for j in range(len(states) - 1):
            moments = cl.raw_moments_from_ensemble(ens, states[j], bandwidth=bandwidth)
            series = tr.FieldSeries([states[j], states[j + 1]], spec, [moments, moments])
            seg = states[j + 1].time - states[j].time
            seg_steps = max(1, round(seg / dt_p))
            ens, rep = tr.advance(
                ens, series, seg / seg_steps, seg_steps, geometry=geometry,
                record_indices=rec_idx if j == 0 else None, record_every=rec_every,
            )
            frozen += rep["frozen"]
            reflected += rep["reflected"]
            log = log or rep["trajectory"]
    else:
        series = tr.FieldSeries(states, spec)
        ens, rep = tr.advance(
            ens0, series, dt_p, steps, geometry=geometry,
            record_indices=rec_idx, record_every=rec_every,
        )
        frozen, reflected, log = rep["frozen"], rep["reflected"], rep["trajectory"]

    tr.write_ensemble(os.path.join(outdir, "ensemble_final.mkens"), ens)
    if log is not None:
        log.to_csv(os.path.join(outdir, "trajectories.csv"))

    if n:
        report.add(
            "node_frozen_fraction", frozen / n, 0.0, 1e-3,
            comparator="abs_le", scenario=scenario,
        )
        report.add(
            "mass_drift", float(ens.weights[ens.alive].sum()), float(ens0.weights.sum()),
            1e-3, comparator="abs_le", scenario=scenario,
        )
        report.extend(
            check_correspondence(states[-1], ens, constants, bandwidth=bandwidth, scenario=scenario)
        )
        report.extend(
            check_kinetic_heisenberg(states[-1], ens, psis[-1], constants, scenario=scenario)
        )
        if spec.kind == "maxwellian":
            ratios = tr.liouville_ratios(states[0], states[-1], ens0, ens)
            q999 = float(np.quantile(np.abs(ratios - 1.0), 0.999))
            report.add(
                "liouville_ratio_q999", q999, 0.0, 1e-3,
                comparator="abs_le", scenario=scenario,
            )
            Jcf = cl.jacobian_closed_form_maxwellian(
                states[0], states[-1],
                (ens0.positions[ens.alive], ens0.velocities[ens.alive]),
                (ens.positions[ens.alive], ens.velocities[ens.alive]),
            )
            gap = float(np.quantile(np.abs(Jcf / np.exp(ens.logJ[ens.alive]) - 1.0), 0.999))
            report.add(
                "jacobian_closed_form_gap_q999", gap, 0.0, 1e-3,
                comparator="abs_le", scenario=scenario,
            )
        if geometry is not None:
            wall = tr.wall_consistency_check(ens, geometry, grid)
            report.meta["wall_check"] = wall
    report.finalize_meta()
    report.to_json(os.path.join(outdir, "report.json"))
    return report, ens


def run_pipeline(cfg: ScenarioConfig, outdir: str):
    """solve + trace through the on-disk snapshots; returns (report, exit code)."""
    os.makedirs(outdir, exist_ok=True)
    solve(cfg, outdir)
    report, _ = trace(cfg, outdir)
    return report, (1 if report.hard_failure() else 0)
