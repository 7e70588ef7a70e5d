"""Time loop: fluid step, elastic mesh update, species step; plus output and restart files."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import geometry as geo
from .config import Scenario
from .errors import AleReactError, InvariantError, InvertedElementError
from .fluid import FluidDofs, FluidSettings, FluidState, picard_fluid_step
from .mesh import (Domain, FittedMesh, generate_fitted_mesh, needs_regeneration, quality,
                   regenerate_and_interpolate, update_vertices)
from .meshmotion import solve_elastic_displacement
from .params import validate_network
from .transport import SpeciesLayout, SpeciesState, initial_state, species_step, surface_tension

log = logging.getLogger(__name__)


class StepFailure(AleReactError):
    """Wraps a module error with the index of the last completed step."""

    def __init__(self, cause: AleReactError, last_step: int):
        super().__init__(f"{cause} (last completed step {last_step})")
        self.cause = cause
        self.code = cause.code
        self.last_step = last_step


@dataclass
class StepInfo:
    picard_iterations: int = 0
    regenerated: bool = False
    gate_values: dict | None = None


class Simulation:
    """State and stepping for one scenario (one process, single-threaded)."""

    def __init__(self, scenario: Scenario, check: bool = False):
        self.scenario = scenario
        self.params = scenario.params
        self.check = check
        self.dt = scenario.dt
        self.step_index = 0
        self.t = 0.0
        polys = [s.polyline() for s in scenario.interfaces]
        h = scenario.interface_spacing()
        kinds = dict(scenario.boundary_kinds)
        self.mesh = generate_fitted_mesh(scenario.domain, polys, h, scenario.h_bulk, kinds)
        self.network = validate_network(scenario.network, self.mesh.n_interfaces)
        layout = SpeciesLayout(self.mesh, self.network, scenario.dirichlet)
        self.species = initial_state(layout)
        self.fluid = FluidState.zeros(self.mesh)
        self.w = np.zeros((self.mesh.n_vertices, 2))
        self.jac = np.ones(self.mesh.n_triangles)
        self._initial_ratio = quality(self.mesh)[1]
        self.settings = FluidSettings.from_params(self.params, self.dt, picard_tol=scenario.picard_tol,
                                                  picard_max_iter=scenario.picard_max_iter,
                                                  clamp_gamma=scenario.clamp_gamma)
        self.gate_values = {}
        self.last = StepInfo()
        self._reference = None
        self._t0, self._s0 = 0.0, 0

    # ------------------------------------------------------------------ stepping
    def _regenerate(self):
        mesh, fluid, species = regenerate_and_interpolate(self.mesh, self.fluid, self.species)
        self.mesh, self.fluid, self.species = mesh, fluid, species
        self.w = np.zeros((mesh.n_vertices, 2))
        self.jac = np.ones(mesh.n_triangles)
        self._initial_ratio = max(self._initial_ratio, quality(mesh)[1])
        log.info("step %d: mesh regenerated (%d vertices)", self.step_index, mesh.n_vertices)

    def _fluid_and_motion(self):
        gamma = surface_tension(self.species, self.params.E)
        res = picard_fluid_step(self.mesh, self.fluid, self.w, self.jac, gamma, self.settings,
                                FluidDofs(self.mesh))
        disp = [x - self.mesh.interface_positions(i) for i, x in enumerate(res.X)]
        motion = solve_elastic_displacement(self.mesh, disp, self.dt)
        new_mesh = update_vertices(self.mesh, motion)
        return res, motion, new_mesh

    def step(self) -> StepInfo:
        info = StepInfo()
        dt = self.dt
        if self.scenario.fluid:
            if needs_regeneration(self.mesh, self.scenario.regen_min_angle, self.scenario.regen_max_ratio,
                                  self._initial_ratio):
                self._regenerate()
                info.regenerated = True
            try:
                res, motion, new_mesh = self._fluid_and_motion()
            except InvertedElementError:
                if info.regenerated:
                    raise
                self._regenerate()
                info.regenerated = True
                res, motion, new_mesh = self._fluid_and_motion()
            old_vertices = self.mesh.vertices
            species, sources = species_step(new_mesh, old_vertices, res.velocity, motion.velocity,
                                            self.species, self.params, dt)
            self.mesh = new_mesh
            self.fluid = FluidState(res.velocity, res.pressure_p1, res.pressure_p0, self.t + dt)
            self.w, self.jac = motion.velocity, motion.jacobian
            info.picard_iterations = res.iterations
        else:
            zero_u = np.zeros((self.mesh.n_p2, 2))
            zero_w = np.zeros((self.mesh.n_vertices, 2))
            species, sources = species_step(self.mesh, self.mesh.vertices, zero_u, zero_w,
                                            self.species, self.params, dt)
        self.species = species
        self.gate_values = sources.gate_values
        info.gate_values = sources.gate_values
        self.step_index += 1
        self.t = self._t0 + (self.step_index - self._s0) * dt
        self.species.t = self.t
        self.last = info
        return info

    def record(self, info: StepInfo | None = None) -> dg.DiagnosticsRecord:
        info = info or self.last
        gamma = surface_tension(self.species, self.params.E)
        return dg.collect(self.step_index, self.t, self.mesh, self.fluid,
                          self.species, self.params, gamma, self.gate_values, info.picard_iterations,
                          info.regenerated)

    def check_invariants(self, rec: dg.DiagnosticsRecord, info: StepInfo) -> None:
        """Per-step invariant suite used by --check."""
        if self._reference is None or info.regenerated:
            self._reference = rec
            return
        ref = self._reference
        for i, (a0, a) in enumerate(zip(ref.area, rec.area)):
            if abs(a - a0) > 1e-8 * abs(a0):
                raise InvariantError(f"enclosed area of interface {i + 1} drifted by {a / a0 - 1:.3e}")
        if not self.scenario.dirichlet:
            for k, m0 in ref.masses.items():
                m = rec.masses[k]
                if abs(m - m0) > 1e-10 * max(abs(m0), 1e-300):
                    raise InvariantError(f"mass {k} drifted by {(m - m0) / m0:.3e}")
        if not math.isfinite(rec.energy) or not np.all(np.isfinite(self.fluid.velocity)):
            raise InvariantError("non-finite state")
        if np.min(self.mesh.areas) <= 0:
            raise InvariantError("inverted element")

    # ------------------------------------------------------------------ restart
    def save_checkpoint(self, path) -> None:
        m = self.mesh
        data = dict(
            step=self.step_index, t=self.t, vertices=m.vertices, triangles=m.triangles, regions=m.regions,
            interface_sizes=np.array([len(ix) for ix in m.interfaces]),
            interfaces=np.concatenate(m.interfaces) if m.interfaces else np.zeros(0, int),
            h=m.h, h_bulk=m.h_bulk, velocity=self.fluid.velocity, pressure_p1=self.fluid.pressure_p1,
            pressure_p0=self.fluid.pressure_p0, w=self.w, jac=self.jac, species=self.species.vector(),
            initial_ratio=self._initial_ratio, source=np.array(self.scenario.source))
        np.savez_compressed(path, **data)

    def load_checkpoint(self, path) -> None:
        with np.load(path, allow_pickle=False) as z:
            sizes = z["interface_sizes"]
            flat = z["interfaces"]
            cuts = np.cumsum(sizes)[:-1]
            interfaces = [a.astype(np.int64) for a in np.split(flat, cuts)] if len(sizes) else []
            self.mesh = FittedMesh(z["vertices"].copy(), z["triangles"].copy(), z["regions"].copy(), interfaces,
                                   self.scenario.domain, dict(self.scenario.boundary_kinds),
                                   float(z["h"]), float(z["h_bulk"]))
            layout = SpeciesLayout(self.mesh, self.network, self.scenario.dirichlet)
            self.step_index = int(z["step"])
            self.t = float(z["t"])
            self._t0, self._s0 = self.t, self.step_index
            self.species = SpeciesState.from_vector(layout, z["species"], self.t)
            self.fluid = FluidState(z["velocity"].copy(), z["pressure_p1"].copy(), z["pressure_p0"].copy(), self.t)
            self.w = z["w"].copy()
            self.jac = z["jac"].copy()
            self._initial_ratio = float(z["initial_ratio"])

    # ------------------------------------------------------------------ driver
    def run(self, until: float | None = None, out_dir=None, snapshot_every: int | None = None,
            callback=None, checkpoint_every: int = 0, resume: bool = False) -> list:
        """Step until ``until`` (default: the scenario end time); returns the diagnostics records."""
        until = self.scenario.t_end if until is None else until
        snapshot_every = self.scenario.snapshot_every if snapshot_every is None else snapshot_every
        writer = CsvWriter(Path(out_dir) / "diagnostics.csv", append=resume) if out_dir is not None else None
        if out_dir is not None and not resume:
            (Path(out_dir) / "scenario.ini").write_text(self.scenario.source)
        records = []
        rec = self.record(StepInfo())
        records.append(rec)
        if self.check:
            self.check_invariants(rec, StepInfo())
        if writer and not resume:
            writer.write(rec)
            if snapshot_every:
                write_snapshot(self, Path(out_dir))
        n_steps = int(round((until - self.t) / self.dt))
        try:
            for _ in range(n_steps):
                info = self.step()
                rec = self.record(info)
                records.append(rec)
                if self.check:
                    self.check_invariants(rec, info)
                if writer:
                    writer.write(rec)
                    if snapshot_every and self.step_index % snapshot_every == 0:
                        write_snapshot(self, Path(out_dir))
                    if checkpoint_every and self.step_index % checkpoint_every == 0:
                        self.save_checkpoint(Path(out_dir) / "checkpoint.npz")
                if callback is not None:
                    callback(self, rec)
        except AleReactError as exc:
            raise StepFailure(exc, self.step_index) from exc
        finally:
            if writer:
                writer.close()
        if out_dir is not None:
            self.save_checkpoint(Path(out_dir) / "checkpoint.npz")
        return records


# ---------------------------------------------------------------------------
# output

class CsvWriter:
    """RFC-4180 diagnostics table; the header is fixed by the first row."""

    def __init__(self, path: Path, append: bool = False):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.path = path
        exists = append and path.exists()
        self._fh = open(path, "a" if exists else "w", newline="")
        self._writer = None
        self._fields = None
        if exists:
            with open(path, newline="") as fh:
                self._fields = next(csv.reader(fh), None)
            self._writer = csv.DictWriter(self._fh, fieldnames=self._fields, extrasaction="ignore")

    def write(self, rec: dg.DiagnosticsRecord) -> None:
        row = {k: (f"{v:.15g}" if isinstance(v, float) else v) for k, v in rec.row().items()}
        if self._writer is None:
            self._fields = list(row)
            self._writer = csv.DictWriter(self._fh, fieldnames=self._fields, extrasaction="ignore")
            self._writer.writeheader()
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_csv(path) -> dict:
    """Columns of a diagnostics CSV as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def _vtk_header(title: str) -> list:
    return ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]


def write_snapshot(sim: Simulation, out_dir: Path) -> tuple:
    """Legacy-VTK bulk field file (vertices duplicated per region) and interface polyline file."""
    snap = out_dir / "snapshots"
    snap.mkdir(parents=True, exist_ok=True)
    mesh, lay, st = sim.mesh, sim.species.layout, sim.species
    pts, tris, region_of_point, remap = [], [], [], {}
    offset = 0
    for r in mesh.region_labels:
        verts = mesh.region_vertices(r)
        local = -np.ones(mesh.n_vertices, dtype=np.int64)
        local[verts] = offset + np.arange(len(verts))
        remap[r] = (verts, local)
        pts.append(mesh.vertices[verts])
        tris.append(local[mesh.triangles[mesh.regions == r]])
        region_of_point.append(np.full(len(verts), r))
        offset += len(verts)
    P = np.vstack(pts)
    T = np.vstack(tris)
    regions = np.concatenate(region_of_point)
    lines = _vtk_header(f"{sim.scenario.name} step {sim.step_index} t {sim.t:.15g}")
    lines.append(f"POINTS {len(P)} double")
    lines += [f"{x:.15g} {y:.15g} 0" for x, y in P]
    lines.append(f"CELLS {len(T)} {4 * len(T)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in T]
    lines.append(f"CELL_TYPES {len(T)}")
    lines += ["5"] * len(T)
    lines.append(f"POINT_DATA {len(P)}")
    lines += ["SCALARS region int 1", "LOOKUP_TABLE default"] + [str(int(r)) for r in regions]
    vel = np.vstack([sim.fluid.velocity[remap[r][0]] for r in mesh.region_labels])
    lines.append("VECTORS velocity double")
    lines += [f"{u:.15g} {v:.15g} 0" for u, v in vel]
    pres = np.concatenate([sim.fluid.pressure_p1[remap[r][0]] for r in mesh.region_labels])
    lines += ["SCALARS pressure_p1 double 1", "LOOKUP_TABLE default"] + [f"{v:.15g}" for v in pres]
    for b, spec in enumerate(lay.network.bulk):
        vals = []
        for r in mesh.region_labels:
            verts = remap[r][0]
            if r in spec.regions:
                vals.append(st.bulk[b][lay.vert2dof[b][r][verts]])
            else:
                vals.append(np.zeros(len(verts)))
        lines += [f"SCALARS {spec.name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.15g}" for v in np.concatenate(vals)]
    bulk_path = snap / f"bulk_{sim.step_index:07d}.vtk"
    bulk_path.write_text("\n".join(lines) + "\n")

    lines = _vtk_header(f"{sim.scenario.name} interfaces step {sim.step_index} t {sim.t:.15g}")
    X = [mesh.interface_positions(i) for i in range(mesh.n_interfaces)]
    n = sum(len(x) for x in X)
    lines.append(f"POINTS {n} double")
    for x in X:
        lines += [f"{a:.15g} {b:.15g} 0" for a, b in x]
    lines.append(f"CELLS {n} {3 * n}")
    off = 0
    for x in X:
        J = len(x)
        lines += [f"2 {off + j} {off + (j + 1) % J}" for j in range(J)]
        off += J
    lines.append(f"CELL_TYPES {n}")
    lines += ["3"] * n
    lines.append(f"POINT_DATA {n}")
    ids = np.concatenate([np.full(len(x), i + 1) for i, x in enumerate(X)]) if X else np.zeros(0)
    lines += ["SCALARS interface int 1", "LOOKUP_TABLE default"] + [str(int(i)) for i in ids]
    gamma = surface_tension(st, sim.params.E)
    lines += ["SCALARS gamma double 1", "LOOKUP_TABLE default"] + [f"{v:.15g}" for v in gamma]
    for k, spec in enumerate(lay.network.surface):
        vals = np.zeros(n)
        start = sum(len(x) for x in X[:spec.interface])
        vals[start:start + len(X[spec.interface])] = st.surface[k]
        lines += [f"SCALARS {spec.name} double 1", "LOOKUP_TABLE default"] + [f"{v:.15g}" for v in vals]
    iface_path = snap / f"interface_{sim.step_index:07d}.vtk"
    iface_path.write_text("\n".join(lines) + "\n")
    return bulk_path, iface_path


def error_report(exc: BaseException, last_step: int) -> str:
    from .errors import exit_status
    code = getattr(exc, "code", "error")
    return json.dumps({"error": code, "status": exit_status(exc), "last_step": last_step, "message": str(exc)})
