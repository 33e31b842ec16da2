"""Run a configured scenario and write its artefacts to an output directory.

Artefacts
---------
``curve.csv``
    One row per converged load step.
``phi_<step>.field`` / ``H_<step>.field``
    Nodal snapshots (history is averaged from quadrature points to nodes).
``checkpoint_<step>.bin`` / ``checkpoint.bin``
    Restart files at snapshot steps and for the last converged step.
``mesh.txt``, ``modulus.txt``
    The mesh used and, for stochastic runs, the per-element moduli.
``run_meta.txt``
    Parameters, defaults, seed, generator and package version.
"""

from __future__ import annotations

import logging
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .. import __version__
from ..assembly import FESpace
from ..mesh import Mesh, element_areas, generate_flawed_mesh, generate_structured_quad, write_mesh
from ..solver import (
    LoadStepResult,
    SimulationState,
    SolverFailure,
    read_checkpoint,
    run_loading,
    write_checkpoint,
)
from ..stochastic import GENERATOR, sample_field, write_field
from .config import Scenario, format_config

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_SOLVER",
    "RunOutcome",
    "build_mesh",
    "nodal_average",
    "write_nodal_field",
    "read_nodal_field",
    "read_curve",
    "write_vtk",
    "run_scenario",
]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

CURVE_HEADER = "step,u_mm,F_N_per_m,stagger_iters,max_phi"
CURVE_COMMENT = (
    "# F is the load per unit thickness (plane strain), compression positive; "
    "u is the imposed top displacement"
)
PHI_MARKS = (0.5, 0.95)


@dataclass
class RunOutcome:
    status: int
    out_dir: Path
    results: list = field(default_factory=list)
    message: str = ""


def build_mesh(scenario: Scenario) -> Mesh:
    """Mesh for the scenario, carrying the stochastic modulus field if any."""
    if scenario.geometry == "intact":
        mesh = generate_structured_quad(scenario.width, scenario.height, scenario.nx, scenario.ny)
    else:
        mesh = generate_flawed_mesh(scenario.width, scenario.height, scenario.flaws,
                                    scenario.target_h)
    if scenario.stochastic is not None:
        spec = replace(scenario.stochastic, n=mesh.n_elements)
        mesh = mesh.with_modulus(sample_field(spec))
    return mesh


def nodal_average(mesh: Mesh, qp_values) -> np.ndarray:
    """Area-weighted average of element-mean quadrature values at nodes."""
    q = np.asarray(qp_values, dtype=float)
    elem = q.mean(axis=1) if q.ndim == 2 else q
    w = element_areas(mesh.nodes, mesh.elements)
    num = np.zeros(mesh.n_nodes)
    den = np.zeros(mesh.n_nodes)
    for j in range(mesh.elements.shape[1]):
        np.add.at(num, mesh.elements[:, j], w * elem)
        np.add.at(den, mesh.elements[:, j], w)
    return num / np.maximum(den, np.finfo(float).tiny)


def write_nodal_field(path, name: str, values, step: int) -> None:
    values = np.asarray(values, dtype=float)
    body = "".join(f"{v:.17g}\n" for v in values)
    Path(path).write_text(f"field {name} nodes {values.size} step {step}\n{body}")


def read_nodal_field(path) -> tuple[str, int, np.ndarray]:
    """Returns ``(name, step, values)``."""
    head, _, body = Path(path).read_text().partition("\n")
    parts = head.split()
    if len(parts) != 6 or parts[0] != "field" or parts[2] != "nodes" or parts[4] != "step":
        raise ValueError(f"{path}: bad field header {head!r}")
    values = np.array([float(s) for s in body.split()])
    if values.size != int(parts[3]):
        raise ValueError(f"{path}: expected {parts[3]} values, found {values.size}")
    return parts[1], int(parts[5]), values


def _curve_row(r: LoadStepResult) -> str:
    return f"{r.step},{r.u * 1e3:.17g},{r.F:.17g},{r.stagger_iters},{r.max_phi:.17g}\n"


def read_curve(path) -> np.ndarray:
    """Rows of ``curve.csv`` as a float array with the header's five columns."""
    rows = [
        [float(x) for x in line.split(",")]
        for line in Path(path).read_text().splitlines()
        if line and not line.startswith("#") and line != CURVE_HEADER
    ]
    return np.array(rows, dtype=float).reshape(-1, 5)


def write_vtk(path, mesh: Mesh, point_data: dict) -> None:
    """Legacy ASCII VTK unstructured grid."""
    cell_type = 5 if mesh.elem_kind == "T3" else 9
    nper = mesh.elements.shape[1]
    lines = ["# vtk DataFile Version 3.0", "crackfield", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (nper + 1)}")
    lines += [f"{nper} " + " ".join(map(str, e)) for e in mesh.elements]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += [str(cell_type)] * mesh.n_elements
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, vals in point_data.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in np.asarray(vals, dtype=float)]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_meta(path, scenario: Scenario, mesh: Mesh, extra: dict) -> None:
    meta = {
        "crackfield_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "n_nodes": mesh.n_nodes,
        "n_elements": mesh.n_elements,
        "element_kind": mesh.elem_kind,
        "h_max_mm": repr(mesh.h_max * 1e3),
        "mesher": mesh.metadata.get("mesher", "structured"),
        "slit_tips": mesh.metadata.get("slit_tips", "none"),
        "rng_generator": GENERATOR if scenario.stochastic is not None else "none",
        "rng_seed": scenario.stochastic.seed if scenario.stochastic is not None else "none",
        "defaulted_keys": " ".join(scenario.defaulted) or "none",
    }
    meta.update(extra)
    text = "# run metadata\n" + "".join(f"{k} = {v}\n" for k, v in meta.items())
    text += "# configuration (defaults filled in)\n" + format_config(scenario)
    Path(path).write_text(text)


def run_scenario(
    scenario: Scenario,
    out_dir=None,
    resume=None,
    threads: Optional[int] = None,
    vtk: bool = False,
) -> RunOutcome:
    """Run ``scenario``; never raises for solver failures.

    Returns a :class:`RunOutcome` whose ``status`` is ``EXIT_OK`` or
    ``EXIT_SOLVER``.  On failure the last converged state is kept in
    ``checkpoint.bin`` together with the partial curve.
    """
    out = Path(out_dir if out_dir is not None else scenario.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = build_mesh(scenario)
    write_mesh(mesh, out / "mesh.txt")
    if mesh.elem_modulus is not None:
        write_field(out / "modulus.txt", mesh.elem_modulus)

    params = scenario.material
    space = FESpace.for_mesh(mesh)
    state = None
    previous: list[str] = []
    peak = 0.0
    if resume is not None:
        state = read_checkpoint(resume)
        expected = (2 * mesh.n_nodes, mesh.n_nodes, (mesh.n_elements, space.n_history))
        if (state.u.size, state.phi.size, state.H.shape) != expected:
            return RunOutcome(EXIT_CONFIG, out, message=f"{resume}: checkpoint does not match mesh")
        curve_path = out / "curve.csv"
        if curve_path.exists():
            rows = read_curve(curve_path)
            rows = rows[rows[:, 0] <= state.step]
            previous = [
                f"{int(r[0])},{r[1]:.17g},{r[2]:.17g},{int(r[3])},{r[4]:.17g}\n" for r in rows
            ]
            peak = float(rows[:, 2].max()) if rows.size else 0.0

    curve = open(out / "curve.csv", "w")
    curve.write(CURVE_COMMENT + "\n" + CURVE_HEADER + "\n" + "".join(previous))
    curve.flush()

    crossed = [False] * len(PHI_MARKS)
    if state is not None:
        crossed = [float(state.phi.max()) >= m for m in PHI_MARKS]

    def snapshot(res: LoadStepResult, st: SimulationState) -> None:
        write_nodal_field(out / f"phi_{st.step}.field", "phi", st.phi, st.step)
        write_nodal_field(out / f"H_{st.step}.field", "H", nodal_average(mesh, st.H), st.step)
        write_checkpoint(out / f"checkpoint_{st.step}.bin", st)
        res.snapshot = f"phi_{st.step}.field"

    last = {"res": None, "state": state}

    def on_step(res: LoadStepResult, st: SimulationState) -> None:
        force = st.step % scenario.snapshot_stride == 0
        for i, mark in enumerate(PHI_MARKS):
            if not crossed[i] and res.max_phi >= mark:
                crossed[i] = True
                force = True
        if force:
            snapshot(res, st)
        curve.write(_curve_row(res))
        curve.flush()
        last["res"], last["state"] = res, st

    status, message = EXIT_OK, "completed"
    results: list = []
    try:
        results, final = run_loading(mesh, params, scenario.program, scenario.solver,
                                     state=state, callback=on_step, peak=peak)
    except SolverFailure as exc:
        status, message = EXIT_SOLVER, f"solver failure: {exc}"
        results, final = exc.results, exc.state
        log.error("%s", message)
    finally:
        curve.close()

    if final is None:
        final = SimulationState.initial(mesh)
    write_checkpoint(out / "checkpoint.bin", final)
    if last["res"] is not None and last["res"].snapshot is None:
        snapshot(last["res"], final)
    if vtk:
        write_vtk(out / f"state_{final.step}.vtk", mesh,
                  {"phi": final.phi, "H": nodal_average(mesh, final.H)})
    _write_meta(out / "run_meta.txt", scenario, mesh, {
        "status": message,
        "exit_code": status,
        "last_step": final.step,
        "threads": threads if threads is not None else "default",
        "resumed_from": resume if resume is not None else "none",
    })
    return RunOutcome(status, out, results, message)
