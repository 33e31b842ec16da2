"""Displacement-controlled quasi-static staggered solver.

Each load step alternates a displacement solve with the phase field frozen,
a history update ``H <- max(H_prev_step, driving energy)``, and a phase
solve, until the nodal phase field and displacement stop changing.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    FESpace,
    SparseSystem,
    assemble_displacement,
    assemble_phase,
    driving_field,
    internal_force,
)
from .material import MaterialParams, Variant, psi_split
from .mesh import Mesh

__all__ = [
    "LoadProgram",
    "SolverConfig",
    "LoadStepResult",
    "SimulationState",
    "StaggerConvergenceError",
    "LinearSolveError",
    "SolverFailure",
    "apply_dirichlet",
    "solve_linear",
    "dirichlet_values",
    "staggered_step",
    "run_loading",
    "write_checkpoint",
    "read_checkpoint",
]

log = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    pass


class StaggerConvergenceError(RuntimeError):
    pass


class SolverFailure(RuntimeError):
    """A load step failed; carries everything computed before it."""

    def __init__(self, message, results, state):
        super().__init__(message)
        self.results = results
        self.state = state


@dataclass(frozen=True)
class LoadProgram:
    """Monotone displacement loading of one boundary set.

    The constrained set moves by ``-step * delta_u`` along ``direction``
    (compression for the top face).  ``fixed_mode="normal"`` fixes only the
    normal component on ``fixed_set`` plus the tangential component of its
    first node; ``"full"`` clamps it.
    """

    delta_u: float
    n_steps: int
    constrained_set: str = "top"
    direction: str = "y"
    fixed_set: str = "bottom"
    fixed_mode: str = "normal"
    stop_drop_ratio: Optional[float] = None

    def __post_init__(self):
        if not self.delta_u > 0:
            raise ValueError("delta_u must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.direction not in ("x", "y"):
            raise ValueError("direction must be 'x' or 'y'")
        if self.fixed_mode not in ("normal", "full"):
            raise ValueError("fixed_mode must be 'normal' or 'full'")
        if self.stop_drop_ratio is not None and not 0 < self.stop_drop_ratio < 1:
            raise ValueError("stop_drop_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class SolverConfig:
    stagger_tol: float = 1e-4
    max_stagger_iters: int = 200
    linear_tol: float = 1e-10
    linear_solver: str = "direct"
    phase_solver: str = "cg"
    newton_tol: float = 1e-9
    max_newton_iters: int = 25

    def __post_init__(self):
        if not (self.stagger_tol > 0 and self.linear_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_stagger_iters < 1:
            raise ValueError("max_stagger_iters must be >= 1")
        for name in ("linear_solver", "phase_solver"):
            if getattr(self, name) not in ("direct", "cg"):
                raise ValueError(f"{name} must be 'direct' or 'cg'")


@dataclass
class LoadStepResult:
    step: int
    u: float
    F: float
    stagger_iters: int
    max_phi: float
    snapshot: Optional[str] = None


@dataclass
class SimulationState:
    """Nodal displacement and phase field plus quadrature-point history."""

    u: np.ndarray
    phi: np.ndarray
    H: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, mesh: Mesh) -> "SimulationState":
        space = FESpace.for_mesh(mesh)
        return cls(
            u=np.zeros(2 * mesh.n_nodes),
            phi=np.zeros(mesh.n_nodes),
            H=np.zeros((mesh.n_elements, space.n_history)),
        )

    def copy(self) -> "SimulationState":
        return SimulationState(self.u.copy(), self.phi.copy(), self.H.copy(), self.step)


def apply_dirichlet(system: SparseSystem, constraints) -> SparseSystem:
    """Symmetric elimination of prescribed dofs.

    ``constraints`` is a mapping ``dof -> value`` or a sequence of
    ``(dof, value)`` pairs; repeated dofs must agree.  The unmodified matrix
    is kept on the result for reaction recovery.
    """
    items = constraints.items() if hasattr(constraints, "items") else constraints
    fixed: dict[int, float] = {}
    for dof, val in items:
        dof = int(dof)
        if dof in fixed and fixed[dof] != val:
            raise ValueError(f"conflicting constraints on dof {dof}: {fixed[dof]} vs {val}")
        fixed[dof] = float(val)
    K = system.matrix.tocsr()
    if not fixed:
        return SparseSystem(K, system.rhs.copy(), system.dof_map, K, np.array([], int))
    n = K.shape[0]
    dofs = np.fromiter(fixed.keys(), dtype=np.int64)
    if dofs.min() < 0 or dofs.max() >= n:
        raise ValueError("constraint refers to a non-existent dof")
    vals = np.fromiter(fixed.values(), dtype=float)
    ubar = np.zeros(n)
    ubar[dofs] = vals
    free = np.ones(n)
    free[dofs] = 0.0
    rhs = system.rhs - K @ ubar
    rhs[dofs] = vals
    Dfree = sp.diags(free)
    Kc = (Dfree @ K @ Dfree + sp.diags(1.0 - free)).tocsr()
    Kc.eliminate_zeros()
    return SparseSystem(Kc, rhs, system.dof_map, K, dofs)


def solve_linear(
    system: SparseSystem,
    config: SolverConfig = SolverConfig(),
    x0=None,
    method: Optional[str] = None,
):
    """Solve an SPD system by sparse LU or Jacobi-preconditioned CG.

    ``method`` overrides ``config.linear_solver``.
    """
    A, b = system.matrix, system.rhs
    method = config.linear_solver if method is None else method
    if method == "direct":
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise LinearSolveError("matrix has non-positive diagonal; not SPD")
        # SPD: symmetric ordering, no pivoting
        try:
            lu = spla.splu(
                A.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise LinearSolveError(f"factorisation failed: {exc}") from exc
        x = lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("direct solve produced non-finite values")
        return x
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise LinearSolveError("matrix has non-positive diagonal; not SPD")
    M = sp.diags(1.0 / diag)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    maxiter = 10 * A.shape[0]
    x, info = spla.cg(A, b, x0=x0, rtol=config.linear_tol, atol=0.0, M=M, maxiter=maxiter)
    if info > 0:
        raise LinearSolveError(f"CG did not converge in {maxiter} iterations")
    if info < 0:
        raise LinearSolveError("CG breakdown (matrix indefinite?)")
    return x


def dirichlet_values(mesh: Mesh, program: LoadProgram, step: int) -> dict:
    """Prescribed dof values for load step ``step``."""
    comp = 0 if program.direction == "x" else 1
    loaded = mesh.boundary_sets[program.constrained_set]
    fixed = mesh.boundary_sets[program.fixed_set]
    if len(loaded) == 0 or len(fixed) == 0:
        raise ValueError("boundary sets for loading are empty")
    out: dict[int, float] = {}
    for n in fixed:
        out[2 * int(n) + comp] = 0.0
        if program.fixed_mode == "full":
            out[2 * int(n) + 1 - comp] = 0.0
    if program.fixed_mode == "normal":
        # remove the rigid tangential translation at the first fixed node
        first = int(fixed[np.argmin(mesh.nodes[fixed, 1 - comp])])
        out[2 * first + 1 - comp] = 0.0
    disp = -step * program.delta_u
    for n in loaded:
        out[2 * int(n) + comp] = disp
    return out


def _loaded_dofs(mesh: Mesh, program: LoadProgram) -> np.ndarray:
    comp = 0 if program.direction == "x" else 1
    return 2 * mesh.boundary_sets[program.constrained_set] + comp


def _solve_displacement(mesh, phi, params, u_guess, bcs, config):
    if params.variant.isotropic_stress:
        system = apply_dirichlet(assemble_displacement(mesh, phi, params), bcs)
        return solve_linear(system, config, x0=u_guess)
    # anisotropic split: stress is piecewise linear in strain -> Newton
    u = u_guess.copy()
    dofs = np.fromiter(bcs.keys(), dtype=np.int64)
    u[dofs] = np.fromiter(bcs.values(), dtype=float)
    free = np.ones(len(u), dtype=bool)
    free[dofs] = False
    ref = None
    for _ in range(config.max_newton_iters):
        r = internal_force(mesh, u, phi, params)
        r[~free] = 0.0
        rn = np.linalg.norm(r)
        if ref is None:
            K0 = assemble_displacement(mesh, phi, params, u)
            ref = max(np.linalg.norm(K0.matrix @ u), 1e-300)
        if rn <= config.newton_tol * ref:
            return u
        system = assemble_displacement(mesh, phi, params, u)
        system.rhs = -r
        system = apply_dirichlet(system, {int(d): 0.0 for d in dofs})
        u = u + solve_linear(system, config)
    r = internal_force(mesh, u, phi, params)
    r[~free] = 0.0
    if np.linalg.norm(r) > 1e3 * config.newton_tol * ref:
        raise StaggerConvergenceError("Newton iteration for displacement did not converge")
    return u


def _ambati_screen(mesh, u, phi, params):
    """Zero the phase field where compression dominates the elastic energy."""
    space = FESpace.for_mesh(mesh)
    from .assembly import strains_at

    eps = strains_at(space, u, "phi")
    scale = np.broadcast_to(space.modulus_scale(params)[:, None], eps.shape[:-1])
    pos, neg = psi_split(eps, params, scale)
    diff = (pos - neg).mean(axis=1)
    nodal = np.zeros(mesh.n_nodes)
    count = np.zeros(mesh.n_nodes)
    for j in range(mesh.elements.shape[1]):
        np.add.at(nodal, mesh.elements[:, j], diff)
        np.add.at(count, mesh.elements[:, j], 1.0)
    out = phi.copy()
    out[nodal / np.maximum(count, 1) < 0] = 0.0
    return out


def _reaction(mesh, u, phi, params, program) -> float:
    f = internal_force(mesh, u, phi, params)
    # compressive load reported positive
    return float(-f[_loaded_dofs(mesh, program)].sum())


def staggered_step(
    mesh: Mesh,
    state: SimulationState,
    params: MaterialParams,
    program: LoadProgram,
    config: SolverConfig = SolverConfig(),
    step: Optional[int] = None,
    monitor: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
) -> tuple[LoadStepResult, SimulationState]:
    """Advance one load step; returns the step summary and the new state.

    ``state`` is not modified.  The history of the returned state dominates
    ``state.H`` pointwise.  ``monitor(iteration, u, phi)`` is called after
    every staggered iteration.
    """
    step = state.step + 1 if step is None else step
    bcs = dirichlet_values(mesh, program, step)
    u, phi = state.u.copy(), state.phi.copy()
    H_prev = state.H
    H = H_prev
    for it in range(1, config.max_stagger_iters + 1):
        u_new = _solve_displacement(mesh, phi, params, u, bcs, config)
        H = np.maximum(H_prev, driving_field(mesh, u_new, params))
        system = assemble_phase(mesh, H, params)
        phi_new = solve_linear(system, config, x0=phi, method=config.phase_solver)
        phi_new = np.clip(phi_new, 0.0, 1.0)
        if params.variant is Variant.HYBRID_AMBATI:
            phi_new = _ambati_screen(mesh, u_new, phi_new, params)
        dphi = float(np.abs(phi_new - phi).max())
        unorm = np.linalg.norm(u_new)
        du = float(np.linalg.norm(u_new - u) / unorm) if unorm > 0 else 0.0
        u, phi = u_new, phi_new
        if monitor is not None:
            monitor(it, u, phi)
        if dphi < config.stagger_tol and du < config.stagger_tol:
            break
    else:
        raise StaggerConvergenceError(
            f"step {step}: staggered iteration not converged after "
            f"{config.max_stagger_iters} iterations (dphi={dphi:.3e}, du={du:.3e})"
        )
    new_state = SimulationState(u=u, phi=phi, H=H, step=step)
    result = LoadStepResult(
        step=step,
        u=step * program.delta_u,
        F=_reaction(mesh, u, phi, params, program),
        stagger_iters=it,
        max_phi=float(phi.max()),
    )
    return result, new_state


def run_loading(
    mesh: Mesh,
    params: MaterialParams,
    program: LoadProgram,
    config: SolverConfig = SolverConfig(),
    state: Optional[SimulationState] = None,
    callback: Optional[Callable[[LoadStepResult, SimulationState], None]] = None,
    peak: float = 0.0,
) -> tuple[list[LoadStepResult], SimulationState]:
    """Run load steps ``state.step + 1 .. program.n_steps``.

    ``callback(result, state)`` is invoked after every converged step.  On a
    step failure :class:`SolverFailure` is raised with the results so far and
    the last converged state.  ``peak`` seeds the running maximum load used
    by ``program.stop_drop_ratio`` when resuming.
    """
    state = SimulationState.initial(mesh) if state is None else state
    results: list[LoadStepResult] = []
    for step in range(state.step + 1, program.n_steps + 1):
        try:
            res, new_state = staggered_step(mesh, state, params, program, config, step)
        except (StaggerConvergenceError, LinearSolveError) as exc:
            raise SolverFailure(str(exc), results, state) from exc
        state = new_state
        results.append(res)
        log.debug("step %d u=%.4e F=%.4e iters=%d max_phi=%.3f",
                  res.step, res.u, res.F, res.stagger_iters, res.max_phi)
        if callback is not None:
            callback(res, state)
        peak = max(peak, res.F)
        if program.stop_drop_ratio is not None and peak > 0 and res.F < program.stop_drop_ratio * peak:
            break
    return results, state


_MAGIC = b"CRKFLDCK"
_VERSION = 1


def write_checkpoint(path, state: SimulationState) -> None:
    """Binary little-endian checkpoint with a 16-byte magic/version header."""
    H = np.ascontiguousarray(state.H, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, 0))
        fh.write(struct.pack("<qqqqq", state.step, state.u.size, state.phi.size, *H.shape))
        fh.write(np.ascontiguousarray(state.u, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.phi, dtype="<f8").tobytes())
        fh.write(H.tobytes())


def read_checkpoint(path) -> SimulationState:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, _ = struct.unpack("<II", data[8:16])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    step, nu, nphi, ne, nq = struct.unpack("<qqqqq", data[16:56])
    off = 56
    u = np.frombuffer(data, "<f8", nu, off).astype(float)
    off += 8 * nu
    phi = np.frombuffer(data, "<f8", nphi, off).astype(float)
    off += 8 * nphi
    H = np.frombuffer(data, "<f8", ne * nq, off).astype(float).reshape(ne, nq)
    return SimulationState(u=u, phi=phi, H=H, step=int(step))
