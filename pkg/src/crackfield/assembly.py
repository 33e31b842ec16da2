"""Finite element discretisation of the displacement and phase-field problems.

Two dofs per node for the displacement (``2*i``, ``2*i + 1``) and one per
node for the phase field.  Element integrals are evaluated in batches over
all elements and summed into CSR matrices through a precomputed sparsity
pattern, so assembly order (and therefore the result) is deterministic.

History values ``H`` live on the *phase* quadrature rule: an array of shape
``(n_elements, n_phase_points)``.  For T3 the displacement integral uses a
single point and the phase mass-like term uses three.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .material import MaterialParams, driving_energy, stress, tangent
from .mesh import Mesh

__all__ = [
    "QuadratureRule",
    "SparseSystem",
    "InvertedElementError",
    "quadrature",
    "shape_eval",
    "b_matrices",
    "FESpace",
    "assemble_displacement",
    "assemble_phase",
    "internal_force",
    "strains_at",
    "driving_field",
]


class InvertedElementError(ValueError):
    """An element has a non-positive Jacobian determinant."""


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


_G = 1.0 / np.sqrt(3.0)
_RULES = {
    ("Q4", 1): QuadratureRule(np.array([[0.0, 0.0]]), np.array([4.0])),
    ("Q4", 2): QuadratureRule(
        np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]]), np.ones(4)
    ),
    ("Q4", 3): QuadratureRule(
        np.array([[a, b] for b in (-np.sqrt(0.6), 0.0, np.sqrt(0.6))
                  for a in (-np.sqrt(0.6), 0.0, np.sqrt(0.6))]),
        np.array([wa * wb for wb in (5 / 9, 8 / 9, 5 / 9) for wa in (5 / 9, 8 / 9, 5 / 9)]),
    ),
    ("T3", 1): QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5])),
    ("T3", 3): QuadratureRule(
        np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]), np.full(3, 1 / 6)
    ),
}


def quadrature(elem_kind: str, order: int) -> QuadratureRule:
    """Gauss rule: Q4 ``order`` points per direction, T3 ``order`` points total."""
    try:
        return _RULES[(elem_kind, order)]
    except KeyError:
        raise ValueError(f"no quadrature rule {order} for {elem_kind}") from None


def shape_eval(elem_kind: str, parent_coords):
    """Shape functions and parent-domain gradients.

    Returns ``N`` of shape ``(..., n)`` and ``dN`` of shape ``(..., n, 2)``.
    """
    xi = np.asarray(parent_coords, dtype=float)
    r, s = xi[..., 0], xi[..., 1]
    if elem_kind == "Q4":
        sr = np.array([-1.0, 1.0, 1.0, -1.0])
        ss = np.array([-1.0, -1.0, 1.0, 1.0])
        N = 0.25 * (1 + sr * r[..., None]) * (1 + ss * s[..., None])
        dNr = 0.25 * sr * (1 + ss * s[..., None])
        dNs = 0.25 * ss * (1 + sr * r[..., None])
        return N, np.stack([dNr, dNs], axis=-1)
    if elem_kind == "T3":
        N = np.stack([1.0 - r - s, r, s], axis=-1)
        dN = np.broadcast_to(
            np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), r.shape + (3, 2)
        )
        return N, dN.copy()
    raise ValueError(f"unknown element kind {elem_kind!r}")


def _kind_of(n_nodes: int) -> str:
    return {4: "Q4", 3: "T3"}[n_nodes]


def _physical_gradients(coords, dN):
    # coords (..., n, 2); dN (..., q, n, 2) -> dNdx (..., q, n, 2), detJ (..., q)
    J = np.einsum("...qna,...nb->...qab", dN, coords)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise InvertedElementError("element with non-positive Jacobian determinant")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    # dN/dx = J^{-1} dN/dxi  (J_ab = dx_b / dxi_a)
    dNdx = np.einsum("...qba,...qna->...qnb", inv, dN)
    return dNdx, det


def _bu_from_grad(dNdx):
    n = dNdx.shape[-2]
    B = np.zeros(dNdx.shape[:-2] + (3, 2 * n))
    B[..., 0, 0::2] = dNdx[..., 0]
    B[..., 1, 1::2] = dNdx[..., 1]
    B[..., 2, 0::2] = dNdx[..., 1]
    B[..., 2, 1::2] = dNdx[..., 0]
    return B


def b_matrices(elem_nodes, parent_coords):
    """``(B_u, B_phi, det J)`` of one element at one parent point."""
    coords = np.asarray(elem_nodes, dtype=float)
    kind = _kind_of(len(coords))
    _, dN = shape_eval(kind, np.asarray(parent_coords, dtype=float)[None, :])
    dNdx, det = _physical_gradients(coords, dN)
    return _bu_from_grad(dNdx[0]), dNdx[0].T.copy(), float(det[0])


@dataclass
class SparseSystem:
    """Square CSR matrix, right-hand side and node-to-dof map."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: np.ndarray
    original: Optional[sp.csr_matrix] = None
    constrained: Optional[np.ndarray] = None


class _Pattern:
    """Scatter map from dense element blocks to CSR data."""

    def __init__(self, conn: np.ndarray, n: int):
        m = conn.shape[1]
        rows = np.repeat(conn, m, axis=1).ravel()
        cols = np.tile(conn, (1, m)).ravel()
        key = rows * n + cols
        uniq, inverse = np.unique(key, return_inverse=True)
        self.inverse = inverse
        self.nnz = len(uniq)
        r, c = np.divmod(uniq, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        self.indptr = np.cumsum(indptr)
        self.indices = c
        self.n = n

    def build(self, blocks: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.inverse, weights=blocks.ravel(), minlength=self.nnz)
        return sp.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n)
        )


class FESpace:
    """Precomputed geometry for one mesh: gradients, weights and patterns."""

    _cache: "weakref.WeakKeyDictionary[Mesh, FESpace]" = weakref.WeakKeyDictionary()

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        kind = mesh.elem_kind
        coords = mesh.nodes[mesh.elements]
        if kind == "Q4":
            self.rule_u = quadrature("Q4", 2)
            self.rule_phi = quadrature("Q4", 2)
        else:
            self.rule_u = quadrature("T3", 1)
            self.rule_phi = quadrature("T3", 3)

        self.N_u, dN = shape_eval(kind, self.rule_u.points)
        dNdx, det = _physical_gradients(coords, np.broadcast_to(dN, (len(coords),) + dN.shape))
        self.dNdx_u = dNdx
        self.wdet_u = det * self.rule_u.weights

        self.N_phi, dN = shape_eval(kind, self.rule_phi.points)
        dNdx, det = _physical_gradients(coords, np.broadcast_to(dN, (len(coords),) + dN.shape))
        self.dNdx_phi = dNdx
        self.wdet_phi = det * self.rule_phi.weights
        self.B_u = _bu_from_grad(self.dNdx_u)
        self.B_u_at_phi = _bu_from_grad(self.dNdx_phi)

        conn = mesh.elements
        dofs = np.empty((len(conn), 2 * conn.shape[1]), dtype=np.int64)
        dofs[:, 0::2] = 2 * conn
        dofs[:, 1::2] = 2 * conn + 1
        self.dofs_u = dofs
        self.pattern_u = _Pattern(dofs, 2 * mesh.n_nodes)
        self.pattern_phi = _Pattern(conn, mesh.n_nodes)

        # quadrature point coordinates, handy for post-processing
        self.points_phi = np.einsum("qn,enx->eqx", self.N_phi, coords)

    @classmethod
    def for_mesh(cls, mesh: Mesh) -> "FESpace":
        space = cls._cache.get(mesh)
        if space is None:
            space = cls(mesh)
            cls._cache[mesh] = space
        return space

    @property
    def n_history(self) -> int:
        return len(self.rule_phi.weights)

    def modulus_scale(self, params: MaterialParams) -> np.ndarray:
        """Per-element ``E_e / E`` (ones for homogeneous meshes)."""
        if self.mesh.elem_modulus is None:
            return np.ones(self.mesh.n_elements)
        return self.mesh.elem_modulus / params.E

    def phase_at(self, phase_nodal, which: str = "u") -> np.ndarray:
        N = self.N_u if which == "u" else self.N_phi
        return np.einsum("qn,en->eq", N, np.asarray(phase_nodal)[self.mesh.elements])


def strains_at(space: FESpace, u, which: str = "u") -> np.ndarray:
    """Voigt strains ``(n_elements, n_points, 3)`` from nodal displacements."""
    B = space.B_u if which == "u" else space.B_u_at_phi
    ue = np.asarray(u)[space.dofs_u]
    return np.einsum("eqij,ej->eqi", B, ue)


def assemble_displacement(
    mesh: Mesh,
    phase_nodal,
    params: MaterialParams,
    u=None,
) -> SparseSystem:
    """Tangent stiffness ``K_u`` with ``D`` from the degraded constitutive law.

    ``u`` supplies the strain state for the strain-dependent (anisotropic)
    tangent; it is ignored by isotropic-stress variants.  Body force and
    traction are zero, so the right-hand side is zero.
    """
    space = FESpace.for_mesh(mesh)
    phase_q = np.clip(space.phase_at(phase_nodal, "u"), 0.0, 1.0)
    scale = space.modulus_scale(params)[:, None]
    if params.variant.isotropic_stress or u is None:
        strain = np.zeros(phase_q.shape + (3,))
    else:
        strain = strains_at(space, u, "u")
    D = tangent(strain, phase_q, params, np.broadcast_to(scale, phase_q.shape))
    B = space.B_u
    DB = np.einsum("eqij,eqjk->eqik", D, B)
    Ke = np.einsum("eqji,eqjk,eq->eik", B, DB, space.wdet_u)
    K = space.pattern_u.build(Ke)
    n = 2 * mesh.n_nodes
    dof_map = np.arange(n).reshape(-1, 2)
    return SparseSystem(matrix=K, rhs=np.zeros(n), dof_map=dof_map)


def internal_force(mesh: Mesh, u, phase_nodal, params: MaterialParams) -> np.ndarray:
    """Nodal internal force vector ``int B^T sigma dOmega``."""
    space = FESpace.for_mesh(mesh)
    phase_q = np.clip(space.phase_at(phase_nodal, "u"), 0.0, 1.0)
    scale = np.broadcast_to(space.modulus_scale(params)[:, None], phase_q.shape)
    sig = stress(strains_at(space, u, "u"), phase_q, params, scale)
    fe = np.einsum("eqji,eqj,eq->ei", space.B_u, sig, space.wdet_u)
    return np.bincount(space.dofs_u.ravel(), weights=fe.ravel(), minlength=2 * mesh.n_nodes)


def driving_field(mesh: Mesh, u, params: MaterialParams) -> np.ndarray:
    """Driving energy at history points, shape ``(n_elements, n_phase_points)``."""
    space = FESpace.for_mesh(mesh)
    eps = strains_at(space, u, "phi")
    scale = np.broadcast_to(space.modulus_scale(params)[:, None], eps.shape[:-1])
    return driving_energy(eps, params, scale)


def assemble_phase(mesh: Mesh, H, params: MaterialParams) -> SparseSystem:
    """Phase-field system ``K_phi phi = F_phi`` for history values ``H``."""
    space = FESpace.for_mesh(mesh)
    H = np.asarray(H, dtype=float)
    if H.shape != space.wdet_phi.shape:
        H = np.broadcast_to(H, space.wdet_phi.shape)
    if np.any(H < 0):
        raise ValueError("history values must be non-negative")
    Gc, l0, k = params.G_c, params.l_0, params.k
    grad = np.einsum("eqna,eqma,eq->enm", space.dNdx_phi, space.dNdx_phi, space.wdet_phi)
    react = (Gc / l0 + 2.0 * (1.0 - k) * H) * space.wdet_phi
    mass = np.einsum("qn,qm,eq->enm", space.N_phi, space.N_phi, react)
    Ke = Gc * l0 * grad + mass
    fe = np.einsum("qn,eq->en", space.N_phi, 2.0 * (1.0 - k) * H * space.wdet_phi)
    K = space.pattern_phi.build(Ke)
    F = np.bincount(mesh.elements.ravel(), weights=fe.ravel(), minlength=mesh.n_nodes)
    return SparseSystem(matrix=K, rhs=F, dof_map=np.arange(mesh.n_nodes)[:, None])
