import numpy as np
import pytest

from crackfield.assembly import (
    FESpace,
    InvertedElementError,
    assemble_displacement,
    assemble_phase,
    b_matrices,
    internal_force,
    quadrature,
    shape_eval,
)
from crackfield.material import MaterialParams, Variant
from crackfield.mesh import Mesh, generate_flawed_mesh, generate_structured_quad, FlawSpec
from crackfield.solver import apply_dirichlet, solve_linear

PARAMS = MaterialParams(E=60e9, nu=0.3, G_c=100.0, l_0=1e-3, k=1e-9,
                        cohesion_c=100e3, friction_deg=15.0)
UNIT_Q4 = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def oracle_q4_stiffness(lam, mu, coords):
    """3x3 Gauss integration of B^T D B for a bilinear quad, written out longhand."""
    D = np.array([[lam + 2 * mu, lam, 0], [lam, lam + 2 * mu, 0], [0, 0, mu]])
    g = np.sqrt(0.6)
    pts, wts = [-g, 0.0, g], [5 / 9, 8 / 9, 5 / 9]
    K = np.zeros((8, 8))
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    for xi, wx in zip(pts, wts):
        for eta, wy in zip(pts, wts):
            dxi = np.array([0.25 * a * (1 + b * eta) for a, b in corners])
            deta = np.array([0.25 * b * (1 + a * xi) for a, b in corners])
            J = np.array([[dxi @ coords[:, 0], dxi @ coords[:, 1]],
                          [deta @ coords[:, 0], deta @ coords[:, 1]]])
            grads = np.linalg.solve(J, np.vstack([dxi, deta]))
            B = np.zeros((3, 8))
            for i in range(4):
                B[0, 2 * i] = grads[0, i]
                B[1, 2 * i + 1] = grads[1, i]
                B[2, 2 * i] = grads[1, i]
                B[2, 2 * i + 1] = grads[0, i]
            K += B.T @ D @ B * np.linalg.det(J) * wx * wy
    return K


class TestShapeFunctions:
    def test_q4_center(self):
        N, _ = shape_eval("Q4", np.array([0.0, 0.0]))
        np.testing.assert_allclose(N, 0.25)

    def test_q4_corner(self):
        N, _ = shape_eval("Q4", np.array([-1.0, -1.0]))
        np.testing.assert_allclose(N, [1, 0, 0, 0])

    def test_t3_barycenter(self):
        N, _ = shape_eval("T3", np.array([1 / 3, 1 / 3]))
        np.testing.assert_allclose(N, 1 / 3)

    @pytest.mark.parametrize("kind", ["Q4", "T3"])
    def test_partition_of_unity(self, kind):
        pts = np.random.default_rng(0).uniform(0, 0.5, (20, 2))
        N, dN = shape_eval(kind, pts)
        np.testing.assert_allclose(N.sum(-1), 1.0, rtol=1e-14)
        np.testing.assert_allclose(dN.sum(-2), 0.0, atol=1e-14)

    @pytest.mark.parametrize("kind,order", [("Q4", 1), ("Q4", 2), ("Q4", 3), ("T3", 1), ("T3", 3)])
    def test_quadrature_area(self, kind, order):
        rule = quadrature(kind, order)
        assert rule.weights.sum() == pytest.approx(4.0 if kind == "Q4" else 0.5)


class TestBMatrices:
    def test_linear_patch(self):
        d = np.column_stack([UNIT_Q4[:, 0], np.zeros(4)]).ravel()
        for xi in quadrature("Q4", 2).points:
            Bu, _, det = b_matrices(UNIT_Q4, xi)
            np.testing.assert_allclose(Bu @ d, [1, 0, 0], atol=1e-14)
            assert det == pytest.approx(0.25)

    def test_rigid_translation(self):
        coords = np.array([[0.0, 0.0], [2.0, 0.3], [1.7, 1.5], [-0.2, 1.1]])
        d = np.tile([0.7, -1.3], 4)
        Bu, _, _ = b_matrices(coords, np.array([0.2, -0.4]))
        np.testing.assert_allclose(Bu @ d, 0.0, atol=1e-14)

    def test_general_linear_field(self):
        coords = np.array([[0.0, 0.0], [2.0, 0.3], [1.7, 1.5], [-0.2, 1.1]])
        u = lambda x, y: (3 * x + 2 * y, 5 * y - x)  # noqa: E731
        d = np.array([u(*c) for c in coords]).ravel()
        Bu, _, _ = b_matrices(coords, np.array([0.3, 0.1]))
        np.testing.assert_allclose(Bu @ d, [3, 5, 1], rtol=1e-12)

    def test_t3_phase_gradient(self):
        _, Bphi, det = b_matrices(np.array([[0.0, 0], [1, 0], [0, 1]]), np.array([1 / 3, 1 / 3]))
        np.testing.assert_allclose(Bphi @ np.array([0.0, 1.0, 0.0]), [1, 0])
        assert det == pytest.approx(1.0)

    def test_inverted(self):
        with pytest.raises(InvertedElementError):
            b_matrices(UNIT_Q4[::-1], np.array([0.0, 0.0]))


class TestDisplacementSystem:
    def test_unit_q4_matches_oracle(self):
        mesh = generate_structured_quad(1.0, 1.0, 1, 1)
        K = assemble_displacement(mesh, np.zeros(4), PARAMS).matrix.toarray()
        conn = mesh.elements[0]
        ref = oracle_q4_stiffness(PARAMS.lam, PARAMS.mu, mesh.nodes[conn])
        dofs = np.column_stack([2 * conn, 2 * conn + 1]).ravel()
        K = K[np.ix_(dofs, dofs)]
        np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())

    def test_fully_broken_scales_by_k(self):
        mesh = generate_structured_quad(1.0, 1.0, 1, 1)
        K0 = assemble_displacement(mesh, np.zeros(4), PARAMS).matrix.toarray()
        K1 = assemble_displacement(mesh, np.ones(4), PARAMS).matrix.toarray()
        np.testing.assert_allclose(K1, PARAMS.k * K0, rtol=1e-12, atol=1e-12 * PARAMS.k * np.abs(K0).max())

    def test_symmetric(self):
        mesh = generate_flawed_mesh(0.02, 0.02, [FlawSpec((0.01, 0.01), 5e-3, 1e-3, 30)], 1e-3)
        phi = np.random.default_rng(1).uniform(0, 1, mesh.n_nodes)
        K = assemble_displacement(mesh, phi, PARAMS).matrix
        assert abs(K - K.T).max() <= 1e-12 * abs(K).max()

    def test_two_element_patch(self):
        # uniaxial stress along x: horizontal faces are traction-free
        mesh = generate_structured_quad(2.0, 1.0, 2, 1)
        system = assemble_displacement(mesh, np.zeros(mesh.n_nodes), PARAMS)
        a = 1e-3
        b = -PARAMS.lam / (PARAMS.lam + 2 * PARAMS.mu) * a
        exact = np.column_stack([a * mesh.nodes[:, 0], b * mesh.nodes[:, 1]]).ravel()
        shared = [n for n in range(mesh.n_nodes) if mesh.nodes[n, 0] == 1.0]
        f = internal_force(mesh, exact, np.zeros(mesh.n_nodes), PARAMS)
        shared_dofs = [d for n in shared for d in (2 * n, 2 * n + 1)]
        assert np.abs(f[shared_dofs]).max() <= 1e-10 * np.abs(f).max()
        bcs = {d: exact[d] for n in range(mesh.n_nodes) if n not in shared
               for d in (2 * n, 2 * n + 1)}
        bcs[2 * shared[0] + 1] = exact[2 * shared[0] + 1]
        u = solve_linear(apply_dirichlet(system, bcs))
        np.testing.assert_allclose(u, exact, rtol=1e-10, atol=1e-16)

    def test_patch_distorted(self):
        nodes = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1.2, 0.8], [2, 1], [0, 2], [1, 2], [2, 2.0]])
        elems = np.array([[0, 1, 4, 3], [1, 2, 5, 4], [3, 4, 7, 6], [4, 5, 8, 7]])
        mesh = Mesh(nodes, elems, "Q4", {"bottom": [0, 1, 2]}, 1.2)
        system = assemble_displacement(mesh, np.zeros(9), PARAMS)
        exact = np.column_stack([1e-3 * nodes[:, 0] + 3e-4 * nodes[:, 1], -2e-4 * nodes[:, 1]]).ravel()
        bcs = {d: exact[d] for n in range(9) if n != 4 for d in (2 * n, 2 * n + 1)}
        u = solve_linear(apply_dirichlet(system, bcs))
        np.testing.assert_allclose(u[8:10], exact[8:10], rtol=1e-10)

    def test_miehe_uses_strain_state(self):
        mesh = generate_structured_quad(1.0, 1.0, 1, 1)
        p = PARAMS.replace(variant=Variant.ANISOTROPIC_MIEHE)
        top = mesh.boundary_sets["top"]
        u = np.zeros(8)
        u[2 * top + 1] = 1e-3
        K_tens = assemble_displacement(mesh, np.ones(4), p, u=u).matrix.toarray()
        K_comp = assemble_displacement(mesh, np.ones(4), p, u=-u).matrix.toarray()
        # a broken element keeps its stiffness in compression only
        assert K_comp[2 * top[0] + 1, 2 * top[0] + 1] > 1e3 * K_tens[2 * top[0] + 1, 2 * top[0] + 1]


class TestPhaseSystem:
    def test_zero_history(self):
        mesh = generate_structured_quad(0.01, 0.01, 4, 4)
        system = assemble_phase(mesh, 0.0, PARAMS)
        np.testing.assert_array_equal(solve_linear(system), 0.0)

    @pytest.mark.parametrize("kind", ["Q4", "T3"])
    def test_uniform_history(self, kind):
        if kind == "Q4":
            mesh = generate_structured_quad(0.01, 0.02, 5, 7)
        else:
            mesh = generate_flawed_mesh(0.02, 0.02, [FlawSpec((0.01, 0.01), 5e-3, 1e-3, 30)], 1e-3)
        ratio = 0.25
        H = ratio * PARAMS.G_c / (2 * PARAMS.l_0 * (1 - PARAMS.k))
        phi = solve_linear(assemble_phase(mesh, H, PARAMS))
        np.testing.assert_allclose(phi, ratio / (1 + ratio), atol=1e-9)

    def test_rejects_negative_history(self):
        mesh = generate_structured_quad(1.0, 1.0, 1, 1)
        with pytest.raises(ValueError):
            assemble_phase(mesh, -1.0, PARAMS)

    def test_matrix_spd(self):
        mesh = generate_structured_quad(0.01, 0.01, 3, 3)
        H = np.random.default_rng(2).uniform(0, 1e5, (9, 4))
        K = assemble_phase(mesh, H, PARAMS).matrix.toarray()
        np.testing.assert_allclose(K, K.T, rtol=1e-14)
        assert np.linalg.eigvalsh(K).min() > 0

    def test_deterministic(self):
        mesh = generate_structured_quad(0.01, 0.01, 6, 6)
        H = np.random.default_rng(5).uniform(0, 1e5, (36, 4))
        a = assemble_phase(mesh, H, PARAMS)
        b = assemble_phase(mesh, H, PARAMS)
        assert (a.matrix != b.matrix).nnz == 0
        np.testing.assert_array_equal(a.rhs, b.rhs)


class TestSpaceCache:
    def test_cached_per_mesh(self):
        mesh = generate_structured_quad(1.0, 1.0, 2, 2)
        assert FESpace.for_mesh(mesh) is FESpace.for_mesh(mesh)
        assert FESpace.for_mesh(mesh).n_history == 4
