import numpy as np
import pytest

from crackfield.mesh import (
    FlawSpec,
    Mesh,
    MeshError,
    element_areas,
    format_mesh,
    generate_flawed_mesh,
    generate_structured_quad,
    read_mesh,
    two_flaw_layout,
    write_mesh,
)

W, H = 0.05, 0.10
MM = 1e-3


def single_flaw(angle, h=1 * MM):
    flaw = FlawSpec((W / 2, H / 2), 5 * MM, 1 * MM, angle)
    return flaw, generate_flawed_mesh(W, H, [flaw], h)


def check_boundary_sets(mesh):
    x, y = mesh.nodes.T
    tol = 1e-12 * max(mesh.width, mesh.height)
    expected = {
        "left": np.flatnonzero(np.abs(x) <= tol),
        "right": np.flatnonzero(np.abs(x - mesh.width) <= tol),
        "bottom": np.flatnonzero(np.abs(y) <= tol),
        "top": np.flatnonzero(np.abs(y - mesh.height) <= tol),
    }
    for name, idx in expected.items():
        np.testing.assert_array_equal(mesh.boundary_sets[name], idx)


class TestStructuredQuad:
    def test_paper_resolution(self):
        mesh = generate_structured_quad(0.05, 0.10, 100, 160)
        assert mesh.n_elements == 16000
        assert mesh.h_max == pytest.approx(0.000625)
        areas = element_areas(mesh.nodes, mesh.elements)
        np.testing.assert_allclose(areas, areas[0], rtol=1e-10)
        assert areas.sum() == pytest.approx(0.005, rel=1e-12)

    def test_unit_patch(self):
        mesh = generate_structured_quad(1.0, 1.0, 1, 1)
        assert (mesh.n_nodes, mesh.n_elements) == (4, 1)
        assert all(len(v) == 2 for v in mesh.boundary_sets.values())

    def test_two_elements(self):
        mesh = generate_structured_quad(2.0, 1.0, 2, 1)
        assert (mesh.n_nodes, mesh.n_elements) == (6, 2)
        left = mesh.boundary_sets["left"]
        assert len(left) == 2 and np.all(mesh.nodes[left, 0] == 0)
        check_boundary_sets(mesh)

    @pytest.mark.parametrize("args", [(0, 1, 1, 1), (1, -1, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)])
    def test_rejects(self, args):
        with pytest.raises(MeshError):
            generate_structured_quad(*args)


class TestFlawSpec:
    def test_invariants(self):
        with pytest.raises(MeshError):
            FlawSpec((0, 0), 1e-3, 1e-3, 10)
        with pytest.raises(MeshError):
            FlawSpec((0, 0), 5e-3, 1e-3, 95)

    def test_geometry(self):
        f = FlawSpec((0.0, 0.0), 4.0, 1.0, 90.0)
        np.testing.assert_allclose(f.tips(), [[0, -2], [0, 2]], atol=1e-12)
        assert f.area == 4.0
        assert f.contains([[0, 1.9]])[0] and not f.contains([[0.6, 0]])[0]


class TestFlawedMesh:
    @pytest.mark.parametrize("angle", [0.0, 45.0, 90.0])
    def test_area_and_sets(self, angle):
        flaw, mesh = single_flaw(angle)
        assert mesh.elem_kind == "T3"
        area = element_areas(mesh.nodes, mesh.elements).sum()
        assert area == pytest.approx(W * H - flaw.area, rel=1e-6)
        assert mesh.h_max <= 1.5e-3
        check_boundary_sets(mesh)
        # no node inside the slit
        assert not flaw.contains(mesh.nodes, pad=-1e-9).any()
        assert mesh.metadata["slit_tips"] == "square-cut"

    def test_paper_resolution_45(self):
        flaw, mesh = single_flaw(45.0, h=0.5 * MM)
        assert mesh.h_max <= 0.75e-3
        # slit passes through the centroid: centroid not covered by any element
        cen = np.array([W / 2, H / 2])
        assert flaw.contains(cen[None])[0]
        assert np.linalg.norm(mesh.nodes - cen, axis=1).min() >= 0.5e-3 - 1e-9

    def test_mirror_symmetry(self):
        _, mesh = single_flaw(0.0)
        mirrored = mesh.nodes.copy()
        mirrored[:, 0] = W - mirrored[:, 0]
        a = np.lexsort(np.round(mesh.nodes / 1e-9).T[::-1])
        b = np.lexsort(np.round(mirrored / 1e-9).T[::-1])
        assert np.abs(mesh.nodes[a] - mirrored[b]).max() < 1e-9

    def test_two_flaws_type_a(self):
        flaws = two_flaw_layout(W, H, 7.5 * MM, 1 * MM, 30.0, "A")
        mesh = generate_flawed_mesh(W, H, flaws, 1 * MM)
        single = generate_flawed_mesh(W, H, [FlawSpec((W / 2, H / 2), 7.5 * MM, 1 * MM, 30.0)],
                                      1 * MM)
        area = element_areas(mesh.nodes, mesh.elements).sum()
        assert area == pytest.approx(W * H - 2 * flaws[0].area, rel=1e-6)
        assert 0.8 <= mesh.n_nodes / single.n_nodes <= 1.25
        # two disjoint holes: Euler characteristic V - E + F = 1 - holes
        e = mesh.elements
        edges = {tuple(sorted(p)) for t in e for p in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
        assert mesh.n_nodes - len(edges) + mesh.n_elements == 1 - 2

    def test_deterministic(self):
        assert format_mesh(single_flaw(30.0)[1]) == format_mesh(single_flaw(30.0)[1])

    def test_rejects_touching_boundary(self):
        with pytest.raises(MeshError):
            generate_flawed_mesh(W, H, [FlawSpec((1e-3, H / 2), 5e-3, 1e-3, 0)], 1e-3)

    def test_rejects_overlap(self):
        f = FlawSpec((W / 2, H / 2), 5e-3, 1e-3, 0)
        g = FlawSpec((W / 2 + 2e-3, H / 2), 5e-3, 1e-3, 0)
        with pytest.raises(MeshError):
            generate_flawed_mesh(W, H, [f, g], 1e-3)

    def test_rejects_coarse_h(self):
        with pytest.raises(MeshError):
            generate_flawed_mesh(W, H, [FlawSpec((W / 2, H / 2), 5e-3, 1e-3, 0)], 2e-3)


class TestMeshType:
    def test_rejects_clockwise(self):
        with pytest.raises(MeshError):
            Mesh(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 2, 1]]), "T3", {}, 1.0)

    def test_rejects_bad_index(self):
        with pytest.raises(MeshError):
            Mesh(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 1, 3]]), "T3", {}, 1.0)

    def test_modulus_validation(self):
        mesh = generate_structured_quad(1.0, 1.0, 2, 2)
        with pytest.raises(MeshError):
            mesh.with_modulus(np.ones(3))
        with pytest.raises(MeshError):
            mesh.with_modulus(np.array([1.0, 1.0, 0.0, 1.0]))
        assert mesh.with_modulus(np.full(4, 2.0)).elem_modulus[0] == 2.0

    def test_immutable(self):
        mesh = generate_structured_quad(1.0, 1.0, 2, 2)
        with pytest.raises(ValueError):
            mesh.nodes[0, 0] = 5.0


class TestSerialisation:
    def test_round_trip(self, tmp_path):
        _, mesh = single_flaw(45.0)
        path = tmp_path / "m.txt"
        write_mesh(mesh, path)
        back = read_mesh(path)
        np.testing.assert_array_equal(back.nodes, mesh.nodes)
        np.testing.assert_array_equal(back.elements, mesh.elements)
        for name in mesh.boundary_sets:
            np.testing.assert_array_equal(back.boundary_sets[name], mesh.boundary_sets[name])
        assert format_mesh(back) == path.read_text()

    def test_header(self):
        text = format_mesh(generate_structured_quad(1.0, 1.0, 1, 1))
        assert text.splitlines()[0] == "nodes 4 elements 1 kind Q4"
        assert "set top 2 2 3" in text
