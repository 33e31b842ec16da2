"""Meshes for rectangular specimens, with optional slit-shaped flaws."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Mesh",
    "FlawSpec",
    "MeshError",
    "generate_structured_quad",
    "generate_flawed_mesh",
    "two_flaw_layout",
    "element_areas",
    "write_mesh",
    "read_mesh",
    "format_mesh",
]

SIDES = ("bottom", "right", "top", "left")


class MeshError(ValueError):
    """Invalid mesh input or a failed consistency check."""


@dataclass(frozen=True)
class FlawSpec:
    """A slit of given length and width, rotated by ``angle_deg``.

    ``center`` is absolute (m).  ``eccentricity`` is informational: it
    records the vertical offset of the center from the specimen center
    that was used to place it.
    """

    center: tuple[float, float]
    length: float
    width: float
    angle_deg: float
    eccentricity: float = 0.0

    def __post_init__(self):
        if not (self.length > self.width > 0):
            raise MeshError(
                f"flaw needs length > width > 0, got {self.length}, {self.width}"
            )
        if not 0.0 <= self.angle_deg <= 90.0:
            raise MeshError(f"flaw angle must be in [0, 90], got {self.angle_deg}")

    def corners(self) -> np.ndarray:
        """Counterclockwise corners of the (square-cut) slit."""
        a = math.radians(self.angle_deg)
        c, s = math.cos(a), math.sin(a)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center, dtype=float)

    def tips(self) -> np.ndarray:
        """Midpoints of the two short end faces."""
        a = math.radians(self.angle_deg)
        d = 0.5 * self.length * np.array([math.cos(a), math.sin(a)])
        cen = np.asarray(self.center, dtype=float)
        return np.array([cen - d, cen + d])

    def contains(self, points, pad: float = 0.0) -> np.ndarray:
        """True for points inside the slit grown by ``pad``."""
        a = math.radians(self.angle_deg)
        c, s = math.cos(a), math.sin(a)
        p = np.atleast_2d(points) - np.asarray(self.center, dtype=float)
        along = p[:, 0] * c + p[:, 1] * s
        across = -p[:, 0] * s + p[:, 1] * c
        return (np.abs(along) < 0.5 * self.length + pad) & (
            np.abs(across) < 0.5 * self.width + pad
        )

    @property
    def area(self) -> float:
        return self.length * self.width


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D mesh of uniform element kind (``"Q4"`` or ``"T3"``)."""

    nodes: np.ndarray
    elements: np.ndarray
    elem_kind: str
    boundary_sets: dict
    h_max: float
    elem_modulus: Optional[np.ndarray] = None
    width: float = 0.0
    height: float = 0.0
    flaws: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elems = np.ascontiguousarray(self.elements, dtype=np.int64)
        nodes.setflags(write=False)
        elems.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elems)
        sets = {}
        for name, idx in self.boundary_sets.items():
            arr = np.array(sorted(set(int(i) for i in idx)), dtype=np.int64)
            arr.setflags(write=False)
            sets[name] = arr
        object.__setattr__(self, "boundary_sets", sets)
        if self.elem_kind not in ("Q4", "T3"):
            raise MeshError(f"unknown element kind {self.elem_kind!r}")
        npe = 4 if self.elem_kind == "Q4" else 3
        if elems.ndim != 2 or elems.shape[1] != npe:
            raise MeshError(f"{self.elem_kind} connectivity must have {npe} columns")
        if elems.size and (elems.min() < 0 or elems.max() >= len(nodes)):
            raise MeshError("element references a non-existent node")
        if elems.size and np.any(element_areas(nodes, elems) <= 0):
            raise MeshError("degenerate or clockwise element")
        if self.elem_modulus is not None:
            em = np.ascontiguousarray(self.elem_modulus, dtype=float)
            if em.shape != (len(elems),):
                raise MeshError("elem_modulus length must equal element count")
            if np.any(em <= 0):
                raise MeshError("elem_modulus entries must be positive")
            em.setflags(write=False)
            object.__setattr__(self, "elem_modulus", em)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def with_modulus(self, elem_modulus) -> "Mesh":
        """Copy of this mesh with a per-element Young's modulus."""
        return Mesh(
            nodes=self.nodes, elements=self.elements, elem_kind=self.elem_kind,
            boundary_sets=self.boundary_sets, h_max=self.h_max,
            elem_modulus=elem_modulus, width=self.width, height=self.height,
            flaws=self.flaws, metadata=dict(self.metadata),
        )


def element_areas(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed areas (shoelace); positive for counterclockwise elements."""
    x = nodes[elements, 0]
    y = nodes[elements, 1]
    xn = np.roll(x, -1, axis=1)
    yn = np.roll(y, -1, axis=1)
    return 0.5 * np.sum(x * yn - xn * y, axis=1)


def _boundary_sets(nodes, width, height):
    x, y = nodes[:, 0], nodes[:, 1]
    tx, ty = 1e-12 * width, 1e-12 * height
    return {
        "bottom": np.flatnonzero(np.abs(y) <= ty),
        "top": np.flatnonzero(np.abs(y - height) <= ty),
        "left": np.flatnonzero(np.abs(x) <= tx),
        "right": np.flatnonzero(np.abs(x - width) <= tx),
    }


def generate_structured_quad(width: float, height: float, nx: int, ny: int) -> Mesh:
    """Regular grid of ``nx * ny`` axis-aligned Q4 elements on ``[0,w]x[0,h]``."""
    if not (width > 0 and height > 0):
        raise MeshError("width and height must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive integers")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Mesh(
        nodes=nodes,
        elements=elements,
        elem_kind="Q4",
        boundary_sets=_boundary_sets(nodes, width, height),
        h_max=max(width / nx, height / ny),
        width=width,
        height=height,
    )


def _sample_loop(corners: np.ndarray, h: float):
    pts = []
    n = len(corners)
    for i in range(n):
        a, b = corners[i], corners[(i + 1) % n]
        m = max(1, int(math.ceil(np.linalg.norm(b - a) / h - 1e-9)))
        for t in range(m):
            pts.append(a + (b - a) * (t / m))
    return np.array(pts)


def _check_flaws(width, height, flaws, target_h):
    for f in flaws:
        c = f.corners()
        if np.any(c[:, 0] <= 0) or np.any(c[:, 0] >= width) or np.any(
            c[:, 1] <= 0
        ) or np.any(c[:, 1] >= height):
            raise MeshError(f"flaw at {f.center} touches or leaves the specimen")
        if target_h > f.width + 1e-15:
            raise MeshError(
                f"target_h={target_h} cannot resolve a flaw of width {f.width}"
            )
    for a in range(len(flaws)):
        for b in range(a + 1, len(flaws)):
            fa, fb = flaws[a], flaws[b]
            # convex polygons overlap iff no separating axis exists
            ca, cb = fa.corners(), fb.corners()
            separated = False
            for poly in (ca, cb):
                for i in range(4):
                    e = poly[(i + 1) % 4] - poly[i]
                    n = np.array([-e[1], e[0]])
                    pa, pb = ca @ n, cb @ n
                    if pa.max() <= pb.min() or pb.max() <= pa.min():
                        separated = True
                        break
                if separated:
                    break
            if not separated:
                raise MeshError("flaws overlap")
            # keep at least one element between flaws
            if np.any(fa.contains(cb, pad=target_h)) or np.any(
                fb.contains(ca, pad=target_h)
            ):
                raise MeshError("flaws are closer than target_h")


def generate_flawed_mesh(
    width: float,
    height: float,
    flaws: Sequence[FlawSpec],
    target_h: float,
) -> Mesh:
    """Constrained Delaunay T3 mesh of the rectangle minus slit cut-outs.

    Boundaries are pre-sampled at spacing ``<= target_h`` and the interior is
    refined to the area of an equilateral triangle with edge ``target_h``
    (30 degree minimum angle).  When the flaw set is mirror-symmetric about
    the vertical centerline only the left half is triangulated and then
    reflected, so the mesh inherits the symmetry exactly.  The output is
    deterministic for a given input.
    """
    from shapely.geometry import Polygon, box
    from shapely.ops import unary_union

    if not (width > 0 and height > 0 and target_h > 0):
        raise MeshError("width, height and target_h must be positive")
    flaws = list(flaws)
    _check_flaws(width, height, flaws, target_h)

    slits = unary_union([Polygon(f.corners()) for f in flaws]) if flaws else None
    domain = box(0.0, 0.0, width, height)
    if slits is not None:
        domain = domain.difference(slits)

    mirrored = False
    if slits is not None:
        flipped = unary_union([Polygon(_mirror(f.corners(), width)) for f in flaws])
        mirrored = slits.symmetric_difference(flipped).area <= 1e-12 * slits.area
    else:
        mirrored = True

    if mirrored:
        half = domain.intersection(box(0.0, 0.0, 0.5 * width, height))
        nodes, elements = _triangulate(half, target_h)
        nodes, elements = _reflect(nodes, elements, width)
    else:
        nodes, elements = _triangulate(domain, target_h)

    # snap boundary coordinates exactly onto the rectangle
    tol = 1e-9 * max(width, height)
    nodes[np.abs(nodes[:, 0]) < tol, 0] = 0.0
    nodes[np.abs(nodes[:, 0] - width) < tol, 0] = width
    nodes[np.abs(nodes[:, 1]) < tol, 1] = 0.0
    nodes[np.abs(nodes[:, 1] - height) < tol, 1] = height

    h_max = _max_edge(nodes, elements)
    if h_max > 1.5 * target_h:
        raise MeshError(f"element size bound violated: {h_max} > 1.5 * {target_h}")

    return Mesh(
        nodes=nodes,
        elements=elements,
        elem_kind="T3",
        boundary_sets=_boundary_sets(nodes, width, height),
        h_max=h_max,
        width=width,
        height=height,
        flaws=tuple(flaws),
        metadata={
            "slit_tips": "square-cut",
            "mesher": "triangle CDT q30",
            "mirrored": str(mirrored).lower(),
        },
    )


def _mirror(points, width):
    p = np.array(points, dtype=float)
    p[:, 0] = width - p[:, 0]
    return p


def _ring_points(ring, h):
    # closed shapely ring -> counterclockwise-agnostic sampled vertex loop
    coords = np.asarray(ring.coords)[:-1]
    return _sample_loop(coords, h)


def _triangulate(polygon, target_h):
    import triangle

    if polygon.geom_type != "Polygon":
        raise MeshError("flaws split the specimen into disconnected parts")
    verts, segs, holes = [], [], []
    offset = 0
    for k, ring in enumerate([polygon.exterior, *polygon.interiors]):
        pts = _ring_points(ring, target_h)
        n = len(pts)
        verts.append(pts)
        segs.append(np.column_stack([np.arange(n), (np.arange(n) + 1) % n]) + offset)
        offset += n
        if k > 0:
            from shapely.geometry import Polygon

            rp = Polygon(ring).representative_point()
            holes.append([rp.x, rp.y])
    scale = target_h
    tri_in = dict(vertices=np.vstack(verts) / scale, segments=np.vstack(segs))
    if holes:
        tri_in["holes"] = np.array(holes) / scale
    max_area = math.sqrt(3.0) / 4.0
    for _ in range(8):
        out = triangle.triangulate(tri_in, f"pq30a{max_area:.10f}Q")
        nodes = out["vertices"] * scale
        elements = out["triangles"].astype(np.int64)
        if _max_edge(nodes, elements) <= 1.5 * target_h:
            break
        max_area *= 0.8
    areas = element_areas(nodes, elements)
    flip = areas < 0
    elements[flip] = elements[flip][:, ::-1]
    return nodes, elements


def _reflect(nodes, elements, width):
    """Mirror a left-half mesh about ``x = width / 2`` and merge the seam."""
    mid = 0.5 * width
    tol = 1e-9 * width
    on_axis = np.abs(nodes[:, 0] - mid) <= tol
    nodes = nodes.copy()
    nodes[on_axis, 0] = mid
    off = np.flatnonzero(~on_axis)
    mirror_id = np.arange(len(nodes))
    mirror_id[off] = len(nodes) + np.arange(len(off))
    mirrored_nodes = nodes[off].copy()
    mirrored_nodes[:, 0] = width - mirrored_nodes[:, 0]
    all_nodes = np.vstack([nodes, mirrored_nodes])
    right = mirror_id[elements][:, ::-1]
    return all_nodes, np.vstack([elements, right])


def _max_edge(nodes, elements) -> float:
    n = elements.shape[1]
    best = 0.0
    for i in range(n):
        d = nodes[elements[:, i]] - nodes[elements[:, (i + 1) % n]]
        best = max(best, float(np.sqrt((d**2).sum(axis=1)).max()))
    return best


def two_flaw_layout(
    width: float,
    height: float,
    length: float,
    flaw_width: float,
    angle_deg: float,
    arrangement: str,
    spacing: Optional[float] = None,
) -> tuple[FlawSpec, FlawSpec]:
    """Two parallel inclined flaws about the specimen center.

    ``"A"`` (coplanar): both flaws on one line at ``angle_deg``, centers
    ``spacing`` apart along it.  ``"B"`` (non-coplanar): same center
    spacing but the centers sit on a horizontal line.  ``spacing`` defaults
    to twice the flaw length, leaving a ligament of one flaw length.
    """
    spacing = 2.0 * length if spacing is None else spacing
    a = math.radians(angle_deg)
    cx, cy = 0.5 * width, 0.5 * height
    arrangement = arrangement.upper()
    if arrangement == "A":
        d = 0.5 * spacing * np.array([math.cos(a), math.sin(a)])
    elif arrangement == "B":
        d = np.array([0.5 * spacing, 0.0])
    else:
        raise MeshError(f"arrangement must be 'A' or 'B', got {arrangement!r}")
    f1 = FlawSpec((cx - d[0], cy - d[1]), length, flaw_width, angle_deg, -d[1])
    f2 = FlawSpec((cx + d[0], cy + d[1]), length, flaw_width, angle_deg, d[1])
    return f1, f2


def format_mesh(mesh: Mesh) -> str:
    """Plain-text mesh serialisation (see :func:`write_mesh`)."""
    buf = io.StringIO()
    buf.write(f"nodes {mesh.n_nodes} elements {mesh.n_elements} kind {mesh.elem_kind}\n")
    for x, y in mesh.nodes:
        buf.write(f"{x:.17g} {y:.17g}\n")
    for conn in mesh.elements:
        buf.write(" ".join(str(int(i)) for i in conn) + "\n")
    for name in sorted(mesh.boundary_sets):
        idx = mesh.boundary_sets[name]
        buf.write(f"set {name} {len(idx)}")
        if len(idx):
            buf.write(" " + " ".join(str(int(i)) for i in idx))
        buf.write("\n")
    return buf.getvalue()


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``nodes N elements M kind K``, node lines, connectivity, sets."""
    Path(path).write_text(format_mesh(mesh))


def read_mesh(path, elem_modulus: Optional[Iterable[float]] = None) -> Mesh:
    """Read a mesh written by :func:`write_mesh`."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0]
    if len(head) != 6 or head[0] != "nodes" or head[2] != "elements" or head[4] != "kind":
        raise MeshError(f"bad mesh header: {' '.join(head)}")
    n, m, kind = int(head[1]), int(head[3]), head[5]
    nodes = np.array([[float(v) for v in ln] for ln in lines[1:1 + n]])
    elements = np.array([[int(v) for v in ln] for ln in lines[1 + n:1 + n + m]])
    sets = {}
    for ln in lines[1 + n + m:]:
        if ln[0] != "set":
            raise MeshError(f"unexpected line: {' '.join(ln)}")
        cnt = int(ln[2])
        sets[ln[1]] = [int(v) for v in ln[3:3 + cnt]]
    width = float(nodes[:, 0].max() - nodes[:, 0].min())
    height = float(nodes[:, 1].max() - nodes[:, 1].min())
    return Mesh(
        nodes=nodes,
        elements=elements,
        elem_kind=kind,
        boundary_sets=sets,
        h_max=_max_edge(nodes, elements),
        elem_modulus=None if elem_modulus is None else np.asarray(list(elem_modulus)),
        width=width,
        height=height,
    )
