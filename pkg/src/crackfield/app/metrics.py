"""Scalar metrics from a run directory."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..mesh import Mesh, element_areas, read_mesh
from .runner import read_curve, read_nodal_field

__all__ = ["NoPeakError", "find_peak", "band_width", "extract_metrics", "read_meta"]


class NoPeakError(ValueError):
    """The load-displacement curve never falls after its maximum."""


def find_peak(u, F) -> tuple[float, float, int]:
    """Maximum load, its displacement and its index.

    Raises :class:`NoPeakError` when the maximum is the last point, i.e. the
    curve has not softened yet.
    """
    F = np.asarray(F, dtype=float)
    if F.size == 0:
        raise NoPeakError("empty load-displacement curve")
    i = int(np.argmax(F))
    if i == F.size - 1:
        raise NoPeakError("load still rising at the last step; no peak detected")
    return float(F[i]), float(np.asarray(u, dtype=float)[i]), i


def _largest_component(mesh: Mesh, mask_elem: np.ndarray) -> np.ndarray:
    """Element mask of the largest edge-connected group within ``mask_elem``."""
    idx = np.flatnonzero(mask_elem)
    if idx.size == 0:
        return mask_elem
    conn = mesh.elements[idx]
    nper = conn.shape[1]
    # elements sharing a node are connected: bipartite element-node graph
    rows = np.repeat(np.arange(idx.size), nper)
    g = sp.csr_matrix((np.ones(rows.size), (rows, conn.ravel())),
                      shape=(idx.size, mesh.n_nodes))
    adj = g @ g.T
    _, labels = connected_components(adj, directed=False)
    keep = labels == np.bincount(labels).argmax()
    out = np.zeros_like(mask_elem)
    out[idx[keep]] = True
    return out


def band_width(mesh: Mesh, phi, threshold: float = 0.5, bin_size: float = None) -> float:
    """Mean width of the dominant ``phi > threshold`` band (metres).

    The band is the largest connected set of elements whose mean phase
    exceeds ``threshold``.  Its width is the band area divided by its length,
    the length being the occupied extent along the principal axis of the
    band measured in bins of ``bin_size`` (default: the mesh size).
    """
    phi = np.asarray(phi, dtype=float)
    elem_phi = phi[mesh.elements].mean(axis=1)
    band = _largest_component(mesh, elem_phi > threshold)
    if not band.any():
        return 0.0
    areas = element_areas(mesh.nodes, mesh.elements)[band]
    cent = mesh.nodes[mesh.elements[band]].mean(axis=1)
    c0 = np.average(cent, axis=0, weights=areas)
    d = cent - c0
    cov = (d * areas[:, None]).T @ d
    axis = np.linalg.eigh(cov)[1][:, -1]
    s = d @ axis
    b = bin_size or mesh.h_max
    occupied = np.unique(np.floor(s / b)).size
    return float(areas.sum() / (occupied * b))


def read_meta(run_dir) -> dict:
    meta = {}
    for line in (Path(run_dir) / "run_meta.txt").read_text().splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        meta.setdefault(k, v)
    return meta


def _final_phi(run_dir: Path):
    files = sorted(run_dir.glob("phi_*.field"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        return None
    return read_nodal_field(files[-1])[2]


def extract_metrics(run_dir) -> dict:
    """``peak_load`` (N/m), ``displacement_at_peak`` (mm), ``crack_band_width``.

    ``crack_band_width`` is in units of the run's ``l_0``; the absolute value
    in millimetres is returned as ``crack_band_width_mm``.  Raises
    :class:`NoPeakError` for a curve without a peak.
    """
    run_dir = Path(run_dir)
    rows = read_curve(run_dir / "curve.csv")
    peak, u_peak, i = find_peak(rows[:, 1], rows[:, 2])
    out = {
        "peak_load": peak,
        "displacement_at_peak": u_peak,
        "peak_step": int(rows[i, 0]),
        "final_load": float(rows[-1, 2]),
        "load_drop": float(1.0 - rows[-1, 2] / peak) if peak > 0 else 0.0,
    }
    phi = _final_phi(run_dir)
    if phi is not None:
        mesh = read_mesh(run_dir / "mesh.txt")
        width_m = band_width(mesh, phi)
        l0_mm = float(read_meta(run_dir)["material.l0_mm"])
        out["crack_band_width_mm"] = width_m * 1e3
        out["crack_band_width"] = width_m * 1e3 / l0_mm
    return out
