"""Constitutive kernel for plane-strain phase-field fracture.

Strains are passed in Voigt form ``(eps_xx, eps_yy, gamma_xy)`` with the
engineering shear ``gamma_xy = 2 eps_xy``; stresses come back as
``(sig_xx, sig_yy, sig_xy)``.  Every function is vectorised over leading
axes, so an ``(n_points, 3)`` strain array yields ``(n_points,)`` energies
and ``(n_points, 3)`` stresses.

The out-of-plane strain is identically zero.  It still takes part in the
spectral split as a principal value so that the compressive-shear driving
energy sees three principals.

Per-point heterogeneity in Young's modulus is expressed through
``modulus_scale`` (``E_local / params.E``); it scales both Lame constants.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Variant",
    "MaterialParams",
    "SpectralDecomposition",
    "QuadPointState",
    "lame_from_engineering",
    "degradation",
    "spectral_split",
    "psi_split",
    "psi0",
    "psi_p",
    "psi_p_principal",
    "driving_energy",
    "update_history",
    "stress",
    "tangent",
    "hooke_matrix",
]

# Relative eigenvalue gap below which the two in-plane principals are
# treated as coincident.
_EIG_TOL = 1e-12
# Gap perturbation used by the anisotropic tangent at coincident principals.
_GAP_PERTURBATION = 1e-10


class Variant(str, enum.Enum):
    ISOTROPIC = "Isotropic"
    ANISOTROPIC_MIEHE = "AnisotropicMiehe"
    HYBRID_AMBATI = "HybridAmbati"
    HYBRID_COMP_SHEAR = "HybridCompShear"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        key = text.strip().lower().replace("_", "").replace("-", "")
        for v in cls:
            if v.value.lower() == key:
                return v
        raise ValueError(
            f"unknown variant {text!r}; expected one of {[v.value for v in cls]}"
        )

    @property
    def isotropic_stress(self) -> bool:
        return self is not Variant.ANISOTROPIC_MIEHE


def lame_from_engineering(E: float, nu: float) -> tuple[float, float]:
    """Return ``(lambda, mu)`` for Young's modulus ``E`` and Poisson ratio ``nu``."""
    if not E > 0:
        raise ValueError(f"E must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"nu must satisfy 0 <= nu < 0.5, got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


@dataclass(frozen=True)
class MaterialParams:
    """Elastic, fracture and Mohr-Coulomb parameters (SI units).

    ``lam`` and ``mu`` are derived from ``E`` and ``nu`` and cannot be set
    directly.
    """

    E: float
    nu: float
    G_c: float
    l_0: float
    k: float = 1e-9
    cohesion_c: float = 0.0
    friction_deg: float = 0.0
    variant: Variant = Variant.HYBRID_COMP_SHEAR
    lam: float = field(init=False)
    mu: float = field(init=False)

    def __post_init__(self):
        lam, mu = lame_from_engineering(self.E, self.nu)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant.parse(str(self.variant)))
        if not self.G_c > 0:
            raise ValueError(f"G_c must be positive, got {self.G_c}")
        if not self.l_0 > 0:
            raise ValueError(f"l_0 must be positive, got {self.l_0}")
        if not 0.0 < self.k < 1.0:
            raise ValueError(f"k must lie in (0, 1), got {self.k}")
        if not self.cohesion_c >= 0:
            raise ValueError(f"cohesion must be non-negative, got {self.cohesion_c}")
        if not 0.0 <= self.friction_deg < 90.0:
            raise ValueError(
                f"friction angle must satisfy 0 <= phi < 90 deg, got {self.friction_deg}"
            )

    def replace(self, **changes) -> "MaterialParams":
        kw = dict(
            E=self.E, nu=self.nu, G_c=self.G_c, l_0=self.l_0, k=self.k,
            cohesion_c=self.cohesion_c, friction_deg=self.friction_deg,
            variant=self.variant,
        )
        kw.update(changes)
        return MaterialParams(**kw)


@dataclass
class SpectralDecomposition:
    """Principal decomposition of plane strains.

    Attributes
    ----------
    principal_strains : ndarray, shape (..., 3)
        Principal values sorted descending; one of them is the exact zero
        out-of-plane principal.
    principal_dirs : ndarray, shape (..., 3, 3)
        ``principal_dirs[..., :, a]`` is the unit direction of principal ``a``.
    eps_plus, eps_minus : ndarray, shape (..., 3)
        Tensile and compressive parts in Voigt form.
    """

    principal_strains: np.ndarray
    principal_dirs: np.ndarray
    eps_plus: np.ndarray
    eps_minus: np.ndarray


@dataclass
class QuadPointState:
    """History record of a single quadrature point."""

    strain: np.ndarray = field(default_factory=lambda: np.zeros(3))
    H: float = 0.0
    phase: float = 0.0


def degradation(phase, k: float):
    """``(1 - k)(1 - phi)^2 + k`` with ``phi`` clipped to ``[0, 1]``."""
    p = np.clip(phase, 0.0, 1.0)
    return (1.0 - k) * (1.0 - p) ** 2 + k


def hooke_matrix(params: MaterialParams, modulus_scale=1.0) -> np.ndarray:
    """Plane-strain elasticity matrix acting on Voigt strain."""
    s = np.asarray(modulus_scale, dtype=float)[..., None, None]
    lam, mu = params.lam, params.mu
    D = np.array([
        [lam + 2 * mu, lam, 0.0],
        [lam, lam + 2 * mu, 0.0],
        [0.0, 0.0, mu],
    ])
    return s * D


def _principal_2d(strain):
    """In-plane principal values (e1 >= e2) and the angle of e1's direction."""
    exx, eyy, exy = strain[..., 0], strain[..., 1], 0.5 * strain[..., 2]
    mean = 0.5 * (exx + eyy)
    half = 0.5 * (exx - eyy)
    r = np.hypot(half, exy)
    scale = np.maximum(1.0, np.abs(strain).max(axis=-1))
    coincident = r < _EIG_TOL * scale
    # atan2(0, 0) = 0 gives the standard basis for exactly isotropic strains
    theta = 0.5 * np.arctan2(exy, half)
    return mean + r, mean - r, theta, coincident


def _outer_voigt(c, s):
    # n n^T for n = (c, s) in Voigt tensor order (xx, yy, xy)
    return np.stack([c * c, s * s, c * s], axis=-1)


def _tensor_to_voigt(t):
    # tensor components (xx, yy, xy) -> Voigt strain with engineering shear
    return t * np.array([1.0, 1.0, 2.0])


def spectral_split(strain) -> SpectralDecomposition:
    """Split plane strains into tensile and compressive parts."""
    strain = np.asarray(strain, dtype=float)
    e1, e2, theta, _ = _principal_2d(strain)
    c, s = np.cos(theta), np.sin(theta)
    p1 = _outer_voigt(c, s)
    p2 = _outer_voigt(-s, c)
    plus = np.maximum(e1, 0.0)[..., None] * p1 + np.maximum(e2, 0.0)[..., None] * p2
    minus = np.minimum(e1, 0.0)[..., None] * p1 + np.minimum(e2, 0.0)[..., None] * p2

    zeros = np.zeros_like(e1)
    ones = np.ones_like(e1)
    vals = np.stack([e1, e2, zeros], axis=-1)
    # columns: in-plane dir 1, in-plane dir 2, out-of-plane axis
    dirs = np.stack([
        np.stack([c, s, zeros], axis=-1),
        np.stack([-s, c, zeros], axis=-1),
        np.stack([zeros, zeros, ones], axis=-1),
    ], axis=-1)
    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    dirs = np.take_along_axis(dirs, order[..., None, :], axis=-1)
    return SpectralDecomposition(
        principal_strains=vals,
        principal_dirs=dirs,
        eps_plus=_tensor_to_voigt(plus),
        eps_minus=_tensor_to_voigt(minus),
    )


def psi_split(strain, params: MaterialParams, modulus_scale=1.0):
    """Tensile and compressive elastic energy densities ``(psi+, psi-)``."""
    strain = np.asarray(strain, dtype=float)
    lam = params.lam * np.asarray(modulus_scale)
    mu = params.mu * np.asarray(modulus_scale)
    e1, e2, _, _ = _principal_2d(strain)
    tr = strain[..., 0] + strain[..., 1]
    pos = 0.5 * lam * np.maximum(tr, 0.0) ** 2 + mu * (
        np.maximum(e1, 0.0) ** 2 + np.maximum(e2, 0.0) ** 2
    )
    neg = 0.5 * lam * np.minimum(tr, 0.0) ** 2 + mu * (
        np.minimum(e1, 0.0) ** 2 + np.minimum(e2, 0.0) ** 2
    )
    return pos, neg


def psi0(strain, params: MaterialParams, modulus_scale=1.0):
    """Undecomposed elastic energy density."""
    strain = np.asarray(strain, dtype=float)
    lam = params.lam * np.asarray(modulus_scale)
    mu = params.mu * np.asarray(modulus_scale)
    exx, eyy, gxy = strain[..., 0], strain[..., 1], strain[..., 2]
    tr = exx + eyy
    return 0.5 * lam * tr**2 + mu * (exx**2 + eyy**2 + 0.5 * gxy**2)


def psi_p_principal(principals, lam, mu, cohesion_c: float, friction_deg: float):
    """Compressive-shear energy from three principal strains (last axis).

    Principals are sorted descending and every pair is taken larger-first,
    so the shear term of each Mohr-Coulomb bracket is non-negative.  Only
    the compressive parts enter.
    """
    if not 0.0 <= friction_deg < 90.0:
        raise ValueError("friction angle must lie in [0, 90) degrees")
    p = -np.sort(-np.asarray(principals, dtype=float), axis=-1)
    comp = np.minimum(p, 0.0)
    vol = comp.sum(axis=-1)
    lam, mu = np.asarray(lam, dtype=float), np.asarray(mu, dtype=float)
    phi = math.radians(friction_deg)
    sec, tan = 1.0 / math.cos(phi), math.tan(phi)
    total = np.zeros(p.shape[:-1])
    for i, j in ((0, 1), (0, 2), (1, 2)):
        ci, cj = comp[..., i], comp[..., j]
        bracket = mu * (ci - cj) * sec + (lam * vol + mu * (ci + cj)) * tan - cohesion_c
        total = total + np.maximum(bracket, 0.0) ** 2
    return total / (2.0 * mu)


def psi_p(strain, params: MaterialParams, modulus_scale=1.0):
    """Compressive-shear driving energy of plane strains.

    The out-of-plane principal strain is zero.
    """
    strain = np.asarray(strain, dtype=float)
    e1, e2, _, _ = _principal_2d(strain)
    principals = np.stack([e1, e2, np.zeros_like(e1)], axis=-1)
    scale = np.asarray(modulus_scale)
    return psi_p_principal(principals, params.lam * scale, params.mu * scale,
                           params.cohesion_c, params.friction_deg)


def driving_energy(strain, params: MaterialParams, modulus_scale=1.0):
    """Crack driving energy selected by ``params.variant``."""
    v = params.variant
    if v is Variant.ISOTROPIC:
        return psi0(strain, params, modulus_scale)
    if v is Variant.HYBRID_COMP_SHEAR:
        return psi_p(strain, params, modulus_scale)
    return psi_split(strain, params, modulus_scale)[0]


def update_history(H, strain, params: MaterialParams, modulus_scale=1.0):
    """Return ``max(H, driving energy)``; never decreases ``H``.

    ``H`` may be a float, an array, or a :class:`QuadPointState` (updated in
    place and also returned as the new ``H``).
    """
    if isinstance(H, QuadPointState):
        H.strain = np.asarray(strain, dtype=float)
        H.H = float(update_history(H.H, strain, params, modulus_scale))
        return H.H
    return np.maximum(H, driving_energy(strain, params, modulus_scale))


def stress(strain, phase, params: MaterialParams, modulus_scale=1.0):
    """Degraded Cauchy stress in Voigt form ``(sxx, syy, sxy)``."""
    strain = np.asarray(strain, dtype=float)
    g = np.asarray(degradation(phase, params.k))[..., None]
    s = np.asarray(modulus_scale, dtype=float)[..., None]
    lam, mu = params.lam * s, params.mu * s
    if params.variant.isotropic_stress:
        D = hooke_matrix(params)
        return g * s * np.einsum("ij,...j->...i", D, strain)
    dec = spectral_split(strain)
    tr = (strain[..., 0] + strain[..., 1])[..., None]
    iden = np.array([1.0, 1.0, 0.0])
    shear_half = np.array([1.0, 1.0, 0.5])
    sig_plus = lam * np.maximum(tr, 0.0) * iden + 2.0 * mu * dec.eps_plus * shear_half
    sig_minus = lam * np.minimum(tr, 0.0) * iden + 2.0 * mu * dec.eps_minus * shear_half
    return g * sig_plus + sig_minus


def _positive_projection_tangent(strain):
    """d(eps+)/d(eps) as a (..., 3, 3) map from Voigt strain to tensor comps."""
    e1, e2, theta, coincident = _principal_2d(strain)
    c, s = np.cos(theta), np.sin(theta)
    n1 = np.stack([c, s], axis=-1)
    n2 = np.stack([-s, c], axis=-1)
    P1 = n1[..., :, None] * n1[..., None, :]
    P2 = n2[..., :, None] * n2[..., None, :]

    gap = e1 - e2
    scale = np.maximum(1.0, np.abs(strain).max(axis=-1))
    gap = np.where(coincident, _GAP_PERTURBATION * scale, gap)
    e1p = np.where(coincident, e2 + gap, e1)
    cross = (np.maximum(e1p, 0.0) - np.maximum(e2, 0.0)) / gap
    h1 = (e1p > 0.0).astype(float)
    h2 = (e2 > 0.0).astype(float)

    # unit Voigt perturbations as symmetric tensors
    basis = np.array([
        [[1.0, 0.0], [0.0, 0.0]],
        [[0.0, 0.0], [0.0, 1.0]],
        [[0.0, 0.5], [0.5, 0.0]],
    ])
    out = np.empty(strain.shape[:-1] + (3, 3))
    for k in range(3):
        dE = basis[k]
        a1 = np.einsum("...i,ij,...j->...", n1, dE, n1)
        a2 = np.einsum("...i,ij,...j->...", n2, dE, n2)
        mixed = np.einsum("...ij,jk,...kl->...il", P1, dE, P2)
        mixed = mixed + np.swapaxes(mixed, -1, -2)
        dT = (h1 * a1)[..., None, None] * P1 + (h2 * a2)[..., None, None] * P2
        dT = dT + cross[..., None, None] * mixed
        out[..., 0, k] = dT[..., 0, 0]
        out[..., 1, k] = dT[..., 1, 1]
        out[..., 2, k] = dT[..., 0, 1]
    return out


def tangent(strain, phase, params: MaterialParams, modulus_scale=1.0):
    """Consistent plane-strain tangent ``d sigma / d eps`` (Voigt, 3x3)."""
    strain = np.asarray(strain, dtype=float)
    g = np.asarray(degradation(phase, params.k))
    if params.variant.isotropic_stress:
        D = hooke_matrix(params, modulus_scale)
        gD = g[..., None, None] * D
        return np.broadcast_to(gD, strain.shape[:-1] + (3, 3)).copy()
    s = np.asarray(modulus_scale, dtype=float)
    lam = (params.lam * s)[..., None, None]
    mu = (params.mu * s)[..., None, None]
    tr = strain[..., 0] + strain[..., 1]
    J = np.outer([1.0, 1.0, 0.0], [1.0, 1.0, 0.0])
    Pp = _positive_projection_tangent(strain)
    Pid = np.diag([1.0, 1.0, 0.5])
    Pm = Pid - Pp
    hp = (tr > 0.0).astype(float)[..., None, None]
    D_plus = lam * hp * J + 2.0 * mu * Pp
    D_minus = lam * (1.0 - hp) * J + 2.0 * mu * Pm
    return g[..., None, None] * D_plus + D_minus
