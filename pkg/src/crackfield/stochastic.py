"""Weibull-distributed per-element Young's modulus."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "StochasticFieldSpec",
    "GENERATOR",
    "sample_field",
    "weibull_from_uniform",
    "weibull_cdf",
    "write_field",
    "read_field",
]

# Recorded in run metadata.
GENERATOR = "numpy.random.Generator(PCG64)"


@dataclass(frozen=True)
class StochasticFieldSpec:
    """``E0`` is the Weibull scale; for ``m = 1`` it is also the mean."""

    E0: float
    m: float
    seed: int
    n: int

    def __post_init__(self):
        if not self.E0 > 0:
            raise ValueError("E0 must be positive")
        if not self.m > 0:
            raise ValueError("Weibull shape m must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.n < 1:
            raise ValueError("element count n must be at least 1")


def weibull_from_uniform(u, E0: float, m: float):
    """Inverse CDF: ``E0 * (-ln(1 - u))**(1/m)``."""
    return E0 * (-np.log1p(-np.asarray(u, dtype=float))) ** (1.0 / m)


def weibull_cdf(E, E0: float, m: float):
    return 1.0 - np.exp(-((np.asarray(E, dtype=float) / E0) ** m))


def sample_field(spec: StochasticFieldSpec) -> np.ndarray:
    """Per-element moduli drawn by inverse-CDF sampling from one stream."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    u = rng.random(spec.n)
    E = weibull_from_uniform(u, spec.E0, spec.m)
    # u == 0 would give E == 0; the invariant requires E > 0
    tiny = np.nextafter(0.0, 1.0)
    return np.where(E > 0, E, max(tiny, spec.E0 * 1e-300))


def write_field(path, values) -> None:
    """One value per line, round-trip exact decimal."""
    Path(path).write_text("".join(f"{v:.17g}\n" for v in np.asarray(values, dtype=float)))


def read_field(path) -> np.ndarray:
    return np.array([float(s) for s in Path(path).read_text().split()])
