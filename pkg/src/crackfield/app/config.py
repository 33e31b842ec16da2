"""Line-oriented ``key = value`` scenario configuration.

Values carry their unit in the key name (``specimen.width_mm``,
``material.E_GPa``, ``material.cohesion_kPa``) and are converted to SI once,
here.  :func:`format_config` echoes a scenario back in the same units.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from dataclasses import dataclass, field
from typing import Optional

from ..material import MaterialParams, Variant
from ..mesh import FlawSpec, MeshError, two_flaw_layout
from ..solver import LoadProgram, SolverConfig
from ..stochastic import StochasticFieldSpec

__all__ = [
    "ConfigError",
    "Scenario",
    "parse_config",
    "load_config",
    "format_config",
    "shipped_config",
    "KEYS",
]


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# key -> (kind, default); default None means required (subject to context)
KEYS: dict[str, tuple[str, object]] = {
    "geometry.type": ("str", None),
    "specimen.width_mm": ("float", None),
    "specimen.height_mm": ("float", None),
    "flaw.length_mm": ("float", 5.0),
    "flaw.width_mm": ("float", 1.0),
    "flaw.angle_deg": ("float", 45.0),
    "flaw.eccentricity_mm": ("float", 0.0),
    "flaws.arrangement": ("str", "A"),
    "flaws.spacing_mm": ("float", math.nan),
    "mesh.target_h_mm": ("float", math.nan),
    "mesh.nx": ("int", 0),
    "mesh.ny": ("int", 0),
    "material.E_GPa": ("float", None),
    "material.nu": ("float", None),
    "material.Gc": ("float", None),
    "material.l0_mm": ("float", None),
    "material.k": ("float", 1e-9),
    "material.cohesion_kPa": ("float", None),
    "material.friction_deg": ("float", None),
    "material.variant": ("str", "HybridCompShear"),
    "stochastic.enabled": ("bool", False),
    "stochastic.E0_GPa": ("float", math.nan),
    "stochastic.m": ("float", 1.0),
    "stochastic.seed": ("int", 0),
    "program.delta_u_mm": ("float", None),
    "program.n_steps": ("int", None),
    "program.fixed_mode": ("str", "normal"),
    "program.stop_drop_ratio": ("float", math.nan),
    "solver.stagger_tol": ("float", 1e-4),
    "solver.max_stagger_iters": ("int", 200),
    "solver.linear_tol": ("float", 1e-10),
    "solver.linear_solver": ("str", "direct"),
    "solver.phase_solver": ("str", "cg"),
    "output.dir": ("str", "out"),
    "output.snapshot_stride": ("int", 50),
}

# required only for the compressive-shear driving force
_MC_KEYS = ("material.cohesion_kPa", "material.friction_deg")


@dataclass
class Scenario:
    """A fully validated run description in SI units."""

    geometry: str
    width: float
    height: float
    flaws: tuple
    arrangement: Optional[str]
    material: MaterialParams
    program: LoadProgram
    solver: SolverConfig
    target_h: Optional[float] = None
    nx: Optional[int] = None
    ny: Optional[int] = None
    stochastic: Optional[StochasticFieldSpec] = None
    output_dir: str = "out"
    snapshot_stride: int = 50
    values: dict = field(default_factory=dict)
    defaulted: tuple = ()


def _convert(kind, text, key, line):
    try:
        if kind == "float":
            v = float(text)
            if math.isinf(v):
                raise ValueError
            return v
        if kind == "int":
            return int(text)
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}", line) from None


def parse_config(text: str) -> Scenario:
    """Parse and validate a configuration text."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", no)
        key, val = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", no)
        if not val:
            raise ConfigError(f"{key}: empty value", no)
        values[key] = _convert(KEYS[key][0], val, key, no)
        lines[key] = no

    variant_text = values.get("material.variant", KEYS["material.variant"][1])
    try:
        variant = Variant.parse(str(variant_text))
    except ValueError as exc:
        raise ConfigError(str(exc), lines.get("material.variant")) from None

    defaulted = []
    for key, (_, default) in KEYS.items():
        if key in values:
            continue
        if default is None:
            if key in _MC_KEYS and variant is not Variant.HYBRID_COMP_SHEAR:
                values[key] = 0.0
                defaulted.append(key)
                continue
            raise ConfigError(f"missing required key {key!r}")
        values[key] = default
        defaulted.append(key)

    def fail(msg, *keys):
        raise ConfigError(msg, next((lines[k] for k in keys if k in lines), None))

    geometry = str(values["geometry.type"]).lower()
    if geometry not in ("intact", "single_flaw", "two_flaws"):
        fail(f"geometry.type must be intact, single_flaw or two_flaws, got {geometry!r}",
             "geometry.type")
    mm = 1e-3
    width = values["specimen.width_mm"] * mm
    height = values["specimen.height_mm"] * mm
    if not (width > 0 and height > 0):
        fail("specimen dimensions must be positive", "specimen.width_mm", "specimen.height_mm")

    try:
        material = MaterialParams(
            E=values["material.E_GPa"] * 1e9,
            nu=values["material.nu"],
            G_c=values["material.Gc"],
            l_0=values["material.l0_mm"] * mm,
            k=values["material.k"],
            cohesion_c=values["material.cohesion_kPa"] * 1e3,
            friction_deg=values["material.friction_deg"],
            variant=variant,
        )
    except ValueError as exc:
        key = next((k for k in lines if k.startswith("material.") and k.split(".")[1].lower()
                    in str(exc).lower()), None)
        raise ConfigError(f"material: {exc}", lines.get(key) if key else
                          lines.get("material.nu")) from None

    target_h = values["mesh.target_h_mm"]
    target_h = None if math.isnan(target_h) else target_h * mm
    nx, ny = values["mesh.nx"], values["mesh.ny"]
    if geometry == "intact":
        if nx <= 0 or ny <= 0:
            if target_h is None:
                fail("intact geometry needs mesh.nx/mesh.ny or mesh.target_h_mm", "mesh.nx")
            nx = max(1, round(width / target_h))
            ny = max(1, round(height / target_h))
    else:
        if target_h is None or target_h <= 0:
            fail("flawed geometry needs a positive mesh.target_h_mm", "mesh.target_h_mm")
        nx = ny = None

    flaws: tuple = ()
    arrangement = None
    try:
        L, w = values["flaw.length_mm"] * mm, values["flaw.width_mm"] * mm
        ang, ecc = values["flaw.angle_deg"], values["flaw.eccentricity_mm"] * mm
        if geometry == "single_flaw":
            flaws = (FlawSpec((0.5 * width, 0.5 * height + ecc), L, w, ang, ecc),)
        elif geometry == "two_flaws":
            arrangement = str(values["flaws.arrangement"]).upper()
            spacing = values["flaws.spacing_mm"]
            spacing = None if math.isnan(spacing) else spacing * mm
            flaws = two_flaw_layout(width, height, L, w, ang, arrangement, spacing)
    except MeshError as exc:
        fail(str(exc), "flaw.length_mm", "flaw.width_mm", "flaw.angle_deg", "flaws.arrangement")

    stop = values["program.stop_drop_ratio"]
    try:
        program = LoadProgram(
            delta_u=values["program.delta_u_mm"] * mm,
            n_steps=values["program.n_steps"],
            fixed_mode=values["program.fixed_mode"],
            stop_drop_ratio=None if math.isnan(stop) else stop,
        )
    except ValueError as exc:
        fail(f"program: {exc}", "program.delta_u_mm", "program.n_steps", "program.fixed_mode")
    try:
        solver = SolverConfig(
            stagger_tol=values["solver.stagger_tol"],
            max_stagger_iters=values["solver.max_stagger_iters"],
            linear_tol=values["solver.linear_tol"],
            linear_solver=values["solver.linear_solver"],
            phase_solver=values["solver.phase_solver"],
        )
    except ValueError as exc:
        fail(f"solver: {exc}", *[k for k in lines if k.startswith("solver.")])

    stochastic = None
    if values["stochastic.enabled"]:
        E0 = values["stochastic.E0_GPa"]
        E0 = material.E if math.isnan(E0) else E0 * 1e9
        seed = values["stochastic.seed"]
        if not (0 <= seed < 2**64):
            fail("stochastic.seed must be a 64-bit unsigned integer", "stochastic.seed")
        if not (E0 > 0 and values["stochastic.m"] > 0):
            fail("stochastic E0 and m must be positive", "stochastic.E0_GPa", "stochastic.m")
        # element count is filled in when the mesh exists
        stochastic = StochasticFieldSpec(E0=E0, m=values["stochastic.m"], seed=seed, n=1)

    if values["output.snapshot_stride"] < 1:
        fail("output.snapshot_stride must be >= 1", "output.snapshot_stride")

    return Scenario(
        geometry=geometry,
        width=width,
        height=height,
        flaws=flaws,
        arrangement=arrangement,
        material=material,
        program=program,
        solver=solver,
        target_h=target_h,
        nx=nx,
        ny=ny,
        stochastic=stochastic,
        output_dir=str(values["output.dir"]),
        snapshot_stride=values["output.snapshot_stride"],
        values=values,
        defaulted=tuple(defaulted),
    )


def shipped_config(name: str = "single_flaw_45.cfg") -> Path:
    """Path of a configuration file distributed with the package."""
    path = Path(str(resources.files(__package__).joinpath("configs", name)))
    if not path.exists():
        raise FileNotFoundError(f"no shipped configuration {name!r}")
    return path


def load_config(path) -> Scenario:
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(scenario: Scenario) -> str:
    """Echo a scenario in configuration units, one key per line.

    Values are re-derived from the SI fields, so parse -> format -> parse
    is a units round trip.
    """
    s = scenario
    m = s.material
    v = dict(s.values)
    v.update({
        "geometry.type": s.geometry,
        "specimen.width_mm": s.width * 1e3,
        "specimen.height_mm": s.height * 1e3,
        "material.E_GPa": m.E * 1e-9,
        "material.nu": m.nu,
        "material.Gc": m.G_c,
        "material.l0_mm": m.l_0 * 1e3,
        "material.k": m.k,
        "material.cohesion_kPa": m.cohesion_c * 1e-3,
        "material.friction_deg": m.friction_deg,
        "material.variant": m.variant.value,
        "program.delta_u_mm": s.program.delta_u * 1e3,
        "program.n_steps": s.program.n_steps,
        "program.fixed_mode": s.program.fixed_mode,
        "solver.stagger_tol": s.solver.stagger_tol,
        "solver.max_stagger_iters": s.solver.max_stagger_iters,
        "solver.linear_tol": s.solver.linear_tol,
        "solver.linear_solver": s.solver.linear_solver,
        "solver.phase_solver": s.solver.phase_solver,
        "output.dir": s.output_dir,
        "output.snapshot_stride": s.snapshot_stride,
    })
    if s.target_h is not None:
        v["mesh.target_h_mm"] = s.target_h * 1e3
    if s.program.stop_drop_ratio is not None:
        v["program.stop_drop_ratio"] = s.program.stop_drop_ratio
    if s.stochastic is not None:
        v["stochastic.E0_GPa"] = s.stochastic.E0 * 1e-9
        v["stochastic.m"] = s.stochastic.m
        v["stochastic.seed"] = s.stochastic.seed
    out = []
    for key in KEYS:
        val = v.get(key)
        if isinstance(val, float) and math.isnan(val):
            continue
        out.append(f"{key} = {_fmt(val)}")
    return "\n".join(out) + "\n"
