"""Run-configuration parsing and validation.

A run config is one JSON document.  Closed-form input data (initial
profiles, surface charge densities) are expression strings over the small
grammar in :mod:`porodrift.expressions`; they are compiled here and every
module-level precondition that is checkable at parse time is checked here,
with messages naming the violated assumption.

Sections (see README for the full schema):

    geometry        inclusion {kind, params}, m, r, optional dim
    scaling         alpha, beta, eta, p, T, dt_init, cfl_fraction
    species         list of {name, D, z, c0}
    surface_charge  xi1(x, y), xi2(x), auto_balance
    solver          poisson_tol, cell_tol, explicit_time, poisson_every_step
    output          directory, interval, snapshot_times
    macro           resolution, mode (auto | coupled | decoupled)
    cell            resolution, dump_correctors
    convergence     m_values, T, dt_init, macro_resolution
    eta_sweep       values, T, dt_init
    mms             solvers, resolutions
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError
from .expressions import ExpressionError, compile_expression
from .geometry import (
    FacetCharges,
    InclusionShape,
    build_cell_geometry,
    build_masked_grid,
    surface_charge_on_facets,
)
from .micro import ScalingSpec, SpeciesSpec, validate_compatibility
from .verification import balance_outer_charges


def _require(section, key, kind, where):
    if key not in section:
        raise ConfigError(f"missing required key {key!r} in {where} section")
    value = section[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{key} must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
        return int(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}.{key} must be a string, got {value!r}")
        return value
    return value


def _optional(section, key, default):
    return section.get(key, default)


def _inclusion_from_config(geo: dict, dim: int) -> InclusionShape:
    inc = geo.get("inclusion", {"kind": "none"})
    if not isinstance(inc, dict):
        raise ConfigError("geometry.inclusion must be an object with a 'kind'")
    kind = _require(inc, "kind", str, "geometry.inclusion")
    try:
        if kind == "none":
            return InclusionShape("none", center=tuple([0.5] * dim))
        center = tuple(float(v) for v in _optional(inc, "center", [0.5] * dim))
        if kind == "disk":
            return InclusionShape("disk", center=center,
                                  radius=_require(inc, "radius", float, "geometry.inclusion"))
        if kind == "square":
            return InclusionShape("square", center=center,
                                  half_width=_require(inc, "half_width", float,
                                                      "geometry.inclusion"))
        if kind == "super_ellipse":
            axes = tuple(float(v) for v in _require(inc, "semi_axes", list,
                                                    "geometry.inclusion"))
            return InclusionShape("super_ellipse", center=center, semi_axes=axes,
                                  exponent=float(_optional(inc, "exponent", 4.0)))
    except GeometryError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown inclusion kind {kind!r}")


@dataclass
class SpeciesConfig:
    name: str
    diffusivity: float
    charge: int
    c0_text: str
    c0_expr: object

    def profile(self, dim):
        expr = self.c0_expr

        def evaluate(points):
            env = {f"x{i + 1}": points[:, i] for i in range(dim)}
            return expr(env)

        return evaluate


@dataclass
class RunConfig:
    """Typed, validated configuration with compiled data expressions."""

    raw: dict
    dim: int
    inclusion: InclusionShape
    m: int
    r: int
    alpha: float
    beta: float
    eta: float
    p: float
    final_time: float
    dt_init: float
    cfl_fraction: float
    species: list
    xi1_text: str
    xi2_text: str
    auto_balance: bool
    poisson_tol: float
    cell_tol: float
    explicit_time: bool
    poisson_every_step: bool
    output_dir: str
    output_interval: float
    snapshot_times: list
    macro_resolution: int
    macro_mode: str
    cell_resolution: int
    dump_correctors: bool
    convergence_m_values: list
    convergence_final_time: float
    convergence_dt_init: float
    convergence_macro_resolution: int
    eta_values: list
    eta_final_time: float
    eta_dt_init: float
    mms_solvers: list
    mms_resolutions: list
    compat_residual_raw: float = 0.0
    balance_shift: float = 0.0
    _cell: object = field(default=None, repr=False)
    _grid: object = field(default=None, repr=False)
    _charges: object = field(default=None, repr=False)

    # -- compiled data -------------------------------------------------------

    def species_specs(self):
        return [
            SpeciesSpec(s.name, s.diffusivity, s.charge, s.profile(self.dim))
            for s in self.species
        ]

    def xi1_callable(self):
        expr = compile_expression(self.xi1_text,
                                  [f"x{i + 1}" for i in range(self.dim)]
                                  + [f"y{i + 1}" for i in range(self.dim)])

        def evaluate(x, y):
            env = {f"x{i + 1}": x[:, i] for i in range(self.dim)}
            env.update({f"y{i + 1}": y[:, i] for i in range(self.dim)})
            return expr(env)

        return evaluate

    def xi2_callable(self):
        expr = compile_expression(self.xi2_text, [f"x{i + 1}" for i in range(self.dim)])

        def evaluate(x):
            return expr({f"x{i + 1}": x[:, i] for i in range(self.dim)})

        return evaluate

    # -- built geometry / data ------------------------------------------------

    @property
    def cell(self):
        if self._cell is None:
            self._cell = build_cell_geometry(self.inclusion, self.r)
        return self._cell

    @property
    def grid(self):
        if self._grid is None:
            self._grid = build_masked_grid(self.cell, self.m, self.r)
        return self._grid

    @property
    def charges(self) -> FacetCharges:
        """Facet charges on the micro grid, auto-balanced when enabled."""
        if self._charges is None:
            raise ConfigError("charges are populated during parse_and_validate")
        return self._charges

    def scaling(self) -> ScalingSpec:
        return ScalingSpec(epsilon=1.0 / self.m, alpha=self.alpha, beta=self.beta,
                           eta=self.eta, p=self.p, final_time=self.final_time)

    def resolved_macro_mode(self) -> str:
        if self.macro_mode == "auto":
            return "coupled" if self.alpha == self.beta else "decoupled"
        return self.macro_mode

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def parse_and_validate(source) -> RunConfig:
    """Parse a JSON config (text, dict, or path-like) into a validated RunConfig.

    Builds the unit cell and micro grid, samples the surface charges, and
    computes the discrete compatibility residual.  With auto_balance the
    outer charge is shifted by the constant -R/|outer boundary| (recorded in
    the manifest); otherwise an incompatible balance is a ConfigError.
    """
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    for section in ("geometry", "scaling", "species"):
        if section not in raw:
            raise ConfigError(f"missing required config section {section!r}")

    geo = raw["geometry"]
    m = _require(geo, "m", int, "geometry")
    r = _require(geo, "r", int, "geometry")
    if m < 1:
        raise ConfigError(f"geometry.m must be >= 1 (eps = 1/m), got {m}")
    dim = int(_optional(geo, "dim", 0))
    if dim == 0:
        inc_raw = geo.get("inclusion", {})
        center = inc_raw.get("center") if isinstance(inc_raw, dict) else None
        dim = len(center) if center is not None else 2
    if dim not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {dim}")
    inclusion = _inclusion_from_config(geo, dim)

    sca = raw["scaling"]
    alpha = _require(sca, "alpha", float, "scaling")
    beta = _require(sca, "beta", float, "scaling")
    eta = _require(sca, "eta", float, "scaling")
    p = _require(sca, "p", float, "scaling")
    final_time = _require(sca, "T", float, "scaling")
    dt_init = float(_optional(sca, "dt_init", final_time / 100 if final_time > 0 else 1e-3))
    if dt_init <= 0:
        raise ConfigError(f"scaling.dt_init must be positive, got {dt_init}")
    cfl_fraction = float(_optional(sca, "cfl_fraction", 0.5))
    if not 0 < cfl_fraction <= 1:
        raise ConfigError(f"scaling.cfl_fraction must lie in (0, 1], got {cfl_fraction}")

    species_raw = raw["species"]
    if not isinstance(species_raw, list) or not species_raw:
        raise ConfigError("species must be a non-empty list")
    species = []
    seen = set()
    for idx, entry in enumerate(species_raw):
        where = f"species[{idx}]"
        name = str(_optional(entry, "name", f"s{idx + 1}"))
        if name in seen:
            raise ConfigError(f"duplicate species name {name!r}")
        seen.add(name)
        diffusivity = _require(entry, "D", float, where)
        if diffusivity <= 0:
            raise ConfigError(f"{where}.D must be positive (diffusivities D_i > 0), "
                              f"got {diffusivity}")
        charge = _require(entry, "z", int, where)
        c0_text = _require(entry, "c0", str, where)
        try:
            c0_expr = compile_expression(c0_text, [f"x{i + 1}" for i in range(dim)])
        except ExpressionError as exc:
            raise ConfigError(f"{where}.c0: {exc}") from exc
        species.append(SpeciesConfig(name, diffusivity, charge, c0_text, c0_expr))

    charge_sec = _optional(raw, "surface_charge", {})
    xi1_text = str(_optional(charge_sec, "xi1", "0"))
    xi2_text = str(_optional(charge_sec, "xi2", "0"))
    auto_balance = bool(_optional(charge_sec, "auto_balance", False))

    solver = _optional(raw, "solver", {})
    poisson_tol = float(_optional(solver, "poisson_tol", 1e-10))
    cell_tol = float(_optional(solver, "cell_tol", 1e-12))
    if poisson_tol <= 0 or cell_tol <= 0:
        raise ConfigError("solver tolerances must be positive")
    explicit_time = bool(_optional(solver, "explicit_time", False))
    poisson_every_step = bool(_optional(solver, "poisson_every_step", False))

    output = _optional(raw, "output", {})
    output_dir = str(_optional(output, "directory", "out"))
    output_interval = float(_optional(output, "interval", final_time / 10 if final_time > 0 else 0.0))
    snapshot_times = [float(t) for t in _optional(output, "snapshot_times",
                                                  [final_time] if final_time > 0 else [])]
    for t_snap in snapshot_times:
        if t_snap < 0 or t_snap > final_time + 1e-12:
            raise ConfigError(f"snapshot time {t_snap} outside [0, T = {final_time}]")

    macro_sec = _optional(raw, "macro", {})
    macro_resolution = int(_optional(macro_sec, "resolution", m * r))
    macro_mode = str(_optional(macro_sec, "mode", "auto"))
    if macro_mode not in ("auto", "coupled", "decoupled"):
        raise ConfigError(f"macro.mode must be auto, coupled or decoupled, got {macro_mode!r}")
    if macro_mode == "coupled" and alpha != beta:
        raise ConfigError("macro.mode = coupled requires equal scalings alpha = beta")
    if macro_mode == "decoupled" and not alpha < beta:
        raise ConfigError("macro.mode = decoupled requires alpha < beta")

    cell_sec = _optional(raw, "cell", {})
    cell_resolution = int(_optional(cell_sec, "resolution", r))
    dump_correctors = bool(_optional(cell_sec, "dump_correctors", False))

    conv = _optional(raw, "convergence", {})
    conv_m_values = [int(v) for v in _optional(conv, "m_values", [4, 8, 16])]
    conv_final_time = float(_optional(conv, "T", 0.05))
    conv_dt_init = float(_optional(conv, "dt_init", 5e-4))
    conv_macro_resolution = int(_optional(conv, "macro_resolution",
                                          r * max(conv_m_values) if conv_m_values else m * r))

    eta_sec = _optional(raw, "eta_sweep", {})
    eta_values = [float(v) for v in _optional(eta_sec, "values", [0.5, 0.25, 0.125])]
    eta_final_time = float(_optional(eta_sec, "T", 0.05))
    eta_dt_init = float(_optional(eta_sec, "dt_init", dt_init))

    mms_sec = _optional(raw, "mms", {})
    mms_solvers = list(_optional(mms_sec, "solvers",
                                 ["poisson_micro", "poisson_macro", "diffusion"]))
    mms_resolutions = [int(v) for v in _optional(mms_sec, "resolutions", [32, 64, 128])]

    config = RunConfig(
        raw=raw, dim=dim, inclusion=inclusion, m=m, r=r,
        alpha=alpha, beta=beta, eta=eta, p=p, final_time=final_time,
        dt_init=dt_init, cfl_fraction=cfl_fraction, species=species,
        xi1_text=xi1_text, xi2_text=xi2_text, auto_balance=auto_balance,
        poisson_tol=poisson_tol, cell_tol=cell_tol,
        explicit_time=explicit_time, poisson_every_step=poisson_every_step,
        output_dir=output_dir, output_interval=output_interval,
        snapshot_times=snapshot_times,
        macro_resolution=macro_resolution, macro_mode=macro_mode,
        cell_resolution=cell_resolution, dump_correctors=dump_correctors,
        convergence_m_values=conv_m_values, convergence_final_time=conv_final_time,
        convergence_dt_init=conv_dt_init,
        convergence_macro_resolution=conv_macro_resolution,
        eta_values=eta_values, eta_final_time=eta_final_time, eta_dt_init=eta_dt_init,
        mms_solvers=mms_solvers, mms_resolutions=mms_resolutions,
    )

    # constraint checks that need the scaling object (alpha <= beta, p >= 4, eta > 0)
    config.scaling()

    # expressions for the surface charge must compile even if identically zero
    xi1 = config.xi1_callable()
    xi2 = config.xi2_callable()

    # geometry build, initial-data sign check, compatibility residual
    grid = config.grid
    specs = config.species_specs()
    for spec in specs:
        values = np.asarray(spec.initial_profile(grid.centers), dtype=float)
        if np.min(values) < 0:
            raise ConfigError(
                f"species {spec.name!r}: initial concentration must be nonnegative "
                f"(min {float(np.min(values)):.6g} at a cell center)"
            )
    charges = surface_charge_on_facets(grid, xi1, xi2)
    residual = validate_compatibility(grid, specs, charges, raise_on_fail=False)
    config.compat_residual_raw = float(residual)
    if auto_balance:
        charges, shift = balance_outer_charges(grid, specs, charges)
        config.balance_shift = shift
    else:
        validate_compatibility(grid, specs, charges)
    config._charges = charges
    return config
