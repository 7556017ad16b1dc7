"""Run configuration: a documented YAML schema mapping onto the model and the
experiment parameters.

Schema (keys in parentheses optional)::

    model:
      gravitational_constant: float      # m^3 kg^-1 s^-2
      (rotation): [wx, wy, wz]           # rad/s
      (nondimensionalize): bool          # default true
      layers:                            # ordered inside-out
        - kind: solid | fluid
          r_outer: float                 # m; r_inner is implied
          density: [c0, c1, ...]         # polynomial in r, low -> high
          (bulk_modulus): [...]          # solid layers (Pa)
          (shear_modulus): [...]         # solid layers (Pa)
          (adiabatic_index): [...]       # fluid layers (dimensionless)
    (run):
      (lmax): int            (radial_order): int
      (variant): a2|a3|a4    (quadrature): {radial_order: int, spherical_degree: int}
      (time): {T: float, steps: int}
      (seed): int            (reference_resolution): int
    (source):
      either {fault_normal: [...], slip: [...], moment: float}
      or     {tensor: [[...], [...], [...]]}
      (origin): [x, y, z]    (origin_time): float   (rise): step|impulse
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .model import EarthModel, Layer, ModelInvalidError


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict
    model: EarthModel
    lmax: int = 2
    radial_order: int = 3
    variant: str = "a2"
    quad_radial: int = 16
    quad_spherical: int = 0  # 0 -> derived from lmax
    T: float = 10.0
    steps: int = 200
    seed: int = 1234
    reference_resolution: int = 96
    nondimensionalize: bool = True
    source: dict | None = None
    scales: object = None

    @property
    def spherical_degree(self) -> int:
        return self.quad_spherical or (2 * self.lmax + 4)


def parse_model(cfg: dict) -> EarthModel:
    try:
        layers = []
        r_in = 0.0
        for spec in cfg["layers"]:
            kind = spec["kind"]
            r_out = float(spec["r_outer"])
            layers.append(
                Layer(
                    kind,
                    r_in,
                    r_out,
                    rho=tuple(float(c) for c in spec["density"]),
                    kappa=tuple(float(c) for c in spec.get("bulk_modulus", ())),
                    mu=tuple(float(c) for c in spec.get("shear_modulus", ())),
                    gamma=tuple(float(c) for c in spec.get("adiabatic_index", ())),
                )
            )
            r_in = r_out
        return EarthModel(
            tuple(layers),
            omega=tuple(float(w) for w in cfg.get("rotation", (0.0, 0.0, 0.0))),
            grav_const=float(cfg["gravitational_constant"]),
        )
    except (KeyError, TypeError, ModelInvalidError) as exc:
        raise ConfigError(f"invalid model configuration: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "model" not in raw:
        raise ConfigError("config must be a mapping with a 'model' section")
    model = parse_model(raw["model"])
    rc = RunConfig(raw=raw, model=model)
    rc.nondimensionalize = bool(raw["model"].get("nondimensionalize", True))
    run = raw.get("run", {})
    rc.lmax = int(run.get("lmax", rc.lmax))
    rc.radial_order = int(run.get("radial_order", rc.radial_order))
    rc.variant = str(run.get("variant", rc.variant))
    if rc.variant not in ("a2", "a3", "a4"):
        raise ConfigError(f"variant must be a2|a3|a4, got {rc.variant}")
    quad = run.get("quadrature", {})
    rc.quad_radial = int(quad.get("radial_order", rc.quad_radial))
    rc.quad_spherical = int(quad.get("spherical_degree", 0))
    tspec = run.get("time", {})
    rc.T = float(tspec.get("T", rc.T))
    rc.steps = int(tspec.get("steps", rc.steps))
    rc.seed = int(run.get("seed", rc.seed))
    rc.reference_resolution = int(run.get("reference_resolution", rc.reference_resolution))
    rc.source = raw.get("source")
    if rc.nondimensionalize and model.grav_const > 0:
        from .model import to_nondimensional

        rc.model, rc.scales = to_nondimensional(model)
    return rc
