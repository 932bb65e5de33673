"""
Experiment configuration.

A single JSON document with three sections: "inversion" (forward and invert
commands), "dynamics" (simulate and bfn) and "oracle". Every field has a
default that reproduces the reference experiments, so an empty document (or no
file at all) is a valid configuration. Physical quantities are SI and may be
written with a unit suffix ("1h", "150um", "1e-4m/h"); they are converted to
working units when the solver objects are built.

Loading collects every problem and raises one ValidationError listing them all.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import ValidationError
from .geometry import AngularQuadrature
from .io import read_json
from .units import WorkingUnits, parse_quantity

logger = logging.getLogger(__name__)

PROFILE_KINDS = ("zero", "bimodal", "unimodal", "gaussian", "dirac", "csv")
GROWTH_KINDS = ("constant", "linear", "csv")
NUCLEATION_KINDS = ("zero", "csv", "terminal")

DEFAULTS: dict[str, Any] = {
  "units": {"length": "10um", "time": "1h"},
  "quadrature": {"n_phi": 64, "n_theta": 64},
  "output_dir": "spheroid-cld-output",
  "operator_cache": None,
  "inversion": {
    "radius_grid": {"lo": 1e-4, "hi": 3e-4, "n_points": 200},
    "chord_grid": {"lo": 0.0, "hi": 1.2e-3, "n_points": 200},
    "shapes": [{"name": "prolate", "eta": 2.0, "kappa": 1.0, "psd": {"kind": "bimodal"}}],
    "noise": {"level": 0.02, "seed": 0},
    "deltas": [1e-5, 1e-3, 1e-1],
    "nonneg": True,
    "tol": 1e-8,
    "max_iters": 50000,
    "data": None,
    "concentration": None,
  },
  "dynamics": {
    "radius_grid": {"lo": 1e-4, "hi": 2e-4, "n_points": 101},
    "chord_grid": {"lo": 0.0, "hi": 8e-4, "n_points": 201},
    "t_max": "1h",
    "n_steps": None,
    "constant_ratio": True,
    "shapes": [
      {
        "name": "sphere",
        "eta": 1.0,
        "grid_spacing": "1um",
        "growth": {"kind": "constant", "value": "1e-4m/h"},
        "nucleation": {"kind": "terminal", "profile": {"kind": "unimodal"}},
        "initial": {"kind": "zero"},
      },
      {
        "name": "prolate",
        "eta": 2.0,
        "grid_spacing": "2um",
        "growth": {"kind": "constant", "value": "2e-4m/h"},
        "nucleation": {"kind": "terminal", "profile": {"kind": "unimodal"}},
        "initial": {"kind": "zero"},
      },
    ],
    "bfn": {
      "mu": None,
      "mu0": 50.0,
      "iterations": 100,
      "reference_time": None,
      "rate_start": 30,
      "noise": {"level": 0.0, "seed": 0},
      "data": None,
      "truth": None,
      "snapshots": [20, 100],
    },
  },
  "oracle": {"r": "1mm", "eta": [0.5, 1.0, 2.0], "samples": 1000000, "probes": 20, "seed": 0},
}


@dataclass(frozen=True)
class GridConfig:
  lo: float
  hi: float
  n_points: int


@dataclass(frozen=True)
class ProfileConfig:
  """Analytic or tabulated PSD; lengths in meters."""

  kind: str = "zero"
  centers: tuple[float, ...] = ()
  sharpness: float = 30.0
  scale: float = 1e-4
  r0: float | None = None
  path: Path | None = None
  normalized: bool = True


@dataclass(frozen=True)
class GrowthConfig:
  kind: str = "constant"
  value: float | None = None
  start: float | None = None
  end: float | None = None
  path: Path | None = None


@dataclass(frozen=True)
class NucleationConfig:
  kind: str = "zero"
  path: Path | None = None
  profile: ProfileConfig | None = None


@dataclass(frozen=True)
class NoiseConfig:
  level: float = 0.0
  seed: int = 0


@dataclass(frozen=True)
class ConcentrationConfig:
  C_s: float
  rho_s: float
  M_e: float


@dataclass(frozen=True)
class InversionShape:
  name: str
  eta: float
  kappa: float
  psd: ProfileConfig


@dataclass(frozen=True)
class InversionConfig:
  radius_grid: GridConfig
  chord_grid: GridConfig | None
  shapes: tuple[InversionShape, ...]
  noise: NoiseConfig
  deltas: tuple[float, ...]
  nonneg: bool
  tol: float
  max_iters: int
  data: Path | None
  concentration: ConcentrationConfig | None


@dataclass(frozen=True)
class DynamicShape:
  name: str
  eta: float
  grid_spacing: float
  growth: GrowthConfig
  nucleation: NucleationConfig
  initial: ProfileConfig


@dataclass(frozen=True)
class BfnSettings:
  mu: float | None
  mu0: float
  iterations: int
  reference_time: float | None
  rate_start: int
  noise: NoiseConfig
  data: Path | None
  truth: Path | None
  snapshots: tuple[int, ...]


@dataclass(frozen=True)
class DynamicsConfig:
  radius_grid: GridConfig
  chord_grid: GridConfig | None
  t_max: float
  n_steps: int | None
  constant_ratio: bool
  shapes: tuple[DynamicShape, ...]
  bfn: BfnSettings


@dataclass(frozen=True)
class OracleConfig:
  r: float
  etas: tuple[float, ...]
  samples: int
  probes: int
  seed: int


@dataclass(frozen=True)
class ExperimentConfig:
  units: WorkingUnits
  quadrature: AngularQuadrature
  output_dir: Path
  operator_cache: Path | None
  inversion: InversionConfig
  dynamics: DynamicsConfig
  oracle: OracleConfig
  raw: dict = field(default_factory=dict, repr=False, compare=False)


def merge(base: Mapping, update: Mapping) -> dict:
  """Recursive dict merge; lists and scalars in update replace those in base."""
  out = copy.deepcopy(dict(base))
  for key, value in update.items():
    if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
      out[key] = merge(out[key], value)
    else:
      out[key] = copy.deepcopy(value)
  return out


def set_dotted(raw: dict, dotted: str, value) -> None:
  keys = dotted.split(".")
  node = raw
  for key in keys[:-1]:
    if not isinstance(node.get(key), dict):
      node[key] = {}
    node = node[key]
  node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
  """PATH=VALUE with VALUE parsed as JSON when possible, else kept as a string."""
  if "=" not in text:
    raise ValidationError(f"Override {text!r} is not of the form PATH=VALUE")
  path, value = text.split("=", 1)
  try:
    return path.strip(), json.loads(value)
  except json.JSONDecodeError:
    return path.strip(), value


class _Reader:
  """Walks the raw document, converting values and collecting every problem."""

  def __init__(self, base_dir: Path):
    self.base_dir = base_dir
    self.problems: list[str] = []

  def fail(self, where: str, message: str):
    self.problems.append(f"{where}: {message}")

  def section(self, raw, where: str, allowed: Sequence[str]) -> dict:
    if not isinstance(raw, Mapping):
      self.fail(where, f"expected an object, got {type(raw).__name__}")
      return {}
    for key in raw:
      if key not in allowed:
        self.fail(where, f"unknown key {key!r}")
    return dict(raw)

  def quantity(self, raw, where: str, kind: str, positive: bool = False, nonneg: bool = False):
    try:
      value = parse_quantity(raw, kind, where)
    except ValidationError as exc:
      self.problems.extend(exc.problems)
      return None
    if not math.isfinite(value):
      self.fail(where, f"must be finite, got {value}")
      return None
    if positive and value <= 0:
      self.fail(where, f"must be positive, got {value}")
      return None
    if nonneg and value < 0:
      self.fail(where, f"must be nonnegative, got {value}")
      return None
    return value

  def optional_quantity(self, raw, where: str, kind: str, positive: bool = False):
    return None if raw is None else self.quantity(raw, where, kind, positive=positive)

  def integer(self, raw, where: str, minimum: int = 0):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or int(raw) != raw:
      self.fail(where, f"expected an integer, got {raw!r}")
      return None
    if raw < minimum:
      self.fail(where, f"must be at least {minimum}, got {raw}")
      return None
    return int(raw)

  def flag(self, raw, where: str):
    if not isinstance(raw, bool):
      self.fail(where, f"expected true or false, got {raw!r}")
      return None
    return raw

  def path(self, raw, where: str, must_exist: bool = True) -> Path | None:
    if raw is None:
      return None
    if not isinstance(raw, str):
      self.fail(where, f"expected a file path, got {raw!r}")
      return None
    p = Path(raw)
    if not p.is_absolute():
      p = self.base_dir / p
    if must_exist and not p.exists():
      self.fail(where, f"file {p} does not exist")
    return p

  def choice(self, raw, where: str, choices: Sequence[str]):
    if raw not in choices:
      self.fail(where, f"must be one of {', '.join(choices)}, got {raw!r}")
      return None
    return raw

  def grid(self, raw, where: str) -> GridConfig | None:
    d = self.section(raw, where, ("lo", "hi", "n_points"))
    lo = self.quantity(d.get("lo"), f"{where}.lo", "length", nonneg=True)
    hi = self.quantity(d.get("hi"), f"{where}.hi", "length", positive=True)
    n = self.integer(d.get("n_points"), f"{where}.n_points", minimum=2)
    if lo is None or hi is None or n is None:
      return None
    if not lo < hi:
      self.fail(where, f"needs lo < hi, got [{lo}, {hi}]")
      return None
    return GridConfig(lo, hi, n)

  def profile(self, raw, where: str) -> ProfileConfig | None:
    d = self.section(raw, where, ("kind", "centers", "sharpness", "scale", "r0", "path", "normalized"))
    kind = self.choice(d.get("kind", "zero"), f"{where}.kind", PROFILE_KINDS)
    centers = ()
    if "centers" in d:
      if not isinstance(d["centers"], list) or not d["centers"]:
        self.fail(f"{where}.centers", "expected a nonempty list")
      else:
        centers = tuple(self.quantity(c, f"{where}.centers", "length", positive=True) for c in d["centers"])
    if kind == "gaussian" and not centers:
      self.fail(where, "gaussian profile needs centers")
    sharpness = self.quantity(d.get("sharpness", 30.0), f"{where}.sharpness", "dimensionless", positive=True)
    scale = self.quantity(d.get("scale", 1e-4), f"{where}.scale", "length", positive=True)
    r0 = self.optional_quantity(d.get("r0"), f"{where}.r0", "length", positive=True)
    if kind == "dirac" and r0 is None:
      self.fail(where, "dirac profile needs r0")
    path = self.path(d.get("path"), f"{where}.path")
    if kind == "csv" and d.get("path") is None:
      self.fail(where, "csv profile needs a path")
    normalized = self.flag(d.get("normalized", True), f"{where}.normalized")
    if kind is None or None in centers:
      return None
    return ProfileConfig(kind, centers, sharpness or 30.0, scale or 1e-4, r0, path, bool(normalized))

  def growth(self, raw, where: str) -> GrowthConfig | None:
    d = self.section(raw, where, ("kind", "value", "start", "end", "path"))
    kind = self.choice(d.get("kind", "constant"), f"{where}.kind", GROWTH_KINDS)
    if kind == "constant":
      value = self.quantity(d.get("value"), f"{where}.value", "rate", positive=True)
      return None if value is None else GrowthConfig(kind, value=value)
    if kind == "linear":
      start = self.quantity(d.get("start"), f"{where}.start", "rate", positive=True)
      end = self.quantity(d.get("end"), f"{where}.end", "rate", positive=True)
      return None if start is None or end is None else GrowthConfig(kind, start=start, end=end)
    if kind == "csv":
      path = self.path(d.get("path"), f"{where}.path")
      if path is None and d.get("path") is None:
        self.fail(where, "csv growth needs a path")
      return None if path is None else GrowthConfig(kind, path=path)
    return None

  def nucleation(self, raw, where: str) -> NucleationConfig | None:
    d = self.section(raw, where, ("kind", "path", "profile"))
    kind = self.choice(d.get("kind", "zero"), f"{where}.kind", NUCLEATION_KINDS)
    if kind == "csv":
      path = self.path(d.get("path"), f"{where}.path")
      if path is None and d.get("path") is None:
        self.fail(where, "csv nucleation needs a path")
      return NucleationConfig(kind, path=path)
    if kind == "terminal":
      profile = self.profile(d.get("profile", {"kind": "unimodal"}), f"{where}.profile")
      return None if profile is None else NucleationConfig(kind, profile=profile)
    return None if kind is None else NucleationConfig(kind)

  def noise(self, raw, where: str) -> NoiseConfig:
    d = self.section(raw, where, ("level", "seed"))
    level = self.quantity(d.get("level", 0.0), f"{where}.level", "dimensionless", nonneg=True)
    seed = self.integer(d.get("seed", 0), f"{where}.seed")
    return NoiseConfig(level or 0.0, seed or 0)


def _inversion(r: _Reader, raw) -> InversionConfig | None:
  where = "inversion"
  d = r.section(
    raw,
    where,
    ("radius_grid", "chord_grid", "shapes", "noise", "deltas", "nonneg", "tol", "max_iters", "data", "concentration"),
  )
  radius = r.grid(d.get("radius_grid"), f"{where}.radius_grid")
  chord = None if d.get("chord_grid") is None else r.grid(d["chord_grid"], f"{where}.chord_grid")
  shapes = []
  raw_shapes = d.get("shapes")
  if not isinstance(raw_shapes, list) or not raw_shapes:
    r.fail(f"{where}.shapes", "expected a nonempty list")
    raw_shapes = []
  for k, s in enumerate(raw_shapes):
    w = f"{where}.shapes[{k}]"
    sd = r.section(s, w, ("name", "eta", "kappa", "psd"))
    eta = r.quantity(sd.get("eta"), f"{w}.eta", "dimensionless", positive=True)
    kappa = r.quantity(sd.get("kappa", 1.0), f"{w}.kappa", "dimensionless", positive=True)
    psd = r.profile(sd.get("psd", {"kind": "zero"}), f"{w}.psd")
    if eta is not None and kappa is not None and psd is not None:
      shapes.append(InversionShape(str(sd.get("name", f"shape{k}")), eta, kappa, psd))
  deltas = d.get("deltas")
  if not isinstance(deltas, list):
    r.fail(f"{where}.deltas", "expected a list")
    deltas = []
  deltas = [r.quantity(x, f"{where}.deltas", "dimensionless", positive=True) for x in deltas]
  if any(b < a for a, b in zip(deltas, deltas[1:]) if a is not None and b is not None):
    r.fail(f"{where}.deltas", "must be sorted in increasing order")
  tol = r.quantity(d.get("tol"), f"{where}.tol", "dimensionless", positive=True)
  max_iters = r.integer(d.get("max_iters"), f"{where}.max_iters", minimum=1)
  nonneg = r.flag(d.get("nonneg"), f"{where}.nonneg")
  data = r.path(d.get("data"), f"{where}.data")
  concentration = None
  if d.get("concentration") is not None:
    cd = r.section(d["concentration"], f"{where}.concentration", ("C_s", "rho_s", "M_e"))
    vals = [
      r.quantity(cd.get(k), f"{where}.concentration.{k}", "dimensionless", positive=True)
      for k in ("C_s", "rho_s", "M_e")
    ]
    if None not in vals:
      concentration = ConcentrationConfig(*vals)
  noise = r.noise(d.get("noise", {}), f"{where}.noise")
  if radius is not None and chord is not None and shapes:
    ell_max = 2.0 * radius.hi * max(max(s.eta, 1.0) for s in shapes)
    if chord.hi < ell_max * (1.0 - 1e-12):
      r.fail(f"{where}.chord_grid", f"ends at {chord.hi} m but the longest chord is {ell_max} m")
  if radius is None or None in deltas or tol is None or max_iters is None or nonneg is None:
    return None
  return InversionConfig(
    radius, chord, tuple(shapes), noise, tuple(deltas), nonneg, tol, max_iters, data, concentration
  )


def _dynamics(r: _Reader, raw) -> DynamicsConfig | None:
  where = "dynamics"
  d = r.section(raw, where, ("radius_grid", "chord_grid", "t_max", "n_steps", "constant_ratio", "shapes", "bfn"))
  radius = r.grid(d.get("radius_grid"), f"{where}.radius_grid")
  chord = None if d.get("chord_grid") is None else r.grid(d["chord_grid"], f"{where}.chord_grid")
  t_max = r.quantity(d.get("t_max"), f"{where}.t_max", "time", positive=True)
  n_steps = None if d.get("n_steps") is None else r.integer(d["n_steps"], f"{where}.n_steps", minimum=1)
  constant_ratio = r.flag(d.get("constant_ratio", False), f"{where}.constant_ratio")
  shapes = []
  raw_shapes = d.get("shapes")
  if not isinstance(raw_shapes, list) or not raw_shapes:
    r.fail(f"{where}.shapes", "expected a nonempty list")
    raw_shapes = []
  for k, s in enumerate(raw_shapes):
    w = f"{where}.shapes[{k}]"
    sd = r.section(s, w, ("name", "eta", "grid_spacing", "growth", "nucleation", "initial"))
    eta = r.quantity(sd.get("eta"), f"{w}.eta", "dimensionless", positive=True)
    spacing = r.quantity(sd.get("grid_spacing"), f"{w}.grid_spacing", "length", positive=True)
    growth = r.growth(sd.get("growth", {}), f"{w}.growth")
    nucleation = r.nucleation(sd.get("nucleation", {}), f"{w}.nucleation")
    initial = r.profile(sd.get("initial", {"kind": "zero"}), f"{w}.initial")
    if None not in (eta, spacing, growth, nucleation, initial):
      shapes.append(DynamicShape(str(sd.get("name", f"shape{k}")), eta, spacing, growth, nucleation, initial))
  names = [s.name for s in shapes]
  if len(set(names)) != len(names):
    r.fail(f"{where}.shapes", f"shape names must be unique, got {names}")

  b = r.section(
    d.get("bfn", {}),
    f"{where}.bfn",
    ("mu", "mu0", "iterations", "reference_time", "rate_start", "noise", "data", "truth", "snapshots"),
  )
  mu = None if b.get("mu") is None else r.quantity(b["mu"], f"{where}.bfn.mu", "dimensionless", positive=True)
  mu0 = r.quantity(b.get("mu0", 50.0), f"{where}.bfn.mu0", "dimensionless", positive=True)
  iterations = r.integer(b.get("iterations", 100), f"{where}.bfn.iterations")
  if iterations is not None and iterations % 2:
    r.fail(f"{where}.bfn.iterations", f"is the last sweep index 2n and must be even, got {iterations}")
  reference_time = r.optional_quantity(b.get("reference_time"), f"{where}.bfn.reference_time", "time")
  if reference_time is not None and t_max is not None and not 0 <= reference_time <= t_max:
    r.fail(f"{where}.bfn.reference_time", f"must lie in [0, t_max], got {reference_time}")
  rate_start = r.integer(b.get("rate_start", 30), f"{where}.bfn.rate_start")
  snapshots = b.get("snapshots", [])
  if not isinstance(snapshots, list):
    r.fail(f"{where}.bfn.snapshots", "expected a list of sweep indices")
    snapshots = []
  snapshots = [r.integer(x, f"{where}.bfn.snapshots") for x in snapshots]
  bfn = BfnSettings(
    mu,
    mu0 or 50.0,
    iterations or 0,
    reference_time,
    rate_start or 0,
    r.noise(b.get("noise", {}), f"{where}.bfn.noise"),
    r.path(b.get("data"), f"{where}.bfn.data"),
    r.path(b.get("truth"), f"{where}.bfn.truth"),
    tuple(x for x in snapshots if x is not None),
  )
  if radius is not None and chord is not None and shapes:
    ell_max = 2.0 * radius.hi * max(max(s.eta, 1.0) for s in shapes)
    if chord.hi < ell_max * (1.0 - 1e-12):
      r.fail(f"{where}.chord_grid", f"ends at {chord.hi} m but the longest chord is {ell_max} m")
  if radius is None or t_max is None or constant_ratio is None:
    return None
  return DynamicsConfig(radius, chord, t_max, n_steps, constant_ratio, tuple(shapes), bfn)


def _oracle(r: _Reader, raw) -> OracleConfig | None:
  d = r.section(raw, "oracle", ("r", "eta", "samples", "probes", "seed"))
  radius = r.quantity(d.get("r"), "oracle.r", "length", positive=True)
  etas = d.get("eta")
  if not isinstance(etas, list) or not etas:
    r.fail("oracle.eta", "expected a nonempty list")
    etas = []
  etas = [r.quantity(e, "oracle.eta", "dimensionless", positive=True) for e in etas]
  samples = r.integer(d.get("samples"), "oracle.samples", minimum=1)
  probes = r.integer(d.get("probes"), "oracle.probes", minimum=1)
  seed = r.integer(d.get("seed", 0), "oracle.seed")
  if radius is None or None in etas or samples is None or probes is None or seed is None:
    return None
  return OracleConfig(radius, tuple(etas), samples, probes, seed)


def parse_config(raw: Mapping, base_dir: Path | str = ".") -> ExperimentConfig:
  """Validate a raw document merged over the defaults."""
  doc = merge(DEFAULTS, raw)
  r = _Reader(Path(base_dir))
  r.section(doc, "config", tuple(DEFAULTS))
  u = r.section(doc["units"], "units", ("length", "time"))
  length = r.quantity(u.get("length"), "units.length", "length", positive=True)
  time = r.quantity(u.get("time"), "units.time", "time", positive=True)
  q = r.section(doc["quadrature"], "quadrature", ("n_phi", "n_theta"))
  n_phi = r.integer(q.get("n_phi"), "quadrature.n_phi", minimum=1)
  n_theta = r.integer(q.get("n_theta"), "quadrature.n_theta", minimum=1)
  output_dir = doc.get("output_dir")
  if not isinstance(output_dir, str) or not output_dir:
    r.fail("output_dir", f"expected a directory path, got {output_dir!r}")
  cache = r.path(doc.get("operator_cache"), "operator_cache", must_exist=False)
  inversion = _inversion(r, doc["inversion"])
  dynamics = _dynamics(r, doc["dynamics"])
  oracle = _oracle(r, doc["oracle"])
  if r.problems:
    raise ValidationError(r.problems)
  return ExperimentConfig(
    WorkingUnits(length, time),
    AngularQuadrature(n_phi, n_theta),
    Path(output_dir),
    cache,
    inversion,
    dynamics,
    oracle,
    raw=doc,
  )


def load_raw(path: Path | str | None = None) -> tuple[dict, Path]:
  """The document merged over the defaults, and the directory relative paths resolve against."""
  if path is None:
    return merge(DEFAULTS, {}), Path.cwd()
  path = Path(path)
  raw = read_json(path)
  if not isinstance(raw, dict):
    raise ValidationError(f"{path}: top level must be a JSON object")
  return merge(DEFAULTS, raw), path.parent


def load_config(path: Path | str | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
  """Read a JSON configuration (or only the defaults), apply dotted-path overrides, validate."""
  raw, base_dir = load_raw(path)
  for dotted, value in (overrides or {}).items():
    set_dotted(raw, dotted, value)
  config = parse_config(raw, base_dir)
  logger.debug("Loaded configuration from %s", path or "defaults")
  return config
