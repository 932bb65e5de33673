"""
Builds solver objects in working units from an ExperimentConfig.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bfn import BfnConfig, MeasurementSeries, synthesize_measurements
from .config import DynamicsConfig, ExperimentConfig, GridConfig, GrowthConfig, ProfileConfig
from .errors import DataFormatError, ValidationError
from .forward import KernelOperator, add_noise, build_operator, measure
from .grid import DensityField, FieldKind, Grid1D, cumulative, differentiate, normalize
from .io import read_density_csv, read_samples_csv, read_series_csv, read_trajectory_csv, trajectory_from_table
from .profiles import bimodal_psd, dirac_psd, gaussian_bumps, gaussian_psd, unimodal_psd, zero_psd
from .profiles import BIMODAL_CENTERS_M, REFERENCE_SCALE_M, REFERENCE_SHARPNESS, UNIMODAL_CENTER_M
from .transport import (
  ConstantGrowth,
  ExtendedState,
  GrowthProfile,
  GrowthSchedule,
  LinearGrowth,
  NucleationInput,
  SampledGrowth,
  Trajectory,
  default_n_steps,
  extend_initial_state,
  extended_grids,
  nucleation_for_terminal_profile,
  simulate,
)
from .units import WorkingUnits

logger = logging.getLogger(__name__)


def working_grid(g: GridConfig, units: WorkingUnits) -> Grid1D:
  return Grid1D(units.to_length(g.lo), units.to_length(g.hi), g.n_points)


def default_chord_grid(radial: Grid1D, etas, n_points: int = 200) -> Grid1D:
  return Grid1D(0.0, 2.0 * radial.hi * max(max(e, 1.0) for e in etas), n_points)


def profile_field(p: ProfileConfig, grid: Grid1D, units: WorkingUnits) -> DensityField:
  """Evaluate a configured profile on a working-unit grid."""
  m = units.length
  if p.kind == "zero":
    return zero_psd(grid)
  if p.kind == "bimodal" and p.normalized:
    return bimodal_psd(grid, m)
  if p.kind == "unimodal" and p.normalized:
    return unimodal_psd(grid, m)
  if p.kind in ("bimodal", "unimodal"):
    centers = BIMODAL_CENTERS_M if p.kind == "bimodal" else (UNIMODAL_CENTER_M,)
    return gaussian_psd(grid, [c / m for c in centers], REFERENCE_SHARPNESS, REFERENCE_SCALE_M / m, False)
  if p.kind == "gaussian":
    return gaussian_psd(grid, [c / m for c in p.centers], p.sharpness, p.scale / m, p.normalized)
  if p.kind == "dirac":
    return dirac_psd(grid, units.to_length(p.r0))
  field_ = read_density_csv(p.path, FieldKind.PSD, units)
  if not field_.grid.same_as(grid):
    raise DataFormatError(p.path, f"PSD grid of {field_.grid.n_points} nodes does not match the radius grid")
  return normalize(field_) if p.normalized else field_


def profile_function(p: ProfileConfig, units: WorkingUnits, support: Grid1D) -> Callable:
  """Profile as a function of working-unit radius; normalized over support when requested."""
  m = units.length
  if p.kind == "zero":
    return lambda r: np.zeros(np.shape(r))
  if p.kind in ("bimodal", "unimodal", "gaussian"):
    centers = {"bimodal": BIMODAL_CENTERS_M, "unimodal": (UNIMODAL_CENTER_M,)}.get(p.kind, p.centers)
    sharpness = REFERENCE_SHARPNESS if p.kind != "gaussian" else p.sharpness
    scale = (REFERENCE_SCALE_M if p.kind != "gaussian" else p.scale) / m
    centers = [c / m for c in centers]
    total = support.integrate(gaussian_bumps(support.nodes, centers, sharpness, scale)) if p.normalized else 1.0
    return lambda r: gaussian_bumps(r, centers, sharpness, scale) / total
  if p.kind == "csv":
    f = read_density_csv(p.path, FieldKind.PSD, units)
    if p.normalized:
      f = normalize(f)
    return lambda r: np.interp(r, f.grid.nodes, f.values, left=0.0, right=0.0)
  raise ValidationError(f"A {p.kind} profile cannot be used as a continuous profile")


@dataclass
class InversionSetup:
  operator: KernelOperator
  names: tuple[str, ...]
  kappas: tuple[float, ...]
  truths: tuple[DensityField, ...]


def build_inversion(config: ExperimentConfig) -> InversionSetup:
  inv = config.inversion
  units = config.units
  radial = working_grid(inv.radius_grid, units)
  etas = [s.eta for s in inv.shapes]
  chord = working_grid(inv.chord_grid, units) if inv.chord_grid else default_chord_grid(radial, etas)
  op = build_operator(radial, chord, etas, config.quadrature, config.operator_cache)
  truths = tuple(profile_field(s.psd, radial, units) for s in inv.shapes)
  return InversionSetup(op, tuple(s.name for s in inv.shapes), tuple(s.kappa for s in inv.shapes), truths)


def synthetic_data(setup: InversionSetup, noise_level: float, seed) -> DensityField:
  """Normalized cumulative CLD of the configured PSDs, noise added on the density q."""
  blocks = [t.scaled(k) for t, k in zip(setup.truths, setup.kappas)]
  return measure(setup.operator, blocks, noise_level, seed)


def growth_profile(g: GrowthConfig, units: WorkingUnits, t_max: float) -> GrowthProfile:
  if g.kind == "constant":
    return ConstantGrowth(units.to_rate(g.value))
  if g.kind == "linear":
    return LinearGrowth(units.to_rate(g.start), units.to_rate(g.end), t_max)
  t, v = read_samples_csv(g.path, units, "rate")
  return SampledGrowth(t, v)


@dataclass
class DynamicsSetup:
  names: tuple[str, ...]
  schedule: GrowthSchedule
  nucleation: NucleationInput
  grids: tuple[Grid1D, ...]
  operator: KernelOperator
  initial: ExtendedState
  n_steps: int
  r_min: float
  r_max: float
  radial: Grid1D
  bfn_settings: object = field(repr=False, default=None)

  @property
  def t_max(self) -> float:
    return self.schedule.t_max

  def simulate(self) -> Trajectory:
    return simulate(self.initial, self.schedule, self.t_max, self.n_steps)

  def bfn_config(self, **overrides) -> BfnConfig:
    b = self.bfn_settings
    kwargs = dict(
      operator=self.operator,
      schedule=self.schedule,
      grids=self.grids,
      r_min=self.r_min,
      r_max=self.r_max,
      n_steps=self.n_steps,
      mu=b.mu if b else None,
      mu0=b.mu0 if b else 50.0,
      n_iterations=b.iterations if b else 100,
      reference_time=b.reference_time if b else None,
      rate_start=b.rate_start if b else 30,
      snapshot_indices=b.snapshots if b else (),
    )
    kwargs.update(overrides)
    return BfnConfig(**kwargs)


def build_dynamics(config: ExperimentConfig) -> DynamicsSetup:
  dyn: DynamicsConfig = config.dynamics
  units = config.units
  radial = working_grid(dyn.radius_grid, units)
  r_min, r_max = radial.lo, radial.hi
  t_max = units.to_time(dyn.t_max)
  schedule = GrowthSchedule(
    tuple(growth_profile(s.growth, units, t_max) for s in dyn.shapes), t_max, constant_ratio=dyn.constant_ratio
  )
  grids = extended_grids(schedule, r_min, r_max, [units.to_length(s.grid_spacing) for s in dyn.shapes])

  terminal = [s.nucleation.kind == "terminal" for s in dyn.shapes]
  profiles = []
  for i, s in enumerate(dyn.shapes):
    if s.nucleation.kind == "zero":
      profiles.append(NucleationInput.zero(1).profiles[0])
    elif s.nucleation.kind == "csv":
      profiles.append(NucleationInput.from_samples([read_samples_csv(s.nucleation.path, units, "density")]).profiles[0])
    else:
      target = profile_function(s.nucleation.profile, units, radial)
      single = GrowthSchedule((schedule.profiles[i],), t_max)
      profiles.append(nucleation_for_terminal_profile([target], single, r_min, r_max).profiles[0])
  nucleation = NucleationInput(profiles)
  if any(terminal) and any(s.initial.kind != "zero" for s in dyn.shapes):
    logger.warning("Terminal-profile nucleation assumes a zero initial state; the terminal state will differ")

  psd0 = [profile_field(s.initial, radial, units) for s in dyn.shapes]
  initial = extend_initial_state(psd0, nucleation, schedule, grids, r_min, r_max)
  n_steps = dyn.n_steps or default_n_steps(schedule, grids)
  etas = [s.eta for s in dyn.shapes]
  chord = working_grid(dyn.chord_grid, units) if dyn.chord_grid else default_chord_grid(radial, etas)
  op = build_operator(radial, chord, etas, config.quadrature, config.operator_cache)
  return DynamicsSetup(
    tuple(s.name for s in dyn.shapes), schedule, nucleation, grids, op, initial, n_steps, r_min, r_max, radial, dyn.bfn
  )


def measurements_for(setup: DynamicsSetup, config: ExperimentConfig, truth: Trajectory | None) -> MeasurementSeries:
  """Measured series from file, or synthesized from the truth trajectory with the configured noise."""
  b = config.dynamics.bfn
  if b.data is not None:
    return read_series_csv(b.data, config.units)
  if truth is None:
    raise ValidationError("dynamics.bfn: no measurement file and no truth trajectory to synthesize one from")
  series = synthesize_measurements(setup.operator, truth)
  if b.noise.level > 0:
    rng = np.random.default_rng(b.noise.seed)
    chord = setup.operator.chord_grid
    noisy = [
      cumulative(add_noise(differentiate(DensityField(chord, Q, FieldKind.CUMULATIVE_CLD)), b.noise.level, rng)).values
      for Q in series.values
    ]
    series = MeasurementSeries(series.times, chord, np.array(noisy))
  return series


def truth_for(setup: DynamicsSetup, config: ExperimentConfig) -> Trajectory | None:
  """Truth trajectory from file, simulated when measurements are synthesized, else None."""
  b = config.dynamics.bfn
  if b.truth is not None:
    table = read_trajectory_csv(b.truth, config.units)
    times = np.linspace(0.0, setup.t_max, setup.n_steps + 1)
    return trajectory_from_table(table, setup.names, setup.grids, times, setup.r_min, setup.r_max, b.truth)
  if b.data is None:
    return setup.simulate()
  return None
