"""
Multi-shape population balance on the extended periodic domain.

Each shape i obeys d psi_i/dt + G_i(t) d psi_i/dr = 0. Nucleation is folded into
the initial state: the domain is extended down to r0 = r_min - max_i int_0^t_max G_i
and the nodes below r_min hold the nucleation values that will be transported
across r_min during the horizon. The extended domain is periodic; a state keeps
the duplicated end node equal to the first one.
"""

from __future__ import annotations

import abc
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .errors import CflError, ValidationError
from .grid import DensityField, FieldKind, Grid1D

logger = logging.getLogger(__name__)

CFL_SLACK = 1e-12


class Direction(str, Enum):
  FORWARD = "forward"
  BACKWARD = "backward"


class GrowthProfile(abc.ABC):
  """Growth rate G(t) > 0 and its running integral."""

  @abc.abstractmethod
  def rate(self, t):
    """G(t), vectorized."""

  @abc.abstractmethod
  def cumulative(self, t):
    """int_0^t G(s) ds, vectorized."""

  def check(self, t_max: float) -> list[str]:
    t = np.linspace(0.0, t_max, 257)
    g = self.rate(t)
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
      return [f"{self!r}: growth rate must stay positive on [0, {t_max}], min is {np.min(g)}"]
    return []


@dataclass(frozen=True)
class ConstantGrowth(GrowthProfile):
  value: float

  def rate(self, t):
    return np.full(np.shape(t), self.value) if np.ndim(t) else self.value

  def cumulative(self, t):
    return self.value * np.asarray(t, dtype=float) if np.ndim(t) else self.value * t


@dataclass(frozen=True)
class LinearGrowth(GrowthProfile):
  """G ramps linearly from start at t=0 to end at t_end and stays there afterwards."""

  start: float
  end: float
  t_end: float

  def __post_init__(self):
    if not self.t_end > 0:
      raise ValidationError(f"Linear growth profile needs t_end > 0, got {self.t_end}")

  def rate(self, t):
    s = np.clip(np.asarray(t, dtype=float), 0.0, self.t_end)
    g = self.start + (self.end - self.start) * s / self.t_end
    return g if np.ndim(t) else float(g)

  def cumulative(self, t):
    t = np.asarray(t, dtype=float)
    s = np.clip(t, 0.0, self.t_end)
    ramp = self.start * s + 0.5 * (self.end - self.start) * s**2 / self.t_end
    out = ramp + self.end * np.maximum(t - self.t_end, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class SampledGrowth(GrowthProfile):
  """Piecewise-linear G through (times, values), held constant outside the samples."""

  times: np.ndarray = field(repr=False)
  values: np.ndarray = field(repr=False)

  def __post_init__(self):
    times = np.asarray(self.times, dtype=float)
    values = np.asarray(self.values, dtype=float)
    if times.ndim != 1 or times.shape != values.shape or times.size < 1:
      raise ValidationError("Sampled growth needs matching 1-D time and value arrays")
    if np.any(np.diff(times) <= 0):
      raise ValidationError("Sampled growth times must be strictly increasing")
    object.__setattr__(self, "times", times)
    object.__setattr__(self, "values", values)
    segments = 0.5 * (values[1:] + values[:-1]) * np.diff(times)
    # running integral from the first sample, shifted so that cumulative(0) = 0 below
    object.__setattr__(self, "_knots", np.concatenate([[0.0], np.cumsum(segments)]))

  def rate(self, t):
    g = np.interp(t, self.times, self.values)
    return g if np.ndim(t) else float(g)

  def _from_first(self, t):
    t = np.asarray(t, dtype=float)
    times, values, knots = self.times, self.values, self._knots
    k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 1)
    tk = times[k]
    gk = values[k]
    inside = (t >= times[0]) & (k < times.size - 1)
    slope = np.zeros_like(t)
    if times.size > 1:
      kk = np.minimum(k, times.size - 2)
      slope = np.where(inside, (values[kk + 1] - values[kk]) / (times[kk + 1] - times[kk]), 0.0)
    dt = t - tk
    out = knots[k] + gk * dt + 0.5 * slope * dt**2
    # before the first sample the rate is held at values[0]
    return np.where(t < times[0], values[0] * (t - times[0]), out)

  def cumulative(self, t):
    out = self._from_first(t) - self._from_first(0.0)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class GrowthSchedule:
  """Per-shape growth profiles on [0, t_max]."""

  profiles: tuple[GrowthProfile, ...]
  t_max: float
  constant_ratio: bool = False
  ratio_tol: float = 1e-10

  def __post_init__(self):
    object.__setattr__(self, "profiles", tuple(self.profiles))
    problems = []
    if not self.profiles:
      problems.append("Growth schedule needs at least one shape")
    if not (math.isfinite(self.t_max) and self.t_max > 0):
      problems.append(f"t_max must be positive, got {self.t_max}")
    else:
      for p in self.profiles:
        problems.extend(p.check(self.t_max))
    if not problems and self.constant_ratio:
      t = np.linspace(0.0, self.t_max, 257)
      first = self.profiles[0]
      for i, p in enumerate(self.profiles[1:], start=1):
        lhs = p.rate(0.0) * first.rate(t)
        rhs = first.rate(0.0) * p.rate(t)
        if np.max(np.abs(lhs - rhs) / np.abs(rhs)) > self.ratio_tol:
          problems.append(f"Growth rate of shape {i} is not a constant multiple of shape 0")
    if problems:
      raise ValidationError(problems)

  @property
  def n_shapes(self) -> int:
    return len(self.profiles)

  def rate(self, i: int, t):
    return self.profiles[i].rate(t)

  def integral(self, i: int, t0: float, t1: float) -> float:
    p = self.profiles[i]
    return float(p.cumulative(t1) - p.cumulative(t0))

  def max_growth(self) -> float:
    """max_i int_0^t_max G_i."""
    return max(self.integral(i, 0.0, self.t_max) for i in range(self.n_shapes))

  def time_to_grow(self, i: int, t0: float, distance: float) -> float:
    """tau >= 0 with int_t0^(t0+tau) G_i = distance, or inf if that takes past t_max."""
    if distance <= 0:
      return 0.0
    if isinstance(self.profiles[i], ConstantGrowth):
      tau = distance / self.profiles[i].value
      return tau if t0 + tau <= self.t_max * (1.0 + 1e-12) else math.inf
    available = self.integral(i, t0, self.t_max)
    if available < distance * (1.0 - 1e-12):
      return math.inf
    if available <= distance:
      return self.t_max - t0
    return brentq(lambda s: self.integral(i, t0, t0 + s) - distance, 0.0, self.t_max - t0, xtol=1e-14, rtol=1e-14)


class NucleationInput:
  """Per-shape nucleation densities u_i(t) >= 0."""

  def __init__(self, profiles: Sequence[Callable]):
    self.profiles = tuple(profiles)

  @property
  def n_shapes(self) -> int:
    return len(self.profiles)

  def value(self, i: int, t):
    u = np.asarray(self.profiles[i](t), dtype=float)
    if not np.all(np.isfinite(u)) or np.any(u < 0):
      raise ValidationError(f"Nucleation of shape {i} must be finite and nonnegative")
    return u

  @classmethod
  def zero(cls, n_shapes: int) -> "NucleationInput":
    return cls([lambda t: np.zeros(np.shape(t))] * n_shapes)

  @classmethod
  def from_samples(cls, samples: Sequence[tuple[np.ndarray, np.ndarray]]) -> "NucleationInput":
    """Piecewise-linear u_i through (times, values), zero outside the sampled interval."""
    profiles = []
    for times, values in samples:
      times = np.asarray(times, dtype=float)
      values = np.asarray(values, dtype=float)
      if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValidationError("Nucleation samples must be finite and nonnegative")
      profiles.append(lambda t, x=times, y=values: np.interp(t, x, y, left=0.0, right=0.0))
    return cls(profiles)


def nucleation_for_terminal_profile(
  targets: Sequence[Callable], schedule: GrowthSchedule, r_min: float, r_max: float
) -> NucleationInput:
  """u_i(t) = target_i(r_min + int_t^t_max G_i) so that psi_i(t_max) = target_i on [r_min, r_max] from a zero start."""
  if len(targets) != schedule.n_shapes:
    raise ValidationError(f"Got {len(targets)} terminal targets for {schedule.n_shapes} shapes")

  def make(i, target):
    def u(t):
      t = np.asarray(t, dtype=float)
      remaining = schedule.profiles[i].cumulative(schedule.t_max) - schedule.profiles[i].cumulative(t)
      r = r_min + np.asarray(remaining, dtype=float)
      values = np.where((r <= r_max) & (t >= 0) & (t <= schedule.t_max), target(r), 0.0)
      return np.maximum(values, 0.0)

    return u

  return NucleationInput([make(i, target) for i, target in enumerate(targets)])


@dataclass(frozen=True, eq=False)
class ExtendedState:
  """Per-shape values on the extended grids [r0, r_max] at one time."""

  grids: tuple[Grid1D, ...]
  values: tuple[np.ndarray, ...] = field(repr=False)
  time: float
  r_min: float
  r_max: float

  def __post_init__(self):
    if len(self.grids) != len(self.values):
      raise ValidationError(f"State has {len(self.grids)} grids but {len(self.values)} value arrays")
    frozen = []
    for g, v in zip(self.grids, self.values):
      v = np.array(v, dtype=float)
      if v.shape != (g.n_points,):
        raise ValidationError(f"State values of shape {v.shape} do not match a grid of {g.n_points} nodes")
      v.flags.writeable = False
      frozen.append(v)
    object.__setattr__(self, "grids", tuple(self.grids))
    object.__setattr__(self, "values", tuple(frozen))

  @property
  def n_shapes(self) -> int:
    return len(self.grids)

  def with_values(self, values: Sequence[np.ndarray], time: float | None = None) -> "ExtendedState":
    return ExtendedState(self.grids, tuple(values), self.time if time is None else time, self.r_min, self.r_max)

  def physical_mask(self, i: int) -> np.ndarray:
    return self.grids[i].mask_between(self.r_min, self.r_max)

  def physical(self, i: int) -> DensityField:
    """Restriction of shape i to [r_min, r_max]."""
    mask = self.physical_mask(i)
    nodes = self.grids[i].nodes[mask]
    grid = Grid1D(float(nodes[0]), float(nodes[-1]), int(mask.sum()))
    return DensityField(grid, self.values[i][mask], FieldKind.PSD)

  def mass(self, i: int) -> float:
    return self.physical(i).integral()

  @classmethod
  def zeros(cls, grids: Sequence[Grid1D], r_min: float, r_max: float, time: float = 0.0) -> "ExtendedState":
    return cls(tuple(grids), tuple(np.zeros(g.n_points) for g in grids), time, r_min, r_max)


def extended_lower_bound(schedule: GrowthSchedule, r_min: float) -> float:
  """r0 = r_min - max_i int_0^t_max G_i."""
  return r_min - schedule.max_growth()


def extended_grids(
  schedule: GrowthSchedule, r_min: float, r_max: float, spacings: Sequence[float]
) -> tuple[Grid1D, ...]:
  if len(spacings) != schedule.n_shapes:
    raise ValidationError(f"Got {len(spacings)} grid spacings for {schedule.n_shapes} shapes")
  if not r_min < r_max:
    raise ValidationError(f"Need r_min < r_max, got [{r_min}, {r_max}]")
  r0 = extended_lower_bound(schedule, r_min)
  return tuple(Grid1D.from_spacing(r0, r_max, dx) for dx in spacings)


def extend_initial_state(
  psd0: Sequence[DensityField | None],
  nucleation: NucleationInput,
  schedule: GrowthSchedule,
  grids: Sequence[Grid1D],
  r_min: float,
  r_max: float,
) -> ExtendedState:
  """Initial extended state: psd0 on [r_min, r_max], future nucleation below r_min."""
  n = schedule.n_shapes
  if not (len(psd0) == len(grids) == nucleation.n_shapes == n):
    raise ValidationError(
      f"Shape count mismatch: {len(psd0)} initial PSDs, {len(grids)} grids, "
      f"{nucleation.n_shapes} nucleation inputs, {n} growth profiles"
    )
  r0 = extended_lower_bound(schedule, r_min)
  values = []
  for i, grid in enumerate(grids):
    if abs(grid.lo - r0) > 1e-9 * grid.spacing or abs(grid.hi - r_max) > 1e-9 * grid.spacing:
      raise ValidationError(f"Grid of shape {i} spans [{grid.lo}, {grid.hi}], expected [{r0}, {r_max}]")
    x = grid.nodes
    v = np.zeros(grid.n_points)
    phys = grid.mask_between(r_min, r_max)
    if psd0[i] is not None:
      p = psd0[i]
      v[phys] = np.interp(x[phys], p.grid.nodes, p.values, left=0.0, right=0.0)
      tail = abs(p.values[-1])
      if tail > 1e-9 * max(1.0, float(np.max(np.abs(p.values)))):
        warnings.warn(f"Initial PSD of shape {i} does not vanish at r_max ({tail:g})")
    below = np.flatnonzero(~phys & (x < r_min))
    for j in below:
      tau = schedule.time_to_grow(i, 0.0, r_min - x[j])
      if tau <= schedule.t_max:
        v[j] = float(nucleation.value(i, tau))
    # the duplicated end node carries the value at r_max
    v[0] = v[-1]
    values.append(v)
  return ExtendedState(tuple(grids), tuple(values), 0.0, r_min, r_max)


def courant_numbers(state: ExtendedState, schedule: GrowthSchedule, t: float, dt: float) -> np.ndarray:
  return np.array([schedule.rate(i, t) * dt / g.spacing for i, g in enumerate(state.grids)])


def step(
  state: ExtendedState, dt: float, schedule: GrowthSchedule, direction: Direction = Direction.FORWARD
) -> ExtendedState:
  """One first-order upwind step; the backward step uses the rate at the arrival time t - dt."""
  direction = Direction(direction)
  if not dt > 0:
    raise ValidationError(f"Time step must be positive, got {dt}")
  t_rate = state.time if direction is Direction.FORWARD else state.time - dt
  courant = courant_numbers(state, schedule, t_rate, dt)
  if np.any(courant > 1.0 + CFL_SLACK):
    raise CflError(f"Courant numbers {courant.tolist()} exceed 1 at t={t_rate} with dt={dt}")
  courant[np.abs(courant - 1.0) <= CFL_SLACK] = 1.0
  new = []
  for c, v in zip(courant, state.values):
    ring = v[:-1]
    shift = 1 if direction is Direction.FORWARD else -1
    moved = (1.0 - c) * ring + c * np.roll(ring, shift)
    new.append(np.append(moved, moved[0]))
  t_new = state.time + dt if direction is Direction.FORWARD else state.time - dt
  return state.with_values(new, t_new)


@dataclass(frozen=True)
class Trajectory:
  """States in the order they were computed, with their times."""

  states: tuple[ExtendedState, ...]

  @property
  def times(self) -> np.ndarray:
    return np.array([s.time for s in self.states])

  @property
  def initial(self) -> ExtendedState:
    return self.states[0]

  @property
  def final(self) -> ExtendedState:
    return self.states[-1]

  def chronological(self) -> "Trajectory":
    if len(self.states) > 1 and self.states[0].time > self.states[-1].time:
      return Trajectory(tuple(reversed(self.states)))
    return self

  def at_time(self, t: float) -> ExtendedState:
    times = self.times
    k = int(np.argmin(np.abs(times - t)))
    return self.states[k]

  def masses(self, i: int) -> np.ndarray:
    return np.array([s.mass(i) for s in self.states])


Observer = Callable[[int, ExtendedState], ExtendedState]


def default_n_steps(schedule: GrowthSchedule, grids: Sequence[Grid1D], t_max: float | None = None) -> int:
  """Fewest uniform steps keeping every shape at Courant number <= 1."""
  t_max = schedule.t_max if t_max is None else t_max
  t = np.linspace(0.0, t_max, 257)
  worst = max(float(np.max(schedule.rate(i, t))) / g.spacing for i, g in enumerate(grids))
  return max(1, math.ceil(worst * t_max * (1.0 - 1e-12)))


def simulate(
  state0: ExtendedState,
  schedule: GrowthSchedule,
  t_max: float,
  n_steps: int,
  observer: Observer | None = None,
  direction: Direction = Direction.FORWARD,
) -> Trajectory:
  """Advance n_steps uniform steps over a span t_max; observer(k, state) may replace the state after step k."""
  direction = Direction(direction)
  if int(n_steps) != n_steps or n_steps < 1:
    raise ValidationError(f"n_steps must be a positive integer, got {n_steps}")
  dt = t_max / n_steps
  sign = 1.0 if direction is Direction.FORWARD else -1.0
  rate_times = state0.time + sign * dt * (np.arange(n_steps) + (0.0 if sign > 0 else 1.0))
  worst = max(
    float(np.max(np.atleast_1d(schedule.rate(i, rate_times)))) * dt / g.spacing for i, g in enumerate(state0.grids)
  )
  if worst > 1.0 + CFL_SLACK:
    raise CflError(f"{n_steps} steps over {t_max} give Courant number {worst:.6g} > 1")
  if worst < 0.5:
    logger.debug("Largest Courant number is %.3g; the scheme will be diffusive", worst)
  states = [state0]
  state = state0
  for k in range(1, n_steps + 1):
    state = step(state, dt, schedule, direction)
    if direction is Direction.FORWARD:
      state = state.with_values(state.values, state0.time + k * dt)
    else:
      state = state.with_values(state.values, state0.time - k * dt)
    if observer is not None:
      state = observer(k, state)
    states.append(state)
  return Trajectory(tuple(states))


def mass_balance(trajectory: Trajectory, schedule: GrowthSchedule, nucleation: NucleationInput, i: int):
  """(change of mass on [r_min, r_max], int G_i (u_i - psi_i(r_max)) dt) over the trajectory."""
  traj = trajectory.chronological()
  t = traj.times
  masses = traj.masses(i)
  edge = np.array([s.physical(i).values[-1] for s in traj.states])
  flux = schedule.rate(i, t) * (nucleation.value(i, t) - edge)
  inflow = float(trapezoid(flux, t))
  return float(masses[-1] - masses[0]), inflow
