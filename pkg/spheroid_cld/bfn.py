"""
Back-and-forth nudging of the multi-shape population balance.

Forward sweeps run the transport forward in time and pull the estimate toward
the measured cumulative CLD with -dt mu K*(K psi - Q); backward sweeps run the
transport backward from the forward terminal state with the same damping
update, which is the time-reversed form of the backward observer. Each shape's
state is interpolated onto the operator's radial grid before K is applied and
the adjoint is interpolated back onto the shape's own nodes in (r_min, r_max).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import interp1d

from .errors import DivergenceError, GridMismatchError, ValidationError
from .forward import KernelOperator, operator_norm
from .grid import Grid1D
from .transport import Direction, ExtendedState, GrowthSchedule, Trajectory, simulate

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MeasurementSeries:
  """Cumulative CLD at each time node, values[k] on chord_grid at times[k]."""

  times: np.ndarray
  chord_grid: Grid1D
  values: np.ndarray = field(repr=False)

  def __post_init__(self):
    times = np.array(self.times, dtype=float)
    values = np.array(self.values, dtype=float)
    if times.ndim != 1 or values.shape != (times.size, self.chord_grid.n_points):
      raise ValidationError(
        f"Measurement values have shape {values.shape}, expected ({times.size}, {self.chord_grid.n_points})"
      )
    if np.any(np.diff(times) <= 0):
      raise ValidationError("Measurement times must be strictly increasing")
    if not np.all(np.isfinite(values)):
      raise ValidationError("Measurement values must be finite")
    object.__setattr__(self, "times", times)
    object.__setattr__(self, "values", values)

  def resample(self, times) -> "MeasurementSeries":
    """Linear interpolation in time onto the given nodes, which must lie within the measured span."""
    times = np.asarray(times, dtype=float)
    span = (self.times[0], self.times[-1])
    tol = 1e-9 * max(1.0, abs(span[1]))
    if times[0] < span[0] - tol or times[-1] > span[1] + tol:
      raise ValidationError(
        f"Measurements cover [{span[0]}, {span[1]}] but data is needed on [{times[0]}, {times[-1]}]"
      )
    if self.times.size == times.size and np.allclose(self.times, times, rtol=0, atol=tol):
      return self
    if self.times.size == 1:
      raise ValidationError("A single measurement time cannot be interpolated")
    f = interp1d(self.times, self.values, axis=0, assume_sorted=True)
    return MeasurementSeries(times, self.chord_grid, f(np.clip(times, *span)))


class _Coupling:
  """Linear interpolation between the shape grids and the operator's radial grid."""

  def __init__(self, operator: KernelOperator, grids: Sequence[Grid1D], r_min: float, r_max: float):
    if len(grids) != operator.n_shapes:
      raise GridMismatchError(f"Operator has {operator.n_shapes} shapes but the state has {len(grids)}")
    self.operator = operator
    self.radial = operator.radial_grid.nodes
    self.nodes = []
    self.physical = []
    self.corrected = []
    for g in grids:
      x = g.nodes
      phys = g.mask_between(r_min, r_max)
      # the r_max node doubles as r0 on the periodic ring; it is left to transport
      corr = phys.copy()
      corr[-1] = False
      self.nodes.append(x)
      self.physical.append(phys)
      self.corrected.append(corr)

  def to_operator(self, i: int, values: np.ndarray) -> np.ndarray:
    phys = self.physical[i]
    return np.interp(self.radial, self.nodes[i][phys], values[phys])

  def innovation(self, state: ExtendedState, Q: np.ndarray) -> np.ndarray:
    blocks = [self.to_operator(i, v) for i, v in enumerate(state.values)]
    return self.operator.apply_values(blocks) - Q

  def correct(self, state: ExtendedState, Q: np.ndarray, gain: float) -> ExtendedState:
    with np.errstate(over="ignore", invalid="ignore"):
      adjoint = self.operator.adjoint_values(self.innovation(state, Q))
      new = []
      for i, v in enumerate(state.values):
        corr = self.corrected[i]
        v = v.copy()
        v[corr] -= gain * np.interp(self.nodes[i][corr], self.radial, adjoint[i])
        new.append(v)
    if not all(np.all(np.isfinite(v)) for v in new):
      raise DivergenceError(f"Nudged state became non-finite at t={state.time:.6g}; reduce mu")
    return state.with_values(new)


@dataclass(frozen=True, eq=False)
class BfnConfig:
  operator: KernelOperator
  schedule: GrowthSchedule
  grids: tuple[Grid1D, ...]
  r_min: float
  r_max: float
  n_steps: int
  mu: float | None = None
  mu0: float = 50.0
  n_iterations: int = 100
  initial_guess: ExtendedState | None = None
  reference_time: float | None = None
  rate_start: int = 30
  divergence_factor: float = 10.0
  divergence_window: int = 10
  snapshot_indices: tuple[int, ...] = ()

  def __post_init__(self):
    object.__setattr__(self, "grids", tuple(self.grids))
    problems = []
    if self.mu is not None and not (math.isfinite(self.mu) and self.mu > 0):
      problems.append(f"mu must be positive, got {self.mu}")
    if not (math.isfinite(self.mu0) and self.mu0 > 0):
      problems.append(f"mu0 must be positive, got {self.mu0}")
    if int(self.n_iterations) != self.n_iterations or self.n_iterations < 0 or self.n_iterations % 2:
      problems.append(f"n_iterations is the last sweep index 2n and must be even and >= 0, got {self.n_iterations}")
    if int(self.n_steps) != self.n_steps or self.n_steps < 1:
      problems.append(f"n_steps must be a positive integer, got {self.n_steps}")
    if len(self.grids) != self.operator.n_shapes or self.schedule.n_shapes != self.operator.n_shapes:
      problems.append(
        f"Shape count mismatch: operator {self.operator.n_shapes}, grids {len(self.grids)}, "
        f"schedule {self.schedule.n_shapes}"
      )
    radial = self.operator.radial_grid
    scale = max(abs(self.r_min), abs(self.r_max))
    if abs(radial.lo - self.r_min) > 1e-9 * scale or abs(radial.hi - self.r_max) > 1e-9 * scale:
      problems.append(
        f"Operator radial grid [{radial.lo}, {radial.hi}] must span [r_min, r_max] = [{self.r_min}, {self.r_max}]"
      )
    if self.reference_time is not None and not 0 <= self.reference_time <= self.schedule.t_max:
      problems.append(f"reference_time must lie in [0, {self.schedule.t_max}], got {self.reference_time}")
    if self.initial_guess is not None and self.initial_guess.n_shapes != len(self.grids):
      problems.append("Initial guess has the wrong number of shapes")
    if problems:
      raise ValidationError(problems)

  @property
  def t_max(self) -> float:
    return self.schedule.t_max

  @property
  def dt(self) -> float:
    return self.t_max / self.n_steps

  @property
  def times(self) -> np.ndarray:
    return np.linspace(0.0, self.t_max, self.n_steps + 1)

  def gain(self, norm: float | None = None) -> float:
    """mu, or mu0 / ||K||^2 when mu is not set; norm may be passed in when already known."""
    if self.mu is not None:
      return self.mu
    norm = operator_norm(self.operator) if norm is None else norm
    return self.mu0 / norm**2


@dataclass
class SweepRecord:
  """One half-sweep: forward records the error at the reference time, backward the error at t=0."""

  index: int
  direction: str
  misfit: float
  error: float | None = None


@dataclass
class BfnReport:
  mu: float
  reference_time: float
  records: list[SweepRecord] = field(default_factory=list)
  prefactor: float | None = None
  rate: float | None = None
  snapshots: dict[int, ExtendedState] = field(default_factory=dict, repr=False)

  def forward_errors(self) -> tuple[list[int], list[float]]:
    rows = [(r.index, r.error) for r in self.records if r.direction == "forward" and r.error is not None]
    return [i for i, _ in rows], [e for _, e in rows]

  def to_dict(self) -> dict:
    return {
      "mu": self.mu,
      "reference_time": self.reference_time,
      "prefactor": self.prefactor,
      "rate": self.rate,
      "iterations": [
        {"index": r.index, "direction": r.direction, "misfit": r.misfit, "error": r.error} for r in self.records
      ],
    }


def _series_for(config: BfnConfig, data: MeasurementSeries) -> MeasurementSeries:
  if not data.chord_grid.same_as(config.operator.chord_grid):
    raise GridMismatchError("Measurement chord grid does not match the operator chord grid")
  return data.resample(config.times)


def forward_sweep(state_hat: ExtendedState, data: MeasurementSeries, mu: float, config: BfnConfig) -> Trajectory:
  """Transport forward from t=0 and nudge toward data after every step."""
  data = _series_for(config, data)
  coupling = _Coupling(config.operator, config.grids, config.r_min, config.r_max)
  gain = config.dt * mu

  def observe(k, state):
    return coupling.correct(state, data.values[k], gain) if gain else state

  start = state_hat.with_values(state_hat.values, 0.0)
  return simulate(start, config.schedule, config.t_max, config.n_steps, observe, Direction.FORWARD)


def backward_sweep(state_hat: ExtendedState, data: MeasurementSeries, mu: float, config: BfnConfig) -> Trajectory:
  """Transport backward from t_max and nudge toward data after every step."""
  data = _series_for(config, data)
  coupling = _Coupling(config.operator, config.grids, config.r_min, config.r_max)
  gain = config.dt * mu
  n = config.n_steps

  def observe(k, state):
    return coupling.correct(state, data.values[n - k], gain) if gain else state

  start = state_hat.with_values(state_hat.values, config.t_max)
  return simulate(start, config.schedule, config.t_max, config.n_steps, observe, Direction.BACKWARD)


def misfit(config: BfnConfig, trajectory: Trajectory, data: MeasurementSeries) -> float:
  """int_0^t_max ||K psi_hat(t) - Q(t)|| dt with trapezoid weights in time."""
  data = _series_for(config, data)
  coupling = _Coupling(config.operator, config.grids, config.r_min, config.r_max)
  traj = trajectory.chronological()
  chord = config.operator.chord_grid
  norms = [chord.norm(coupling.innovation(s, data.values[k])) for k, s in enumerate(traj.states)]
  return float(trapezoid(norms, traj.times))


def state_error(estimate: ExtendedState, truth: ExtendedState) -> float:
  """sqrt(sum_i int_[r_min, r_max] (psi_i - psi_hat_i)^2 dr)."""
  total = 0.0
  for i in range(estimate.n_shapes):
    e = estimate.physical(i)
    t = truth.physical(i)
    total += e.grid.inner(e.values - t.values, e.values - t.values)
  return math.sqrt(total)


def synthesize_measurements(operator: KernelOperator, trajectory: Trajectory) -> MeasurementSeries:
  """Noiseless cumulative CLD of every state in a trajectory."""
  traj = trajectory.chronological()
  first = traj.initial
  coupling = _Coupling(operator, first.grids, first.r_min, first.r_max)
  zero = np.zeros(operator.chord_grid.n_points)
  values = np.array([coupling.innovation(s, zero) for s in traj.states])
  return MeasurementSeries(traj.times, operator.chord_grid, values)


def fit_rate(errors: Sequence[float], start_iteration: int = 0, iterations: Sequence[float] | None = None):
  """Least-squares fit error ~ prefactor * rate^n over points with n >= start_iteration."""
  errors = np.asarray(errors, dtype=float)
  n = np.arange(errors.size, dtype=float) if iterations is None else np.asarray(iterations, dtype=float)
  if n.shape != errors.shape:
    raise ValidationError(f"Got {n.size} iteration numbers for {errors.size} errors")
  keep = n >= start_iteration
  n, errors = n[keep], errors[keep]
  if errors.size < 2:
    raise ValidationError(f"Rate fit needs at least 2 points from iteration {start_iteration}, got {errors.size}")
  if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
    raise ValidationError("Rate fit needs strictly positive finite errors")
  slope, intercept = np.polyfit(n, np.log(errors), 1)
  return float(math.exp(intercept)), float(math.exp(slope))


def run(config: BfnConfig, data: MeasurementSeries, truth: Trajectory | None = None):
  """Alternate sweeps up to index n_iterations; returns the last forward trajectory and the report."""
  data = _series_for(config, data)
  norm = operator_norm(config.operator)
  mu = config.gain(norm)
  t_ref = config.t_max if config.reference_time is None else config.reference_time
  k_ref = int(round(t_ref / config.dt))
  if truth is not None:
    truth = truth.chronological()
    if len(truth.states) != config.n_steps + 1:
      raise ValidationError(f"Truth trajectory has {len(truth.states)} states, expected {config.n_steps + 1}")
  logger.info("BFN: %d half-sweeps, %d steps each, mu=%.6g", config.n_iterations + 1, config.n_steps, mu)
  step_gain = config.dt * mu * norm**2
  if step_gain >= 2.0:
    logger.warning("dt * mu * ||K||^2 = %.3g >= 2: the explicit nudging step is unstable", step_gain)

  report = BfnReport(mu=mu, reference_time=t_ref)
  state0 = config.initial_guess or ExtendedState.zeros(config.grids, config.r_min, config.r_max)
  state_T = state0
  last_forward = None
  for index in range(config.n_iterations + 1):
    if index % 2 == 0:
      traj = forward_sweep(state0, data, mu, config)
      state_T = traj.final
      last_forward = traj
      at_reference = traj.states[k_ref]
      error = state_error(at_reference, truth.states[k_ref]) if truth is not None else None
      direction = "forward"
    else:
      traj = backward_sweep(state_T, data, mu, config)
      state0 = traj.final
      at_reference = None
      error = state_error(state0, truth.states[0]) if truth is not None else None
      direction = "backward"
    record = SweepRecord(index, direction, misfit(config, traj, data), error)
    report.records.append(record)
    if index in config.snapshot_indices and at_reference is not None:
      report.snapshots[index] = at_reference
    logger.debug("sweep %d %s misfit=%.6e error=%s", index, direction, record.misfit, error)
    _check_divergence(report.records, config)

  indices, errors = report.forward_errors()
  n = [i / 2 for i in indices]
  if sum(1 for i in indices if i >= config.rate_start) >= 2 and all(e > 0 for e in errors):
    report.prefactor, report.rate = fit_rate(errors, config.rate_start / 2, n)
    logger.info("Fitted error decay %.4g x %.6g^n", report.prefactor, report.rate)
  return last_forward, report


def _check_divergence(records: list[SweepRecord], config: BfnConfig):
  if len(records) < 2:
    return
  w = min(config.divergence_window, len(records) - 1)
  now, before = records[-1].misfit, records[-1 - w].misfit
  if not math.isfinite(now) or (before > 0 and now > config.divergence_factor * before):
    raise DivergenceError(
      f"Data misfit grew from {before:.3e} to {now:.3e} over {w} half-sweeps (index {records[-1].index}); reduce mu"
    )
