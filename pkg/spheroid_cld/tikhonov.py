"""
Single-shape CLD inversion by Tikhonov-regularized least squares.

Norms are the weighted discrete L2 norms of the radial and chord grids. With
phi = sqrt(w_r) psi and B = diag(sqrt(w_l)) M diag(1/sqrt(w_r)) the problem
becomes the Euclidean one min |B phi - b|^2 + delta |phi|^2, b = sqrt(w_l) Q.
The unconstrained minimizer is read off the SVD of B; the nonnegative one is
computed by FISTA with adaptive restart, warm-started from the clipped
unconstrained solution.
"""

from __future__ import annotations

import logging
import math
import warnings
import weakref
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import NumericalError, ValidationError
from .forward import KernelOperator, power_iteration
from .grid import DensityField, FieldKind, check_same_grid

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 50_000


@dataclass(frozen=True)
class TikhonovProblem:
  operator: KernelOperator
  data: DensityField
  delta: float
  nonneg: bool = True
  tol: float = DEFAULT_TOL
  max_iters: int = DEFAULT_MAX_ITERS

  def __post_init__(self):
    problems = []
    if self.operator.n_shapes != 1:
      problems.append(f"Tikhonov inversion needs a single-shape operator, got {self.operator.n_shapes} shapes")
    if not (math.isfinite(self.delta) and self.delta >= 0):
      problems.append(f"delta must be a finite nonnegative number, got {self.delta}")
    if self.data.kind is not FieldKind.CUMULATIVE_CLD:
      problems.append(f"Inversion data must be a cumulative-cld field, got {self.data.kind.value}")
    if not self.tol > 0:
      problems.append(f"tol must be positive, got {self.tol}")
    if int(self.max_iters) != self.max_iters or self.max_iters < 1:
      problems.append(f"max_iters must be a positive integer, got {self.max_iters}")
    if problems:
      raise ValidationError(problems)
    check_same_grid(self.operator.chord_grid, self.data.grid, "Inversion data")

  def with_delta(self, delta: float) -> "TikhonovProblem":
    return TikhonovProblem(self.operator, self.data, delta, self.nonneg, self.tol, self.max_iters)


@dataclass(frozen=True)
class TikhonovSolution:
  psd: DensityField
  residual_norm: float
  solution_norm: float
  iterations: int
  converged: bool
  delta: float = 0.0


@dataclass(frozen=True)
class SweepPoint:
  delta: float
  residual_norm: float
  solution_norm: float
  solution: TikhonovSolution = field(repr=False)


class _WeightedSystem:
  """SVD of the weighted single-shape operator, shared by every solve on that operator."""

  def __init__(self, op: KernelOperator):
    self.sqrt_wr = np.sqrt(op.radial_grid.quad_weights)
    self.sqrt_wl = np.sqrt(op.chord_grid.quad_weights)
    self.B = self.sqrt_wl[:, None] * op.matrices[0] / self.sqrt_wr[None, :]
    self.U, self.s, self.Vt = scipy.linalg.svd(self.B, full_matrices=False)
    self.gram = self.B.T @ self.B
    logger.debug("Weighted operator SVD: sigma_max=%.3e sigma_min=%.3e", self.s[0], self.s[-1])

  def rhs(self, Q: np.ndarray) -> np.ndarray:
    return self.sqrt_wl * Q

  def unconstrained(self, b: np.ndarray, delta: float) -> np.ndarray:
    s = self.s
    if delta == 0:
      cutoff = s[0] * max(self.B.shape) * np.finfo(float).eps
      if s.size < self.B.shape[1] or s[-1] <= cutoff:
        smallest = 0.0 if s.size < self.B.shape[1] else s[-1]
        raise NumericalError(
          f"Normal equations are singular at delta=0 (smallest singular value {smallest:.3e}); use delta > 0"
        )
    filt = s / (s**2 + delta)
    return self.Vt.T @ (filt * (self.U.T @ b))


_SYSTEMS: "weakref.WeakKeyDictionary[KernelOperator, _WeightedSystem]" = weakref.WeakKeyDictionary()


def _system(op: KernelOperator) -> _WeightedSystem:
  system = _SYSTEMS.get(op)
  if system is None:
    system = _WeightedSystem(op)
    _SYSTEMS[op] = system
  return system


def _projected_gradient(x: np.ndarray, g: np.ndarray) -> np.ndarray:
  return np.where(x > 0, g, np.minimum(g, 0.0))


def _fista(H: np.ndarray, c: np.ndarray, x0: np.ndarray, L: float, tol: float, max_iters: int):
  """Accelerated projected gradient for min 1/2 x^T H x - c^T x subject to x >= 0."""
  scale = float(np.linalg.norm(c))
  threshold = tol * scale if scale > 0 else tol
  x = np.maximum(x0, 0.0)
  if np.linalg.norm(_projected_gradient(x, H @ x - c)) <= threshold:
    return x, 0, True
  y = x.copy()
  t = 1.0
  for it in range(1, max_iters + 1):
    x_new = np.maximum(y - (H @ y - c) / L, 0.0)
    if np.dot(y - x_new, x_new - x) > 0:
      t = 1.0
      y = x_new.copy()
    else:
      t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
      y = x_new + ((t - 1.0) / t_new) * (x_new - x)
      t = t_new
    x = x_new
    if np.linalg.norm(_projected_gradient(x, H @ x - c)) <= threshold:
      return x, it, True
  return x, max_iters, False


def _finish(problem: TikhonovProblem, psi: np.ndarray, iterations: int, converged: bool) -> TikhonovSolution:
  op = problem.operator
  residual = op.apply_values([psi]) - problem.data.values
  return TikhonovSolution(
    psd=DensityField(op.radial_grid, psi, FieldKind.PSD),
    residual_norm=op.chord_grid.norm(residual),
    solution_norm=op.radial_grid.norm(psi),
    iterations=iterations,
    converged=converged,
    delta=problem.delta,
  )


def solve(problem: TikhonovProblem) -> TikhonovSolution:
  """Minimize ||K psi - Q||^2 + delta ||psi||^2, optionally subject to psi >= 0."""
  system = _system(problem.operator)
  b = system.rhs(problem.data.values)
  if problem.delta == 0:
    warnings.warn("Tikhonov solve with delta=0: the problem is ill-posed and the solution may be meaningless")
  phi = system.unconstrained(b, problem.delta)
  if not problem.nonneg:
    return _finish(problem, phi / system.sqrt_wr, 0, True)

  H = system.gram + problem.delta * np.eye(system.gram.shape[0])
  c = system.B.T @ b
  L = 1.01 * power_iteration(lambda v: H @ v, np.dot, H.shape[0])
  phi, iterations, converged = _fista(H, c, phi, L, problem.tol, int(problem.max_iters))
  logger.debug("Nonnegative solve delta=%g: %d iterations, converged=%s", problem.delta, iterations, converged)
  if not converged:
    warnings.warn(f"Projected gradient did not converge in {iterations} iterations at delta={problem.delta:g}")
  return _finish(problem, phi / system.sqrt_wr, iterations, converged)


def objective_gradient(problem: TikhonovProblem, psi) -> np.ndarray:
  """Gradient of 1/2 (|B phi - b|^2 + delta |phi|^2) in the scaled variable phi = sqrt(w_r) psi."""
  system = _system(problem.operator)
  phi = system.sqrt_wr * np.asarray(psi, dtype=float)
  return system.gram @ phi + problem.delta * phi - system.B.T @ system.rhs(problem.data.values)


def normal_equations_residual(problem: TikhonovProblem, psi) -> float:
  """Relative residual of (B^T B + delta I) phi = B^T b."""
  system = _system(problem.operator)
  rhs = system.B.T @ system.rhs(problem.data.values)
  return float(np.linalg.norm(objective_gradient(problem, psi)) / max(np.linalg.norm(rhs), 1e-300))


def sweep_delta(problem: TikhonovProblem, deltas: Sequence[float]) -> list[SweepPoint]:
  """Solve once per delta, reusing the factorization of the operator."""
  deltas = [float(d) for d in deltas]
  problems = [f"delta must be positive, got {d}" for d in deltas if not (math.isfinite(d) and d > 0)]
  if any(b < a for a, b in zip(deltas, deltas[1:])):
    problems.append(f"deltas must be sorted in increasing order, got {deltas}")
  if problems:
    raise ValidationError(problems)
  points = []
  for delta in deltas:
    solution = solve(problem.with_delta(delta))
    logger.info(
      "delta=%-8g residual=%.6e solution=%.6e iterations=%d",
      delta,
      solution.residual_norm,
      solution.solution_norm,
      solution.iterations,
    )
    points.append(SweepPoint(delta, solution.residual_norm, solution.solution_norm, solution))
  return points


def lcurve_corner(points: Sequence[SweepPoint]) -> float | None:
  """delta of maximum curvature on the (log residual, log solution norm) curve; None for fewer than 3 points."""
  usable = [p for p in points if p.residual_norm > 0 and p.solution_norm > 0]
  if len(usable) < 3:
    return None
  t = np.log([p.delta for p in usable])
  if np.any(np.diff(t) <= 0):
    return None
  x = np.log([p.residual_norm for p in usable])
  y = np.log([p.solution_norm for p in usable])
  dx, dy = np.gradient(x, t), np.gradient(y, t)
  ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
  curvature = (dx * ddy - dy * ddx) / np.maximum((dx**2 + dy**2) ** 1.5, 1e-300)
  return float(usable[int(np.argmax(curvature))].delta)
