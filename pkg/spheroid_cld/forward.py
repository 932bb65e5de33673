"""
Discretized PSD to CLD map, its adjoint and the functionals built on top of it.

A KernelOperator holds one dense block per shape, M_i[j, m] = k_i(l_j, r_m) w_m
with w the radial trapezoid weights, so that (K psi)(l_j) = sum_i M_i psi_i.
The adjoint is taken in the weighted inner products of both grids:
(K* Q)_i = M_i^T (w_l Q) / w_r, which makes <K psi, Q>_chord = <psi, K* Q>_radial
hold exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatchError, ValidationError
from .geometry import (
  DEFAULT_QUADRATURE,
  R_FLOOR,
  AngularQuadrature,
  ShapeParam,
  as_shape,
  kernel_matrix,
  moment_a,
  moment_b,
)
from .grid import DensityField, FieldKind, Grid1D, check_same_grid, cumulative, differentiate, normalize

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KernelOperator:
  radial_grid: Grid1D
  chord_grid: Grid1D
  shapes: tuple[ShapeParam, ...]
  matrices: tuple[np.ndarray, ...] = field(repr=False)
  quad: AngularQuadrature = DEFAULT_QUADRATURE

  @property
  def n_shapes(self) -> int:
    return len(self.shapes)

  def kernel(self, i: int) -> np.ndarray:
    """Raw kernel values k_i(l_j, r_m) without the radial weights."""
    return self.matrices[i] / self.radial_grid.quad_weights[None, :]

  def apply_values(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
    if len(blocks) != self.n_shapes:
      raise GridMismatchError(f"Operator has {self.n_shapes} shapes, got {len(blocks)} PSD blocks")
    out = np.zeros(self.chord_grid.n_points)
    for M, psi in zip(self.matrices, blocks):
      out += M @ psi
    return out

  def adjoint_values(self, Q: np.ndarray) -> list[np.ndarray]:
    weighted = self.chord_grid.quad_weights * Q
    w_r = self.radial_grid.quad_weights
    return [(M.T @ weighted) / w_r for M in self.matrices]


def _check_coverage(radial_grid: Grid1D, chord_grid: Grid1D, shapes: Sequence[ShapeParam]) -> list[str]:
  problems = []
  if radial_grid.lo <= R_FLOOR:
    problems.append(f"Radial grid must start above {R_FLOOR}, got lo={radial_grid.lo}")
  if chord_grid.lo < 0:
    problems.append(f"Chord grid must start at a nonnegative length, got lo={chord_grid.lo}")
  if shapes:
    ell_max = 2.0 * radial_grid.hi * max(s.max_chord_factor for s in shapes)
    if chord_grid.hi < ell_max * (1.0 - 1e-12):
      problems.append(f"Chord grid ends at {chord_grid.hi} but the longest chord is {ell_max}")
  else:
    problems.append("Operator needs at least one shape")
  return problems


def operator_cache_key(
  radial_grid: Grid1D, chord_grid: Grid1D, shapes: Sequence[ShapeParam], quad: AngularQuadrature
) -> str:
  payload = {
    "radial": [repr(radial_grid.lo), repr(radial_grid.hi), radial_grid.n_points],
    "chord": [repr(chord_grid.lo), repr(chord_grid.hi), chord_grid.n_points],
    "eta": [repr(s.eta) for s in shapes],
    "quad": quad.spec(),
  }
  return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def build_operator(
  radial_grid: Grid1D,
  chord_grid: Grid1D,
  shapes: Sequence,
  quad: AngularQuadrature = DEFAULT_QUADRATURE,
  cache_dir: str | Path | None = None,
) -> KernelOperator:
  """Assemble the per-shape kernel blocks, optionally through an on-disk cache."""
  shapes = tuple(as_shape(s) for s in shapes)
  problems = _check_coverage(radial_grid, chord_grid, shapes)
  if problems:
    raise ValidationError(problems)

  cache_path = None
  if cache_dir is not None:
    key = operator_cache_key(radial_grid, chord_grid, shapes, quad)
    cache_path = Path(cache_dir) / f"operator-{key[:24]}.npz"
    if cache_path.exists():
      with np.load(cache_path) as archive:
        matrices = tuple(archive[f"block_{i}"] for i in range(len(shapes)))
      logger.info("Loaded kernel operator from %s", cache_path)
      return KernelOperator(radial_grid, chord_grid, shapes, _freeze(matrices), quad)

  ell = chord_grid.nodes
  r = radial_grid.nodes
  w_r = radial_grid.quad_weights
  logger.info(
    "Assembling kernel operator: %d chords x %d radii x %d shape(s), quadrature %dx%d",
    ell.size,
    r.size,
    len(shapes),
    quad.n_phi,
    quad.n_theta,
  )
  matrices = tuple(kernel_matrix(ell, r, s, quad) * w_r[None, :] for s in shapes)

  if cache_path is not None:
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(cache_path, **{f"block_{i}": M for i, M in enumerate(matrices)})
    logger.info("Cached kernel operator in %s", cache_path)
  return KernelOperator(radial_grid, chord_grid, shapes, _freeze(matrices), quad)


def _freeze(matrices):
  for M in matrices:
    M.flags.writeable = False
  return matrices


def _blocks(op: KernelOperator, psd_blocks) -> list[np.ndarray]:
  if isinstance(psd_blocks, DensityField):
    psd_blocks = [psd_blocks]
  psd_blocks = list(psd_blocks)
  if len(psd_blocks) != op.n_shapes:
    raise GridMismatchError(f"Operator has {op.n_shapes} shapes, got {len(psd_blocks)} PSD blocks")
  for i, psd in enumerate(psd_blocks):
    check_same_grid(op.radial_grid, psd.grid, f"PSD block {i}")
  return [psd.values for psd in psd_blocks]


def apply(op: KernelOperator, psd_blocks) -> DensityField:
  """Cumulative CLD Q(l) = sum_i int k_i(l, r) psi_i(r) dr."""
  values = op.apply_values(_blocks(op, psd_blocks))
  return DensityField(op.chord_grid, values, FieldKind.CUMULATIVE_CLD)


def apply_adjoint(op: KernelOperator, Q: DensityField) -> list[DensityField]:
  check_same_grid(op.chord_grid, Q.grid, "Cumulative CLD")
  return [DensityField(op.radial_grid, v, FieldKind.PSD) for v in op.adjoint_values(Q.values)]


def power_iteration(
  matvec: Callable[[np.ndarray], np.ndarray],
  inner: Callable[[np.ndarray, np.ndarray], float],
  size: int,
  max_iters: int = 500,
  tol: float = 1e-10,
  seed: int = 0,
) -> float:
  """Largest eigenvalue of a self-adjoint positive semi-definite map."""
  v = np.random.default_rng(seed).uniform(0.5, 1.5, size)
  v /= math.sqrt(inner(v, v))
  estimate = 0.0
  for _ in range(max_iters):
    w = matvec(v)
    new = inner(v, w)
    norm = math.sqrt(max(inner(w, w), 0.0))
    if norm == 0.0:
      return 0.0
    v = w / norm
    if abs(new - estimate) <= tol * max(abs(new), 1e-300):
      return new
    estimate = new
  return estimate


def operator_norm(op: KernelOperator, max_iters: int = 500, tol: float = 1e-10, seed: int = 0) -> float:
  """||K|| between the weighted radial product space and the weighted chord space."""
  n = op.radial_grid.n_points
  w_r = op.radial_grid.quad_weights

  def split(v):
    return [v[i * n : (i + 1) * n] for i in range(op.n_shapes)]

  def normal(v):
    return np.concatenate(op.adjoint_values(op.apply_values(split(v))))

  def inner(u, v):
    return float(sum(np.dot(w_r, a * b) for a, b in zip(split(u), split(v))))

  lam = power_iteration(normal, inner, n * op.n_shapes, max_iters, tol, seed)
  return math.sqrt(max(lam, 0.0))


def add_noise(f: DensityField, level: float, seed=None) -> DensityField:
  """Add i.i.d. Gaussian noise of standard deviation level * max(f)."""
  if not (math.isfinite(level) and level >= 0):
    raise ValidationError(f"Noise level must be a nonnegative fraction, got {level}")
  if level == 0:
    return f
  rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
  sigma = level * float(np.max(f.values))
  return f.with_values(f.values + rng.normal(0.0, sigma, f.values.shape))


def measure(op: KernelOperator, psd_blocks, noise_level: float = 0.0, seed=None) -> DensityField:
  """Normalized cumulative CLD as an instrument would report it: noise goes on q, then Q = int q."""
  Q = apply(op, psd_blocks)
  if noise_level > 0:
    Q = cumulative(add_noise(differentiate(Q), noise_level, seed))
  return normalize(Q)


@dataclass(frozen=True)
class ConcentrationData:
  """Solid concentration C_s (kg/kg), solid density rho_s (kg/m^3) and solvent mass M_e (kg)."""

  C_s: float
  rho_s: float
  M_e: float

  def __post_init__(self):
    bad = [n for n in ("C_s", "rho_s", "M_e") if not (math.isfinite(getattr(self, n)) and getattr(self, n) > 0)]
    if bad:
      raise ValidationError([f"{n} must be strictly positive, got {getattr(self, n)}" for n in bad])


def estimate_particle_count(c: ConcentrationData, eta, psd_norm: DensityField, tol: float = 1e-6) -> float:
  """Particles per unit volume from the solid concentration; psd_norm lives on a grid in meters."""
  shape = as_shape(eta)
  if not psd_norm.is_normalized(tol):
    raise ValidationError(f"PSD must be normalized, integral is {psd_norm.integral()}")
  third = psd_norm.grid.integrate(psd_norm.values * psd_norm.grid.nodes**3)
  if not third > 0:
    raise ValidationError(f"PSD third moment must be positive, got {third}")
  return 3.0 / (4.0 * math.pi * shape.eta) * (c.M_e / c.rho_s) * c.C_s / third


def denormalize(psd_norm: DensityField, count: float) -> DensityField:
  return psd_norm.scaled(count)


def moment_F(n: int, psd: DensityField) -> float:
  """F_n(psi) = int psi(r) / r^(2n) dr."""
  if isinstance(n, bool) or int(n) != n or n < 1:
    raise ValidationError(f"Moment order must be a positive integer, got {n!r}")
  if psd.grid.lo <= 0:
    raise ValidationError(f"Moment F_n needs a grid above r=0, got lo={psd.grid.lo}")
  r = psd.grid.nodes
  return psd.grid.integrate(psd.values / r ** (2 * int(n)))


def derivative_identity(n: int, psd: DensityField, eta, quad: AngularQuadrature = DEFAULT_QUADRATURE) -> float:
  """Closed form of (K psi)^(2n)(0) = -(2n)! a_n(eta) b_n F_n(psi)."""
  return -math.factorial(2 * n) * moment_a(n, eta, quad) * moment_b(n) * moment_F(n, psd)


def taylor_derivative_at_zero(
  n: int,
  psd: DensityField,
  eta,
  quad: AngularQuadrature = DEFAULT_QUADRATURE,
  fit_fraction: float = 0.1,
  n_fit: int = 401,
) -> float:
  """Estimate (K psi)^(2n)(0) by a least-squares even polynomial of degree 2n+2 on [0, fit_fraction * 2 r_min]."""
  if psd.grid.lo <= 0:
    raise ValidationError(f"Derivative estimate needs a grid above r=0, got lo={psd.grid.lo}")
  ell_fit = fit_fraction * 2.0 * psd.grid.lo
  ell = np.linspace(0.0, ell_fit, n_fit)
  weighted = psd.values * psd.grid.quad_weights
  F = kernel_matrix(ell, psd.grid.nodes, eta, quad) @ weighted
  x = ell / ell_fit
  coef = np.polynomial.polynomial.polyfit(x, F, list(range(0, 2 * n + 3, 2)))
  return math.factorial(2 * n) * coef[2 * n] / ell_fit ** (2 * n)
