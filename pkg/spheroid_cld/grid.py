"""
Uniform grids and the densities sampled on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import GridMismatchError, ValidationError


@dataclass(frozen=True)
class Grid1D:
  """Uniform discretization of [lo, hi] with composite trapezoid weights."""

  lo: float
  hi: float
  n_points: int

  def __post_init__(self):
    if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
      raise ValidationError(f"Grid bounds must be finite, got [{self.lo}, {self.hi}]")
    if not self.lo < self.hi:
      raise ValidationError(f"Grid needs lo < hi, got [{self.lo}, {self.hi}]")
    if int(self.n_points) != self.n_points or self.n_points < 2:
      raise ValidationError(f"Grid needs at least 2 points, got {self.n_points}")
    object.__setattr__(self, "n_points", int(self.n_points))

  @classmethod
  def from_spacing(cls, lo: float, hi: float, spacing: float) -> "Grid1D":
    """Grid with the given spacing; the span must be an integer number of cells."""
    if spacing <= 0:
      raise ValidationError(f"Grid spacing must be positive, got {spacing}")
    cells = (hi - lo) / spacing
    n_cells = round(cells)
    if n_cells < 1 or abs(cells - n_cells) > 1e-6 * max(1.0, cells):
      raise ValidationError(f"Span [{lo}, {hi}] is not an integer number of cells of size {spacing}")
    return cls(lo, hi, n_cells + 1)

  @property
  def spacing(self) -> float:
    return (self.hi - self.lo) / (self.n_points - 1)

  @property
  def nodes(self) -> np.ndarray:
    return np.linspace(self.lo, self.hi, self.n_points)

  @property
  def quad_weights(self) -> np.ndarray:
    weights = np.full(self.n_points, self.spacing)
    weights[0] = weights[-1] = 0.5 * self.spacing
    return weights

  def index_of(self, x: float) -> int:
    """Index of the node closest to x."""
    return int(round((x - self.lo) / self.spacing))

  def mask_between(self, lo: float, hi: float) -> np.ndarray:
    """Boolean mask of nodes in [lo, hi], with a tolerance of 1e-9 spacing."""
    tol = 1e-9 * self.spacing
    x = self.nodes
    return (x >= lo - tol) & (x <= hi + tol)

  def same_as(self, other: "Grid1D") -> bool:
    if self.n_points != other.n_points:
      return False
    scale = max(abs(self.lo), abs(self.hi), self.spacing)
    return abs(self.lo - other.lo) <= 1e-12 * scale and abs(self.hi - other.hi) <= 1e-12 * scale

  def integrate(self, values) -> float:
    return float(np.dot(self.quad_weights, values))

  def inner(self, u, v) -> float:
    """Discrete L2 inner product under the trapezoid weights."""
    return float(np.dot(self.quad_weights, np.asarray(u) * np.asarray(v)))

  def norm(self, u) -> float:
    return math.sqrt(max(self.inner(u, u), 0.0))


class FieldKind(str, Enum):
  PSD = "psd"
  CLD = "cld"
  CUMULATIVE_CLD = "cumulative-cld"


@dataclass(frozen=True)
class DensityField:
  """Values of a PSD, CLD or cumulative CLD on a grid."""

  grid: Grid1D
  values: np.ndarray = field(repr=False)
  kind: FieldKind = FieldKind.PSD

  def __post_init__(self):
    values = np.array(self.values, dtype=float)
    if values.shape != (self.grid.n_points,):
      raise GridMismatchError(
        f"{self.kind.value} field has {values.shape} values for a grid of {self.grid.n_points} nodes"
      )
    if not np.all(np.isfinite(values)):
      raise ValidationError(f"{self.kind.value} field contains non-finite values")
    values.flags.writeable = False
    object.__setattr__(self, "values", values)
    object.__setattr__(self, "kind", FieldKind(self.kind))

  def with_values(self, values, kind: FieldKind | None = None) -> "DensityField":
    return DensityField(self.grid, values, kind or self.kind)

  def integral(self) -> float:
    return self.grid.integrate(self.values)

  def norm(self) -> float:
    return self.grid.norm(self.values)

  def scaled(self, factor: float) -> "DensityField":
    return self.with_values(self.values * factor)

  def is_normalized(self, tol: float = 1e-8) -> bool:
    return abs(self.integral() - 1.0) <= tol


def cumulative(q: DensityField) -> DensityField:
  """Running trapezoid integral Q(l) = int_0^l q."""
  if q.kind is not FieldKind.CLD:
    raise ValidationError(f"cumulative expects a cld field, got {q.kind.value}")
  values = cumulative_trapezoid(q.values, dx=q.grid.spacing, initial=0.0)
  return DensityField(q.grid, values, FieldKind.CUMULATIVE_CLD)


def differentiate(Q: DensityField) -> DensityField:
  """Centered differences of Q, second-order one-sided stencils at both ends."""
  if Q.kind is not FieldKind.CUMULATIVE_CLD:
    raise ValidationError(f"differentiate expects a cumulative-cld field, got {Q.kind.value}")
  edge_order = 2 if Q.grid.n_points >= 3 else 1
  values = np.gradient(Q.values, Q.grid.spacing, edge_order=edge_order)
  return DensityField(Q.grid, values, FieldKind.CLD)


def normalize(field_: DensityField) -> DensityField:
  """Normalize a density to unit integral, or a cumulative CLD by its last node."""
  if field_.kind is FieldKind.CUMULATIVE_CLD:
    total = field_.values[-1]
  else:
    total = field_.integral()
  if total == 0.0 or not math.isfinite(total):
    raise ValidationError(f"Cannot normalize a {field_.kind.value} field with total {total}")
  return field_.scaled(1.0 / total)


def check_same_grid(expected: Grid1D, got: Grid1D, what: str):
  if not expected.same_as(got):
    raise GridMismatchError(
      f"{what} lives on [{got.lo}, {got.hi}] x {got.n_points}, "
      f"expected [{expected.lo}, {expected.hi}] x {expected.n_points}"
    )
