"""
Analytic size distributions used by the reference experiments.

Gaussian bumps are written exp(-sharpness * ((r - c) / scale)^2); the reference
experiments use sharpness 30 with scale 1e-4 m, centred at 1.5e-4 m (and
2.5e-4 m for the bimodal case).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ValidationError
from .grid import DensityField, FieldKind, Grid1D

REFERENCE_SCALE_M = 1e-4
REFERENCE_SHARPNESS = 30.0
BIMODAL_CENTERS_M = (1.5e-4, 2.5e-4)
UNIMODAL_CENTER_M = 1.5e-4


def gaussian_bumps(r, centers: Sequence[float], sharpness: float = REFERENCE_SHARPNESS, scale: float = 1.0):
  """Unnormalized sum of Gaussian bumps evaluated at r."""
  if sharpness <= 0 or scale <= 0:
    raise ValidationError(f"Gaussian needs positive sharpness and scale, got {sharpness}, {scale}")
  r = np.asarray(r, dtype=float)
  total = np.zeros_like(r)
  for c in centers:
    total += np.exp(-sharpness * ((r - c) / scale) ** 2)
  return total


def gaussian_psd(
  grid: Grid1D,
  centers: Sequence[float],
  sharpness: float = REFERENCE_SHARPNESS,
  scale: float = 1.0,
  normalized: bool = True,
) -> DensityField:
  """Gaussian mixture on grid; normalized to unit trapezoid integral unless told otherwise."""
  values = gaussian_bumps(grid.nodes, centers, sharpness, scale)
  if normalized:
    values = values / grid.integrate(values)
  return DensityField(grid, values, FieldKind.PSD)


def bimodal_psd(grid: Grid1D, meters_per_unit: float = 1.0) -> DensityField:
  """Normalized bimodal reference PSD, for a grid whose coordinates are in units of meters_per_unit."""
  centers = [c / meters_per_unit for c in BIMODAL_CENTERS_M]
  return gaussian_psd(grid, centers, REFERENCE_SHARPNESS, REFERENCE_SCALE_M / meters_per_unit)


def unimodal_psd(grid: Grid1D, meters_per_unit: float = 1.0) -> DensityField:
  """Normalized single-bump reference PSD (terminal state of the two-shape experiment)."""
  m = meters_per_unit
  return gaussian_psd(grid, [UNIMODAL_CENTER_M / m], REFERENCE_SHARPNESS, REFERENCE_SCALE_M / m)


def dirac_psd(grid: Grid1D, r0: float) -> DensityField:
  """Discrete Dirac: unit mass on the interior node closest to r0."""
  index = grid.index_of(r0)
  if not 0 < index < grid.n_points - 1:
    raise ValidationError(f"Dirac radius {r0} does not fall on an interior node of [{grid.lo}, {grid.hi}]")
  values = np.zeros(grid.n_points)
  values[index] = 1.0 / grid.spacing
  return DensityField(grid, values, FieldKind.PSD)


def zero_psd(grid: Grid1D) -> DensityField:
  return DensityField(grid, np.zeros(grid.n_points), FieldKind.PSD)
