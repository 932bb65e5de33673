"""
Quantity parsing and the working unit system.

Configuration files carry SI values, optionally as strings with a unit suffix
("1h", "150um", "1e-4m/h"). Solvers run in working units so that the
regularization parameter and the observer gain have the magnitudes used by the
reference experiments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ValidationError

LENGTH_UNITS = {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9}
TIME_UNITS = {"s": 1.0, "min": 60.0, "h": 3600.0}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\s]*)\s*$")


def _unit_factor(unit: str, kind: str) -> float:
  if kind == "length":
    table = LENGTH_UNITS
  elif kind == "time":
    table = TIME_UNITS
  elif kind == "rate":
    if "/" not in unit:
      raise KeyError(unit)
    num, den = unit.split("/", 1)
    return LENGTH_UNITS[num] / TIME_UNITS[den]
  elif kind == "dimensionless":
    raise KeyError(unit)
  else:
    raise ValueError(f"Unknown quantity kind: {kind}")
  return table[unit]


def parse_quantity(value, kind: str, name: str = "value") -> float:
  """Return the SI value of a number or a suffixed string such as "1h" or "2e-4m/h"."""
  if isinstance(value, bool):
    raise ValidationError(f"{name}: expected a {kind} quantity, got a boolean")
  if isinstance(value, (int, float)):
    return float(value)
  if not isinstance(value, str):
    raise ValidationError(f"{name}: expected a number or a string with unit, got {value!r}")
  match = _QUANTITY.match(value)
  if match is None:
    raise ValidationError(f"{name}: cannot parse quantity {value!r}")
  number, unit = match.groups()
  if not unit:
    return float(number)
  try:
    return float(number) * _unit_factor(unit, kind)
  except KeyError:
    raise ValidationError(f"{name}: unit {unit!r} is not a valid {kind} unit") from None


@dataclass(frozen=True)
class WorkingUnits:
  """Length and time units (in m and s) the solvers compute in."""

  length: float = 1e-5
  time: float = 3600.0

  def to_length(self, meters):
    return meters / self.length

  def from_length(self, value):
    return value * self.length

  def to_time(self, seconds):
    return seconds / self.time

  def from_time(self, value):
    return value * self.time

  def to_rate(self, meters_per_second):
    return meters_per_second * self.time / self.length

  def from_rate(self, value):
    return value * self.length / self.time

  def density_to_si(self, values):
    """Per-working-length density (1/unit) to per-meter density."""
    return values / self.length

  def density_from_si(self, values):
    return values * self.length
