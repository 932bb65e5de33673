"""
Exception hierarchy shared by the library and the command-line front end.
"""

from __future__ import annotations

from typing import Iterable


class SpheroidCldError(Exception):
  """Base class for every error raised by spheroid_cld."""


class ValidationError(SpheroidCldError, ValueError):
  """Invalid input: grids, shapes, schedules, configuration or data files.

  Carries the individual problems so callers can print one aggregated report.
  """

  def __init__(self, problems: str | Iterable[str]):
    if isinstance(problems, str):
      problems = [problems]
    self.problems = list(problems)
    if len(self.problems) == 1:
      message = self.problems[0]
    else:
      message = f"{len(self.problems)} problems:\n" + "\n".join(f"  - {p}" for p in self.problems)
    super().__init__(message)


class CflError(ValidationError):
  """Courant number above 1 for an explicit upwind step."""


class GridMismatchError(ValidationError):
  """Field grid does not match the grid an operator was assembled on."""


class DataFormatError(ValidationError):
  """Malformed CSV or JSON input, reported with file and line."""

  def __init__(self, path, message: str, line: int | None = None):
    self.path = str(path)
    self.line = line
    where = f"{self.path}:{line}" if line is not None else self.path
    super().__init__(f"{where}: {message}")


class NumericalError(SpheroidCldError, RuntimeError):
  """A numerical procedure could not produce a result."""


class DivergenceError(NumericalError):
  """The observer iteration blew up."""
