"""
CSV and JSON files read and written by the command-line front end.

Files carry SI values (meters, seconds, per-meter densities); the in-memory
objects carry working units. Per-radius and per-chord densities convert with
the length unit only; counts per reactor volume are left as they are.
Floats are written with 17 significant digits so that reruns are byte-identical.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .bfn import MeasurementSeries
from .errors import DataFormatError
from .grid import DensityField, FieldKind, Grid1D
from .transport import ExtendedState, Trajectory
from .units import WorkingUnits

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def read_json(path) -> dict:
  path = Path(path)
  try:
    with path.open("r", encoding="utf-8") as fh:
      return json.load(fh)
  except FileNotFoundError:
    raise DataFormatError(path, "file not found") from None
  except json.JSONDecodeError as exc:
    raise DataFormatError(path, exc.msg, exc.lineno) from None


def _plain(value):
  if isinstance(value, dict):
    return {str(k): _plain(v) for k, v in value.items()}
  if isinstance(value, (list, tuple)):
    return [_plain(v) for v in value]
  if isinstance(value, np.ndarray):
    return [_plain(v) for v in value.tolist()]
  if isinstance(value, (np.floating, float)):
    value = float(value)
    return value if math.isfinite(value) else None
  if isinstance(value, np.integer):
    return int(value)
  if isinstance(value, Path):
    return str(value)
  return value


def write_json(path, payload: dict) -> Path:
  path = Path(path)
  path.parent.mkdir(parents=True, exist_ok=True)
  with path.open("w", encoding="utf-8") as fh:
    json.dump(_plain(payload), fh, indent=2, sort_keys=True)
    fh.write("\n")
  logger.info("Wrote %s", path)
  return path


def write_table(path, frame: pd.DataFrame) -> Path:
  path = Path(path)
  path.parent.mkdir(parents=True, exist_ok=True)
  frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
  logger.info("Wrote %s (%d rows)", path, len(frame))
  return path


def read_table(path, columns: Sequence[str]) -> pd.DataFrame:
  """Numeric CSV with exactly the given header; problems are reported with the file line."""
  path = Path(path)
  if not path.exists():
    raise DataFormatError(path, "file not found")
  try:
    frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
  except pd.errors.EmptyDataError:
    raise DataFormatError(path, "file is empty") from None
  except pd.errors.ParserError as exc:
    raise DataFormatError(path, str(exc).strip()) from None
  header = [c.strip() for c in frame.columns]
  if header != list(columns):
    raise DataFormatError(path, f"expected header {','.join(columns)}, got {','.join(header)}", 1)
  frame.columns = header
  if frame.empty:
    raise DataFormatError(path, "no data rows")
  out = pd.DataFrame(index=frame.index)
  for col in columns:
    out[col] = _numeric_column(path, frame[col], col)
  return out


def _numeric_column(path, column: pd.Series, name: str, finite: bool = True) -> pd.Series:
  """Correctly rounded float parse of a string column; the first bad cell is reported with its file line."""
  try:
    values = column.str.strip().astype(float)
  except ValueError:
    values = pd.to_numeric(column.str.strip(), errors="coerce")
  bad = values.isna()
  if finite:
    bad |= ~np.isfinite(values.fillna(0.0))
  if bad.any():
    row = int(np.flatnonzero(bad.to_numpy())[0])
    what = "a finite number" if finite else "a number"
    raise DataFormatError(path, f"column {name!r}: {column.iloc[row]!r} is not {what}", row + 2)
  return values


def _uniform_grid(path, x: np.ndarray, first_line: int = 2) -> Grid1D:
  if x.size < 2:
    raise DataFormatError(path, "need at least 2 grid nodes")
  steps = np.diff(x)
  h = (x[-1] - x[0]) / (x.size - 1)
  off = np.flatnonzero(np.abs(steps - h) > 1e-6 * abs(h))
  if h <= 0 or off.size:
    line = first_line + (int(off[0]) + 1 if off.size else 0)
    raise DataFormatError(path, "x must be uniformly spaced and increasing", line)
  return Grid1D(float(x[0]), float(x[-1]), x.size)


def _density_factor(kind: FieldKind, units: WorkingUnits) -> float:
  """SI value = working value * factor."""
  return 1.0 if kind is FieldKind.CUMULATIVE_CLD else 1.0 / units.length


def write_density_csv(path, f: DensityField, units: WorkingUnits) -> Path:
  frame = pd.DataFrame(
    {"x": units.from_length(f.grid.nodes), "value": f.values * _density_factor(f.kind, units)}
  )
  return write_table(path, frame)


def read_density_csv(path, kind: FieldKind, units: WorkingUnits) -> DensityField:
  frame = read_table(path, ["x", "value"])
  x = units.to_length(frame["x"].to_numpy())
  grid = _uniform_grid(path, x)
  return DensityField(grid, frame["value"].to_numpy() / _density_factor(FieldKind(kind), units), kind)


def read_samples_csv(path, units: WorkingUnits, value_kind: str) -> tuple[np.ndarray, np.ndarray]:
  """(t, value) samples in working units; value_kind is "rate" or "density"."""
  frame = read_table(path, ["t", "value"])
  t = units.to_time(frame["t"].to_numpy())
  if np.any(np.diff(t) <= 0):
    raise DataFormatError(path, "t must be strictly increasing")
  v = frame["value"].to_numpy()
  v = units.to_rate(v) if value_kind == "rate" else units.density_from_si(v)
  return t, v


def write_trajectory_csv(path, trajectory: Trajectory, units: WorkingUnits, names: Sequence[str] | None = None) -> Path:
  """Long format t,r,shape,psi restricted to [r_min, r_max]."""
  traj = trajectory.chronological()
  parts = []
  for s in traj.states:
    for i in range(s.n_shapes):
      p = s.physical(i)
      parts.append(
        pd.DataFrame(
          {
            "t": units.from_time(s.time),
            "r": units.from_length(p.grid.nodes),
            "shape": names[i] if names else i,
            "psi": units.density_to_si(p.values),
          }
        )
      )
  return write_table(path, pd.concat(parts, ignore_index=True))


def read_trajectory_csv(path, units: WorkingUnits) -> pd.DataFrame:
  """Trajectory table in working units; the shape column keeps its labels."""
  path = Path(path)
  if not path.exists():
    raise DataFormatError(path, "file not found")
  raw = pd.read_csv(path, dtype=str, skipinitialspace=True)
  if [c.strip() for c in raw.columns] != ["t", "r", "shape", "psi"]:
    raise DataFormatError(path, "expected header t,r,shape,psi", 1)
  raw.columns = ["t", "r", "shape", "psi"]
  out = pd.DataFrame({"shape": raw["shape"].str.strip()})
  for col in ("t", "r", "psi"):
    out[col] = _numeric_column(path, raw[col], col, finite=False)
  out["t"] = units.to_time(out["t"])
  out["r"] = units.to_length(out["r"])
  out["psi"] = units.density_from_si(out["psi"])
  return out


def trajectory_from_table(
  table: pd.DataFrame,
  labels: Sequence[str],
  grids: Sequence[Grid1D],
  times,
  r_min: float,
  r_max: float,
  path="trajectory",
) -> Trajectory:
  """Interpolate a t,r,shape,psi table onto the solver's shape grids and time nodes (zero below r_min)."""
  states = []
  groups = {str(k): g for k, g in table.groupby("shape")}
  missing = [str(lbl) for lbl in labels if str(lbl) not in groups]
  if missing:
    raise DataFormatError(path, f"no rows for shape(s) {', '.join(missing)}")
  per_shape = []
  for lbl in labels:
    g = groups[str(lbl)].pivot_table(index="t", columns="r", values="psi", aggfunc="first").sort_index()
    per_shape.append(g)
  for t in times:
    values = []
    for grid, g in zip(grids, per_shape):
      t_nodes = g.index.to_numpy()
      if t < t_nodes[0] - 1e-9 or t > t_nodes[-1] + 1e-9:
        raise DataFormatError(path, f"no data at t={t}")
      k = int(np.argmin(np.abs(t_nodes - t)))
      row = g.iloc[k]
      r_nodes = row.index.to_numpy(dtype=float)
      v = np.zeros(grid.n_points)
      mask = grid.mask_between(r_min, r_max)
      v[mask] = np.interp(grid.nodes[mask], r_nodes, row.to_numpy(dtype=float))
      v[0] = v[-1]
      values.append(v)
    states.append(ExtendedState(tuple(grids), tuple(values), float(t), r_min, r_max))
  return Trajectory(tuple(states))


def write_series_csv(path, series: MeasurementSeries, units: WorkingUnits) -> Path:
  n_t, n_l = series.values.shape
  frame = pd.DataFrame(
    {
      "t": np.repeat(units.from_time(series.times), n_l),
      "ell": np.tile(units.from_length(series.chord_grid.nodes), n_t),
      "Qbar": series.values.ravel(),
    }
  )
  return write_table(path, frame)


def read_series_csv(path, units: WorkingUnits) -> MeasurementSeries:
  frame = read_table(path, ["t", "ell", "Qbar"])
  frame["t"] = units.to_time(frame["t"])
  frame["ell"] = units.to_length(frame["ell"])
  table = frame.pivot_table(index="t", columns="ell", values="Qbar", aggfunc="first").sort_index()
  if table.isna().any().any():
    raise DataFormatError(path, "every time must carry the same chord lengths")
  ell = table.columns.to_numpy(dtype=float)
  grid = _uniform_grid(path, ell)
  return MeasurementSeries(table.index.to_numpy(dtype=float), grid, table.to_numpy(dtype=float))
