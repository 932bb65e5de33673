import numpy as np
import pytest

from spheroid_cld.bfn import MeasurementSeries
from spheroid_cld.errors import DataFormatError
from spheroid_cld.grid import DensityField, FieldKind, Grid1D
from spheroid_cld.io import (
  read_density_csv,
  read_samples_csv,
  read_series_csv,
  read_table,
  read_trajectory_csv,
  trajectory_from_table,
  write_density_csv,
  write_series_csv,
  write_trajectory_csv,
)
from spheroid_cld.profiles import bimodal_psd
from spheroid_cld.transport import ExtendedState, Trajectory


def ring_state(grid, seed, time):
  values = np.random.default_rng(seed).uniform(size=grid.n_points)
  values[0] = values[-1]
  return ExtendedState((grid,), (values,), time, 1.0, 2.0)


class TestDensityFiles:
  """x,value files for PSDs and CLDs."""

  def test_psd_round_trip(self, tmp_path, units):
    psd = bimodal_psd(Grid1D(1.0, 3.0, 41), 1e-4)
    path = write_density_csv(tmp_path / "psd.csv", psd, units)
    assert path.read_text().splitlines()[0] == "x,value"
    back = read_density_csv(path, FieldKind.PSD, units)
    assert back.grid.same_as(psd.grid)
    np.testing.assert_allclose(back.values, psd.values, rtol=1e-14)

  def test_floats_keep_seventeen_digits(self, tmp_path, units):
    field = DensityField(Grid1D(0.0, 1.0, 2), [0.0, 1.0 / 3.0], FieldKind.CUMULATIVE_CLD)
    path = write_density_csv(tmp_path / "q.csv", field, units)
    assert "0.33333333333333331" in path.read_text()
    assert read_density_csv(path, FieldKind.CUMULATIVE_CLD, units).values[1] == 1.0 / 3.0

  def test_bad_header(self, tmp_path, units):
    path = tmp_path / "bad.csv"
    path.write_text("r,psi\n0,1\n1,1\n")
    with pytest.raises(DataFormatError) as excinfo:
      read_density_csv(path, FieldKind.PSD, units)
    assert excinfo.value.line == 1

  def test_non_numeric_value_reports_line(self, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,value\n0,1\n1,abc\n2,1\n")
    with pytest.raises(DataFormatError, match="'abc'") as excinfo:
      read_table(path, ["x", "value"])
    assert excinfo.value.line == 3

  def test_non_uniform_grid(self, tmp_path, units):
    path = tmp_path / "bad.csv"
    path.write_text("x,value\n0,1\n1,1\n3,1\n")
    with pytest.raises(DataFormatError, match="uniformly spaced") as excinfo:
      read_density_csv(path, FieldKind.PSD, units)
    assert excinfo.value.line == 3

  def test_empty_and_missing(self, tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("x,value\n")
    with pytest.raises(DataFormatError, match="no data rows"):
      read_table(path, ["x", "value"])
    with pytest.raises(DataFormatError, match="file not found"):
      read_table(tmp_path / "missing.csv", ["x", "value"])

  def test_samples_must_increase(self, tmp_path, units):
    path = tmp_path / "growth.csv"
    path.write_text("t,value\n0,1e-4\n3600,2e-4\n1800,1e-4\n")
    with pytest.raises(DataFormatError, match="strictly increasing"):
      read_samples_csv(path, units, "rate")


class TestTimeSeriesFiles:
  """Measurement series and trajectories."""

  def test_series_round_trip(self, tmp_path, units):
    grid = Grid1D(0.0, 8.0, 9)
    values = np.random.default_rng(0).uniform(size=(3, 9))
    series = MeasurementSeries([0.0, 0.5, 1.0], grid, values)
    path = write_series_csv(tmp_path / "series.csv", series, units)
    back = read_series_csv(path, units)
    assert back.chord_grid.same_as(grid)
    np.testing.assert_allclose(back.times, series.times, atol=1e-14)
    np.testing.assert_array_equal(back.values, values)

  def test_series_with_ragged_times(self, tmp_path, units):
    path = tmp_path / "series.csv"
    path.write_text("t,ell,Qbar\n0,0,0\n0,1e-4,1\n3600,0,0\n")
    with pytest.raises(DataFormatError, match="same chord lengths"):
      read_series_csv(path, units)

  def test_trajectory_round_trip(self, tmp_path, units):
    grid = Grid1D(0.0, 2.0, 21)
    trajectory = Trajectory(tuple(ring_state(grid, seed, t) for seed, t in enumerate([0.0, 0.5, 1.0])))
    path = write_trajectory_csv(tmp_path / "trajectory.csv", trajectory, units, ["needles"])
    assert path.read_text().splitlines()[0] == "t,r,shape,psi"
    table = read_trajectory_csv(path, units)
    back = trajectory_from_table(table, ["needles"], [grid], [0.0, 0.5, 1.0], 1.0, 2.0)
    for original, loaded in zip(trajectory.states, back.states):
      np.testing.assert_allclose(loaded.physical(0).values, original.physical(0).values, rtol=1e-12, atol=1e-12)
      assert loaded.values[0][0] == loaded.values[0][-1]

  def test_trajectory_missing_shape(self, tmp_path, units):
    grid = Grid1D(0.0, 2.0, 21)
    path = write_trajectory_csv(tmp_path / "trajectory.csv", Trajectory((ring_state(grid, 0, 0.0),)), units, ["a"])
    table = read_trajectory_csv(path, units)
    with pytest.raises(DataFormatError, match="no rows for shape"):
      trajectory_from_table(table, ["a", "b"], [grid, grid], [0.0], 1.0, 2.0)
    with pytest.raises(DataFormatError, match="no data at t"):
      trajectory_from_table(table, ["a"], [grid], [0.0, 1.0], 1.0, 2.0)
