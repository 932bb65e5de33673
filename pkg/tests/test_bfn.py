import numpy as np
import pytest

from resources import count_modes, dynamics_setup
from spheroid_cld.bfn import (
  MeasurementSeries,
  SweepRecord,
  _check_divergence,
  fit_rate,
  forward_sweep,
  misfit,
  run,
  state_error,
  synthesize_measurements,
)
from spheroid_cld.errors import DivergenceError, ValidationError
from spheroid_cld.forward import operator_norm
from spheroid_cld.grid import Grid1D
from spheroid_cld.transport import ExtendedState


@pytest.fixture(scope="module")
def reference():
  """Two-shape reference experiment: setup, truth trajectory and its noiseless measurements."""
  setup = dynamics_setup()
  truth = setup.simulate()
  data = synthesize_measurements(setup.operator, truth)
  return setup, truth, data


class TestMeasurementSeries:
  """Time series of cumulative CLDs."""

  GRID = Grid1D(0.0, 1.0, 4)

  def test_validation(self):
    with pytest.raises(ValidationError):
      MeasurementSeries([0.0, 1.0], self.GRID, np.zeros((3, 4)))
    with pytest.raises(ValidationError):
      MeasurementSeries([0.0, 0.0], self.GRID, np.zeros((2, 4)))
    with pytest.raises(ValidationError):
      MeasurementSeries([0.0, 1.0], self.GRID, np.full((2, 4), np.nan))

  def test_resample(self):
    series = MeasurementSeries([0.0, 1.0], self.GRID, np.array([np.zeros(4), np.ones(4)]))
    assert series.resample([0.0, 1.0]) is series
    half = series.resample([0.0, 0.5, 1.0])
    np.testing.assert_allclose(half.values[1], 0.5)
    with pytest.raises(ValidationError):
      series.resample([0.0, 2.0])


class TestRateFit:
  """Geometric fit of the error decay."""

  def test_recovers_geometric_decay(self):
    n = np.arange(0, 51, dtype=float)
    errors = 0.156 * 0.986**n
    prefactor, rate = fit_rate(errors, 15, n)
    assert prefactor == pytest.approx(0.156, rel=1e-10)
    assert rate == pytest.approx(0.986, rel=1e-12)

  def test_needs_positive_errors(self):
    with pytest.raises(ValidationError):
      fit_rate([1.0, 0.0, 0.5])
    with pytest.raises(ValidationError):
      fit_rate([1.0, 0.5], start_iteration=5)


class TestSweeps:
  """Single sweeps and their diagnostics."""

  def test_truth_has_zero_misfit(self, reference):
    setup, truth, data = reference
    config = setup.bfn_config()
    assert misfit(config, truth, data) == pytest.approx(0.0, abs=1e-12)
    assert state_error(truth.final, truth.final) == 0.0

  def test_unnudged_sweep_is_plain_transport(self, reference):
    setup, truth, data = reference
    config = setup.bfn_config()
    guess = ExtendedState.zeros(setup.grids, setup.r_min, setup.r_max)
    trajectory = forward_sweep(guess, data, 0.0, config)
    assert all(np.all(v == 0.0) for v in trajectory.final.values)

  def test_correction_leaves_nodes_below_r_min_to_transport(self, reference):
    setup, _, data = reference
    config = setup.bfn_config()
    guess = ExtendedState.zeros(setup.grids, setup.r_min, setup.r_max)
    nudged = forward_sweep(guess, data, config.gain(), config).states[1]
    plain = forward_sweep(guess, data, 0.0, config).states[1]
    for i in range(nudged.n_shapes):
      outside = ~nudged.physical_mask(i)
      change = nudged.values[i] - plain.values[i]
      assert outside.any()
      assert np.all(change[outside] == 0.0)
      assert change[-1] == 0.0
      assert np.any(change[~outside] != 0.0)

  def test_default_gain(self, reference):
    setup, _, _ = reference
    config = setup.bfn_config(mu0=0.5)
    assert config.gain() == pytest.approx(0.5 / operator_norm(setup.operator) ** 2)
    assert setup.bfn_config(mu=0.25).gain() == 0.25

  def test_config_validation(self, reference):
    setup, _, _ = reference
    with pytest.raises(ValidationError):
      setup.bfn_config(n_iterations=7)
    with pytest.raises(ValidationError):
      setup.bfn_config(r_min=setup.r_min + 0.1)
    with pytest.raises(ValidationError):
      setup.bfn_config(reference_time=2.0 * setup.t_max)


class TestRun:
  """Alternating forward and backward sweeps."""

  @pytest.mark.timeout(120)
  def test_short_run_reduces_misfit(self, reference):
    setup, truth, data = reference
    config = setup.bfn_config(n_iterations=10, snapshot_indices=(4, 5))
    guess = ExtendedState.zeros(setup.grids, setup.r_min, setup.r_max)
    baseline = misfit(config, forward_sweep(guess, data, 0.0, config), data)
    trajectory, report = run(config, data, truth)
    print(f"\nMisfit without nudging {baseline:.4e}, after 10 half-sweeps {report.records[-1].misfit:.4e}")
    assert [r.direction for r in report.records] == ["forward", "backward"] * 5 + ["forward"]
    assert report.records[-1].misfit < baseline
    assert set(report.snapshots) == {4}
    assert all(r.error is not None for r in report.records)
    indices, errors = report.forward_errors()
    assert indices == [0, 2, 4, 6, 8, 10]
    assert trajectory.times[-1] == pytest.approx(setup.t_max)
    assert report.to_dict()["iterations"][0]["direction"] == "forward"

  def test_run_without_truth_reports_no_errors(self, reference):
    setup, _, data = reference
    _, report = run(setup.bfn_config(n_iterations=2), data)
    assert all(r.error is None for r in report.records)
    assert report.rate is None

  @pytest.mark.timeout(120)
  def test_divergence_is_detected(self, reference):
    setup, truth, data = reference
    mu = 1e4 / operator_norm(setup.operator) ** 2
    config = setup.bfn_config(mu=mu, n_iterations=20, divergence_window=2)
    with pytest.raises(DivergenceError):
      run(config, data, truth)

  def test_misfit_growth_before_a_full_window(self, reference):
    setup, _, _ = reference
    config = setup.bfn_config(divergence_window=10)
    records = [SweepRecord(0, "forward", 1.0)]
    _check_divergence(records, config)
    records.append(SweepRecord(1, "backward", 50.0))
    with pytest.raises(DivergenceError, match="over 1 half-sweeps"):
      _check_divergence(records, config)

  def test_non_finite_misfit_is_divergence(self, reference):
    setup, _, _ = reference
    config = setup.bfn_config()
    with pytest.raises(DivergenceError):
      _check_divergence([SweepRecord(0, "forward", 1.0), SweepRecord(1, "backward", float("inf"))], config)


@pytest.mark.slow
class TestReferenceExperiment:
  """The two-shape reference experiment over 100 half-sweeps."""

  @pytest.mark.timeout(600)
  def test_error_decay(self, reference):
    setup, truth, data = reference
    config = setup.bfn_config(n_iterations=100, snapshot_indices=(20,))
    _, report = run(config, data, truth)
    indices, errors = report.forward_errors()
    print(f"\nFitted decay {report.prefactor:.4g} x {report.rate:.6g}^n")
    late = [e for i, e in zip(indices, errors) if i >= 50]
    assert all(b <= 1.01 * a for a, b in zip(late, late[1:]))
    assert 0.976 <= report.rate <= 0.996
    snapshot = report.snapshots[20]
    for i, name in enumerate(setup.names):
      assert count_modes(snapshot.physical(i).values) == 1, name

  @pytest.mark.timeout(600)
  def test_identical_shapes_are_not_observable(self):
    shape = {"eta": 1.0, "grid_spacing": "1um", "growth": {"kind": "constant", "value": "1e-4m/h"}}
    setup = dynamics_setup(
      **{
        "dynamics.shapes": [
          dict(shape, name="seeded", nucleation={"kind": "terminal", "profile": {"kind": "unimodal"}}),
          dict(shape, name="empty", nucleation={"kind": "zero"}),
        ]
      }
    )
    truth = setup.simulate()
    data = synthesize_measurements(setup.operator, truth)
    zero = ExtendedState.zeros(setup.grids, setup.r_min, setup.r_max)
    initial = state_error(zero, truth.final)
    _, report = run(setup.bfn_config(n_iterations=100), data, truth)
    final = report.forward_errors()[1][-1]
    print(f"\nError kept {final / initial:.3f} of its initial value")
    assert final > 0.5 * initial
    assert report.records[-1].misfit < report.records[0].misfit
