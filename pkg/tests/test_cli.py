import json

import numpy as np
import pytest

from spheroid_cld.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK

ZERO_SHAPE = json.dumps([{"name": "empty", "eta": 1.0, "psd": {"kind": "zero"}}])


class TestForward:
  """spheroid-cld forward"""

  def test_dirac_sphere_matches_closed_form(self, cli):
    assert cli.run("forward", "--dirac", "1e-3", "--eta", "1") == EXIT_OK
    frame = cli.read_csv("dirac_eta1.csv")
    assert list(frame.columns) == ["x", "value"]
    ell = frame["x"].to_numpy()
    assert ell[-1] == pytest.approx(2e-3)
    expected = 1.0 - np.sqrt(np.clip(1.0 - (ell / 2e-3) ** 2, 0.0, None))
    assert np.max(np.abs(frame["value"].to_numpy() - expected)) < 1e-6

  def test_dirac_curves_for_several_shapes(self, cli):
    assert cli.run("forward", "--dirac", "1mm", "--eta", "0.5,1,2") == EXIT_OK
    assert {"dirac_eta0.5.csv", "dirac_eta1.csv", "dirac_eta2.csv"} <= set(cli.files())
    last = [cli.read_csv(f"dirac_eta{tag}.csv")["value"].iloc[-1] for tag in ("0.5", "1", "2")]
    np.testing.assert_allclose(last, 1.0, atol=1e-12)

  def test_zero_psd_gives_zero_cld(self, cli):
    assert cli.run("forward", "--override", f"inversion.shapes={ZERO_SHAPE}") == EXIT_OK
    assert np.all(cli.read_csv("cumulative_cld.csv")["value"] == 0.0)
    assert "cumulative_cld_normalized.csv" not in cli.files()
    assert cli.read_json("summary.json")["total_count"] == 0.0

  def test_default_forward_outputs(self, cli):
    assert cli.run("forward") == EXIT_OK
    files = cli.files()
    assert {"cumulative_cld.csv", "cld.csv", "cumulative_cld_normalized.csv", "summary.json"} <= set(files)
    normalized = cli.read_csv("cumulative_cld_normalized.csv")["value"]
    assert normalized.iloc[-1] == pytest.approx(1.0)


class TestInvert:
  """spheroid-cld invert"""

  @pytest.mark.timeout(300)
  def test_sweep_summary(self, cli):
    assert cli.run("invert", "--eta", "2") == EXIT_OK
    summary = cli.read_json("summary.json")
    assert summary["converged"] is True
    assert [row["delta"] for row in summary["sweep"]] == [1e-5, 1e-3, 1e-1]
    for row in summary["sweep"]:
      assert {"residual_norm", "solution_norm", "iterations", "peaks_m", "relative_error"} <= set(row)
    files = cli.files()
    for tag in ("1e-05", "0.001", "0.1"):
      assert f"reconstruction_delta_{tag}.csv" in files
    assert "truth_psd.csv" in files

  @pytest.mark.timeout(120)
  def test_non_convergence_exit_code(self, cli):
    code = cli.run("invert", "--override", "inversion.max_iters=1", "--override", "inversion.deltas=[1e-3]")
    assert code == EXIT_NUMERICAL
    assert cli.read_json("summary.json")["converged"] is False

  def test_invalid_configuration(self, cli, capsys):
    assert cli.run("invert", "--override", "inversion.tol=-1") == EXIT_INVALID
    assert "inversion.tol" in capsys.readouterr().err

  def test_several_shapes_rejected(self, cli):
    assert cli.run("invert", "--eta", "1,2") == EXIT_INVALID

  def test_missing_config_file(self, cli, tmp_path):
    assert cli.run("invert", "--config", tmp_path / "missing.json") == EXIT_INVALID


class TestDynamics:
  """spheroid-cld simulate and bfn"""

  @pytest.mark.timeout(120)
  def test_simulate_outputs(self, cli):
    assert cli.run("simulate") == EXIT_OK
    trajectory = cli.read_csv("trajectory.csv")
    assert list(trajectory.columns) == ["t", "r", "shape", "psi"]
    assert set(trajectory["shape"]) == {"sphere", "prolate"}
    assert list(cli.read_csv("cld_series.csv").columns) == ["t", "ell", "Qbar"]
    summary = cli.read_json("summary.json")
    for shape in summary["shapes"]:
      assert shape["courant"] <= 1.0 + 1e-12
      assert shape["mass_change"] == pytest.approx(shape["boundary_flux"], rel=0.05)

  def test_odd_iteration_count(self, cli):
    assert cli.run("bfn", "--iters", "7") == EXIT_INVALID

  @pytest.mark.timeout(120)
  def test_divergence_exit_code(self, cli, capsys):
    assert cli.run("bfn", "--iters", "4", "--override", "dynamics.bfn.mu0=1e4") == EXIT_NUMERICAL
    assert "reduce mu" in capsys.readouterr().err

  def test_bad_eta_list(self, cli):
    with pytest.raises(SystemExit) as excinfo:
      cli.run("forward", "--eta", "one,two")
    assert excinfo.value.code == 2


class TestOracle:
  """spheroid-cld oracle"""

  @pytest.mark.timeout(60)
  def test_oracle_passes(self, cli):
    assert cli.run("oracle", "--samples", "100000", "--seed", "3") == EXIT_OK
    summary = cli.read_json("summary.json")
    assert summary["passed"] is True
    assert [r["eta"] for r in summary["results"]] == [0.5, 1.0, 2.0]
    frame = cli.read_csv("oracle_eta2.csv")
    assert list(frame.columns) == ["ell", "empirical", "analytic", "band", "deviation"]
    assert np.all(frame["deviation"] <= frame["band"])


class TestDeterminism:
  """Same configuration and seed, byte-identical outputs."""

  @pytest.mark.timeout(300)
  def test_invert_is_reproducible(self, cli, tmp_path):
    args = ("invert", "--seed", "11", "--override", "inversion.deltas=[1e-3]")
    assert cli.run(*args, output_dir=tmp_path / "first") == EXIT_OK
    assert cli.run(*args, output_dir=tmp_path / "second") == EXIT_OK
    assert cli.files(tmp_path / "first") == cli.files(tmp_path / "second")

  @pytest.mark.timeout(300)
  def test_bfn_is_reproducible(self, cli, tmp_path):
    args = ("bfn", "--iters", "4", "--override", "dynamics.bfn.noise.level=0.01")
    assert cli.run(*args, output_dir=tmp_path / "first") == EXIT_OK
    assert cli.run(*args, output_dir=tmp_path / "second") == EXIT_OK
    first = cli.files(tmp_path / "first")
    assert {"estimate_trajectory.csv", "report.json"} <= set(first)
    assert first == cli.files(tmp_path / "second")
    report = json.loads(first["report.json"])
    assert [r["direction"] for r in report["iterations"]] == ["forward", "backward"] * 2 + ["forward"]
