"""
spheroid-cld command line.

  spheroid-cld forward  [--dirac R] [--eta LIST]   CLD of the configured PSDs, or Dirac curves
  spheroid-cld invert   [--eta E]                  Tikhonov reconstruction for each delta
  spheroid-cld simulate                            population balance trajectory and its CLD series
  spheroid-cld bfn      [--iters N]                back-and-forth nudging estimate and report
  spheroid-cld oracle   [--eta LIST] [--r R] [--samples N]

Exit codes: 0 success, 2 invalid input, 3 numerical failure or non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.signal import find_peaks

from .bfn import run as run_bfn
from .bfn import synthesize_measurements
from .config import ExperimentConfig, load_raw, parse_config, parse_override, set_dotted
from .errors import NumericalError, ValidationError
from .experiments import build_dynamics, build_inversion, measurements_for, synthetic_data, truth_for
from .forward import ConcentrationData, apply, build_operator, estimate_particle_count
from .geometry import kernel_matrix, oracle_table
from .grid import DensityField, FieldKind, Grid1D, differentiate, normalize
from .io import read_density_csv, write_density_csv, write_json, write_series_csv, write_table, write_trajectory_csv
from .tikhonov import TikhonovProblem, lcurve_corner, sweep_delta
from .transport import Trajectory, courant_numbers, mass_balance
from .units import parse_quantity

logger = logging.getLogger("spheroid_cld")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _configure_logging(verbose: bool):
  logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
  logging.captureWarnings(True)


def _tag(value: float) -> str:
  return f"{value:g}".replace("+", "")


def _report(written: Sequence[Path]):
  for path in written:
    print(f"  wrote {path}")


def cmd_forward(config: ExperimentConfig, dirac: float | None = None) -> int:
  """Cumulative CLD of the configured PSDs, or of a Dirac at radius dirac (meters) per shape."""
  units = config.units
  out = config.output_dir
  shapes = config.inversion.shapes
  written = []
  if dirac is not None:
    r = units.to_length(dirac)
    ell_max = 2.0 * r * max(max(s.eta, 1.0) for s in shapes)
    n = config.inversion.chord_grid.n_points if config.inversion.chord_grid else 200
    chord = Grid1D(0.0, ell_max, n)
    for s in shapes:
      Q = kernel_matrix(chord.nodes, [r], s.eta, config.quadrature)[:, 0]
      field_ = DensityField(chord, Q, FieldKind.CUMULATIVE_CLD)
      written.append(write_density_csv(out / f"dirac_eta{_tag(s.eta)}.csv", field_, units))
    print(f"Dirac curves at r={dirac:g} m for eta={', '.join(_tag(s.eta) for s in shapes)}")
    _report(written)
    return EXIT_OK

  setup = build_inversion(config)
  blocks = [t.scaled(k) for t, k in zip(setup.truths, setup.kappas)]
  Q = apply(setup.operator, blocks)
  written.append(write_density_csv(out / "cumulative_cld.csv", Q, units))
  written.append(write_density_csv(out / "cld.csv", differentiate(Q), units))
  if len(blocks) > 1:
    for i, name in enumerate(setup.names):
      parts = [b if j == i else b.scaled(0.0) for j, b in enumerate(blocks)]
      written.append(write_density_csv(out / f"cumulative_cld_{name}.csv", apply(setup.operator, parts), units))
  total = float(Q.values[-1])
  if total > 0:
    written.append(write_density_csv(out / "cumulative_cld_normalized.csv", normalize(Q), units))
  written.append(
    write_json(
      out / "summary.json",
      {"command": "forward", "shapes": [s.name for s in shapes], "eta": [s.eta for s in shapes], "total_count": total},
    )
  )
  print(f"Forward model for {len(blocks)} shape(s), Q(l_max) = {total:.6g}")
  _report(written)
  return EXIT_OK


def _interior_peaks(values: np.ndarray, prominence: float = 0.1) -> np.ndarray:
  if not np.any(values > 0):
    return np.array([], dtype=int)
  peaks, _ = find_peaks(values, prominence=prominence * float(np.max(values)))
  return peaks


def cmd_invert(config: ExperimentConfig) -> int:
  """Tikhonov reconstruction of a single-shape PSD for every configured delta."""
  inv = config.inversion
  units = config.units
  out = config.output_dir
  if len(inv.shapes) != 1:
    raise ValidationError(f"invert works on a single shape, got {len(inv.shapes)} (use --eta E)")
  setup = build_inversion(config)
  op = setup.operator
  truth = None
  if inv.data is not None:
    data = read_density_csv(inv.data, FieldKind.CUMULATIVE_CLD, units)
    if not data.grid.same_as(op.chord_grid):
      op = build_operator(op.radial_grid, data.grid, op.shapes, config.quadrature, config.operator_cache)
  else:
    data = synthetic_data(setup, inv.noise.level, inv.noise.seed)
    truth = setup.truths[0]
  problem = TikhonovProblem(op, data, inv.deltas[0] if inv.deltas else 1.0, inv.nonneg, inv.tol, inv.max_iters)
  points = sweep_delta(problem, inv.deltas)

  written = [write_density_csv(out / "data_cumulative_cld.csv", data, units)]
  rows = []
  for p in points:
    psd = p.solution.psd
    written.append(write_density_csv(out / f"reconstruction_delta_{_tag(p.delta)}.csv", psd, units))
    row = {
      "delta": p.delta,
      "residual_norm": p.residual_norm,
      "solution_norm": p.solution_norm,
      "iterations": p.solution.iterations,
      "converged": p.solution.converged,
      "peaks_m": units.from_length(op.radial_grid.nodes[_interior_peaks(psd.values)]).tolist(),
      "peak_amplitude": float(np.max(psd.values)) / units.length,
    }
    if truth is not None:
      row["relative_error"] = op.radial_grid.norm(psd.values - truth.values) / truth.norm()
    if inv.concentration is not None and psd.integral() > 0:
      si = normalize(
        DensityField(
          Grid1D(units.from_length(psd.grid.lo), units.from_length(psd.grid.hi), psd.grid.n_points),
          units.density_to_si(psd.values),
        )
      )
      c = inv.concentration
      row["particle_count"] = estimate_particle_count(ConcentrationData(c.C_s, c.rho_s, c.M_e), op.shapes[0], si)
    rows.append(row)
  if truth is not None:
    written.append(write_density_csv(out / "truth_psd.csv", truth, units))
  converged = all(p.solution.converged for p in points)
  written.append(
    write_json(
      out / "summary.json",
      {
        "command": "invert",
        "eta": op.shapes[0].eta,
        "noise": {"level": inv.noise.level, "seed": inv.noise.seed} if inv.data is None else None,
        "nonneg": inv.nonneg,
        "sweep": rows,
        "lcurve_corner": lcurve_corner(points),
        "converged": converged,
      },
    )
  )
  print(f"Tikhonov sweep over {len(points)} value(s) of delta, eta={_tag(op.shapes[0].eta)}")
  for row in rows:
    print(f"  delta={row['delta']:<8g} residual={row['residual_norm']:.4e} norm={row['solution_norm']:.4e}")
  _report(written)
  if not converged:
    print("error: the nonnegative solver did not converge for every delta", file=sys.stderr)
    return EXIT_NUMERICAL
  return EXIT_OK


def cmd_simulate(config: ExperimentConfig) -> int:
  """Population balance trajectory and the cumulative CLD at every time node."""
  units = config.units
  out = config.output_dir
  setup = build_dynamics(config)
  trajectory = setup.simulate()
  series = synthesize_measurements(setup.operator, trajectory)
  dt = setup.t_max / setup.n_steps
  courant = courant_numbers(setup.initial, setup.schedule, 0.0, dt)
  shapes = []
  for i, name in enumerate(setup.names):
    change, inflow = mass_balance(trajectory, setup.schedule, setup.nucleation, i)
    shapes.append(
      {
        "name": name,
        "courant": float(courant[i]),
        "mass_initial": trajectory.initial.mass(i),
        "mass_final": trajectory.final.mass(i),
        "mass_change": change,
        "boundary_flux": inflow,
      }
    )
  written = [
    write_trajectory_csv(out / "trajectory.csv", trajectory, units, setup.names),
    write_series_csv(out / "cld_series.csv", series, units),
    write_json(
      out / "summary.json",
      {"command": "simulate", "t_max_s": units.from_time(setup.t_max), "n_steps": setup.n_steps, "shapes": shapes},
    ),
  ]
  print(f"Simulated {len(setup.names)} shape(s) over {setup.n_steps} steps")
  _report(written)
  return EXIT_OK


def cmd_bfn(config: ExperimentConfig) -> int:
  """Back-and-forth nudging estimate from a measured or synthesized CLD series."""
  units = config.units
  out = config.output_dir
  setup = build_dynamics(config)
  truth = truth_for(setup, config)
  data = measurements_for(setup, config, truth)
  bfn_config = setup.bfn_config()
  trajectory, report = run_bfn(bfn_config, data, truth)
  written = [write_trajectory_csv(out / "estimate_trajectory.csv", trajectory, units, setup.names)]
  for index, state in sorted(report.snapshots.items()):
    snapshot = Trajectory((state,))
    written.append(write_trajectory_csv(out / f"snapshot_{index}.csv", snapshot, units, setup.names))
  payload = report.to_dict()
  payload.update(
    {"command": "bfn", "shapes": list(setup.names), "n_steps": setup.n_steps, "has_truth": truth is not None}
  )
  written.append(write_json(out / "report.json", payload))
  print(f"BFN: {bfn_config.n_iterations + 1} half-sweeps, mu={report.mu:.6g}")
  if report.rate is not None:
    print(f"  fitted error decay {report.prefactor:.4g} x {report.rate:.6g}^n")
  _report(written)
  return EXIT_OK


def cmd_oracle(config: ExperimentConfig) -> int:
  """Monte-Carlo chord CDF against the kernel for each configured eta."""
  units = config.units
  out = config.output_dir
  o = config.oracle
  written = []
  results = []
  for eta in o.etas:
    table = oracle_table(units.to_length(o.r), eta, o.samples, o.seed, o.probes, config.quadrature)
    frame = pd.DataFrame(
      {
        "ell": units.from_length(table.ell),
        "empirical": table.empirical,
        "analytic": table.analytic,
        "band": table.band,
        "deviation": table.deviation,
      }
    )
    written.append(write_table(out / f"oracle_eta{_tag(eta)}.csv", frame))
    results.append({"eta": eta, "max_deviation": float(table.deviation.max()), "passed": table.passed})
  passed = all(r["passed"] for r in results)
  written.append(
    write_json(
      out / "summary.json",
      {"command": "oracle", "r": o.r, "samples": o.samples, "results": results, "passed": passed},
    )
  )
  print(f"Oracle at r={o.r:g} m with {o.samples} samples")
  for r in results:
    print(f"  eta={_tag(r['eta']):<5} max deviation={r['max_deviation']:.3e} {'ok' if r['passed'] else 'FAILED'}")
  _report(written)
  return EXIT_OK if passed else EXIT_NUMERICAL


def _float_list(text: str) -> list[float]:
  try:
    return [float(x) for x in text.split(",") if x.strip()]
  except ValueError:
    raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _length(text: str) -> float:
  try:
    return parse_quantity(text, "length", "radius")
  except ValidationError as exc:
    raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
  common = argparse.ArgumentParser(add_help=False)
  common.add_argument("--config", type=Path, help="JSON experiment configuration")
  common.add_argument("--output-dir", type=Path, help="Directory for CSV and JSON outputs")
  common.add_argument("--seed", type=int, help="Seed for noise and Monte-Carlo sampling")
  common.add_argument(
    "--override", action="append", default=[], metavar="PATH=VALUE", help="Dotted override, e.g. dynamics.bfn.mu=0.5"
  )
  common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

  parser = argparse.ArgumentParser(prog="spheroid-cld", description="Spheroid chord length distributions")
  sub = parser.add_subparsers(dest="command", required=True)
  p = sub.add_parser("forward", parents=[common], help="CLD of configured PSDs or Dirac curves")
  p.add_argument("--dirac", type=_length, help="Radius of a Dirac PSD, e.g. 1e-3 or 1mm")
  p.add_argument("--eta", type=_float_list, help="Comma-separated shape parameters")
  p = sub.add_parser("invert", parents=[common], help="Tikhonov inversion of a cumulative CLD")
  p.add_argument("--eta", type=_float_list, help="Shape parameter of the single inverted shape")
  sub.add_parser("simulate", parents=[common], help="Simulate the population balance")
  p = sub.add_parser("bfn", parents=[common], help="Back-and-forth nudging estimate")
  p.add_argument("--iters", type=int, help="Last sweep index 2n (even)")
  p = sub.add_parser("oracle", parents=[common], help="Monte-Carlo check of the kernel")
  p.add_argument("--eta", type=_float_list, help="Comma-separated shape parameters")
  p.add_argument("--r", type=_length, help="Radius in meters")
  p.add_argument("--samples", type=int, help="Number of Monte-Carlo chords")
  return parser


def apply_arguments(raw: dict, args: argparse.Namespace) -> dict:
  """Fold command-line overrides into the raw configuration document."""
  etas = getattr(args, "eta", None)
  if etas:
    base = dict(raw["inversion"]["shapes"][0]) if raw["inversion"].get("shapes") else {}
    raw["inversion"]["shapes"] = [dict(base, eta=e, name=f"eta{_tag(e)}") for e in etas]
    raw["oracle"]["eta"] = list(etas)
  if getattr(args, "iters", None) is not None:
    raw["dynamics"]["bfn"]["iterations"] = args.iters
  if getattr(args, "r", None) is not None:
    raw["oracle"]["r"] = args.r
  if getattr(args, "samples", None) is not None:
    raw["oracle"]["samples"] = args.samples
  if args.seed is not None:
    raw["inversion"]["noise"]["seed"] = args.seed
    raw["dynamics"]["bfn"]["noise"]["seed"] = args.seed
    raw["oracle"]["seed"] = args.seed
  if args.output_dir is not None:
    raw["output_dir"] = str(args.output_dir)
  for text in args.override:
    set_dotted(raw, *parse_override(text))
  return raw


COMMANDS = {
  "forward": cmd_forward,
  "invert": cmd_invert,
  "simulate": cmd_simulate,
  "bfn": cmd_bfn,
  "oracle": cmd_oracle,
}


def main(argv: Sequence[str] | None = None) -> int:
  args = build_parser().parse_args(argv)
  _configure_logging(args.verbose)
  try:
    raw, base_dir = load_raw(args.config)
    config = parse_config(apply_arguments(raw, args), base_dir)
    if args.command == "forward":
      return cmd_forward(config, args.dirac)
    return COMMANDS[args.command](config)
  except ValidationError as exc:
    print(f"error: {exc}", file=sys.stderr)
    return EXIT_INVALID
  except NumericalError as exc:
    print(f"error: {exc}", file=sys.stderr)
    return EXIT_NUMERICAL


if __name__ == "__main__":
  sys.exit(main())
