import math

import numpy as np
import pytest

from spheroid_cld.errors import GridMismatchError, ValidationError
from spheroid_cld.forward import (
  ConcentrationData,
  add_noise,
  apply,
  apply_adjoint,
  build_operator,
  denormalize,
  derivative_identity,
  estimate_particle_count,
  measure,
  moment_F,
  operator_norm,
  taylor_derivative_at_zero,
)
from spheroid_cld.geometry import kernel_matrix
from spheroid_cld.grid import DensityField, FieldKind, Grid1D
from spheroid_cld.profiles import bimodal_psd, dirac_psd, zero_psd


class TestOperator:
  """Discrete PSD to cumulative CLD map."""

  @pytest.mark.timeout(60)
  def test_adjoint_identity(self, prolate_operator):
    op = prolate_operator
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
      psi = DensityField(op.radial_grid, rng.normal(size=op.radial_grid.n_points))
      Q = DensityField(op.chord_grid, rng.normal(size=op.chord_grid.n_points), FieldKind.CUMULATIVE_CLD)
      lhs = op.chord_grid.inner(apply(op, psi).values, Q.values)
      rhs = op.radial_grid.inner(psi.values, apply_adjoint(op, Q)[0].values)
      worst = max(worst, abs(lhs - rhs) / (psi.norm() * Q.norm()))
    print(f"\nWorst relative adjoint defect: {worst:.3e}")
    assert worst < 1e-10

  def test_zero_psd_gives_zero_cld(self, small_operator):
    Q = apply(small_operator, zero_psd(small_operator.radial_grid))
    assert Q.kind is FieldKind.CUMULATIVE_CLD
    assert np.all(Q.values == 0.0)

  def test_dirac_reproduces_kernel_column(self, small_operator):
    op = small_operator
    mid = 0.5 * (op.radial_grid.lo + op.radial_grid.hi)
    d = dirac_psd(op.radial_grid, mid)
    r0 = op.radial_grid.nodes[op.radial_grid.index_of(mid)]
    expected = kernel_matrix(op.chord_grid.nodes, [r0], 1.0)[:, 0]
    np.testing.assert_allclose(apply(op, d).values, expected, atol=1e-12)

  def test_total_count_at_longest_chord(self, prolate_operator, units):
    psd = bimodal_psd(prolate_operator.radial_grid, units.length)
    Q = apply(prolate_operator, psd)
    assert Q.values[-1] == pytest.approx(psd.integral(), rel=1e-12)
    assert np.all(np.diff(Q.values) >= -1e-14)

  def test_multi_shape_is_sum_of_blocks(self):
    radial = Grid1D(1.0, 2.0, 30)
    chord = Grid1D(0.0, 8.0, 40)
    op = build_operator(radial, chord, [1.0, 2.0])
    single = [build_operator(radial, chord, [eta]) for eta in (1.0, 2.0)]
    psd = bimodal_psd(radial, 1e-4)
    both = apply(op, [psd, psd.scaled(0.5)]).values
    parts = apply(single[0], psd).values + apply(single[1], psd.scaled(0.5)).values
    np.testing.assert_allclose(both, parts, rtol=1e-13, atol=1e-15)

  def test_linearity(self, small_operator, units):
    op = small_operator
    a = bimodal_psd(op.radial_grid, units.length)
    b = DensityField(op.radial_grid, np.random.default_rng(5).uniform(size=op.radial_grid.n_points))
    combined = apply(op, a.with_values(2.5 * a.values - 0.75 * b.values)).values
    separate = 2.5 * apply(op, a).values - 0.75 * apply(op, b).values
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-14 * np.abs(separate).max())

  def test_identical_shapes_cancel(self):
    radial = Grid1D(1.0, 2.0, 30)
    op = build_operator(radial, Grid1D(0.0, 4.0, 40), [1.0, 1.0])
    psd = bimodal_psd(radial, 1e-4)
    Q = apply(op, [psd, psd.scaled(-1.0)]).values
    assert np.max(np.abs(Q)) <= 1e-14

  def test_grid_mismatch(self, small_operator):
    with pytest.raises(GridMismatchError):
      apply(small_operator, zero_psd(Grid1D(1.0, 3.0, 41)))
    with pytest.raises(GridMismatchError):
      apply(small_operator, [zero_psd(small_operator.radial_grid)] * 2)

  def test_chord_grid_must_cover_longest_chord(self):
    with pytest.raises(ValidationError) as excinfo:
      build_operator(Grid1D(1.0, 3.0, 10), Grid1D(0.0, 10.0, 10), [2.0])
    assert "longest chord" in str(excinfo.value)

  def test_operator_cache(self, tmp_path):
    radial, chord = Grid1D(1.0, 2.0, 12), Grid1D(0.0, 4.0, 15)
    first = build_operator(radial, chord, [1.0], cache_dir=tmp_path)
    assert len(list(tmp_path.glob("operator-*.npz"))) == 1
    second = build_operator(radial, chord, [1.0], cache_dir=tmp_path)
    np.testing.assert_array_equal(first.matrices[0], second.matrices[0])
    assert not second.matrices[0].flags.writeable

  def test_operator_norm_matches_weighted_svd(self, small_operator):
    op = small_operator
    B = np.sqrt(op.chord_grid.quad_weights)[:, None] * op.matrices[0] / np.sqrt(op.radial_grid.quad_weights)[None, :]
    sigma = np.linalg.svd(B, compute_uv=False)[0]
    assert operator_norm(op) == pytest.approx(sigma, rel=1e-6)


class TestMeasurement:
  """Noise model and normalization of synthetic measurements."""

  def test_noiseless_measurement_is_normalized(self, small_operator, units):
    Q = measure(small_operator, bimodal_psd(small_operator.radial_grid, units.length))
    assert Q.values[-1] == pytest.approx(1.0)

  def test_noise_is_seeded(self, small_operator, units):
    psd = bimodal_psd(small_operator.radial_grid, units.length)
    a = measure(small_operator, psd, 0.02, seed=3)
    b = measure(small_operator, psd, 0.02, seed=3)
    c = measure(small_operator, psd, 0.02, seed=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)

  def test_noise_level(self):
    g = Grid1D(0.0, 1.0, 200_001)
    f = DensityField(g, np.full(g.n_points, 2.0), FieldKind.CLD)
    noisy = add_noise(f, 0.05, seed=0)
    assert np.std(noisy.values - f.values) == pytest.approx(0.1, rel=0.02)
    with pytest.raises(ValidationError):
      add_noise(f, -0.1)


class TestConcentration:
  """Particle count from solid concentration."""

  def test_dirac_particle_count(self):
    grid = Grid1D(1e-4, 3e-4, 201)
    psd = dirac_psd(grid, 2e-4)
    c = ConcentrationData(C_s=0.1, rho_s=2000.0, M_e=1.5)
    count = estimate_particle_count(c, 1.0, psd)
    expected = 3.0 * c.M_e * c.C_s / (4.0 * math.pi * c.rho_s * (2e-4) ** 3)
    assert count == pytest.approx(expected, rel=1e-9)
    assert denormalize(psd, count).integral() == pytest.approx(count)

  def test_particle_count_scales_with_eta(self):
    psd = bimodal_psd(Grid1D(1e-4, 3e-4, 101))
    c = ConcentrationData(0.1, 2000.0, 1.0)
    assert estimate_particle_count(c, 2.0, psd) == pytest.approx(0.5 * estimate_particle_count(c, 1.0, psd))

  def test_requires_normalized_psd(self):
    psd = bimodal_psd(Grid1D(1e-4, 3e-4, 101)).scaled(2.0)
    with pytest.raises(ValidationError):
      estimate_particle_count(ConcentrationData(0.1, 2000.0, 1.0), 1.0, psd)
    with pytest.raises(ValidationError):
      ConcentrationData(0.0, 2000.0, 1.0)


class TestDerivativeIdentity:
  """Even derivatives of the CLD at zero chord length."""

  @pytest.mark.timeout(60)
  @pytest.mark.parametrize("n", [1, 2, 3])
  def test_polynomial_fit_matches_closed_form(self, n):
    psd = bimodal_psd(Grid1D(1.0, 3.0, 200), 1e-4)
    closed = derivative_identity(n, psd, 2.0)
    fitted = taylor_derivative_at_zero(n, psd, 2.0)
    print(f"\nn={n}: closed form {closed:.6e}, fitted {fitted:.6e}")
    assert closed > 0
    assert fitted == pytest.approx(closed, rel=0.01)

  @pytest.mark.parametrize(
    "profile,leading",
    [
      # psi(r_min) = 1: F_n ~ psi(r_min) / (2n r_min^(2n-1))
      (lambda r: 1.0 + (r - 1.0) * (2.0 - r), lambda n: 2.0 * n),
      # psi(r_min) = 0, psi'(r_min) = 1: F_n ~ psi'(r_min) / (4n^2 r_min^(2n-1))
      (lambda r: (r - 1.0) * (2.0 - r), lambda n: 4.0 * n * n),
    ],
    ids=["nonzero-at-r_min", "vanishing-at-r_min"],
  )
  def test_moment_F_leading_term(self, profile, leading):
    g = Grid1D(1.0, 2.0, 20001)
    psd = DensityField(g, profile(g.nodes))
    ratios = [leading(n) * moment_F(n, psd) for n in (10, 30, 100)]
    print(f"\nLeading-term ratios: {ratios}")
    deviations = [abs(q - 1.0) for q in ratios]
    assert deviations[0] > deviations[1] > deviations[2]
    assert deviations[2] < 0.015

  def test_moment_F(self):
    g = Grid1D(1.0, 2.0, 2001)
    psd = DensityField(g, np.ones(g.n_points))
    assert moment_F(1, psd) == pytest.approx(0.5, rel=1e-5)
    with pytest.raises(ValidationError):
      moment_F(1, DensityField(Grid1D(0.0, 1.0, 3), np.ones(3)))
