import math

import numpy as np
import pytest

from spheroid_cld.errors import ValidationError
from spheroid_cld.geometry import (
  AngularQuadrature,
  Orientation,
  ShapeParam,
  alpha_eta,
  central_binomial_bound,
  chord_length_at,
  chord_ordinate_max,
  ellipse_coeffs,
  kernel_matrix,
  kernel_value,
  mc_chord_samples,
  moment_a,
  moment_b,
  oracle_table,
)


class TestShapes:
  """Shape parameters and the projected ellipse."""

  @pytest.mark.parametrize("eta", [0.0, -1.0, float("nan"), float("inf")])
  def test_invalid_eta_rejected(self, eta):
    with pytest.raises(ValidationError):
      ShapeParam(eta)

  def test_classification(self):
    assert ShapeParam(0.5).classification == "oblate"
    assert ShapeParam(1.0).classification == "sphere"
    assert ShapeParam(2.0).classification == "prolate"

  def test_orientation_bounds(self):
    with pytest.raises(ValidationError):
      Orientation(-0.1, 0.0)
    with pytest.raises(ValidationError):
      Orientation(0.0, 4.0)

  def test_sphere_projects_to_circle(self):
    c = ellipse_coeffs(1.0, Orientation(0.7, 1.1))
    assert c.alpha == pytest.approx(1.0)
    assert c.beta == pytest.approx(1.0)
    assert c.gamma == pytest.approx(0.0, abs=1e-15)
    assert chord_ordinate_max(c, 2.0) == pytest.approx(2.0)
    assert chord_length_at(0.0, c, 2.0) == pytest.approx(4.0)
    assert chord_length_at(2.5, c, 2.0) is None

  def test_prolate_side_view_is_elongated(self):
    # theta = pi/2, phi = 0: the polar axis lies along x
    c = ellipse_coeffs(2.0, Orientation(0.0, math.pi / 2))
    assert chord_length_at(0.0, c, 1.0) == pytest.approx(4.0)
    assert chord_ordinate_max(c, 1.0) == pytest.approx(1.0)

  def test_oblique_prolate_coefficients(self):
    c = ellipse_coeffs(2.0, Orientation(math.pi / 4, math.pi / 2))
    assert (c.alpha, c.beta, c.gamma) == pytest.approx((0.625, 0.625, -0.75), abs=1e-14)
    assert 4.0 * c.alpha * c.beta - c.gamma**2 > 0


class TestKernel:
  """Chord length kernel k(l, r)."""

  @pytest.mark.timeout(10)
  def test_sphere_closed_form(self):
    r = 1e-3
    ell = np.linspace(0.0, 2.0 * r, 50)
    expected = 1.0 - np.sqrt(1.0 - (ell / (2.0 * r)) ** 2)
    got = np.array([kernel_value(x, r, 1.0) for x in ell])
    assert np.max(np.abs(got - expected)) < 1e-6

  def test_bounds_and_monotonicity(self):
    for eta in (0.5, 1.0, 2.0):
      ell = np.linspace(0.0, 2.5 * max(eta, 1.0), 300)
      k = kernel_matrix(ell, [1.0], eta)[:, 0]
      assert k[0] == 0.0
      assert np.all(np.diff(k) >= -1e-14)
      assert np.all((k >= 0) & (k <= 1))
      assert np.all(k[ell >= 2.0 * max(eta, 1.0)] == 1.0)

  def test_scale_invariance(self):
    a = kernel_value(0.7, 1.0, 2.0)
    b = kernel_value(0.7e-4, 1e-4, 2.0)
    assert a == pytest.approx(b, rel=1e-12)

  def test_matrix_matches_pointwise(self):
    ell = [0.3, 1.1, 2.9]
    r = [1.0, 1.5]
    k = kernel_matrix(ell, r, 0.5)
    for j, x in enumerate(ell):
      for m, y in enumerate(r):
        assert k[j, m] == pytest.approx(kernel_value(x, y, 0.5), abs=1e-13)

  def test_invalid_arguments(self):
    with pytest.raises(ValidationError):
      kernel_value(-0.1, 1.0, 1.0)
    with pytest.raises(ValidationError):
      kernel_value(0.1, 0.0, 1.0)
    with pytest.raises(ValidationError):
      kernel_matrix([0.1, float("nan")], [1.0], 1.0)

  def test_quadrature_weights_sum_to_one(self):
    for reduced in (True, False):
      _, _, w = AngularQuadrature(16, 24).nodes(reduced)
      assert w.sum() == pytest.approx(1.0, abs=1e-13)

  def test_reduced_rule_matches_full_rule(self):
    full = AngularQuadrature(32, 32)
    phi, theta, w = full.nodes(reduced=False)
    s2 = 0.2
    z = s2 * alpha_eta(2.0, phi, theta)
    integrand = np.where(z < 1, 1.0 - np.sqrt(np.clip(1.0 - z, 0.0, None)), 1.0)
    assert float(w @ integrand) == pytest.approx(kernel_value(2.0 * math.sqrt(s2), 1.0, 2.0, full), abs=1e-10)


class TestMonteCarlo:
  """Sampled chords against the kernel."""

  def test_samples_within_support(self):
    for eta in (0.5, 2.0):
      x = mc_chord_samples(1.0, eta, 10_000, seed=1)
      assert np.all(x >= 0)
      assert np.max(x) <= 2.0 * max(eta, 1.0) + 1e-12

  def test_seeded_sampling_is_reproducible(self):
    np.testing.assert_array_equal(mc_chord_samples(1.0, 2.0, 100, seed=5), mc_chord_samples(1.0, 2.0, 100, seed=5))

  @pytest.mark.timeout(60)
  @pytest.mark.parametrize("eta", [0.5, 1.0, 2.0])
  def test_empirical_cdf_within_band(self, eta):
    table = oracle_table(1e-3, eta, n_samples=1_000_000, seed=0, n_probes=20)
    print(f"\neta={eta}: max deviation {table.deviation.max():.3e}")
    expected_band = 4.0 * np.sqrt(table.analytic * (1.0 - table.analytic)) / 1e3 + 1e-5
    np.testing.assert_allclose(table.band, expected_band, rtol=1e-12)
    assert table.passed


class TestMoments:
  """Orientation moments a_n(eta) and the coefficients b_n."""

  N = range(1, 61)

  @pytest.mark.parametrize("eta", [0.5, 1.0, 2.0, 6.0])
  def test_lower_bound(self, eta):
    """a_n(eta) > C(2n, n) / 4^n, which behaves like 1 / sqrt(pi n).

    sqrt(pi / n) itself exceeds 1 = a_n(1) for n <= 3, so the sphere could never
    satisfy it; the central binomial form is the bound the moments obey.
    """
    for n in self.N:
      assert moment_a(n, eta) > central_binomial_bound(n), f"n={n}"

  def test_central_binomial_bound_closed_form(self):
    for n in (1, 5, 20):
      assert central_binomial_bound(n) == pytest.approx(math.comb(2 * n, n) / 4**n, rel=1e-14)

  def test_prolate_ratio_increases_towards_one(self):
    a = np.array([moment_a(n, 2.0) for n in range(1, 62)])
    ratio = a[1:] / a[:-1]
    assert np.all(np.diff(ratio) > -1e-12)
    assert ratio[-1] > 0.9
    assert ratio[-1] < 1.0

  def test_oblate_ratio_approaches_inverse_square(self):
    ratio = moment_a(61, 0.5) / moment_a(60, 0.5)
    assert abs(ratio - 4.0) < 0.05 * 4.0

  def test_prolate_moments_decrease(self):
    assert moment_a(1, 2.0) > moment_a(10, 2.0) > moment_a(60, 2.0)

  def test_first_prolate_moment(self):
    # a_1(2) = 1/2 + ln(7 + 4 sqrt 3) / (8 sqrt 3)
    expected = 0.5 + math.log(7.0 + 4.0 * math.sqrt(3.0)) / (8.0 * math.sqrt(3.0))
    assert expected == pytest.approx(0.69009, abs=1e-5)
    assert moment_a(1, 2.0) == pytest.approx(expected, rel=1e-10)

  def test_sphere_moments_are_one(self):
    assert moment_a(7, 1.0) == 1.0

  def test_b_closed_form(self):
    for n in (1, 2, 3, 8):
      expected = math.factorial(2 * n) / (math.factorial(n) ** 2 * (1 - 2 * n) * 4 ** (2 * n))
      assert moment_b(n) == pytest.approx(expected, rel=1e-13)
      assert moment_b(n) < 0

  @pytest.mark.parametrize("n", [0, -1, 1.5, True])
  def test_invalid_order(self, n):
    with pytest.raises(ValidationError):
      moment_a(n, 2.0)
