"""
Spheroid projection geometry and the chord length kernel.

A spheroid of equatorial radius r and polar semi-axis eta*r is dropped in a
uniformly random orientation (phi, theta); its shadow on the probe plane is the
ellipse alpha x^2 + gamma x y + beta y^2 = r^2 and the probe cuts it along a
horizontal line at a uniform ordinate. k(l, r) is the probability that the
resulting chord is shorter than l.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ValidationError

logger = logging.getLogger(__name__)

R_FLOOR = 1e-12

# Kernel tabulation is chunked so that one block holds at most this many
# (chord, radius, orientation) triples.
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class ShapeParam:
  """Aspect ratio eta of a spheroid (polar semi-axis over equatorial radius)."""

  eta: float

  def __post_init__(self):
    if not (isinstance(self.eta, (int, float)) and math.isfinite(self.eta) and self.eta > 0):
      raise ValidationError(f"Shape parameter eta must be a positive finite number, got {self.eta!r}")
    object.__setattr__(self, "eta", float(self.eta))

  @property
  def classification(self) -> str:
    if self.eta < 1.0:
      return "oblate"
    if self.eta > 1.0:
      return "prolate"
    return "sphere"

  @property
  def max_chord_factor(self) -> float:
    """Longest chord of a spheroid of radius r is 2 r max(eta, 1)."""
    return max(self.eta, 1.0)


def as_shape(eta) -> ShapeParam:
  return eta if isinstance(eta, ShapeParam) else ShapeParam(eta)


@dataclass(frozen=True)
class Orientation:
  phi: float
  theta: float

  def __post_init__(self):
    if not 0.0 <= self.phi <= 2.0 * math.pi:
      raise ValidationError(f"phi must lie in [0, 2pi], got {self.phi}")
    if not 0.0 <= self.theta <= math.pi:
      raise ValidationError(f"theta must lie in [0, pi], got {self.theta}")


@dataclass(frozen=True)
class EllipseCoeffs:
  """Coefficients of the projected ellipse alpha x^2 + gamma x y + beta y^2 = r^2."""

  alpha: float
  beta: float
  gamma: float

  def __post_init__(self):
    if self.alpha <= 0 or self.beta <= 0:
      raise ValidationError(f"Ellipse needs alpha, beta > 0, got ({self.alpha}, {self.beta})")
    if self.discriminant <= 0:
      raise ValidationError(f"Ellipse needs 4 alpha beta - gamma^2 > 0, got {self.discriminant}")

  @property
  def discriminant(self) -> float:
    return 4.0 * self.alpha * self.beta - self.gamma**2


def alpha_eta(eta: float, phi, theta):
  """alpha coefficient of the projected ellipse, vectorized over angles."""
  denom = np.cos(theta) ** 2 + eta**2 * np.sin(theta) ** 2
  return np.cos(phi) ** 2 / denom + np.sin(phi) ** 2


def ellipse_coeffs(eta, o: Orientation) -> EllipseCoeffs:
  eta = as_shape(eta).eta
  denom = math.cos(o.theta) ** 2 + eta**2 * math.sin(o.theta) ** 2
  alpha = math.cos(o.phi) ** 2 / denom + math.sin(o.phi) ** 2
  beta = math.sin(o.phi) ** 2 / denom + math.cos(o.phi) ** 2
  gamma = -(eta**2 - 1.0) * math.sin(o.theta) ** 2 * math.sin(2.0 * o.phi) / denom
  return EllipseCoeffs(alpha, beta, gamma)


def _check_radius(r: float, r_floor: float = R_FLOOR):
  if not math.isfinite(r):
    raise ValidationError(f"Radius must be finite, got {r}")
  if r <= r_floor:
    raise ValidationError(f"Radius must exceed {r_floor}, got {r}")


def chord_ordinate_max(coeffs: EllipseCoeffs, r: float) -> float:
  """Largest |y| at which a horizontal line still meets the ellipse."""
  _check_radius(r)
  return 2.0 * math.sqrt(coeffs.alpha) * r / math.sqrt(coeffs.discriminant)


def chord_length_at(y: float, coeffs: EllipseCoeffs, r: float) -> float | None:
  """Length of the horizontal chord at ordinate y, or None when the line misses the ellipse."""
  y_max = chord_ordinate_max(coeffs, r)
  if abs(y) > y_max:
    return None
  delta = coeffs.gamma**2 * y**2 - 4.0 * coeffs.alpha * (coeffs.beta * y**2 - r**2)
  return math.sqrt(max(delta, 0.0)) / coeffs.alpha


@dataclass(frozen=True)
class AngularQuadrature:
  """Gauss-Legendre tensor rule for the orientation measure sin(theta)/(4 pi) dphi dtheta.

  The reduced rule integrates over [0, pi/2]^2 and multiplies by 8, which is
  exact for integrands symmetric under phi -> pi - phi, phi -> phi + pi and
  theta -> pi - theta. The full rule tiles [0, 2pi] x [0, pi] with the same
  panel rule.
  """

  n_phi: int = 64
  n_theta: int = 64

  def __post_init__(self):
    for name in ("n_phi", "n_theta"):
      value = getattr(self, name)
      if int(value) != value or value < 1:
        raise ValidationError(f"Quadrature {name} must be a positive integer, got {value}")

  def nodes(self, reduced: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flattened (phi, theta, weight) arrays; weights sum to 1."""
    return _tensor_rule(int(self.n_phi), int(self.n_theta), reduced)

  def spec(self) -> dict:
    return {"n_phi": int(self.n_phi), "n_theta": int(self.n_theta)}


DEFAULT_QUADRATURE = AngularQuadrature()


def _panel(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
  x, w = leggauss(n)
  half = 0.5 * (hi - lo)
  return lo + half * (x + 1.0), half * w


@functools.lru_cache(maxsize=16)
def _tensor_rule(n_phi: int, n_theta: int, reduced: bool):
  quarter = 0.5 * math.pi
  phi_panels = [(0.0, quarter)] if reduced else [(k * quarter, (k + 1) * quarter) for k in range(4)]
  theta_panels = [(0.0, quarter)] if reduced else [(0.0, quarter), (quarter, math.pi)]
  phi = np.concatenate([_panel(n_phi, lo, hi)[0] for lo, hi in phi_panels])
  w_phi = np.concatenate([_panel(n_phi, lo, hi)[1] for lo, hi in phi_panels])
  theta = np.concatenate([_panel(n_theta, lo, hi)[0] for lo, hi in theta_panels])
  w_theta = np.concatenate([_panel(n_theta, lo, hi)[1] for lo, hi in theta_panels])
  factor = 8.0 if reduced else 1.0
  P, T = np.meshgrid(phi, theta, indexing="ij")
  W = factor * np.outer(w_phi, w_theta * np.sin(theta)) / (4.0 * math.pi)
  for arr in (P, T, W):
    arr.flags.writeable = False
  return P.ravel(), T.ravel(), W.ravel()


@functools.lru_cache(maxsize=32)
def _alpha_nodes(eta: float, n_phi: int, n_theta: int) -> tuple[np.ndarray, np.ndarray]:
  phi, theta, weights = _tensor_rule(n_phi, n_theta, True)
  alpha = alpha_eta(eta, phi, theta)
  alpha.flags.writeable = False
  return alpha, weights


def _kernel_from_ratio(s2: np.ndarray, alpha: np.ndarray, weights: np.ndarray) -> np.ndarray:
  """k as a function of s2 = (l / 2r)^2, by the stable form 1 - sqrt(1 - z) = z / (1 + sqrt(1 - z))."""
  flat = np.ascontiguousarray(s2, dtype=float).ravel()
  out = np.empty_like(flat)
  step = max(1, _CHUNK_ELEMENTS // alpha.size)
  for start in range(0, flat.size, step):
    z = flat[start : start + step, None] * alpha[None, :]
    inside = z < 1.0
    zc = np.where(inside, z, 0.0)
    integrand = np.where(inside, zc / (1.0 + np.sqrt(1.0 - zc)), 1.0)
    out[start : start + step] = integrand @ weights
  return np.clip(out, 0.0, 1.0).reshape(np.shape(s2))


def kernel_matrix(ell, r, eta, quad: AngularQuadrature = DEFAULT_QUADRATURE) -> np.ndarray:
  """Tabulate k(ell_j, r_m) for every chord length and radius; shape (len(ell), len(r))."""
  shape = as_shape(eta)
  ell = np.atleast_1d(np.asarray(ell, dtype=float))
  r = np.atleast_1d(np.asarray(r, dtype=float))
  if not (np.all(np.isfinite(ell)) and np.all(np.isfinite(r))):
    raise ValidationError("Kernel arguments must be finite")
  if np.any(ell < 0):
    raise ValidationError(f"Chord lengths must be nonnegative, got min {ell.min()}")
  if np.any(r <= R_FLOOR):
    raise ValidationError(f"Radii must exceed {R_FLOOR}, got min {r.min()}")
  alpha, weights = _alpha_nodes(shape.eta, int(quad.n_phi), int(quad.n_theta))
  logger.debug("Tabulating kernel eta=%g on %d x %d nodes", shape.eta, ell.size, r.size)
  s2 = (ell[:, None] / (2.0 * r[None, :])) ** 2
  k = _kernel_from_ratio(s2, alpha, weights)
  k[ell[:, None] >= 2.0 * r[None, :] * shape.max_chord_factor] = 1.0
  return k


def kernel_value(ell: float, r: float, eta, quad: AngularQuadrature = DEFAULT_QUADRATURE) -> float:
  """Probability that a randomly oriented spheroid of radius r yields a chord shorter than ell."""
  if not (math.isfinite(ell) and math.isfinite(r)):
    raise ValidationError(f"Kernel arguments must be finite, got ell={ell}, r={r}")
  _check_radius(r)
  if ell < 0:
    raise ValidationError(f"Chord length must be nonnegative, got {ell}")
  shape = as_shape(eta)
  if ell == 0.0:
    return 0.0
  if ell >= 2.0 * r * shape.max_chord_factor:
    return 1.0
  return float(kernel_matrix([ell], [r], shape, quad)[0, 0])


def _rng(seed):
  return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def mc_chord_samples(r: float, eta, n_samples: int, seed=None) -> np.ndarray:
  """Draw chord lengths by the sampling procedure: random orientation, then uniform ordinate."""
  _check_radius(r)
  shape = as_shape(eta)
  rng = _rng(seed)
  phi = rng.uniform(0.0, 2.0 * math.pi, n_samples)
  theta = np.arccos(1.0 - 2.0 * rng.uniform(0.0, 1.0, n_samples))
  denom = np.cos(theta) ** 2 + shape.eta**2 * np.sin(theta) ** 2
  alpha = np.cos(phi) ** 2 / denom + np.sin(phi) ** 2
  beta = np.sin(phi) ** 2 / denom + np.cos(phi) ** 2
  gamma = -(shape.eta**2 - 1.0) * np.sin(theta) ** 2 * np.sin(2.0 * phi) / denom
  y_max = 2.0 * np.sqrt(alpha) * r / np.sqrt(4.0 * alpha * beta - gamma**2)
  y = rng.uniform(-1.0, 1.0, n_samples) * y_max
  delta = gamma**2 * y**2 - 4.0 * alpha * (beta * y**2 - r**2)
  return np.sqrt(np.maximum(delta, 0.0)) / alpha


def mc_chord_sample(r: float, eta, seed=None) -> float:
  return float(mc_chord_samples(r, eta, 1, seed)[0])


@dataclass(frozen=True)
class OracleTable:
  """Empirical chord CDF against the kernel at probe lengths."""

  r: float
  eta: float
  n_samples: int
  ell: np.ndarray
  empirical: np.ndarray
  analytic: np.ndarray
  band: np.ndarray

  @property
  def deviation(self) -> np.ndarray:
    return np.abs(self.empirical - self.analytic)

  @property
  def passed(self) -> bool:
    return bool(np.all(self.deviation < self.band))


def oracle_table(
  r: float,
  eta,
  n_samples: int = 1_000_000,
  seed=0,
  n_probes: int = 20,
  quad: AngularQuadrature = DEFAULT_QUADRATURE,
  sigmas: float = 4.0,
  quad_tol: float = 1e-5,
) -> OracleTable:
  """Compare the Monte-Carlo chord CDF with kernel_value at n_probes interior lengths."""
  shape = as_shape(eta)
  samples = np.sort(mc_chord_samples(r, shape, n_samples, seed))
  ell = np.linspace(0.0, 2.0 * r * shape.max_chord_factor, n_probes + 2)[1:-1]
  empirical = np.searchsorted(samples, ell, side="left") / n_samples
  analytic = kernel_matrix(ell, [r], shape, quad)[:, 0]
  band = sigmas * np.sqrt(analytic * (1.0 - analytic) / n_samples) + quad_tol
  return OracleTable(r, shape.eta, n_samples, ell, empirical, analytic, band)


def _check_order(n: int):
  if isinstance(n, bool) or int(n) != n or n < 1:
    raise ValidationError(f"Moment order must be a positive integer, got {n!r}")


def moment_a(n: int, eta, quad: AngularQuadrature = DEFAULT_QUADRATURE) -> float:
  """a_n(eta): mean of alpha_eta^n over uniformly random orientations."""
  _check_order(n)
  shape = as_shape(eta)
  if shape.eta == 1.0:
    return 1.0
  alpha, weights = _alpha_nodes(shape.eta, int(quad.n_phi), int(quad.n_theta))
  return float(np.dot(weights, alpha ** int(n)))


def moment_b(n: int) -> float:
  """b_n = (2n)! / ((n!)^2 (1 - 2n) 4^(2n)), by its multiplicative recurrence."""
  _check_order(n)
  b = -0.125
  for k in range(1, int(n)):
    b *= (2 * k + 1) * (2 * k + 2) * (1 - 2 * k) / ((k + 1) ** 2 * (-1 - 2 * k) * 16.0)
  return b


def central_binomial_bound(n: int) -> float:
  """C(2n, n) / 4^n, the mean of sin^(2n) phi; a strict lower bound of a_n(eta)."""
  _check_order(n)
  c = 0.5
  for k in range(1, int(n)):
    c *= (2 * k + 1) / (2 * k + 2)
  return c
