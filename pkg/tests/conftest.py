import pytest

from resources import CliResource, reference_operator
from spheroid_cld.units import WorkingUnits


@pytest.fixture(scope="session")
def units():
  return WorkingUnits()


@pytest.fixture(scope="session")
def prolate_operator():
  """eta=2 operator on the 200-point radius and chord grids; assembled once per session."""
  return reference_operator(eta=2.0)


@pytest.fixture(scope="session")
def small_operator():
  """Coarse sphere operator for tests that only need a valid operator."""
  return reference_operator(eta=1.0, n_radial=40, n_chord=50)


@pytest.fixture
def cli(tmp_path):
  """Function-scoped command-line runner writing into tmp_path/out."""
  resource = CliResource(tmp_path / "out").setup()
  try:
    yield resource
  finally:
    resource.cleanup()
