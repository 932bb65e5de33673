"""
Pytest plugin for timing the numerical tests and skipping the slow ones.
"""

from datetime import datetime

import pytest


class TimingPlugin:
  """Plugin to track test execution times."""

  def __init__(self, slow_threshold: float = 5.0):
    self.test_starts = {}
    self.durations = {}
    self.slow_threshold = slow_threshold
    self.suite_start = None
    self.suite_end = None

  def pytest_sessionstart(self, session):
    self.suite_start = datetime.now()
    print("\nTest Suite Started:", self.suite_start.strftime("%Y-%m-%d %H:%M:%S"))

  def pytest_runtest_logstart(self, nodeid, location):
    self.test_starts[nodeid] = datetime.now()

  @pytest.hookimpl(trylast=True)
  def pytest_runtest_logfinish(self, nodeid, location):
    test_start = self.test_starts.get(nodeid)
    if test_start:
      duration = datetime.now() - test_start
      self.durations[nodeid] = duration
      # Only the tests worth looking at
      if duration.total_seconds() >= self.slow_threshold:
        print(f"\nTest Timing - {nodeid}")
        print(f"  Duration: {duration}")

  def pytest_sessionfinish(self, session):
    self.suite_end = datetime.now()
    suite_duration = self.suite_end - self.suite_start
    print("\nTest Suite Completed:")
    print(f"  Started:  {self.suite_start.strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"  Finished: {self.suite_end.strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"  Duration: {suite_duration}")
    slowest = sorted(self.durations.items(), key=lambda kv: kv[1], reverse=True)[:5]
    if slowest:
      print("  Slowest:")
      for nodeid, duration in slowest:
        print(f"    {duration}  {nodeid}")
    print()


def pytest_addoption(parser):
  group = parser.getgroup("spheroid-cld")
  group.addoption("--skip-slow", action="store_true", default=False, help="Skip tests marked slow")
  group.addoption(
    "--timing-threshold", type=float, default=5.0, help="Print the duration of tests slower than this (seconds)"
  )


@pytest.hookimpl(tryfirst=True)
def pytest_configure(config):
  """Register the timing plugin and the slow marker."""
  config.addinivalue_line("markers", "slow: long-running reproduction of a reference experiment")
  timing_plugin = TimingPlugin(config.getoption("--timing-threshold"))
  config.pluginmanager.register(timing_plugin, "timing_plugin")


def pytest_collection_modifyitems(config, items):
  if not config.getoption("--skip-slow"):
    return
  skip = pytest.mark.skip(reason="--skip-slow given")
  for item in items:
    if "slow" in item.keywords:
      item.add_marker(skip)
