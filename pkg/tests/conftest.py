import pytest

from gaitref.benchmark import BenchmarkConfig, RunCache

BENCH_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def bench_runs():
    """Synthetic benchmark runs shared by every test that needs trained models."""
    return RunCache(BenchmarkConfig())
