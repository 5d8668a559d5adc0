import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cbid.digest import DigestConfig, digest_stream
from cbid.ingest import SynthConfig, synth_generate

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_packets():
    cfg = SynthConfig(flow_count=80, size_max=200_000, seed=11)
    return list(synth_generate(cfg))


@pytest.fixture(scope="session")
def small_cfg():
    return DigestConfig(sections_j=64, interval_raw_budget=400_000, rotation_fp=0.99)


@pytest.fixture(scope="session")
def small_archive(small_packets, small_cfg):
    return digest_stream(small_packets, small_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
