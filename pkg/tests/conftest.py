import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from unlearnlab.config import ExperimentConfig  # noqa: E402


@pytest.fixture(scope="session")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def default_bundle(default_cfg):
    return default_cfg.dataset.build()


@pytest.fixture(scope="session")
def original_seed0(default_cfg, default_bundle):
    from unlearnlab import baselines

    return baselines.pretrain(default_bundle, default_cfg.pretrain, 0).params


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in RESULTS:
        terminalreporter.write_line(line)
