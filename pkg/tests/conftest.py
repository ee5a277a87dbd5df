import time

import pytest

ACCEPTANCE_LINES = []


def record(number, title, passed, detail=""):
    ACCEPTANCE_LINES.append((number, title, passed, detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  [{number}] {title}  {detail}")


class ModelCache:
    """Train each (kind, seed) model once per session."""

    def __init__(self):
        self._store = {}

    def get(self, kind, seed):
        from latentmorph.targets import eight_gaussians, sample_mixture
        from latentmorph.training import TrainConfig, baseline_config, train
        import numpy as np

        key = (kind, seed)
        if key not in self._store:
            data = sample_mixture(eight_gaussians(), 512, np.random.default_rng([seed, 3]))
            cfg = TrainConfig(seed=seed) if kind == "full" else baseline_config(seed=seed)
            t = time.perf_counter()
            ckpt = train(cfg, data).checkpoint
            self._store[key] = (ckpt, data, time.perf_counter() - t)
        return self._store[key]


@pytest.fixture(scope="session")
def models():
    return ModelCache()
