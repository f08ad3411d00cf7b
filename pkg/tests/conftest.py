import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

from trajgraph.encoder import ModelConfig  # noqa: E402
from trajgraph.scene import SynthConfig, synth_scene  # noqa: E402

MICRO = ModelConfig(hidden=16, heads=2, modes=2, t_obs=5, horizon=4, temporal_layers=2,
                    global_layers=2)
MICRO_SCENE = SynthConfig(n_agents=3, template="intersection", t_obs=5, horizon=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def micro_scene():
    return synth_scene(7, MICRO_SCENE)


def directional_check(f, x: np.ndarray, grad: np.ndarray, rng, h=1e-5, trials=3):
    """Max relative error between <grad, u> and the central difference of ``f`` along u."""
    worst = 0.0
    for _ in range(trials):
        u = rng.normal(size=x.shape)
        u /= np.linalg.norm(u)
        x0 = x.copy()
        x[...] = x0 + h * u
        fp = f()
        x[...] = x0 - h * u
        fm = f()
        x[...] = x0
        fd = (fp - fm) / (2 * h)
        an = float((grad * u).sum())
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-300))
    return worst


# one (name, passed, detail) row per acceptance criterion, printed after the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
