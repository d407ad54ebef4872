import os
from importlib import resources

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from subdtune.mesh import ControlMesh, load_mesh

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = resources.files("subdtune") / "data"


def data_path(name):
    return str(DATA / name)


@pytest.fixture(scope="session")
def symmetric_mesh():
    return load_mesh(data_path("symmetric_plate.obj"))


@pytest.fixture(scope="session")
def asymmetric_mesh():
    return load_mesh(data_path("asymmetric_plate.obj"))


def ring_mesh(v, n_rings=4, jitter=0.0, lift=0.0, seed=0):
    """Closed-fan mesh with one valence-``v`` vertex and enough rings for a 3-neighbourhood."""
    from subdtune.mesh import star_mesh
    m = star_mesh(v, rings=n_rings, radius=float(n_rings))
    rng = np.random.default_rng(seed)
    V = m.vertices.copy()
    V[:, :2] += jitter * rng.standard_normal((len(V), 2))
    V[:, 2] += lift * rng.standard_normal(len(V))
    return ControlMesh(V, m.faces)


ACCEPTANCE_LINES = []


def record(number, ok, detail):
    """Log one acceptance line; the lines are repeated in the terminal summary."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
