import numpy as np
import pytest
from hypothesis import settings

from nsdem.scene import Body, Material, Scene, Wall

# first calls compile numba kernels, so per-example deadlines are meaningless
settings.register_profile("repo", deadline=None)
settings.load_profile("repo")

GLASS = Material("glass", 0.7, 0.0, 0.0, 2500.0)


def ball_on_floor(z=5e-3, R=5e-3, vel=(0.0, 0.0, 0.0), mu=0.7, dt=1e-4, gravity=-9.81, dim=3):
    mat = Material("glass", mu, 0.0, 0.0, 2500.0)
    up = (0.0,) * (dim - 1) + (1.0,)
    pos = (0.0,) * (dim - 1) + (z,)
    g = (0.0,) * (dim - 1) + (gravity,)
    return Scene(dimension=dim, bodies=(Body(mat, R, pos, tuple(vel[:dim]), dim),),
                 walls=(Wall(mat, up, 0.0),), gravity=g, dt=dt, materials=(mat,))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion in the terminal summary

ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
