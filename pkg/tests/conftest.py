"""Shared, cached surface setups (assembly at level 4 is the expensive part)."""

from functools import lru_cache

import pytest

from surfinfsup.assembly import assemble
from surfinfsup.geometry import compute_geometry
from surfinfsup.mesh import generate_surface


@lru_cache(maxsize=None)
def build(kind, level, params=None, ell=None):
    mesh = generate_surface(kind, params, level)
    geom = compute_geometry(mesh, ell)
    ops = assemble(mesh, geom, ell)
    return mesh, geom, ops


@pytest.fixture(scope="session")
def setup():
    return build


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
