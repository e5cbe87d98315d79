import sys

import numpy as np
import pytest

from spincool.config import build_spin_system, load_molecule
from spincool.core import SpinSystem, nucleus


def hc_pair(j=140.0, t1_h=2.0, t1_c=20.0, shifts=(0.0, 0.0)) -> SpinSystem:
    return SpinSystem(
        (nucleus("H1", "H"), nucleus("C13", "C")),
        list(shifts),
        [[0.0, j], [j, 0.0]],
        [t1_h, t1_c],
        [t1_h / 3, t1_c / 3],
    )


def single_carbon(t1=10.0, t2=None, shift=0.0) -> SpinSystem:
    return SpinSystem((nucleus("C13", "C"),), [shift], [[0.0]], [t1], [t1 / 3 if t2 is None else t2])


def random_hermitian(rng, dim):
    """Random traceless Hermitian matrix."""
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (a + a.conj().T) / 2
    return h - np.trace(h) / dim * np.eye(dim)


def with_j(system: SpinSystem, a: str, b: str, value: float) -> SpinSystem:
    j = np.array(system.j_couplings)
    i, k = system.index(a), system.index(b)
    j[i, k] = j[k, i] = value
    return system.replace(j_couplings=j)


@pytest.fixture(scope="session")
def glycine():
    return build_spin_system(load_molecule("glycine"))


@pytest.fixture(scope="session")
def glutamate():
    return build_spin_system(load_molecule("glutamate"))


@pytest.fixture
def hc():
    return hc_pair()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
