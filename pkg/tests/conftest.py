import numpy as np
import pytest

from rnslinalg.params import ELL_160, ELL_202, ELL_217, ELL_320
from rnslinalg.rns import build_basis


@pytest.fixture(scope="session")
def basis217():
    return build_basis(ELL_217, r=492)


@pytest.fixture(scope="session")
def basis217f():
    return build_basis(ELL_217, r=492, k=52, flavor="float")


@pytest.fixture(scope="session")
def ells():
    return {"160": ELL_160, "202": ELL_202, "217": ELL_217, "320": ELL_320}


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)



def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
