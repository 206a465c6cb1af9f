import os
import sys

# single-threaded BLAS before numpy loads anywhere, so runs are reproducible
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter):
    # acceptance checklist lines survive output capture
    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "REPORT", None):
        terminalreporter.section("acceptance checklist")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
