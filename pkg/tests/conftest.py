import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_kernel(rng, n_s, n_x, n_y, sparsity=0.0):
    """A random stochastic kernel[s, x, s', y], with entries zeroed at random."""
    k = rng.random((n_s, n_x, n_s, n_y))
    if sparsity:
        k *= rng.random(k.shape) >= sparsity
    for s in range(n_s):
        for x in range(n_x):
            if k[s, x].sum() == 0:
                k[s, x, rng.integers(n_s), rng.integers(n_y)] = 1.0
    return k / k.sum(axis=(2, 3), keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance summary: one PASS/FAIL line per criterion ---------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    failed = report.failed or _ACCEPTANCE.get(key, {}).get("failed", False)
    if report.when == "call" or report.failed:
        _ACCEPTANCE[key] = {"failed": failed, **props}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[key]
        verdict = "FAIL" if entry["failed"] else "PASS"
        detail = entry.get("measured", "")
        terminalreporter.write_line(f"criterion {key}: {verdict}  {entry.get('title', '')}  [{detail}]")
