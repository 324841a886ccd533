import os
import sys

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line to the real stdout and return the outcome."""
    def _report(label: str, ok: bool, detail: str = "") -> bool:
        with capsys.disabled():
            sys.stdout.write(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}\n")
        return ok
    return _report
