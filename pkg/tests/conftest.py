from datetime import date

import pytest
from hypothesis import HealthCheck, settings

from epf.ingest import SyntheticConfig, ZoneSpec, generate_synthetic

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_market():
    """Two coupled zones, 70 days."""
    zones = (ZoneSpec("BE", spike_prob=0.01, spike_scale=40), ZoneSpec("DE-LU", spike_prob=0.01, spike_scale=40))
    return generate_synthetic(SyntheticConfig(seed=5, n_days=70, zones=zones, start=date(2023, 1, 2)))


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record an acceptance criterion outcome; the summary prints one line per criterion."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        store[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        title, ok, detail = store[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
