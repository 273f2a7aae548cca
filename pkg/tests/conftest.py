import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scrollmat.imaging import Raster

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _ACCEPTANCE.append((props["criterion"], report.outcome, props.get("detail", ""), report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail, duration in sorted(_ACCEPTANCE):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({duration:.1f}s)  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def solid(h, w, rgb, source_id=""):
    px = np.empty((h, w, 3), dtype=np.uint8)
    px[...] = rgb
    return Raster(px, source_id)
