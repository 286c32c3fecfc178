import numpy as np
import pytest

from growthfem.material import MaterialParams
from growthfem.mesh import build_annulus


@pytest.fixture(scope="session")
def small_mesh():
    return build_annulus(0.5, 1.0, 3, 12, 1)


@pytest.fixture(scope="session")
def paper_mesh():
    return build_annulus(0.5, 1.0, 12, 92, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_admissible(mesh, rng, scale=0.02, g=1.0):
    """Reference state scaled by a mild radial stretch plus noise; always non-inverted."""
    phi = mesh.reference_vector()
    return phi * (1.0 + 0.05 * (g - 1.0)) + scale * mesh.r_in * rng.uniform(-1, 1, phi.shape) / 5


MATERIAL_CASES = [
    (1.0, MaterialParams.from_ratio(0.1)),
    (1.3, MaterialParams.from_ratio(0.4)),
    (1.7, MaterialParams.from_ratio(1.0, K_g=3.0)),
]


# -- acceptance report --------------------------------------------------------
_CRITERIA: dict[int, list] = {}


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = ""
        if report.outcome == "failed" and report.longrepr is not None:
            lines = [ln for ln in str(report.longrepr).splitlines() if ln.startswith("E ")]
            detail = lines[0][1:].strip() if lines else ""
        _CRITERIA.setdefault(crit, []).append((report.outcome, detail))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_CRITERIA):
        outcomes = [o for o, _ in _CRITERIA[crit]]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        detail = next((d for o, d in _CRITERIA[crit] if o == "failed" and d), "")
        tr.write_line(f"criterion {crit:2d}: {status}" + (f"  ({detail[:150]})" if detail else ""))
