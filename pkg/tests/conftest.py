import numpy as np
import pytest
from hypothesis import settings

from igaest.hierarchy import DomainHierarchy

settings.register_profile("default", max_examples=100, deadline=None, derandomize=True)
settings.load_profile("default")

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES = []
# outcome per property test, consumed by the criterion-7 acceptance check
PROPERTY_OUTCOMES = {}


def uniform_hierarchy(level, dim=2, base=1, max_depth=12):
    """Hierarchy with every level up to ``level`` covering the whole domain."""
    h = DomainHierarchy((base,) * dim, max_depth=max_depth)
    for k in range(1, level + 1):
        h = h.insert_cells(k, np.ones(h.level_shape(k), dtype=bool), extend=False)
    return h


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so it can reuse the property-suite outcomes
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_properties.py" in report.nodeid:
        PROPERTY_OUTCOMES[report.nodeid.split("::")[-1]] = report.passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
