import pytest

from ssk_edge.limit_laws import tw_table

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def small_tw():
    """Cheap TW_1 stand-in for plumbing tests (not for distributional claims)."""
    return tw_table(2, 2000, 3000, seed=0, enforce_minimums=False)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def default_tw(alpha, seed=0):
    """Full-size TW table (1e5 x 1e5), built once and cached like the experiment runner does."""
    from ssk_edge.experiments import ExperimentConfig
    from ssk_edge.experiments.config import TwOptions
    from ssk_edge.ensembles import EnsembleSpec
    from ssk_edge.experiments.summary import tw_reference_for
    cfg = ExperimentConfig("edge", EnsembleSpec(alpha=alpha, n=100), tw=TwOptions(seed=seed))
    return tw_reference_for(cfg)
