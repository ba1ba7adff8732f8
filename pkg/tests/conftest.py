import numpy as np
import pandas as pd
import pytest

from prodspill.dgp import DgpConfig, simulate_panel
from prodspill.panel import PanelData

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sim():
    """A small linear-DGP panel with its true effects."""
    return simulate_panel(DgpConfig(n=60, T=8, seed=11))


@pytest.fixture(scope="session")
def sim_panel(sim):
    return sim[0]


def make_frame(rows):
    """Panel frame from (firm, year, region, industry) tuples with filler numbers."""
    rng = np.random.default_rng(0)
    out = []
    for firm, year, region, industry in rows:
        out.append({"firm_id": firm, "year": year, "Y": rng.uniform(50, 100),
                    "K": rng.uniform(5, 20), "L": rng.uniform(1, 9),
                    "M": rng.uniform(10, 40), "G": rng.uniform(0, 1),
                    "region": region, "industry": industry})
    return pd.DataFrame(out)


@pytest.fixture
def tiny_panel():
    """Unbalanced four-firm panel with a gap (firm 3 misses year 2)."""
    rows = [(1, 1, "a", "x"), (1, 2, "a", "x"), (1, 3, "a", "x"),
            (2, 1, "a", "x"), (2, 2, "a", "x"), (2, 3, "a", "y"),
            (3, 1, "a", "x"), (3, 3, "a", "x"),
            (4, 2, "b", "x"), (4, 3, "b", "x")]
    return PanelData(make_frame(rows))
