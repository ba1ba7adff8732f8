import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from prodspill.panel import (PanelData, PanelValidationError, PriceSeries, lag_align,
                             lag_index, load_panel, load_prices, log_share, write_panel,
                             write_prices)

from conftest import make_frame


def test_rows_sorted_by_firm_then_year():
    frame = make_frame([(2, 2, "a", "x"), (1, 3, "a", "x"), (2, 1, "a", "x"), (1, 1, "a", "x")])
    p = PanelData(frame)
    assert list(zip(p.firm_id, p.year)) == [(1, 1), (1, 3), (2, 1), (2, 2)]
    assert p.n_firms == 2 and p.year_range == (1, 3)


def test_arrays_are_read_only(tiny_panel):
    with pytest.raises(ValueError):
        tiny_panel.Y[0] = 1.0


@pytest.mark.parametrize("col,value,field", [
    ("Y", 0.0, "Y"), ("K", -1.0, "K"), ("M", np.nan, "M"), ("G", 1.5, "G"), ("L", np.inf, "L"),
])
def test_validation_names_row_and_field(col, value, field):
    frame = make_frame([(1, 1, "a", "x"), (1, 2, "a", "x")])
    frame.loc[1, col] = value
    with pytest.raises(PanelValidationError) as err:
        PanelData(frame)
    assert err.value.field == field and err.value.row == 1
    assert field in str(err.value)


def test_duplicate_and_missing_columns():
    frame = make_frame([(1, 1, "a", "x"), (1, 1, "a", "x")])
    with pytest.raises(PanelValidationError, match="duplicate"):
        PanelData(frame)
    with pytest.raises(PanelValidationError, match="missing required"):
        PanelData(frame.drop(columns="region"))


def test_simulated_panels_may_have_g_outside_unit_interval():
    frame = make_frame([(1, 1, "a", "x"), (1, 2, "a", "x")])
    frame["G"] = [-0.2, 1.3]
    frame["omega_true"] = [0.1, 0.2]
    assert PanelData(frame).omega_true is not None


def test_lag_alignment_respects_gaps(tiny_panel):
    pairs = {(tiny_panel.firm_id[c], tiny_panel.year[c]): (tiny_panel.firm_id[l],
                                                           tiny_panel.year[l])
             for c, l in lag_align(tiny_panel)}
    assert pairs == {(1, 2): (1, 1), (1, 3): (1, 2), (2, 2): (2, 1), (2, 3): (2, 2),
                     (4, 3): (4, 2)}
    idx2 = lag_index(tiny_panel, 2)
    r = tiny_panel.row_of(3, 3)
    assert idx2[r] == tiny_panel.row_of(3, 1)


def test_log_share_uses_prices(tiny_panel):
    prices = PriceSeries({1: 2.0, 2: 1.0, 3: 1.0}, {1: 0.5, 2: 1.0, 3: 1.0})
    p = PanelData(tiny_panel.to_frame(), prices=prices)
    obs = p.observation(0)
    V, lnV = log_share(obs, prices)
    assert V == pytest.approx(np.exp(lnV))
    assert lnV == pytest.approx(np.log(0.5 * obs.M / (2.0 * obs.Y)))
    assert p.log_share()[0] == pytest.approx(lnV)


def test_price_series_rejects_nonpositive():
    with pytest.raises(PanelValidationError):
        PriceSeries({1: 0.0}, {1: 1.0})


def test_csv_round_trip_keeps_extra_labels(tmp_path):
    frame = make_frame([(1, 1, "a", "x"), (1, 2, "a", "x"), (2, 1, "b", "y")])
    frame["city"] = ["c1", "c1", "c2"]
    p = PanelData(frame)
    write_panel(p, tmp_path / "p.csv")
    q = load_panel(tmp_path / "p.csv")
    assert q == p
    assert list(q.labels["city"]) == ["c1", "c1", "c2"]
    prices = PriceSeries({1: 1.1, 2: 1.2}, {1: 0.9, 2: 1.3})
    write_prices(prices, tmp_path / "prices.csv")
    back = load_prices(tmp_path / "prices.csv")
    assert back.output_price([2])[0] == 1.2 and back.material_price([1])[0] == 0.9


def test_schema_mapping_renames_columns():
    frame = make_frame([(1, 1, "a", "x"), (1, 2, "a", "x")]).rename(columns={"Y": "sales"})
    p = load_panel(io.StringIO(frame.to_csv(index=False)), schema={"Y": "sales"})
    assert np.allclose(p.Y, frame["sales"])


def test_subset_and_drop_firms(tiny_panel):
    q = tiny_panel.drop_firms([2, 4])
    assert set(q.firm_id) == {1, 3}
    assert len(tiny_panel.subset(tiny_panel.year == 3)) == 4


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.integers(2000, 2005)), min_size=1,
                max_size=25, unique=True),
       st.floats(0.01, 1e6))
def test_round_trip_any_unbalanced_panel(keys, scale):
    frame = make_frame([(f, y, "r", "i") for f, y in keys])
    frame["Y"] *= scale
    p = PanelData(frame)
    buf = io.StringIO()
    write_panel(p, buf)
    buf.seek(0)
    q = load_panel(buf)
    assert q == p
    # every lag pair is the same firm one year apart
    for c, l in lag_align(q):
        assert q.firm_id[c] == q.firm_id[l] and q.year[c] - q.year[l] == 1
