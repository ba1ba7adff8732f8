"""Firm-year panel data model.

A :class:`PanelData` holds one row per (firm, year) observation, sorted by
firm and year, together with the output/material price indices. All
columns are stored as read-only numpy arrays; logs are computed on demand.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple

import numpy as np
import pandas as pd

__all__ = [
    "PanelValidationError",
    "Observation",
    "PriceSeries",
    "PanelData",
    "LagPair",
    "LagPairs",
    "load_panel",
    "write_panel",
    "load_prices",
    "write_prices",
    "lag_align",
    "lag_index",
    "log_share",
]

REQUIRED_COLUMNS = ("firm_id", "year", "Y", "K", "L", "M", "G", "region", "industry")
NUMERIC_COLUMNS = ("Y", "K", "L", "M", "G")


class PanelValidationError(ValueError):
    """Raised when an input panel violates the data contract."""

    def __init__(self, message, row=None, field=None):
        super().__init__(message)
        self.row = row
        self.field = field


class Observation(NamedTuple):
    firm_id: object
    year: int
    Y: float
    K: float
    L: float
    M: float
    G: float
    region: str
    industry: str
    omega_true: float | None = None


@dataclass(frozen=True)
class PriceSeries:
    """Output and material price indices by year.

    Missing years default to unit prices.
    """

    P_Y: Mapping[int, float] = field(default_factory=dict)
    P_M: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, series in (("P_Y", self.P_Y), ("P_M", self.P_M)):
            for year, value in series.items():
                if not (np.isfinite(value) and value > 0):
                    raise PanelValidationError(
                        f"{name} for year {year} must be strictly positive, got {value}",
                        field=name,
                    )

    @classmethod
    def constant(cls, years, p_y=1.0, p_m=1.0):
        years = [int(y) for y in years]
        return cls({y: float(p_y) for y in years}, {y: float(p_m) for y in years})

    def output_price(self, years) -> np.ndarray:
        return np.array([self.P_Y.get(int(y), 1.0) for y in np.atleast_1d(years)], dtype=float)

    def material_price(self, years) -> np.ndarray:
        return np.array([self.P_M.get(int(y), 1.0) for y in np.atleast_1d(years)], dtype=float)

    def log_ratio(self, years) -> np.ndarray:
        """ln(P_Y / P_M) for each year in ``years``."""
        years = np.asarray(years)
        uniq, inv = np.unique(years, return_inverse=True)
        vals = np.log(self.output_price(uniq)) - np.log(self.material_price(uniq))
        return vals[inv]


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class PanelData:
    """Immutable, validated firm-year panel.

    Parameters
    ----------
    frame : pandas.DataFrame
        Must contain ``firm_id, year, Y, K, L, M, G, region, industry``;
        optionally ``omega_true`` and any number of extra group-label
        columns (e.g. ``city``, ``subindustry``).
    prices : PriceSeries, optional
        Defaults to unit prices for every year.
    check_g_bounds : bool, optional
        Enforce ``0 <= G <= 1``. Defaults to True unless the panel carries
        ``omega_true`` (simulated data have an unconstrained G).
    """

    def __init__(self, frame: pd.DataFrame, prices: PriceSeries | None = None,
                 check_g_bounds: bool | None = None):
        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            raise PanelValidationError(f"missing required column(s): {', '.join(missing)}",
                                       field=missing[0])
        frame = frame.reset_index(drop=True)
        has_omega = "omega_true" in frame.columns and frame["omega_true"].notna().any()
        if check_g_bounds is None:
            check_g_bounds = not has_omega
        _validate(frame, check_g_bounds)

        order = np.lexsort((frame["year"].to_numpy(), _sort_key(frame["firm_id"])))
        frame = frame.iloc[order].reset_index(drop=True)

        self.firm_id = _readonly(frame["firm_id"].to_numpy())
        self.year = _readonly(frame["year"].to_numpy(dtype=np.int64))
        self.Y = _readonly(frame["Y"].to_numpy(dtype=float))
        self.K = _readonly(frame["K"].to_numpy(dtype=float))
        self.L = _readonly(frame["L"].to_numpy(dtype=float))
        self.M = _readonly(frame["M"].to_numpy(dtype=float))
        self.G = _readonly(frame["G"].to_numpy(dtype=float))
        self.omega_true = (_readonly(frame["omega_true"].to_numpy(dtype=float))
                           if has_omega else None)
        label_cols = ["region", "industry"] + [
            c for c in frame.columns
            if c not in REQUIRED_COLUMNS and c != "omega_true"
        ]
        self.labels = {c: _readonly(frame[c].astype(str).to_numpy()) for c in label_cols}
        self.prices = prices if prices is not None else PriceSeries.constant(np.unique(self.year))
        self.check_g_bounds = check_g_bounds
        codes, uniq = pd.factorize(self.firm_id, sort=False)
        self.firm_code = _readonly(codes)
        self.firms = _readonly(uniq)
        self._index = None

    # -- basic container protocol ------------------------------------------------
    def __len__(self):
        return len(self.year)

    def __eq__(self, other):
        if not isinstance(other, PanelData) or len(self) != len(other):
            return False
        same = (
            np.array_equal(self.firm_id.astype(str), other.firm_id.astype(str))
            and np.array_equal(self.year, other.year)
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in NUMERIC_COLUMNS)
            and set(self.labels) == set(other.labels)
            and all(np.array_equal(self.labels[c], other.labels[c]) for c in self.labels)
        )
        if not same:
            return False
        if (self.omega_true is None) != (other.omega_true is None):
            return False
        if self.omega_true is not None and not np.array_equal(self.omega_true, other.omega_true):
            return False
        return True

    __hash__ = None

    def __repr__(self):
        return (f"PanelData(n_obs={len(self)}, n_firms={self.n_firms}, "
                f"years={self.year_range})")

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    @property
    def year_range(self) -> tuple[int, int]:
        return int(self.year.min()), int(self.year.max())

    def observation(self, row: int) -> Observation:
        return Observation(
            self.firm_id[row], int(self.year[row]), self.Y[row], self.K[row], self.L[row],
            self.M[row], self.G[row], self.labels["region"][row], self.labels["industry"][row],
            None if self.omega_true is None else float(self.omega_true[row]),
        )

    def __iter__(self) -> Iterator[Observation]:
        for r in range(len(self)):
            yield self.observation(r)

    def row_of(self, firm_id, year) -> int:
        """Row index of (firm_id, year); KeyError if absent."""
        if self._index is None:
            self._index = {(f, int(y)): r for r, (f, y) in enumerate(zip(self.firm_id, self.year))}
        return self._index[(firm_id, int(year))]

    # -- logs ----------------------------------------------------------------------
    @property
    def y(self):
        return np.log(self.Y)

    @property
    def k(self):
        return np.log(self.K)

    @property
    def l(self):  # noqa: E743
        return np.log(self.L)

    @property
    def m(self):
        return np.log(self.M)

    def log_share(self) -> np.ndarray:
        """ln V for every row, V = P_M M / (P_Y Y)."""
        return (np.log(self.prices.material_price(self.year)) + self.m
                - np.log(self.prices.output_price(self.year)) - self.y)

    # -- derived panels ------------------------------------------------------------
    def to_frame(self) -> pd.DataFrame:
        data = {"firm_id": self.firm_id, "year": self.year}
        for c in NUMERIC_COLUMNS:
            data[c] = getattr(self, c)
        data["region"] = self.labels["region"]
        data["industry"] = self.labels["industry"]
        if self.omega_true is not None:
            data["omega_true"] = self.omega_true
        for c, v in self.labels.items():
            if c not in ("region", "industry"):
                data[c] = v
        return pd.DataFrame(data)

    def subset(self, rows) -> "PanelData":
        """Panel restricted to ``rows`` (boolean mask or indices)."""
        rows = np.asarray(rows)
        frame = self.to_frame()
        frame = frame[rows] if rows.dtype == bool else frame.iloc[rows]
        return PanelData(frame, prices=self.prices, check_g_bounds=self.check_g_bounds)

    def drop_firms(self, firm_ids) -> "PanelData":
        keep = ~np.isin(self.firm_id, np.asarray(list(firm_ids), dtype=self.firm_id.dtype))
        return self.subset(keep)

    def replace(self, **columns) -> "PanelData":
        """Copy of the panel with some numeric columns replaced."""
        frame = self.to_frame()
        for name, values in columns.items():
            frame[name] = values
        return PanelData(frame, prices=self.prices, check_g_bounds=self.check_g_bounds)


def _sort_key(ids: pd.Series) -> np.ndarray:
    try:
        return ids.to_numpy(dtype=float)
    except (TypeError, ValueError):
        return pd.factorize(ids.astype(str), sort=True)[0]


def _validate(frame: pd.DataFrame, check_g_bounds: bool):
    for col in NUMERIC_COLUMNS:
        try:
            values = pd.to_numeric(frame[col], errors="raise").to_numpy(dtype=float)
        except (TypeError, ValueError) as exc:
            raise PanelValidationError(f"column {col} is not numeric: {exc}", field=col) from exc
        bad = ~np.isfinite(values)
        if col != "G":
            bad |= values <= 0
        elif check_g_bounds:
            bad |= (values < 0) | (values > 1)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            rule = "in [0, 1]" if col == "G" and check_g_bounds else (
                "finite" if col == "G" else "strictly positive")
            raise PanelValidationError(
                f"row {row}: field {col} must be {rule}, got {values[row]!r}", row=row, field=col)
    years = pd.to_numeric(frame["year"], errors="coerce")
    if years.isna().any() or (years != np.round(years)).any():
        row = int(np.flatnonzero(years.isna() | (years != np.round(years)))[0])
        raise PanelValidationError(f"row {row}: field year must be an integer", row=row,
                                   field="year")
    dup = frame.duplicated(subset=["firm_id", "year"], keep="first").to_numpy()
    if dup.any():
        row = int(np.flatnonzero(dup)[0])
        raise PanelValidationError(
            f"row {row}: duplicate (firm_id, year) = ({frame['firm_id'].iloc[row]}, "
            f"{frame['year'].iloc[row]})", row=row, field="firm_id")


def load_panel(source, schema: Mapping[str, str] | None = None,
               prices: PriceSeries | None = None,
               check_g_bounds: bool | None = None) -> PanelData:
    """Read a CSV panel.

    Parameters
    ----------
    source : path or text stream
    schema : mapping, optional
        Canonical column name -> column name in the file.
    prices : PriceSeries, optional
    check_g_bounds : bool, optional
        See :class:`PanelData`.
    """
    frame = pd.read_csv(source, dtype={"region": str, "industry": str}, keep_default_na=True,
                        float_precision="round_trip")
    if schema:
        frame = frame.rename(columns={v: k for k, v in schema.items()})
    if "omega_true" in frame.columns and frame["omega_true"].isna().all():
        frame = frame.drop(columns="omega_true")
    for c in frame.columns:
        if c not in NUMERIC_COLUMNS + ("firm_id", "year", "omega_true"):
            frame[c] = frame[c].fillna("").astype(str)
    return PanelData(frame, prices=prices, check_g_bounds=check_g_bounds)


def write_panel(panel: PanelData, dest) -> None:
    """Write ``panel`` as CSV with full float precision."""
    frame = panel.to_frame()
    if isinstance(dest, (str, os.PathLike)):
        frame.to_csv(dest, index=False, float_format="%.17g")
    else:
        dest.write(frame.to_csv(index=False, float_format="%.17g"))


def load_prices(source) -> PriceSeries:
    frame = pd.read_csv(source, float_precision="round_trip")
    missing = [c for c in ("year", "P_Y", "P_M") if c not in frame.columns]
    if missing:
        raise PanelValidationError(f"price file missing column(s): {', '.join(missing)}",
                                   field=missing[0])
    years = frame["year"].astype(int)
    return PriceSeries(dict(zip(years, frame["P_Y"].astype(float))),
                       dict(zip(years, frame["P_M"].astype(float))))


def write_prices(prices: PriceSeries, dest) -> None:
    years = sorted(set(prices.P_Y) | set(prices.P_M))
    frame = pd.DataFrame({"year": years,
                          "P_Y": prices.output_price(years),
                          "P_M": prices.material_price(years)})
    if isinstance(dest, (str, os.PathLike)):
        frame.to_csv(dest, index=False, float_format="%.17g")
    else:
        dest.write(frame.to_csv(index=False, float_format="%.17g"))


class LagPair(NamedTuple):
    current: int
    lagged: int


@dataclass(frozen=True)
class LagPairs:
    """Row indices of (current, same firm one year earlier) pairs."""

    current: np.ndarray
    lagged: np.ndarray

    def __len__(self):
        return len(self.current)

    def __iter__(self) -> Iterator[LagPair]:
        for c, p in zip(self.current, self.lagged):
            yield LagPair(int(c), int(p))


def lag_index(panel: PanelData, k: int = 1) -> np.ndarray:
    """For each row, the row of the same firm ``k`` years earlier, else -1."""
    n = len(panel)
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or k <= 0:
        if k == 0:
            return np.arange(n)
        return out
    # rows are sorted by (firm, year); search within firm blocks
    code = panel.firm_code.astype(np.int64)
    key = code * (10 ** 6) + (panel.year - panel.year.min())
    target = code * (10 ** 6) + (panel.year - k - panel.year.min())
    pos = np.searchsorted(key, target)
    pos_c = np.minimum(pos, n - 1)
    hit = (pos < n) & (key[pos_c] == target)
    out[hit] = pos_c[hit]
    return out


def lag_align(panel: PanelData) -> LagPairs:
    """Pairs of rows (t, t-1) for the same firm; gaps produce no pair."""
    lag = lag_index(panel, 1)
    cur = np.flatnonzero(lag >= 0)
    return LagPairs(_readonly(cur), _readonly(lag[cur]))


def log_share(obs: Observation, prices: PriceSeries) -> tuple[float, float]:
    """Nominal material share of revenue and its log for one observation."""
    p_m = prices.material_price(obs.year)[0]
    p_y = prices.output_price(obs.year)[0]
    V = p_m * obs.M / (p_y * obs.Y)
    return float(V), float(np.log(V))
