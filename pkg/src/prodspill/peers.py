"""Peer-group weights and spatial lags.

Weights are stored as a sparse row-stochastic matrix over panel rows: row
``r`` holds the weights of observation (i, t) on its peers (j, t) in the
same year. Rows whose peer set is empty are flagged rather than stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .panel import PanelData, lag_index

__all__ = [
    "MissingPeerValueError",
    "PeerGrouping",
    "PeerWeights",
    "BidimensionalWeights",
    "build_weights",
    "build_weights_baseline",
    "build_weights_size",
    "build_weights_asymmetric",
    "build_weights_fdi_split",
    "spatial_lag",
]


class MissingPeerValueError(KeyError):
    """A weighted peer has no value in the series being lagged."""


@dataclass(frozen=True)
class PeerGrouping:
    """Which label columns define a firm's reference group.

    ``spatial`` names the location column (``region``, ``city``, ...).
    ``industry`` is ``None`` for the whole industry or the name of an
    industry-code column. Groups are the intersection of both labels and
    are recomputed every year.
    """

    spatial: str | None = "region"
    industry: str | None = None

    @classmethod
    def from_config(cls, spatial="region", industry="all"):
        return cls(spatial=spatial, industry=None if industry in (None, "all") else industry)

    def columns(self) -> list[str]:
        return [c for c in (self.spatial, self.industry) if c is not None]

    def group_codes(self, panel: PanelData, by_year: bool = True) -> np.ndarray:
        keys = [panel.labels[c] for c in self.columns()]
        if by_year:
            keys.append(panel.year.astype(str))
        if not keys:
            return np.zeros(len(panel), dtype=np.int64)
        frame = pd.DataFrame({str(i): k for i, k in enumerate(keys)})
        return frame.groupby(list(frame.columns), sort=True).ngroup().to_numpy()


class PeerWeights:
    """Sparse row-normalized peer weights over the rows of one panel.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix
        ``matrix[r, q]`` is the weight of row ``q`` in row ``r``'s peer average.
    empty : ndarray of bool
        True where the peer set is empty and the spatial lag is undefined.
    """

    def __init__(self, matrix, panel: PanelData | None = None):
        matrix = sp.csr_matrix(matrix, dtype=float)
        matrix.eliminate_zeros()
        matrix.sort_indices()
        self.matrix = matrix
        self.empty = np.diff(matrix.indptr) == 0
        self.panel = panel

    def __len__(self):
        return self.matrix.shape[0]

    def row(self, r: int) -> dict[int, float]:
        lo, hi = self.matrix.indptr[r], self.matrix.indptr[r + 1]
        return dict(zip(self.matrix.indices[lo:hi].tolist(), self.matrix.data[lo:hi].tolist()))

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def lag(self, series, renormalize: bool = False) -> np.ndarray:
        """Spatial lag of ``series`` for every row (NaN on empty rows).

        With ``renormalize`` the weights of peers whose value is NaN are
        dropped and the remaining weights rescaled to sum to one; otherwise
        any NaN peer value propagates.
        """
        x = np.asarray(series, dtype=float)
        out = np.full(len(self), np.nan)
        if not renormalize:
            with np.errstate(invalid="ignore"):
                out = self.matrix @ x
            out[self.empty] = np.nan
            return out
        ok = np.isfinite(x)
        mass = self.matrix @ ok.astype(float)
        total = self.matrix @ np.where(ok, x, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = total / mass
        out[(mass <= 0) | self.empty] = np.nan
        return out

    def coverage(self, series) -> np.ndarray:
        """Weight mass on peers with a finite value of ``series``."""
        ok = np.isfinite(np.asarray(series, dtype=float)).astype(float)
        return self.matrix @ ok

    def restrict(self, keep_rows) -> "PeerWeights":
        """Zero out weight rows not in ``keep_rows`` (columns untouched)."""
        keep = np.zeros(len(self), dtype=bool)
        keep[keep_rows] = True
        return PeerWeights(sp.diags(keep.astype(float)) @ self.matrix, self.panel)


@dataclass(frozen=True)
class BidimensionalWeights:
    """Peer weights split by the peers' G status (G = 0 vs G > 0)."""

    weights0: PeerWeights
    weights1: PeerWeights


def _uniform_blocks(groups: np.ndarray, eligible: np.ndarray | None = None,
                    mass: np.ndarray | None = None):
    """Row/col/value triplets for within-group weights, self excluded.

    ``eligible`` marks which rows may act as peers; ``mass`` gives peer
    weights before normalization (uniform when None).
    """
    n = len(groups)
    if eligible is None:
        eligible = np.ones(n, dtype=bool)
    if mass is None:
        mass = np.ones(n)
    order = np.argsort(groups, kind="stable")
    bounds = np.flatnonzero(np.diff(groups[order])) + 1
    rows, cols, vals = [], [], []
    for block in np.split(order, bounds):
        peers = block[eligible[block]]
        if len(block) < 2 or len(peers) == 0:
            continue
        r = np.repeat(block, len(peers))
        c = np.tile(peers, len(block))
        v = np.tile(mass[peers], len(block))
        off = r != c
        rows.append(r[off])
        cols.append(c[off])
        vals.append(v[off])
    if not rows:
        return sp.csr_matrix((n, n))
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    sums = np.asarray(mat.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv = np.where(sums > 0, 1.0 / sums, 0.0)
    return sp.diags(inv) @ mat


def build_weights_baseline(panel: PanelData, grouping: PeerGrouping | None = None) -> PeerWeights:
    """Uniform weights over same-group, same-year peers."""
    grouping = grouping or PeerGrouping()
    return PeerWeights(_uniform_blocks(grouping.group_codes(panel)), panel)


def build_weights_size(panel: PanelData, grouping: PeerGrouping | None = None) -> PeerWeights:
    """Weights proportional to the peers' labor L_jt."""
    grouping = grouping or PeerGrouping()
    L = np.asarray(panel.L, dtype=float)
    if not np.all(np.isfinite(L)) or np.any(L < 0):
        raise ValueError("size weights need finite, non-negative labor")
    groups = grouping.group_codes(panel)
    mat = _uniform_blocks(groups, mass=L)
    # a row with peers but zero peer labor normalizes to nothing
    n_peers = np.bincount(groups)[groups] - 1
    dead = (n_peers > 0) & (np.diff(sp.csr_matrix(mat).indptr) == 0)
    if dead.any():
        raise ValueError(f"all-zero peer labor in the group of row {int(np.flatnonzero(dead)[0])}")
    return PeerWeights(mat, panel)


def build_weights_asymmetric(panel: PanelData, grouping: PeerGrouping | None,
                             omega, rank_lag: int = 1) -> PeerWeights:
    """Uniform weights over strictly more productive peers.

    The row for (i, t) ranks peers by productivity ``rank_lag`` years before
    t, so that when the row of year t-1 enters the productivity process at
    t the ranking is on t-2 productivity. Rows where the firm's own lagged
    productivity is unknown are empty; peers with unknown lagged
    productivity are skipped.
    """
    grouping = grouping or PeerGrouping()
    omega = np.asarray(omega, dtype=float)
    lag = lag_index(panel, rank_lag)
    prior = np.where(lag >= 0, omega[np.maximum(lag, 0)], np.nan)
    groups = grouping.group_codes(panel)
    n = len(panel)
    order = np.argsort(groups, kind="stable")
    bounds = np.flatnonzero(np.diff(groups[order])) + 1
    rows, cols = [], []
    for block in np.split(order, bounds):
        known = block[np.isfinite(prior[block])]
        if len(known) < 2:
            continue
        w = prior[known]
        better = w[None, :] > w[:, None]
        r, c = np.nonzero(better)
        rows.append(known[r])
        cols.append(known[c])
    if not rows:
        return PeerWeights(sp.csr_matrix((n, n)), panel)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    mat = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    sums = np.asarray(mat.sum(axis=1)).ravel()
    inv = np.where(sums > 0, 1.0 / np.maximum(sums, 1), 0.0)
    return PeerWeights(sp.diags(inv) @ mat, panel)


def build_weights_fdi_split(panel: PanelData,
                            grouping: PeerGrouping | None = None) -> BidimensionalWeights:
    """Separate uniform weights over domestic (G = 0) and foreign-invested (G > 0) peers.

    Observations with negative G (possible only in simulated panels) are
    not peers on either side.
    """
    grouping = grouping or PeerGrouping()
    groups = grouping.group_codes(panel)
    G = np.asarray(panel.G)
    w0 = PeerWeights(_uniform_blocks(groups, eligible=G == 0), panel)
    w1 = PeerWeights(_uniform_blocks(groups, eligible=G > 0), panel)
    return BidimensionalWeights(w0, w1)


def build_weights(panel: PanelData, grouping: PeerGrouping | None = None,
                  scheme: str = "baseline", omega=None):
    """Dispatch on ``scheme``: baseline, size, asymmetric or fdi_split."""
    if scheme == "baseline":
        return build_weights_baseline(panel, grouping)
    if scheme == "size":
        return build_weights_size(panel, grouping)
    if scheme == "asymmetric":
        if omega is None:
            raise ValueError("asymmetric weights need a productivity series")
        return build_weights_asymmetric(panel, grouping, omega)
    if scheme == "fdi_split":
        return build_weights_fdi_split(panel, grouping)
    raise ValueError(f"unknown peer scheme {scheme!r}")


def spatial_lag(weights: PeerWeights, series, at) -> float:
    """Weighted peer average of ``series`` for one observation.

    Parameters
    ----------
    weights : PeerWeights
    series : array_like or mapping
        Values aligned with panel rows (NaN = missing), or a mapping keyed
        by row index or by (firm_id, year).
    at : int or (firm_id, year)

    Returns
    -------
    float
        NaN when the peer set is empty.
    """
    if isinstance(at, tuple):
        if weights.panel is None:
            raise ValueError("weights carry no panel; pass a row index")
        at = weights.panel.row_of(*at)
    row = weights.row(at)
    if not row:
        return float("nan")
    total = 0.0
    for peer, w in row.items():
        value = _lookup(series, peer, weights.panel)
        if value is None or not np.isfinite(value):
            who = peer
            if weights.panel is not None:
                who = (weights.panel.firm_id[peer], int(weights.panel.year[peer]))
            raise MissingPeerValueError(f"series has no value for peer {who}")
        total += w * value
    return total


def _lookup(series, row, panel):
    if isinstance(series, dict):
        if row in series:
            return series[row]
        if panel is not None:
            return series.get((panel.firm_id[row], int(panel.year[row])))
        return None
    return float(np.asarray(series, dtype=float)[row])
