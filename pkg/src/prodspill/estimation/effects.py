"""Learning and spillover effects from the fitted productivity process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..panel import PanelData
from ..peers import BidimensionalWeights, PeerWeights
from .sieve import PolynomialBasis
from .stage2 import Stage2Workspace

__all__ = ["EffectEstimates", "derive_effects", "effect_gradients"]

_Z_TO_EFFECT = {"omega_lag": "AR", "G_lag": "DL", "spill_lag": "SP",
                "spill0_lag": "SP0", "spill1_lag": "SP1"}


@dataclass
class EffectEstimates:
    """Per-observation gradients of the fitted conditional mean of productivity.

    Arrays are aligned with ``rows`` (panel row indices of the stage-2
    sample). Effects that the model does not contain are NaN. In
    bidimensional mode ``SP`` is NaN and ``TIL`` sums the two peer types.
    """

    rows: np.ndarray
    lag_rows: np.ndarray
    AR: np.ndarray
    DL: np.ndarray
    SP: np.ndarray
    TIL: np.ndarray
    SP0: np.ndarray | None = None
    SP1: np.ndarray | None = None
    peer_DL: dict | None = None
    weights: object = None

    def names(self) -> list[str]:
        out = ["AR", "DL", "SP", "TIL"]
        if self.SP0 is not None:
            out += ["SP0", "SP1"]
        return out

    def frame(self, panel: PanelData | None = None) -> pd.DataFrame:
        data = {}
        if panel is not None:
            data["firm_id"] = panel.firm_id[self.rows]
            data["year"] = panel.year[self.rows]
        data["row"] = self.rows
        for name in self.names():
            data[name] = getattr(self, name)
        return pd.DataFrame(data)

    def means(self) -> dict[str, float]:
        return {n: float(np.nanmean(getattr(self, n))) if np.isfinite(getattr(self, n)).any()
                else float("nan") for n in self.names()}

    def indirect_learning(self, position: int) -> dict[int, float]:
        """Pairwise IL_ijt = SP_it * s_ij,t-1 * DL_j,t-1 for one stage-2 observation.

        Keys are panel rows of the peers at t-1. Weights are renormalized
        over peers whose DL is defined, matching TIL.
        """
        out = {}
        p = int(self.lag_rows[position])
        for dim, sp in self._spill_dims():
            W = self.weights if dim is None else getattr(self.weights, dim)
            dl_full = self.peer_DL
            row = W.row(p)
            ok = {q: w for q, w in row.items() if np.isfinite(dl_full.get(q, np.nan))}
            mass = sum(ok.values())
            if mass <= 0:
                continue
            for q, w in ok.items():
                out[q] = out.get(q, 0.0) + sp[position] * w / mass * dl_full[q]
        return out

    def _spill_dims(self):
        if self.SP0 is not None:
            return [("weights0", self.SP0), ("weights1", self.SP1)]
        return [(None, self.SP)]


def effect_gradients(basis: PolynomialBasis, gamma, Z, z_names) -> dict[str, np.ndarray]:
    """Analytic partial derivatives of h = basis(z) @ gamma, keyed by effect name."""
    H = basis.gradient(Z, gamma)
    return {_Z_TO_EFFECT[name]: H[:, j] for j, name in enumerate(z_names)}


def derive_effects(ws: Stage2Workspace, beta, gamma, basis: PolynomialBasis) -> EffectEstimates:
    """AR, DL, SP (or SP0/SP1) and TIL at every stage-2 observation.

    TIL_it = SP_it * sum_j s_ij,t-1 DL_j,t-1, with the sum renormalized
    over peers whose DL is defined (peers observed in t-2 as well).
    """
    Z = ws.z(beta)
    grads = effect_gradients(basis, gamma, Z, ws.z_names)
    N = len(ws)
    nan = np.full(N, np.nan)
    AR = grads.get("AR", nan.copy())
    DL = grads.get("DL", nan.copy())
    dl_full = np.full(ws.meta["n_panel"], np.nan)
    dl_full[ws.rows] = DL

    weights = ws.weights
    peer_DL = {int(r): float(v) for r, v in zip(ws.rows, DL)}
    TIL = nan.copy()
    SP0 = SP1 = None
    if isinstance(weights, BidimensionalWeights):
        SP = nan.copy()
        SP0 = grads.get("SP0", nan.copy())
        SP1 = grads.get("SP1", nan.copy())
        parts = []
        for W, sp in ((weights.weights0, SP0), (weights.weights1, SP1)):
            avg = W.lag(dl_full, renormalize=True)[ws.lag_rows]
            term = sp * avg
            # a peer type absent for this row contributes nothing
            term = np.where(W.empty[ws.lag_rows], 0.0, term)
            parts.append(term)
        TIL = parts[0] + parts[1]
    elif isinstance(weights, PeerWeights):
        SP = grads.get("SP", nan.copy())
        avg = weights.lag(dl_full, renormalize=True)[ws.lag_rows]
        TIL = SP * avg
    else:
        SP = nan.copy()
    return EffectEstimates(ws.rows, ws.lag_rows, AR, DL, SP, TIL, SP0, SP1, peer_DL, weights)
