"""Two-step comparison estimators that treat productivity as exogenous Markov.

The first step is the main estimator with G and the spillover term removed
from the productivity process. The second step regresses the recovered
productivity on peer and own-G terms, which is the conventional (and, as
the simulations show, spurious) route to spillover estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .estimation.pipeline import EstimateOptions, estimate_with_weights
from .panel import PanelData, lag_index
from .peers import PeerWeights

__all__ = [
    "AltFirstStepFit",
    "AltRegressionResult",
    "VARIANTS",
    "proxy_exogenous_markov",
    "alt1_regression",
    "alt2_regression",
    "alt_variant",
    "linear_regression",
]


class AltRegressionError(ValueError):
    pass


@dataclass
class AltFirstStepFit:
    beta_K: float
    params: dict
    gamma_exo: np.ndarray
    omega: np.ndarray
    beta_M: float
    converged: bool = True

    @property
    def beta_L(self) -> float:
        return float(self.params.get("beta_L", 0.0))


@dataclass
class AltRegressionResult:
    """Second-step regression output with heteroskedasticity-robust (HC0) errors."""

    variant: str
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    method: str
    n_obs: int
    residual: np.ndarray
    spillover: str
    dl: str | None = None

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    def get(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def z_of(self, name: str) -> float:
        return float(self.z[self.names.index(name)])

    @property
    def spillover_coef(self) -> float:
        return self.get(self.spillover)

    @property
    def spillover_z(self) -> float:
        return self.z_of(self.spillover)

    @property
    def dl_coef(self) -> float:
        return float("nan") if self.dl is None else self.get(self.dl)

    def rejects(self, level: float = 0.95) -> bool:
        """Two-sided z-test of a zero spillover coefficient."""
        return bool(abs(self.spillover_z) > norm.ppf(1 - (1 - level) / 2))

    def as_dict(self) -> dict:
        out = {"variant": self.variant, "method": self.method, "n_obs": self.n_obs}
        for n, c, s in zip(self.names, self.coef, self.se):
            out[n] = float(c)
            out[f"se_{n}"] = float(s)
            out[f"z_{n}"] = float(c / s) if s > 0 else float("nan")
        return out


def proxy_exogenous_markov(panel: PanelData, options: EstimateOptions | None = None,
                           **overrides) -> AltFirstStepFit:
    """Main estimator with z = (kappa - x'b) at t-1 only."""
    options = replace(options or EstimateOptions(), include_G=False, scheme="none", **overrides)
    res = estimate_with_weights(panel, options, None)
    fit = res.fit
    return AltFirstStepFit(fit.beta_K, fit.params, fit.gamma, fit.omega, fit.beta_M,
                           fit.converged)


def linear_regression(y, X, Z=None):
    """OLS (``Z`` None) or just-identified IV with HC0 sandwich errors.

    Returns ``(coef, se, residual)``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = X if Z is None else np.asarray(Z, dtype=float)
    if Z.shape != X.shape:
        raise AltRegressionError("IV must be just identified")
    ZX = Z.T @ X
    if np.linalg.matrix_rank(ZX) < X.shape[1]:
        raise AltRegressionError("singular first stage: instruments do not span the regressors")
    coef = np.linalg.solve(ZX, Z.T @ y)
    resid = y - X @ coef
    inv = np.linalg.inv(ZX)
    meat = (Z * resid[:, None] ** 2).T @ Z
    cov = inv @ meat @ inv.T
    return coef, np.sqrt(np.maximum(np.diag(cov), 0.0)), resid


class _Lags:
    """Row-aligned lags and peer averages of panel series (NaN when unavailable)."""

    def __init__(self, panel: PanelData, weights: PeerWeights):
        self.panel = panel
        self.weights = weights
        self._idx = {}

    def shift(self, series, k: int) -> np.ndarray:
        if k == 0:
            return np.asarray(series, dtype=float)
        if k not in self._idx:
            self._idx[k] = lag_index(self.panel, k)
        idx = self._idx[k]
        out = np.full(len(self.panel), np.nan)
        ok = idx >= 0
        out[ok] = np.asarray(series, dtype=float)[idx[ok]]
        return out

    def bar(self, series, k: int) -> np.ndarray:
        """sum_j s_{ij,t-k} x_{j,t-k} at row (i, t)."""
        return self.shift(self.weights.lag(series, renormalize=True), k)


def _fit(variant, y, cols: dict, instruments: dict | None, spill, dl) -> AltRegressionResult:
    names = ("const",) + tuple(cols)
    X = np.column_stack([np.ones(len(y))] + list(cols.values()))
    Z = None
    if instruments:
        Z = np.column_stack([np.ones(len(y))] + [instruments.get(n, cols[n]) for n in cols])
    ok = np.isfinite(y) & np.isfinite(X).all(axis=1)
    if Z is not None:
        ok &= np.isfinite(Z).all(axis=1)
    if ok.sum() <= X.shape[1]:
        raise AltRegressionError(f"variant {variant}: insufficient usable lag depth "
                                 f"({int(ok.sum())} rows)")
    coef, se, resid = linear_regression(y[ok], X[ok], None if Z is None else Z[ok])
    return AltRegressionResult(variant, names, coef, se, "iv" if Z is not None else "ols",
                               int(ok.sum()), resid, spill, dl)


def alt1_regression(omega_hat, panel: PanelData, weights: PeerWeights) -> AltRegressionResult:
    """omega_t on sum_j s_{ij,t-1} G_{j,t-2} (TIL-type) and G_{i,t-1} (DL-type)."""
    L = _Lags(panel, weights)
    G = np.asarray(panel.G, dtype=float)
    peer_G2 = L.shift(weights.lag(L.shift(G, 1), renormalize=True), 1)
    cols = {"peer_G_lag2": peer_G2, "G_lag1": L.shift(G, 1)}
    return _fit("ALT1", np.asarray(omega_hat, dtype=float), cols, None, "peer_G_lag2", "G_lag1")


def alt2_regression(omega_hat, panel: PanelData, weights: PeerWeights) -> AltRegressionResult:
    """omega_t on sum_j s_{ij,t-1} omega_{j,t-1} (SP-type) and G_{i,t-1} (DL-type)."""
    L = _Lags(panel, weights)
    omega_hat = np.asarray(omega_hat, dtype=float)
    cols = {"peer_omega_lag1": L.bar(omega_hat, 1), "G_lag1": L.shift(panel.G, 1)}
    return _fit("ALT2", omega_hat, cols, None, "peer_omega_lag1", "G_lag1")


# variant -> (spillover variable, its lag, DL lag or None)
VARIANTS = {
    "I": ("G", 0, None), "II": ("G", 0, 0), "III": ("G", 1, None), "IV": ("G", 1, 1),
    "V": ("G", 2, None), "VI": ("G", 2, 2), "VII": ("G", 2, 1),
    "VIII": ("omega", 0, None), "IX": ("omega", 0, 0), "X": ("omega", 1, None),
    "XI": ("omega", 1, 1),
}


def alt_variant(omega_hat, panel: PanelData, weights: PeerWeights,
                variant: str) -> AltRegressionResult:
    """One of the eleven second-step variants.

    The spillover variable is a peer average of G or of omega-hat at lag 0, 1
    or 2, optionally with own G at some lag. Regressors dated t are
    endogenous and are instrumented by their own first lags (just
    identified).
    """
    variant = str(variant).upper()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    source, k, dl_lag = VARIANTS[variant]
    L = _Lags(panel, weights)
    omega_hat = np.asarray(omega_hat, dtype=float)
    base = omega_hat if source == "omega" else np.asarray(panel.G, dtype=float)
    spill = f"peer_{source}_lag{k}"
    cols = {spill: L.bar(base, k)}
    inst = {}
    if k == 0:
        inst[spill] = L.bar(base, 1)
    dl = None
    if dl_lag is not None:
        dl = f"G_lag{dl_lag}"
        cols[dl] = L.shift(panel.G, dl_lag)
        if dl_lag == 0:
            inst[dl] = L.shift(panel.G, 1)
    return _fit(variant, omega_hat, cols, inst or None, spill, dl)
