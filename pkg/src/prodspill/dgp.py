"""Simulated production panels with spatially dependent productivity.

Two-input technology ``Y = K^bK M^bM exp(omega + eta)``; capital follows a
depreciation/investment rule, materials are chosen statically, and
productivity follows a first-order process that depends on the firm's own
lag, its lagged modifier G and the average lagged productivity of all
other firms (one common peer group).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd

from .panel import PanelData, PriceSeries

__all__ = [
    "LinearProcess",
    "NonlinearProcess",
    "DgpConfig",
    "TrueEffects",
    "material_demand",
    "evolve_productivity",
    "evolve_G",
    "simulate_panel",
    "simulate_survey_panel",
    "firm_streams",
]


@dataclass(frozen=True)
class LinearProcess:
    """omega_t = rho0 + rho1 omega + rho2 omega_bar + rho3 G (all at t-1)."""

    rho0: float = 0.2
    rho1: float = 0.55
    rho2: float = 0.4
    rho3: float = 0.5
    kind: str = field(default="linear", init=False)

    def restricted(self, scenario: str) -> "LinearProcess":
        if scenario == "i":
            return self
        out = replace(self, rho3=0.0)
        return out if scenario == "ii" else replace(out, rho2=0.0)

    def mean(self, omega, G, lag):
        return self.rho0 + self.rho1 * omega + self.rho2 * lag + self.rho3 * G

    def gradients(self, omega, G, lag):
        one = np.ones_like(np.asarray(omega, dtype=float))
        return self.rho1 * one, self.rho3 * one, self.rho2 * one


@dataclass(frozen=True)
class NonlinearProcess:
    """Quadratic process in (omega, omega_bar, G) with all pairwise interactions."""

    rho0: float = 0.2
    rho11: float = 0.65
    rho12: float = -0.015
    rho21: float = 0.18
    rho22: float = 0.025
    rho31: float = 0.37
    rho32: float = 0.12
    varrho12: float = 0.006
    varrho13: float = -0.06
    lambda23: float = 0.07
    kind: str = field(default="nonlinear", init=False)

    def restricted(self, scenario: str) -> "NonlinearProcess":
        if scenario == "i":
            return self
        # every term involving G goes in (ii); every term involving the lag too in (iii)
        out = replace(self, rho31=0.0, rho32=0.0, varrho13=0.0, lambda23=0.0)
        if scenario == "ii":
            return out
        return replace(out, rho21=0.0, rho22=0.0, varrho12=0.0)

    def mean(self, omega, G, lag):
        return (self.rho0 + self.rho11 * omega + self.rho12 * omega ** 2
                + self.rho21 * lag + self.rho22 * lag ** 2
                + self.rho31 * G + self.rho32 * G ** 2
                + self.varrho12 * omega * lag + self.varrho13 * omega * G
                + self.lambda23 * G * lag)

    def gradients(self, omega, G, lag):
        """(AR, DL, SP): partials in own lag, G and the spatial lag."""
        ar = self.rho11 + 2 * self.rho12 * omega + self.varrho12 * lag + self.varrho13 * G
        dl = self.rho31 + 2 * self.rho32 * G + self.varrho13 * omega + self.lambda23 * lag
        sp = self.rho21 + 2 * self.rho22 * lag + self.varrho12 * omega + self.lambda23 * G
        return ar, dl, sp


_PROCESSES = {"linear": LinearProcess, "nonlinear": NonlinearProcess}


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the simulated economy.

    Periods are ``t = 0, ..., T-1``; period 0 holds the initial draws of
    capital, productivity and G. ``G_process`` is ``"exogenous"`` or
    ``"controlled"`` (G responds to current productivity with slope
    ``gamma2``). The scenario zeroes coefficients: ``"ii"`` removes every
    G term from the productivity process, ``"iii"`` also removes the
    spatial-lag terms.

    Initial G is ``G0_intercept + G0_slope * omega_0 + G0_sd * N(0, 1)``.
    """

    n: int = 100
    T: int = 10
    beta_K: float = 0.25
    beta_M: float = 0.65
    sigma_eta: float = math.sqrt(0.07)
    delta_set: tuple = (0.05, 0.075, 0.10, 0.125, 0.15)
    K0_range: tuple = (10.0, 200.0)
    alpha1: float = 0.8
    alpha2: float = 0.1
    G_process: str = "exogenous"
    gamma0: float = 0.01
    gamma1: float = 0.6
    gamma2: float = 0.3
    sigma_eps: float = 0.1
    G0_intercept: float = 0.2
    G0_slope: float = 0.0
    G0_sd: float = 0.1
    omega_process: LinearProcess | NonlinearProcess = field(default_factory=LinearProcess)
    sigma_zeta: float = 0.2
    omega0_range: tuple = (1.0, 3.0)
    scenario: str = "i"
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.T < 2:
            raise ValueError("n and T must both be at least 2")
        if not 0 < self.beta_M < 1:
            raise ValueError("beta_M must lie in (0, 1)")
        for name in ("sigma_eta", "sigma_eps", "sigma_zeta", "G0_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.G_process not in ("exogenous", "controlled"):
            raise ValueError(f"unknown G_process {self.G_process!r}")
        if self.scenario not in ("i", "ii", "iii"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not self.delta_set:
            raise ValueError("delta_set is empty")
        if self.K0_range[0] <= 0 or self.K0_range[1] < self.K0_range[0]:
            raise ValueError("K0_range must be a positive interval")
        if isinstance(self.omega_process, dict):
            spec = dict(self.omega_process)
            kind = spec.pop("kind", "linear")
            object.__setattr__(self, "omega_process", _PROCESSES[kind](**spec))
        for name in ("delta_set", "K0_range", "omega0_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def process(self):
        """The productivity process with the scenario's zero restrictions applied."""
        return self.omega_process.restricted(self.scenario)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["omega_process"] = {"kind": self.omega_process.kind,
                                **{f.name: getattr(self.omega_process, f.name)
                                   for f in fields(self.omega_process) if f.init}}
        for name in ("delta_set", "K0_range", "omega0_range"):
            out[name] = list(out[name])
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown DgpConfig field(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json(cls, source) -> "DgpConfig":
        """Load from a JSON string or a path to a JSON file."""
        text = source
        if not str(source).lstrip().startswith("{"):
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrueEffects:
    """True gradients of the productivity conditional mean, aligned with panel rows.

    Rows in period 0 have no lag and carry NaN. ``eta`` holds the simulated
    transitory shocks and ``theta`` the material price used.
    """

    AR: np.ndarray
    DL: np.ndarray
    SP: np.ndarray
    TIL: np.ndarray
    eta: np.ndarray | None = None
    theta: float | None = None

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"AR": self.AR, "DL": self.DL, "SP": self.SP, "TIL": self.TIL})

    def means(self) -> dict[str, float]:
        return {k: float(np.nanmean(getattr(self, k))) for k in ("AR", "DL", "SP", "TIL")}


def material_demand(K, omega, beta_K: float, beta_M: float):
    """Static material choice with P_Y = 1 and P_M equal to E[exp(eta)]."""
    if not 0 < beta_M < 1:
        raise ValueError("material demand needs 0 < beta_M < 1")
    K = np.asarray(K, dtype=float)
    if np.any(K <= 0):
        raise ValueError("capital must be positive")
    return (beta_M * K ** beta_K * np.exp(omega)) ** (1.0 / (1.0 - beta_M))


def evolve_productivity(omega_prev, G_prev, spatlag_prev, config: DgpConfig):
    """Conditional mean of omega_t given period t-1 states."""
    return config.process.mean(omega_prev, G_prev, spatlag_prev)


def evolve_G(G_prev, omega_curr, config: DgpConfig, eps=0.0):
    """One step of the G law of motion."""
    G = config.gamma0 + config.gamma1 * np.asarray(G_prev, dtype=float) + eps
    if config.G_process == "controlled":
        G = G + config.gamma2 * np.asarray(omega_curr, dtype=float)
    return G


def firm_streams(seed: int, n: int, rep: int = 0) -> list[np.random.Generator]:
    """One independent generator per firm, keyed by (seed, rep, firm)."""
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep, i)))
            for i in range(n)]


def _draw_shocks(config: DgpConfig, rep: int):
    n, T = config.n, config.T
    draws = {key: np.empty((n, T)) for key in ("zeta", "eta", "eps")}
    init = np.empty((n, 3))
    for i, rng in enumerate(firm_streams(config.seed, n, rep)):
        # fixed draw order per firm keeps streams stable across configs
        init[i] = (rng.uniform(*config.omega0_range), rng.uniform(*config.K0_range),
                   rng.standard_normal())
        draws["zeta"][i] = rng.standard_normal(T)
        draws["eta"][i] = rng.standard_normal(T)
        draws["eps"][i] = rng.standard_normal(T)
    return init, draws


def simulate_panel(config: DgpConfig, rep: int = 0) -> tuple[PanelData, TrueEffects]:
    """Simulate one balanced panel and the true effects at every observation.

    The material price is set to the sample mean of ``exp(eta)`` in the
    panel, so the first-stage share estimator recovers ``beta_M`` up to
    rounding. Labor is absent from the technology and written as ``L = 1``.
    """
    n, T = config.n, config.T
    init, draws = _draw_shocks(config, rep)
    delta = np.asarray(config.delta_set)[np.arange(n) % len(config.delta_set)]
    process = config.process

    omega = np.empty((n, T))
    K = np.empty((n, T))
    G = np.empty((n, T))
    ar = np.full((n, T), np.nan)
    dl = np.full((n, T), np.nan)
    sp = np.full((n, T), np.nan)

    omega[:, 0] = init[:, 0]
    K[:, 0] = init[:, 1]
    G[:, 0] = config.G0_intercept + config.G0_slope * omega[:, 0] + config.G0_sd * init[:, 2]
    for t in range(1, T):
        prev = omega[:, t - 1]
        lag = (prev.sum() - prev) / (n - 1)
        omega[:, t] = (evolve_productivity(prev, G[:, t - 1], lag, config)
                       + config.sigma_zeta * draws["zeta"][:, t])
        ar[:, t], dl[:, t], sp[:, t] = process.gradients(prev, G[:, t - 1], lag)
        invest = K[:, t - 1] ** config.alpha1 * np.exp(config.alpha2 * prev)
        K[:, t] = invest + (1 - delta) * K[:, t - 1]
        G[:, t] = evolve_G(G[:, t - 1], omega[:, t], config,
                           config.sigma_eps * draws["eps"][:, t])

    eta = config.sigma_eta * draws["eta"]
    M = material_demand(K, omega, config.beta_K, config.beta_M)
    Y = K ** config.beta_K * M ** config.beta_M * np.exp(omega + eta)
    theta = float(np.mean(np.exp(eta)))

    # TIL_it = SP_it * mean over other firms of DL_{j,t-1}
    til = np.full((n, T), np.nan)
    for t in range(2, T):
        d = dl[:, t - 1]
        til[:, t] = sp[:, t] * (d.sum() - d) / (n - 1)

    years = np.tile(np.arange(T), n)
    frame = pd.DataFrame({
        "firm_id": np.repeat(np.arange(1, n + 1), T),
        "year": years,
        "Y": Y.ravel(), "K": K.ravel(), "L": np.ones(n * T), "M": M.ravel(), "G": G.ravel(),
        "region": "r1", "industry": "i1",
        "omega_true": omega.ravel(),
    })
    prices = PriceSeries({t: 1.0 for t in range(T)}, {t: theta for t in range(T)})
    panel = PanelData(frame, prices=prices, check_g_bounds=False)
    effects = TrueEffects(ar.ravel(), dl.ravel(), sp.ravel(), til.ravel(), eta.ravel(), theta)
    return panel, effects


def simulate_survey_panel(n: int = 500, T: int = 8, seed: int = 0, *, first_year: int = 2000,
                          n_regions: int = 4, cities_per_region: int = 3,
                          n_subindustries: int = 4, beta_K: float = 0.2, beta_L: float = 0.15,
                          beta_M: float = 0.6, rho: float = 0.6, dl: float = 0.3,
                          sp: float = 0.25, foreign_share: float = 0.3,
                          entry_exit: bool = True) -> PanelData:
    """Unbalanced panel shaped like a manufacturing survey.

    Firms carry ``region`` (province), ``city``, ``industry`` (one 2-digit
    code) and ``subindustry`` labels, use labor, and report an FDI share
    ``G`` in [0, 1] that is zero for domestic firms. Productivity follows
    ``0.1 + rho*omega + dl*G + sp*peer mean + shock`` with peers in the same
    province and year. Output and material prices vary by year.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    region = rng.integers(n_regions, size=n)
    city = region * cities_per_region + rng.integers(cities_per_region, size=n)
    sub = rng.integers(n_subindustries, size=n)
    foreign = rng.random(n) < foreign_share
    start = rng.integers(0, 3, size=n) if entry_exit else np.zeros(n, int)
    stop = T - (rng.integers(0, 3, size=n) if entry_exit else np.zeros(n, int))
    alive = (np.arange(T) >= start[:, None]) & (np.arange(T) < stop[:, None])

    p_y = np.exp(np.cumsum(rng.normal(0.02, 0.02, T)))
    p_m = np.exp(np.cumsum(rng.normal(0.03, 0.02, T)))
    omega = np.empty((n, T))
    G = np.zeros((n, T))
    logK = np.empty((n, T))
    logL = np.empty((n, T))
    omega[:, 0] = rng.normal(1.0, 0.3, n)
    logK[:, 0] = rng.normal(4.0, 0.8, n)
    logL[:, 0] = rng.normal(3.0, 0.6, n)
    G[foreign, 0] = rng.uniform(0.1, 1.0, foreign.sum())
    for t in range(1, T):
        prev = omega[:, t - 1]
        peer = np.empty(n)
        for r in range(n_regions):
            grp = (region == r) & alive[:, t - 1]
            tot, cnt = prev[grp].sum(), grp.sum()
            own = grp.astype(float)
            peer[region == r] = ((tot - own * prev) / np.maximum(cnt - own, 1))[region == r]
        omega[:, t] = (0.1 + rho * prev + dl * G[:, t - 1] + sp * peer
                       + 0.15 * rng.standard_normal(n))
        G[:, t] = np.where(foreign, np.clip(G[:, t - 1] + 0.05 * rng.standard_normal(n),
                                            0.0, 1.0), 0.0)
        logK[:, t] = 0.9 * logK[:, t - 1] + 0.4 + 0.1 * prev + 0.1 * rng.standard_normal(n)
        logL[:, t] = 0.8 * logL[:, t - 1] + 0.6 + 0.1 * rng.standard_normal(n)

    eta = 0.2 * rng.standard_normal((n, T))
    theta = float(np.mean(np.exp(eta)))
    ratio = (p_m / p_y)[None, :]
    # static material choice given E[exp(eta)] = theta
    logM = (np.log(beta_M * theta) - np.log(ratio) + beta_K * logK + beta_L * logL
            + omega) / (1 - beta_M)
    logY = beta_K * logK + beta_L * logL + beta_M * logM + omega + eta

    i, t = np.nonzero(alive)
    frame = pd.DataFrame({
        "firm_id": i + 1, "year": first_year + t,
        "Y": np.exp(logY[i, t]), "K": np.exp(logK[i, t]), "L": np.exp(logL[i, t]),
        "M": np.exp(logM[i, t]), "G": G[i, t],
        "region": [f"p{r}" for r in region[i]], "industry": "C13",
        "city": [f"c{c}" for c in city[i]], "subindustry": [f"C13{s:02d}" for s in sub[i]],
    })
    years = first_year + np.arange(T)
    prices = PriceSeries(dict(zip(years.tolist(), p_y)), dict(zip(years.tolist(), p_m)))
    return PanelData(frame, prices=prices, check_g_bounds=True)
