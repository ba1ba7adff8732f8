"""End-to-end estimation: shares, profiled NLS, effects and productivity."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..panel import PanelData
from ..peers import PeerGrouping, build_weights
from .effects import EffectEstimates, derive_effects
from .sieve import PolynomialBasis, SieveSpec
from .stage1 import Stage1Result, stage1_cobb_douglas, stage1_translog
from .stage2 import (Stage2Fit, Stage2Workspace, build_stage2_inputs, production_regressors,
                     stage2_nls)

__all__ = [
    "EstimateOptions",
    "ProductionFit",
    "EstimationResult",
    "estimate",
    "estimate_with_weights",
    "recover_productivity",
    "evaluate_effects",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimateOptions:
    """Estimator configuration.

    Parameters
    ----------
    spec : {"cobb_douglas", "translog"}
    sieve : SieveSpec
        Polynomial degree plus optional fixed/time effects.
    grouping : PeerGrouping
    scheme : {"baseline", "size", "asymmetric", "fdi_split", "none"}
        ``none`` drops the spillover regressor.
    include_G : bool
        Keep G_{t-1} in the productivity process.
    use_labor : bool or None
        None drops labor automatically when L does not vary.
    renormalize : bool
        Spread the weight of peers lacking a t-1 value over the others;
        False drops the observation instead.
    asym_iterations : int
        Maximum refits for the asymmetric scheme, whose peer sets depend
        on estimated productivity.
    """

    spec: str = "cobb_douglas"
    sieve: SieveSpec = field(default_factory=SieveSpec)
    grouping: PeerGrouping = field(default_factory=PeerGrouping)
    scheme: str = "baseline"
    include_G: bool = True
    use_labor: bool | None = None
    renormalize: bool = True
    n_starts: int = 16
    start_radius: float = 0.25
    init: tuple | None = None
    asym_iterations: int = 5

    def __post_init__(self):
        if self.spec not in ("cobb_douglas", "translog"):
            raise ValueError(f"unknown production spec {self.spec!r}")
        if self.scheme not in ("baseline", "size", "asymmetric", "fdi_split", "none"):
            raise ValueError(f"unknown peer scheme {self.scheme!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sieve"]["fixed_effects"] = list(self.sieve.fixed_effects)
        d["init"] = None if self.init is None else list(self.init)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateOptions":
        data = dict(data)
        if isinstance(data.get("sieve"), dict):
            data["sieve"] = SieveSpec(**data["sieve"])
        if isinstance(data.get("grouping"), dict):
            data["grouping"] = PeerGrouping(**data["grouping"])
        if data.get("init") is not None:
            data["init"] = tuple(data["init"])
        return cls(**data)


@dataclass
class ProductionFit:
    """Estimated technology, sieve and recovered productivity.

    ``eta`` and ``omega`` cover every panel row; ``residual`` and ``rows``
    cover the stage-2 sample only.
    """

    spec: str
    beta_M: float
    theta: float
    params: dict
    gamma: np.ndarray
    sieve_degree: int
    basis_center: np.ndarray
    basis_scale: np.ndarray
    z_names: tuple
    eta: np.ndarray
    omega: np.ndarray
    sse: float
    beta_MM: float = 0.0
    beta_KM: float = 0.0
    beta_LM: float = 0.0
    use_labor: bool = True
    delta: np.ndarray = field(default_factory=lambda: np.empty(0))
    dummy_names: tuple = ()
    rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    residual: np.ndarray = field(default_factory=lambda: np.empty(0))
    converged: bool = True
    grad_norm: float = 0.0
    n_obs: int = 0
    dropped_empty: int = 0
    renormalized: int = 0

    @property
    def beta_K(self) -> float:
        return float(self.params["beta_K"])

    @property
    def beta_L(self) -> float:
        return float(self.params.get("beta_L", 0.0))

    @property
    def beta(self) -> np.ndarray:
        return np.array(list(self.params.values()), dtype=float)

    @property
    def basis(self) -> PolynomialBasis:
        return PolynomialBasis(len(self.z_names), self.sieve_degree,
                               self.basis_center, self.basis_scale)

    def stage1(self) -> Stage1Result:
        return Stage1Result(self.spec, self.beta_M, self.theta, self.eta, self.beta_MM,
                            self.beta_KM, self.beta_LM, self.use_labor)

    def h(self, Z) -> np.ndarray:
        return self.basis(Z) @ self.gamma

    def scalars(self) -> dict[str, float]:
        out = {"beta_M": self.beta_M, "theta": self.theta}
        if self.spec == "translog":
            out.update(beta_MM=self.beta_MM, beta_KM=self.beta_KM, beta_LM=self.beta_LM)
        out.update({k: float(v) for k, v in self.params.items()})
        return out


@dataclass
class EstimationResult:
    """Everything produced by :func:`estimate`; unpacks as ``(fit, effects)``."""

    fit: ProductionFit
    effects: EffectEstimates
    stage1: Stage1Result
    stage2: Stage2Fit
    workspace: Stage2Workspace
    weights: object
    options: EstimateOptions
    iterations: int = 1

    def __iter__(self):
        return iter((self.fit, self.effects))

    def estimand(self, name: str) -> np.ndarray | float:
        """Scalar parameter or per-observation effect by name."""
        if name in ("beta_M", "theta", "beta_MM", "beta_KM", "beta_LM"):
            return float(getattr(self.fit, name))
        if name in self.fit.params:
            return float(self.fit.params[name])
        return np.asarray(getattr(self.effects, name))


def _use_labor(panel: PanelData, options: EstimateOptions) -> bool:
    if options.use_labor is not None:
        return bool(options.use_labor)
    return bool(np.ptp(panel.l) > 0)


def run_stage1(panel: PanelData, options: EstimateOptions, lnV=None, init=None) -> Stage1Result:
    use_labor = _use_labor(panel, options)
    if options.spec == "translog":
        return stage1_translog(panel, init=init, use_labor=use_labor, lnV=lnV)
    return stage1_cobb_douglas(panel, use_labor=use_labor, lnV=lnV)


def recover_productivity(panel: PanelData, fit: ProductionFit | Stage1Result,
                         beta=None, y=None) -> np.ndarray:
    """omega = y - x'b - (material terms) - eta for every row.

    Accepts a :class:`ProductionFit`, or a stage-1 result together with the
    production parameters ``beta``.
    """
    if isinstance(fit, ProductionFit):
        s1, beta = fit.stage1(), fit.beta
    else:
        s1 = fit
    X, _ = production_regressors(panel, s1.spec, s1.use_labor)
    return s1.y_star(panel, y) - X @ np.asarray(beta, dtype=float) - s1.eta


def _make_fit(panel, s1: Stage1Result, ws: Stage2Workspace, s2: Stage2Fit,
              y=None) -> ProductionFit:
    return ProductionFit(
        spec=s1.spec, beta_M=s1.beta_M, theta=s1.theta, params=s2.params(), gamma=s2.gamma,
        sieve_degree=s2.basis.degree, basis_center=s2.basis.center,
        basis_scale=s2.basis.scale, z_names=ws.z_names, eta=s1.eta,
        omega=recover_productivity(panel, s1, s2.beta, y), sse=s2.sse, beta_MM=s1.beta_MM,
        beta_KM=s1.beta_KM, beta_LM=s1.beta_LM, use_labor=s1.use_labor, delta=s2.delta,
        dummy_names=ws.dummy_names, rows=ws.rows, residual=s2.residual,
        converged=s2.converged, grad_norm=s2.grad_norm, n_obs=len(ws),
        dropped_empty=ws.dropped_empty, renormalized=ws.renormalized)


def estimate_with_weights(panel: PanelData, options: EstimateOptions, weights, *,
                          lnV=None, y=None, init=None, n_starts: int | None = None,
                          strict: bool = True) -> EstimationResult:
    """One pass of the two-stage estimator with the peer weights given.

    ``lnV`` and ``y`` replace the observed log shares and log output
    (bootstrap samples); ``init`` overrides the stage-2 starting values.
    """
    s1 = run_stage1(panel, options, lnV=lnV)
    ws = build_stage2_inputs(panel, s1, weights, options.spec, options.include_G,
                             options.sieve, options.renormalize, y=y)
    start = init if init is not None else options.init
    s2 = stage2_nls(ws, options.sieve, init=start,
                    n_starts=options.n_starts if n_starts is None else n_starts,
                    start_radius=options.start_radius, strict=strict)
    effects = derive_effects(ws, s2.beta, s2.gamma, s2.basis)
    fit = _make_fit(panel, s1, ws, s2, y)
    return EstimationResult(fit, effects, s1, s2, ws, weights, options)


def _weights_for(panel, options, omega=None):
    if options.scheme == "none":
        return None
    return build_weights(panel, options.grouping, options.scheme, omega)


def estimate(panel: PanelData, options: EstimateOptions | None = None,
             **overrides) -> EstimationResult:
    """Run the two-stage estimator.

    Keyword overrides are applied to ``options`` (for example
    ``estimate(panel, spec="translog")``).

    The asymmetric scheme ranks peers by productivity, which is itself an
    output: a baseline fit supplies the first ranking and the estimator is
    refit until the peer sets stop changing or ``asym_iterations`` is hit.
    """
    options = options or EstimateOptions()
    if overrides:
        options = replace(options, **overrides)
    if options.scheme != "asymmetric":
        return estimate_with_weights(panel, options, _weights_for(panel, options))

    res = estimate_with_weights(panel, replace(options, scheme="baseline"),
                                build_weights(panel, options.grouping, "baseline"))
    previous = None
    for it in range(1, options.asym_iterations + 1):
        W = build_weights(panel, options.grouping, "asymmetric", res.fit.omega)
        if previous is not None and (W.matrix != previous.matrix).nnz == 0:
            break
        res = estimate_with_weights(panel, options, W, init=res.fit.beta)
        res.iterations = it
        previous = W
    else:
        log.warning("asymmetric peer sets still changing after %d refits",
                    options.asym_iterations)
    return res


def evaluate_effects(result: EstimationResult, stage1: Stage1Result, beta, gamma,
                     basis: PolynomialBasis) -> EffectEstimates:
    """Effects of another parameter set evaluated on ``result``'s sample.

    Used by the jackknife: a subsample fit is mapped onto the full-sample
    observations so per-observation estimands line up. The proxy inputs
    depend on the stage-1 estimates, so the workspace is rebuilt for them.
    """
    ws = result.workspace
    if stage1 is not result.stage1:
        panel = ws.meta["panel"]
        ws = build_stage2_inputs(panel, replace(stage1, eta=result.stage1.eta), ws.weights,
                                 ws.meta["spec"], ws.meta["include_G"], result.options.sieve,
                                 result.options.renormalize)
    return derive_effects(ws, beta, gamma, basis)
