"""Wild residual block bootstrap, jackknife acceleration and BCa intervals."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .estimation.pipeline import (EstimationResult, estimate, estimate_with_weights,
                                  evaluate_effects)
from .estimation.stage1 import Stage1Error
from .estimation.stage2 import Stage2Error
from .panel import PanelData

__all__ = [
    "MAMMEN_LOW",
    "MAMMEN_HIGH",
    "MAMMEN_P_LOW",
    "mammen_draw",
    "BootstrapDraws",
    "BootstrapFailure",
    "BcaInterval",
    "wild_block_bootstrap",
    "jackknife_groups",
    "jackknife_estimates",
    "jackknife_acceleration",
    "bca_interval",
    "bca_intervals",
]

log = logging.getLogger(__name__)

_SQRT5 = math.sqrt(5.0)
MAMMEN_LOW = -(_SQRT5 - 1) / 2
MAMMEN_HIGH = (_SQRT5 + 1) / 2
MAMMEN_P_LOW = (_SQRT5 + 1) / (2 * _SQRT5)

SCALAR_ESTIMANDS = ("beta_M", "theta", "beta_K", "beta_L", "beta_KK", "beta_LL", "beta_KL",
                    "beta_MM", "beta_KM", "beta_LM")
EFFECT_ESTIMANDS = ("AR", "DL", "SP", "TIL", "SP0", "SP1")


class BootstrapFailure(RuntimeError):
    """Too many bootstrap replications failed to estimate."""


def mammen_draw(rng: np.random.Generator, size=None):
    """Two-point draws with mean 0, variance 1 and third moment 1."""
    u = rng.random(size)
    return np.where(u < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


def _is_scalar(name: str) -> bool:
    return name in SCALAR_ESTIMANDS or name.startswith("mean_")


def _extract(result: EstimationResult, name: str):
    if name.startswith("mean_"):
        vals = np.asarray(getattr(result.effects, name[5:]), dtype=float)
        return float(np.nanmean(vals))
    return result.estimand(name)


@dataclass
class BootstrapDraws:
    """Bootstrap replications keyed by estimand.

    ``draws[name]`` has shape (B_ok,) for scalars and (B_ok, N) for
    per-observation effects, rows ordered by replication id. ``rows`` are
    the panel rows of the effect columns.
    """

    B: int
    seed: int
    point: dict
    draws: dict
    rows: np.ndarray
    replication_ids: np.ndarray
    failures: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.B


def _bootstrap_sample(panel: PanelData, result: EstimationResult, v_firm: np.ndarray):
    fit, s1 = result.fit, result.stage1
    v = v_firm[panel.firm_code]
    ln_e_theta = np.log(s1.elasticity(panel) * s1.theta)
    lnV = ln_e_theta - v * s1.eta
    y = np.array(panel.y, dtype=float)
    rows = result.workspace.rows
    y[rows] += (v[rows] - 1.0) * fit.residual
    return lnV, y


def _one_replication(args):
    panel, result, seed, b, estimands = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
    v_firm = mammen_draw(rng, panel.n_firms)
    lnV, y = _bootstrap_sample(panel, result, v_firm)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rb = estimate_with_weights(panel, result.options, result.weights, lnV=lnV, y=y,
                                       init=result.fit.beta, n_starts=1)
    except (Stage1Error, Stage2Error, np.linalg.LinAlgError, ValueError) as exc:
        return b, None, f"{type(exc).__name__}: {exc}"
    if not np.array_equal(rb.effects.rows, result.effects.rows):
        return b, None, "bootstrap sample rows differ from the original sample"
    return b, {n: _extract(rb, n) for n in estimands}, None


def wild_block_bootstrap(panel: PanelData, result: EstimationResult, B: int = 400,
                         seed: int = 0, estimands=("beta_K", "DL", "SP", "TIL"),
                         n_jobs: int = 1, max_failure_rate: float = 0.05) -> BootstrapDraws:
    """Resample both estimation stages with one Mammen draw per firm.

    Each replication multiplies the firm's whole series of stage-1 shocks
    and stage-2 residuals by the same ``v_i``:

    * ``lnV* = ln(E_it * theta) - v_i * eta_it``
    * ``y*  = y + (v_i - 1) * e_it`` on the stage-2 sample, where ``e`` is
      the stage-2 residual (transitory shock plus productivity innovation).

    Both stages are then re-estimated with the peer weights held fixed,
    starting from the point estimate. Replications are seeded by
    ``SeedSequence(seed, spawn_key=(b,))`` so results do not depend on
    ``n_jobs``.

    Raises
    ------
    BootstrapFailure
        When more than ``max_failure_rate`` of the replications fail.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    estimands = tuple(estimands)
    tasks = [(panel, result, seed, b, estimands) for b in range(B)]
    if n_jobs == 1:
        outcomes = [_one_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            outcomes = list(ex.map(_one_replication, tasks, chunksize=max(1, B // (4 * n_jobs))))
    outcomes.sort(key=lambda o: o[0])
    failures = {b: msg for b, _, msg in outcomes if msg is not None}
    if len(failures) / B > max_failure_rate:
        first = next(iter(failures.items()))
        raise BootstrapFailure(f"{len(failures)} of {B} bootstrap replications failed "
                               f"(limit {max_failure_rate:.0%}); first: replication "
                               f"{first[0]}: {first[1]}")
    if failures:
        log.warning("%d of %d bootstrap replications failed and were skipped",
                    len(failures), B)
    ok = [(b, vals) for b, vals, msg in outcomes if msg is None]
    draws = {n: np.array([vals[n] for _, vals in ok], dtype=float) for n in estimands}
    point = {n: _extract(result, n) for n in estimands}
    return BootstrapDraws(B, seed, point, draws, result.effects.rows,
                          np.array([b for b, _ in ok]), failures)


def jackknife_groups(firm_ids, J: int | None = None) -> list[np.ndarray]:
    """Round-robin deletion groups over sorted firm ids.

    The default ``J`` removes about 50 firms per subsample (at least 3
    groups).
    """
    firms = np.array(sorted(np.unique(np.asarray(firm_ids)), key=_sort_key))
    if J is None:
        J = max(3, int(round(len(firms) / 50)))
    if J < 3:
        raise ValueError("jackknife needs at least 3 deletion groups")
    if J > len(firms):
        raise ValueError(f"cannot split {len(firms)} firms into {J} deletion groups")
    return [firms[j::J] for j in range(J)]


def _sort_key(v):
    try:
        return (0, float(v), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(v))


def jackknife_estimates(panel: PanelData, result: EstimationResult, J: int | None = None,
                        estimands=("beta_K", "DL", "SP", "TIL")) -> dict:
    """Delete-a-group estimates for each estimand, shape (J,) or (J, N).

    Per-observation effects of a subsample fit are evaluated on the
    full-sample observations so that every deletion yields a value for
    every observation.
    """
    groups = jackknife_groups(panel.firm_id, J)
    out = {n: [] for n in estimands}
    for group in groups:
        sub = panel.drop_firms(group)
        rj = estimate(sub, result.options, init=tuple(result.fit.beta))
        eff = None
        for n in estimands:
            if _is_scalar(n) and not n.startswith("mean_"):
                out[n].append(_extract(rj, n))
                continue
            if eff is None:
                eff = evaluate_effects(result, rj.stage1, rj.fit.beta, rj.fit.gamma,
                                       rj.stage2.basis)
            vals = np.asarray(getattr(eff, n.removeprefix("mean_")), dtype=float)
            out[n].append(float(np.nanmean(vals)) if n.startswith("mean_") else vals)
    return {n: np.asarray(v, dtype=float) for n, v in out.items()}


def jackknife_acceleration(estimates) -> np.ndarray | float:
    """c = sum (Ebar - E_j)^3 / (6 [sum (Ebar - E_j)^2]^{3/2}).

    ``estimates`` has the deletion index on axis 0; extra axes are
    per-observation estimands. Zero spread gives 0 with a warning.
    """
    E = np.asarray(estimates, dtype=float)
    if E.shape[0] < 2:
        raise ValueError("need at least two jackknife estimates")
    d = E.mean(axis=0) - E
    num = np.sum(d ** 3, axis=0)
    den = 6.0 * np.sum(d ** 2, axis=0) ** 1.5
    zero = den <= 0
    if np.any(zero):
        warnings.warn("jackknife estimates have no spread; acceleration set to 0",
                      RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
    return float(c) if c.ndim == 0 else c


@dataclass(frozen=True)
class BcaInterval:
    estimand: str
    point: float
    phi0: float
    c_hat: float
    lo: float
    hi: float
    one_sided_lower: float
    level: float
    row: int | None = None

    def as_dict(self) -> dict:
        return {"estimand": self.estimand, "row": self.row, "point": self.point,
                "phi0": self.phi0, "c_hat": self.c_hat, "lo": self.lo, "hi": self.hi,
                "one_sided_lower": self.one_sided_lower, "level": self.level}


def _adjusted(phi0, c, z):
    """Phi(phi0 + (phi0 + z) / (1 - c (phi0 + z))), with infinite phi0 handled."""
    if not np.isfinite(phi0):
        return 0.0 if phi0 < 0 else 1.0
    w = phi0 + z
    return float(norm.cdf(phi0 + w / (1.0 - c * w)))


def bca_interval(point: float, draws, c_hat: float = 0.0, a: float = 0.05,
                 estimand: str = "") -> BcaInterval:
    """Accelerated bias-corrected percentile interval at level 1 - a.

    ``phi0 = Phi^{-1}(#{draws < point} / B)``; the interval runs between
    the type-7 quantiles of the draws at

        a1 = Phi(phi0 + (phi0 + z_{a/2}) / (1 - c (phi0 + z_{a/2})))
        a2 = Phi(phi0 + (phi0 + z_{1-a/2}) / (1 - c (phi0 + z_{1-a/2})))

    and the one-sided lower bound uses ``z_a`` in place of ``z_{a/2}``.
    When every draw lies on one side of the point the bounds are clamped
    to the extreme order statistics.
    """
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")
    x = np.sort(np.asarray(draws, dtype=float))
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError("no finite bootstrap draws")
    prop = np.count_nonzero(x < point) / x.size
    phi0 = float(norm.ppf(prop))
    if not np.isfinite(phi0):
        warnings.warn(f"all bootstrap draws of {estimand or 'the estimand'} lie on one side "
                      "of the point estimate; interval clamped to an extreme order statistic",
                      RuntimeWarning, stacklevel=2)
    a1 = _adjusted(phi0, c_hat, norm.ppf(a / 2))
    a2 = _adjusted(phi0, c_hat, norm.ppf(1 - a / 2))
    a1s = _adjusted(phi0, c_hat, norm.ppf(a))
    lo, hi, low1 = np.quantile(x, [a1, a2, a1s], method="linear")
    return BcaInterval(estimand, float(point), phi0, float(c_hat), float(lo), float(hi),
                       float(low1), 1 - a)


def bca_intervals(boot: BootstrapDraws, c_hat: dict | None = None,
                  a: float = 0.05) -> list[BcaInterval]:
    """Intervals for every estimand in ``boot`` (one per observation for effects)."""
    c_hat = c_hat or {}
    out = []
    for name, D in boot.draws.items():
        point = boot.point[name]
        c = c_hat.get(name, 0.0)
        if D.ndim == 1:
            out.append(bca_interval(point, D, float(np.asarray(c)), a, name))
            continue
        c = np.broadcast_to(np.asarray(c, dtype=float), (D.shape[1],))
        for k in range(D.shape[1]):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if not np.isfinite(point[k]):
                    continue
                iv = bca_interval(point[k], D[:, k], c[k], a, name)
                out.append(replace(iv, row=int(boot.rows[k])))
    return out
