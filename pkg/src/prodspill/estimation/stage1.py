"""First stage: the material revenue-share equation.

The log share satisfies ``ln V = ln(E * theta) - eta`` where ``E`` is the
output elasticity of materials (a constant ``beta_M`` for Cobb-Douglas)
and ``theta = E[exp(eta)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from ..panel import PanelData, PanelValidationError

__all__ = ["Stage1Result", "Stage1Error", "stage1_cobb_douglas", "stage1_translog"]


class Stage1Error(RuntimeError):
    pass


@dataclass(frozen=True)
class Stage1Result:
    """Share-equation estimates.

    ``beta_MM, beta_KM, beta_LM`` are zero for Cobb-Douglas. ``eta`` is
    aligned with the panel rows used.
    """

    spec: str
    beta_M: float
    theta: float
    eta: np.ndarray
    beta_MM: float = 0.0
    beta_KM: float = 0.0
    beta_LM: float = 0.0
    use_labor: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def ln_betaM_theta(self) -> float:
        return float(np.log(self.beta_M * self.theta))

    def elasticity(self, panel: PanelData) -> np.ndarray:
        """Material elasticity at every row."""
        return (self.beta_M + self.beta_MM * panel.m + self.beta_KM * panel.k
                + self.beta_LM * panel.l)

    def material_terms(self, panel: PanelData) -> np.ndarray:
        """The part of ln Y explained by materials (incl. interactions)."""
        m = panel.m
        return (self.beta_M * m + 0.5 * self.beta_MM * m ** 2 + self.beta_KM * panel.k * m
                + self.beta_LM * panel.l * m)

    def y_star(self, panel: PanelData, y=None) -> np.ndarray:
        y = panel.y if y is None else np.asarray(y, dtype=float)
        return y - self.material_terms(panel)

    def kappa(self, panel: PanelData) -> np.ndarray:
        """Already-identified part of productivity from the inverted material demand."""
        log_ratio = panel.prices.log_ratio(panel.year)  # ln(P_Y / P_M)
        return (panel.m - self.material_terms(panel)
                - np.log(self.elasticity(panel) * self.theta) - log_ratio)


def _check_shares(lnV, panel):
    bad = ~np.isfinite(lnV)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise PanelValidationError(
            f"row {row} (firm {panel.firm_id[row]}, year {panel.year[row]}): "
            "material share is not strictly positive", row=row, field="M")


def _log_share(panel, lnV):
    if lnV is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            lnV = panel.log_share()
    lnV = np.asarray(lnV, dtype=float)
    _check_shares(lnV, panel)
    return lnV


def stage1_cobb_douglas(panel: PanelData, use_labor: bool = True, lnV=None) -> Stage1Result:
    """Closed-form share estimator.

    ``ln(beta_M theta)`` is the mean log share, ``theta`` the mean of
    ``exp(mean lnV - lnV)`` and ``eta = ln(beta_M theta) - lnV``. A
    replacement log-share vector may be passed as ``lnV`` (bootstrap).
    """
    lnV = _log_share(panel, lnV)
    mean_lnV = float(np.mean(lnV))
    eta = mean_lnV - lnV
    theta = float(np.mean(np.exp(eta)))
    beta_M = float(np.exp(mean_lnV) / theta)
    return Stage1Result("cobb_douglas", beta_M, theta, eta, use_labor=use_labor)


def stage1_translog(panel: PanelData, init=None, use_labor: bool = True,
                    max_nfev: int = 2000, lnV=None) -> Stage1Result:
    """Nonlinear least squares on the translog share equation.

    The product ``theta * (beta_M, beta_MM, beta_KM, beta_LM)`` is estimated
    by NLS of ln V on the log elasticity; ``theta`` is then the mean of
    ``exp(eta)`` which splits the product. Steps that make the elasticity
    non-positive anywhere in the sample are rejected.

    Parameters
    ----------
    init : sequence, optional
        Starting ``(beta_M, beta_MM, beta_KM, beta_LM)``; defaults to the
        Cobb-Douglas solution.
    lnV : array_like, optional
        Replacement log shares.
    """
    lnV = _log_share(panel, lnV)
    W = np.column_stack([np.ones(len(panel)), panel.m, panel.k, panel.l])
    if not use_labor:
        W = W[:, :3]
    if init is None:
        psi0 = np.zeros(W.shape[1])
        psi0[0] = np.exp(lnV.mean())
    else:
        cd = stage1_cobb_douglas(panel, lnV=lnV)
        psi0 = np.asarray(init, dtype=float)[: W.shape[1]] * cd.theta
    if np.any(W @ psi0 <= 0):
        raise Stage1Error("material elasticity is not positive at the initial values")

    penalty = np.full(len(lnV), 1e3)

    def resid(psi):
        e = W @ psi
        if np.any(e <= 0):
            return penalty
        return np.log(e) - lnV

    def jac(psi):
        e = W @ psi
        if np.any(e <= 0):
            return np.zeros_like(W)
        return W / e[:, None]

    sol = least_squares(resid, psi0, jac=jac, method="trf", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-12, max_nfev=max_nfev)
    if not sol.success or np.any(W @ sol.x <= 0):
        raise Stage1Error(f"translog share regression did not converge: {sol.message} "
                          f"(nfev={sol.nfev}, cost={sol.cost:.6g})")
    psi = sol.x
    eta = np.log(W @ psi) - lnV
    # the scale direction of psi makes the residuals mean-zero at the optimum;
    # remove the remaining rounding so the identity is exact
    shift = float(eta.mean())
    psi = psi * np.exp(-shift)
    eta = np.log(W @ psi) - lnV
    theta = float(np.mean(np.exp(eta)))
    b = np.zeros(4)
    b[: len(psi)] = psi / theta
    return Stage1Result("translog", float(b[0]), theta, eta, beta_MM=float(b[1]),
                        beta_KM=float(b[2]), beta_LM=float(b[3]), use_labor=use_labor,
                        diagnostics={"nfev": int(sol.nfev), "cost": float(sol.cost),
                                     "optimality": float(sol.optimality)})
