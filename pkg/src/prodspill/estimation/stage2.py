"""Second stage: profiled sieve nonlinear least squares.

With ``x`` the production regressors (k, l, ... ) and ``kappa`` the part of
productivity identified in stage 1, the model is

    y*_it = x_it' b + h(z_{i,t-1}(b)) + error,
    z_{i,t-1}(b) = (kappa - x'b at (i,t-1), G_{i,t-1},
                    peer average of (kappa - x'b) at t-1, ...).

Every component of z is affine in ``b``; ``h`` is a polynomial whose
coefficients enter linearly, so for fixed ``b`` they come from a linear
least-squares fit and the outer search runs over ``b`` only.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.stats import qmc

from ..panel import PanelData, lag_index
from ..peers import BidimensionalWeights, PeerWeights
from .sieve import PolynomialBasis, SieveSpec
from .stage1 import Stage1Result

__all__ = [
    "Stage2Error",
    "Stage2Workspace",
    "Stage2Fit",
    "ProfiledObjective",
    "production_regressors",
    "build_stage2_inputs",
    "stage2_nls",
]

log = logging.getLogger(__name__)


class Stage2Error(RuntimeError):
    pass


def production_regressors(panel: PanelData, spec: str = "cobb_douglas",
                          use_labor: bool = True) -> tuple[np.ndarray, tuple[str, ...]]:
    """Columns of the production function left after stage 1, and their names."""
    k, l = panel.k, panel.l
    if spec == "cobb_douglas":
        cols = {"beta_K": k, "beta_L": l}
    elif spec == "translog":
        cols = {"beta_K": k, "beta_L": l, "beta_KK": 0.5 * k ** 2, "beta_LL": 0.5 * l ** 2,
                "beta_KL": k * l}
    else:
        raise ValueError(f"unknown production spec {spec!r}")
    if not use_labor:
        cols = {n: v for n, v in cols.items() if "L" not in n[5:]}
    return np.column_stack(list(cols.values())), tuple(cols)


@dataclass
class Stage2Workspace:
    """Precomputed arrays for the stage-2 objective.

    For the ``N`` estimation rows: ``z(b) = A - C @ b`` with ``A`` of shape
    (N, d) and ``C`` of shape (N, d, P).
    """

    rows: np.ndarray
    lag_rows: np.ndarray
    y_star: np.ndarray
    X: np.ndarray
    A: np.ndarray
    C: np.ndarray
    param_names: tuple
    z_names: tuple
    dummies: np.ndarray | None = None
    dummy_names: tuple = ()
    dropped_empty: int = 0
    renormalized: int = 0
    weights: object = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def z(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        return self.A - self.C @ beta

    def subset(self, keep) -> "Stage2Workspace":
        keep = np.asarray(keep)
        d = None if self.dummies is None else self.dummies[keep]
        return Stage2Workspace(self.rows[keep], self.lag_rows[keep], self.y_star[keep],
                               self.X[keep], self.A[keep], self.C[keep], self.param_names,
                               self.z_names, d, self.dummy_names, self.dropped_empty,
                               self.renormalized, self.weights, dict(self.meta))


def _dummy_matrix(labels: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Treatment-coded dummies (first level dropped; the basis has the constant)."""
    codes, levels = pd.factorize(labels, sort=True)
    if len(levels) < 2:
        return np.empty((len(labels), 0)), ()
    D = np.zeros((len(labels), len(levels) - 1))
    hit = codes > 0
    D[np.flatnonzero(hit), codes[hit] - 1] = 1.0
    return D, tuple(str(v) for v in levels[1:])


def build_stage2_inputs(panel: PanelData, stage1: Stage1Result,
                        weights: PeerWeights | BidimensionalWeights | None,
                        spec: str = "cobb_douglas", include_G: bool = True,
                        sieve: SieveSpec | None = None,
                        renormalize: bool = True, y=None) -> Stage2Workspace:
    """Assemble y*, the regressors and the affine map b -> z for every usable row.

    A row is usable when the firm is observed in the previous year and, in
    spillover mode, the previous-year peer set is non-empty. Peers lacking a
    finite value get their weight spread over the rest when
    ``renormalize`` is True; otherwise the row is dropped.

    Parameters
    ----------
    weights : PeerWeights, BidimensionalWeights or None
        None drops the spillover regressor (exogenous Markov first step).
    y : array_like, optional
        Replacement log output (bootstrap samples).
    """
    sieve = sieve or SieveSpec()
    X_all, names = production_regressors(panel, spec, stage1.use_labor)
    kappa = stage1.kappa(panel)
    y_star = stage1.y_star(panel, y)
    lag = lag_index(panel, 1)
    has_lag = lag >= 0

    columns_A = [kappa]
    columns_C = [X_all]
    z_names = ["omega_lag"]
    if include_G:
        columns_A.append(np.asarray(panel.G, dtype=float))
        columns_C.append(np.zeros_like(X_all))
        z_names.append("G_lag")

    usable = has_lag.copy()
    renorm_rows = np.zeros(len(panel), dtype=bool)
    dropped_empty = 0
    spill_dims = []
    if isinstance(weights, BidimensionalWeights):
        spill_dims = [("spill0_lag", weights.weights0), ("spill1_lag", weights.weights1)]
    elif weights is not None:
        spill_dims = [("spill_lag", weights)]

    for name, W in spill_dims:
        lagged_empty = np.ones(len(panel), dtype=bool)
        lagged_empty[has_lag] = W.empty[lag[has_lag]]
        if lagged_empty[has_lag].all() and len(spill_dims) > 1:
            # a peer type that never occurs is dropped as a dimension
            log.info("spillover dimension %s has no peers anywhere; omitted", name)
            continue
        coverage = W.coverage(kappa)
        wk = W.lag(kappa, renormalize=renormalize)
        wx = np.column_stack([W.lag(X_all[:, c], renormalize=renormalize)
                              for c in range(X_all.shape[1])])
        cov_lag = np.zeros(len(panel))
        cov_lag[has_lag] = coverage[lag[has_lag]]
        renorm_rows |= has_lag & ~lagged_empty & (cov_lag < 1 - 1e-12)
        dropped_empty += int(np.sum(usable & lagged_empty))
        usable &= ~lagged_empty
        columns_A.append(wk)
        columns_C.append(wx)
        z_names.append(name)

    rows = np.flatnonzero(usable)
    lag_rows = lag[rows]
    A = np.column_stack([c[lag_rows] for c in columns_A])
    C = np.stack([c[lag_rows] for c in columns_C], axis=1)
    finite = np.isfinite(A).all(axis=1) & np.isfinite(C).all(axis=(1, 2))
    if not finite.all():
        dropped_empty += int((~finite).sum())
        rows, lag_rows, A, C = rows[finite], lag_rows[finite], A[finite], C[finite]
    if renorm_rows[rows].any():
        log.info("renormalized %d peer-weight rows over available peers",
                 int(renorm_rows[rows].sum()))

    dummy_blocks, dummy_names = [], []
    for term in sieve.fixed_effects:
        cols = term.split("*")
        missing = [c for c in cols if c not in panel.labels]
        if missing:
            raise ValueError(f"fixed-effect column(s) {missing} not in the panel labels")
        label = np.array(["|".join(parts) for parts in zip(
            *[panel.labels[c][rows] for c in cols])])
        D, nm = _dummy_matrix(label)
        dummy_blocks.append(D)
        dummy_names += [f"{term}[{v}]" for v in nm]
    if sieve.time_effects:
        D, nm = _dummy_matrix(panel.year[rows].astype(str))
        dummy_blocks.append(D)
        dummy_names += [f"year[{v}]" for v in nm]
    dummies = np.column_stack(dummy_blocks) if dummy_blocks else None

    return Stage2Workspace(rows, lag_rows, y_star[rows], X_all[rows], A, C, names,
                           tuple(z_names), dummies, tuple(dummy_names), dropped_empty,
                           int(renorm_rows[rows].sum()), weights,
                           {"spec": spec, "include_G": include_G, "n_panel": len(panel),
                            "panel": panel})


@dataclass
class ProfiledSolution:
    sse: float
    gamma: np.ndarray
    delta: np.ndarray
    residual: np.ndarray
    basis: PolynomialBasis
    Z: np.ndarray
    design_rank: int
    design_cond: float


class ProfiledObjective:
    """SSE(b) with the sieve (and dummy) coefficients profiled out."""

    def __init__(self, ws: Stage2Workspace, sieve: SieveSpec, cond_limit: float = 1e12):
        if len(ws) == 0:
            raise Stage2Error("stage-2 sample is empty")
        self.ws = ws
        self.sieve = sieve
        self.cond_limit = cond_limit
        self.n_evals = 0

    def solve(self, beta, check: bool = True) -> ProfiledSolution:
        ws = self.ws
        beta = np.asarray(beta, dtype=float)
        Z = ws.z(beta)
        basis = PolynomialBasis.fitted(Z, self.sieve.degree, self.sieve.standardize)
        B = basis(Z)
        D = B if ws.dummies is None else np.hstack([B, ws.dummies])
        target = ws.y_star - ws.X @ beta
        coef, _, rank, sv = np.linalg.lstsq(D, target, rcond=None)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        if check and (rank < D.shape[1] or cond > self.cond_limit):
            raise Stage2Error(
                f"profiled least-squares design is rank deficient: rank {rank} of "
                f"{D.shape[1]} columns, condition number {cond:.3g} "
                f"({len(ws)} rows, regressors {', '.join(ws.z_names)})")
        resid = target - D @ coef
        self.n_evals += 1
        return ProfiledSolution(float(resid @ resid), coef[: len(basis)], coef[len(basis):],
                                resid, basis, Z, int(rank), cond)

    def sse(self, beta) -> float:
        return self.solve(beta).sse

    def gradient(self, beta, sol: ProfiledSolution | None = None) -> np.ndarray:
        """dSSE/db by the envelope theorem (profiled coefficients held fixed)."""
        sol = sol or self.solve(beta)
        H = sol.basis.gradient(sol.Z, sol.gamma)           # (N, d)
        dfit = self.ws.X - np.einsum("nd,ndp->np", H, self.ws.C)
        return -2.0 * sol.residual @ dfit

    def mean_value_and_grad(self, beta):
        sol = self.solve(beta)
        N = len(self.ws)
        return sol.sse / N, self.gradient(beta, sol) / N


@dataclass
class Stage2Fit:
    beta: np.ndarray
    param_names: tuple
    gamma: np.ndarray
    delta: np.ndarray
    sse: float
    basis: PolynomialBasis
    Z: np.ndarray
    residual: np.ndarray
    grad_norm: float
    converged: bool
    n_starts: int
    start_results: list
    design_cond: float

    def h(self, Z=None) -> np.ndarray:
        Z = self.Z if Z is None else Z
        return self.basis(Z) @ self.gamma

    def params(self) -> dict[str, float]:
        return dict(zip(self.param_names, map(float, self.beta)))


def ols_start(ws: Stage2Workspace) -> np.ndarray:
    """Starting b from a linear approximation of h.

    With h linear, y* is linear in (x, kappa_lag, x_lag, G_lag, peer lags);
    the coefficients on the current x estimate b.
    """
    parts = [ws.X, np.ones((len(ws), 1)), ws.A]
    for j in range(ws.C.shape[1]):
        if np.any(ws.C[:, j, :]):
            parts.append(ws.C[:, j, :])
    if ws.dummies is not None:
        parts.append(ws.dummies)
    D = np.hstack(parts)
    coef = np.linalg.lstsq(D, ws.y_star, rcond=None)[0]
    return coef[: ws.n_params]


def _start_points(init, n_starts, radius):
    P = len(init)
    if n_starts <= 1:
        return init[None, :]
    if P == 1:
        offsets = np.linspace(-radius, radius, n_starts)[:, None]
    elif P == 2 and int(round(np.sqrt(n_starts))) ** 2 == n_starts:
        g = np.linspace(-radius, radius, int(round(np.sqrt(n_starts))))
        offsets = np.array([(a, b) for a in g for b in g])
    else:
        offsets = (qmc.Halton(d=P, scramble=False).random(n_starts + 1)[1:] * 2 - 1) * radius
    # the unperturbed start goes first so ties favour it
    pts = init[None, :] + offsets
    return np.vstack([init[None, :], pts[:-1]]) if n_starts > 1 else pts


def _scan_starts(obj: ProfiledObjective, box, n_keep: int = 8) -> list[np.ndarray]:
    """Local minima of the profiled SSE on a lattice over a box.

    41 points per axis for one or two parameters (local minima over the
    axis neighbours), a 512-point Halton set otherwise (lowest values).
    Points where the design is singular count as +inf. At most ``n_keep``
    points are returned, lowest SSE first.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    P = len(lo)
    if P <= 2:
        axes = [np.linspace(a, b, 41) for a, b in zip(lo, hi)]
        pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(P, -1).T
    else:
        pts = lo + qmc.Halton(d=P, scramble=False).random(512) * (hi - lo)
    vals = np.full(len(pts), np.inf)
    for i, b in enumerate(pts):
        try:
            vals[i] = obj.solve(b).sse
        except (Stage2Error, np.linalg.LinAlgError):
            continue
    if P <= 2:
        grid = vals.reshape([41] * P)
        padded = np.pad(grid, 1, constant_values=np.inf)
        local = np.ones_like(grid, dtype=bool)
        for ax in range(P):
            for step in (-1, 1):
                nb = np.roll(padded, step, axis=ax)[tuple([slice(1, -1)] * P)]
                local &= grid <= nb
        cand = np.flatnonzero(local.ravel() & np.isfinite(vals))
    else:
        cand = np.flatnonzero(np.isfinite(vals))
    cand = cand[np.argsort(vals[cand])][:n_keep]
    return [pts[i] for i in cand]


def _newton_polish(obj: ProfiledObjective, beta, gtol, max_iter=25):
    """Damped Newton steps with a finite-difference Hessian of the analytic gradient."""
    f, g = obj.mean_value_and_grad(beta)
    for _ in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            break
        P = len(beta)
        H = np.empty((P, P))
        for j in range(P):
            h = 1e-6 * max(1.0, abs(beta[j]))
            e = np.zeros(P)
            e[j] = h
            H[:, j] = (obj.mean_value_and_grad(beta + e)[1]
                       - obj.mean_value_and_grad(beta - e)[1]) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if g @ step >= 0:
            step = -g
        t = 1.0
        while t > 1e-8:
            f_new, g_new = obj.mean_value_and_grad(beta + t * step)
            if f_new <= f:
                break
            t *= 0.5
        else:
            break
        beta, f, g = beta + t * step, f_new, g_new
    return beta, f, g


def stage2_nls(ws: Stage2Workspace, sieve: SieveSpec | None = None, init=None,
               n_starts: int = 16, start_radius: float = 0.25, gtol: float = 1e-7,
               ftol: float = 1e-10, strict: bool = True, scan_box=None) -> Stage2Fit:
    """Minimize the profiled stage-2 sum of squares over the production parameters.

    Parameters
    ----------
    init : array_like, optional
        Centre of the multi-start box; defaults to :func:`ols_start`.
    n_starts : int
        Number of starting points (the first is ``init`` itself).
    gtol : float
        Convergence requires the sup-norm of the gradient of SSE/N below this.
    strict : bool
        Raise :class:`Stage2Error` if no start converges.
    scan_box : (lower, upper), optional
        Also start from the best points of a lattice over this box, for
        objectives with distant local minima (tiny samples).
    """
    sieve = sieve or SieveSpec()
    obj = ProfiledObjective(ws, sieve)
    init = ols_start(ws) if init is None else np.asarray(init, dtype=float).ravel()
    if init.shape != (ws.n_params,) or not np.all(np.isfinite(init)):
        raise Stage2Error(f"invalid starting values {init!r}")
    obj.solve(init)  # surfaces rank problems before the search

    starts = list(_start_points(init, n_starts, start_radius))
    if scan_box is not None:
        lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), init.shape) for b in scan_box)
        starts += _scan_starts(obj, (lo, hi))
    results = []
    for idx, start in enumerate(starts):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(obj.mean_value_and_grad, start, jac=True, method="BFGS",
                               options={"gtol": gtol * 0.1, "maxiter": 500})
            beta, f, g = _newton_polish(obj, res.x, gtol)
        except (Stage2Error, np.linalg.LinAlgError, FloatingPointError) as exc:
            results.append({"start": idx, "ok": False, "error": str(exc)})
            continue
        results.append({"start": idx, "ok": True, "beta": beta, "f": float(f),
                        "gnorm": float(np.max(np.abs(g)))})

    good = [r for r in results if r["ok"]]
    if not good:
        raise Stage2Error("stage-2 optimizer failed from every start: "
                          + "; ".join(r["error"] for r in results))
    best_f = min(r["f"] for r in good)
    # ties (relative ftol) go to the lowest start index
    best = next(r for r in good if r["f"] <= best_f * (1 + ftol) + 1e-300)
    converged = best["gnorm"] < gtol
    if not converged and strict:
        raise Stage2Error(f"stage-2 optimizer did not converge: gradient sup-norm "
                          f"{best['gnorm']:.3g} >= {gtol:g} after {len(results)} starts")
    sol = obj.solve(best["beta"])
    return Stage2Fit(best["beta"], ws.param_names, sol.gamma, sol.delta, sol.sse, sol.basis,
                     sol.Z, sol.residual, best["gnorm"], converged, len(results), results,
                     sol.design_cond)
