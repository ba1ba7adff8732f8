import numpy as np
import pytest

from prodspill.alternatives import (VARIANTS, AltRegressionError, alt1_regression,
                                    alt2_regression, alt_variant, linear_regression,
                                    proxy_exogenous_markov)
from prodspill.dgp import DgpConfig, simulate_panel
from prodspill.panel import lag_index
from prodspill.peers import build_weights


@pytest.fixture(scope="module")
def setup(sim_panel):
    first = proxy_exogenous_markov(sim_panel)
    return sim_panel, first, build_weights(sim_panel)


def test_ols_and_hc0_match_textbook_formulas():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
    y = X @ [1.0, 2.0, -1.0] + rng.normal(size=200) * (1 + np.abs(X[:, 1]))
    coef, se, resid = linear_regression(y, X)
    assert np.allclose(coef, np.linalg.lstsq(X, y, rcond=None)[0])
    bread = np.linalg.inv(X.T @ X)
    cov = bread @ (X.T * resid ** 2) @ X @ bread
    assert np.allclose(se, np.sqrt(np.diag(cov)))


def test_just_identified_iv():
    rng = np.random.default_rng(1)
    z = rng.normal(size=500)
    u = rng.normal(size=500)
    x = z + u
    y = 0.5 * x + u
    X = np.column_stack([np.ones(500), x])
    Z = np.column_stack([np.ones(500), z])
    coef, _, _ = linear_regression(y, X, Z)
    assert np.allclose(coef, np.linalg.solve(Z.T @ X, Z.T @ y))
    assert abs(coef[1] - 0.5) < 0.1
    ols = linear_regression(y, X)[0]
    assert ols[1] > 0.9  # endogeneity bias that IV removes
    with pytest.raises(AltRegressionError):
        linear_regression(y, X, np.column_stack([np.ones(500), np.ones(500)]))


def test_first_step_drops_g_and_spillover(setup):
    panel, first, _ = setup
    assert np.isfinite(first.beta_K)
    assert first.omega.shape == (len(panel),)
    assert len(first.gamma_exo) == 3  # 1, omega, omega^2


def test_alt1_regressors_by_explicit_construction(setup):
    panel, first, W = setup
    r = alt1_regression(first.omega, panel, W)
    lag1, lag2 = lag_index(panel, 1), lag_index(panel, 2)
    # build peer_G_lag2 by hand: at (i, t) average G_{j,t-2} over peers j of i in t-1
    G = panel.G
    y, xs = [], []
    for row in range(len(panel)):
        if lag2[row] < 0:
            continue
        p_row = lag1[row]
        peers = W.row(p_row)
        vals = [w * G[lag1[q]] for q, w in peers.items() if lag1[q] >= 0]
        mass = sum(w for q, w in peers.items() if lag1[q] >= 0)
        xs.append([1.0, sum(vals) / mass, G[p_row]])
        y.append(first.omega[row])
    coef = np.linalg.lstsq(np.array(xs), np.array(y), rcond=None)[0]
    assert np.allclose(r.coef, coef)
    assert r.n_obs == len(y)


def test_alt2_coefficients_and_z(setup):
    panel, first, W = setup
    r = alt2_regression(first.omega, panel, W)
    assert r.names == ("const", "peer_omega_lag1", "G_lag1")
    assert r.spillover_z == pytest.approx(r.coef[1] / r.se[1])
    d = r.as_dict()
    assert d["z_G_lag1"] == pytest.approx(r.z_of("G_lag1"))


@pytest.mark.parametrize("variant", list(VARIANTS))
def test_every_variant_runs(setup, variant):
    panel, first, W = setup
    r = alt_variant(first.omega, panel, W, variant)
    source, lag, dl = VARIANTS[variant]
    assert r.spillover == f"peer_{source}_lag{lag}"
    assert r.method == ("iv" if lag == 0 or dl == 0 else "ols")
    assert np.isfinite(r.coef).all() and (r.se > 0).all()


def test_unknown_variant_and_short_panel(setup):
    panel, first, W = setup
    with pytest.raises(ValueError, match="unknown variant"):
        alt_variant(first.omega, panel, W, "XII")
    short, _ = simulate_panel(DgpConfig(n=10, T=2, seed=0))
    with pytest.raises(AltRegressionError, match="lag depth"):
        alt_variant(np.zeros(len(short)), short, build_weights(short), "V")
