import numpy as np
import pytest

from prodspill.dgp import simulate_survey_panel
from prodspill.estimation.effects import derive_effects
from prodspill.estimation.pipeline import estimate


@pytest.fixture(scope="module")
def fitted(sim_panel):
    return estimate(sim_panel)


def test_effects_are_gradients_of_h(fitted):
    res = fitted
    ws, s2 = res.workspace, res.stage2
    Z = ws.z(s2.beta)
    for j, name in enumerate(("AR", "DL", "SP")):
        h = 1e-6 * np.maximum(1.0, np.abs(Z[:, j]))
        up, dn = Z.copy(), Z.copy()
        up[:, j] += h
        dn[:, j] -= h
        fd = (s2.h(up) - s2.h(dn)) / (2 * h)
        got = getattr(res.effects, name)
        assert np.max(np.abs(got - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-6


def test_til_identity_by_explicit_sum(fitted, sim_panel):
    eff = fitted.effects
    W = eff.weights
    dl = dict(zip(eff.rows.tolist(), eff.DL))
    for pos in range(0, len(eff.rows), 37):
        row = W.row(int(eff.lag_rows[pos]))
        ok = {q: w for q, w in row.items() if q in dl}
        if not ok:
            assert np.isnan(eff.TIL[pos])
            continue
        total = sum(ok.values())
        expect = eff.SP[pos] * sum(w / total * dl[q] for q, w in ok.items())
        assert eff.TIL[pos] == pytest.approx(expect, rel=1e-12)
        # pairwise indirect learning adds up to TIL
        assert sum(eff.indirect_learning(pos).values()) == pytest.approx(eff.TIL[pos], rel=1e-10)


def test_effects_frame_and_means(fitted, sim_panel):
    frame = fitted.effects.frame(sim_panel)
    assert list(frame.columns[:3]) == ["firm_id", "year", "row"]
    assert fitted.effects.means()["SP"] == pytest.approx(np.nanmean(fitted.effects.SP))


def test_bidimensional_til_sums_both_peer_types():
    p = simulate_survey_panel(n=200, T=6, seed=6)
    res = estimate(p, scheme="fdi_split", n_starts=4)
    eff = res.effects
    assert eff.SP0 is not None and np.all(np.isnan(eff.SP))
    dl_full = np.full(len(p), np.nan)
    dl_full[eff.rows] = eff.DL
    parts = []
    for W, sp in ((eff.weights.weights0, eff.SP0), (eff.weights.weights1, eff.SP1)):
        avg = W.lag(dl_full, renormalize=True)[eff.lag_rows]
        parts.append(np.where(W.empty[eff.lag_rows], 0.0, sp * avg))
    ok = np.isfinite(eff.TIL)
    assert ok.mean() > 0.8
    assert np.allclose(eff.TIL[ok], (parts[0] + parts[1])[ok], rtol=1e-12)


def test_derive_effects_is_deterministic(fitted):
    a = derive_effects(fitted.workspace, fitted.stage2.beta, fitted.stage2.gamma,
                       fitted.stage2.basis)
    assert np.array_equal(a.SP, fitted.effects.SP, equal_nan=True)
