import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prodspill.dgp import DgpConfig, NonlinearProcess
from prodspill.estimation.pipeline import EstimateOptions
from prodspill.estimation.sieve import SieveSpec
from prodspill.montecarlo import (ExperimentAborted, ExperimentSpec, metrics,
                                  rejection_frequency, run_experiment)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-5, 5))
def test_rmse_at_least_mae_scalar(estimates, truth):
    mean, rmse, mae = metrics(estimates, truth)
    assert rmse >= mae - 1e-12 >= -1e-12
    assert mean == pytest.approx(np.mean(estimates))
    assert rmse == pytest.approx(np.sqrt(np.mean((np.array(estimates) - truth) ** 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 1000))
def test_rmse_at_least_mae_per_observation(reps, n, seed):
    rng = np.random.default_rng(seed)
    est = [rng.normal(size=n) for _ in range(reps)]
    tru = [rng.normal(size=n) for _ in range(reps)]
    mean, rmse, mae = metrics(est, tru)
    assert rmse >= mae - 1e-12 and mae >= 0
    assert mean == pytest.approx(np.mean([e.mean() for e in est]))


def test_rejection_frequency():
    assert rejection_frequency([0.0, 1.0, 2.5, -3.0]) == 0.5
    assert rejection_frequency([1.7], level=0.90) == 1.0
    with pytest.raises(ValueError):
        rejection_frequency([])


def test_spec_round_trip(tmp_path):
    spec = ExperimentSpec(dgp=DgpConfig(omega_process=NonlinearProcess()), n_list=(50, 100),
                          reps=3, estimators=("main", "alt2"), scenario="iii",
                          options=EstimateOptions(sieve=SieveSpec(degree=3)), label="x")
    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    assert ExperimentSpec.from_json(tmp_path / "s.json") == spec
    with pytest.raises(ValueError, match="unknown estimator"):
        ExperimentSpec(estimators=("magic",))


def test_small_experiment_is_deterministic():
    spec = ExperimentSpec(n_list=(30,), reps=3, estimators=("main", "alt1", "alt2"), seed=4)
    a = run_experiment(spec)
    b = run_experiment(spec, n_jobs=2)
    assert a.frame().equals(b.frame())
    row = a.row("main", "beta_K")
    assert row.truth == 0.25 and row.reps == 3
    assert a.row("alt2", "SP").rejection is not None
    doc = json.loads(a.to_json())
    assert doc["spec"]["reps"] == 3 and doc["failures"]["30/main"] == 0
    for r in a.rows:
        assert r.rmse >= r.mae >= 0


def test_failures_abort_with_partial_report():
    # a degree-6 sieve has more terms than a 10-firm, 3-period panel has rows
    spec = ExperimentSpec(dgp=DgpConfig(T=3), n_list=(10,), reps=2, estimators=("main",),
                          options=EstimateOptions(sieve=SieveSpec(degree=6)))
    with pytest.raises(ExperimentAborted) as err:
        run_experiment(spec)
    assert err.value.report.failures[(10, "main")] == 2


def test_main_estimator_beats_alternatives_under_the_null():
    # scenario (iii): no spillovers at all; the alternative's spurious effect stays large
    spec = ExperimentSpec(n_list=(400,), reps=6, estimators=("main", "alt2"),
                          scenario="iii", seed=0)
    rep = run_experiment(spec)
    main_bias = abs(rep.row("main", "SP").mean - rep.row("main", "SP").truth)
    alt_bias = abs(rep.row("alt2", "SP").mean - rep.row("alt2", "SP").truth)
    assert alt_bias > 5 * main_bias
