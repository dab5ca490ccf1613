import numpy as np
import pytest

from asyncnet import engine, records
from asyncnet.costs import DataSample, NoiseParams, QuadraticCost
from asyncnet.engine import (ExperimentRecord, NetworkState, Scenario, atc_step, error_step, run_experiment,
                             steady_state, window_estimate)
from asyncnet.netmodel import Bernoulli, BernoulliLink, CombinationModel, Constant, StepSizeModel, ring_graph_links
from asyncnet.verify import lms_gap, recursion_gap

W_OPT = np.array([0.6, 0.8j])


def ring_scenario(step=Bernoulli(0.5, 0.1), sigma_n_sq=0.01, w_init=None, n=3):
    costs = [QuadraticCost(np.eye(2), W_OPT, sigma_n_sq) for _ in range(n)]
    cm = CombinationModel(n, ring_graph_links(n, BernoulliLink(0.8, 0.5)))
    return Scenario(costs, StepSizeModel.uniform(step, n), cm, NoiseParams(2.0, 0.02), w_init)


def test_zero_step_and_identity_leave_state_unchanged(rng):
    scn = ring_scenario()
    w = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    data = [c.sample(rng) for c in scn.costs]
    out = atc_step(NetworkState.initial(w), np.eye(3), np.zeros(3), data, scn.costs)
    assert np.array_equal(out.w, w)
    assert out.iteration == 1 and not out.diverged


def test_atc_step_rejects_mismatched_shapes(rng):
    scn = ring_scenario()
    with pytest.raises(ValueError):
        atc_step(NetworkState.initial(np.zeros((3, 2))), np.eye(2), np.zeros(3), [], scn.costs)


def test_minimizer_is_fixed_with_exact_data():
    scn = ring_scenario(sigma_n_sq=0.0, w_init=np.tile(W_OPT, (3, 1)))
    ser = engine.simulate_trials(scn, [1, 2, 3], 300)
    assert ser.msd.max() == 0.0


def test_single_agent_reduces_to_lms():
    assert lms_gap(QuadraticCost(np.eye(2), W_OPT, 0.01), 0.1, 500, 7) <= 1e-12


def test_error_step_trivial_cases(rng):
    scn = ring_scenario()
    zero = np.zeros((3, 4), dtype=complex)
    assert np.array_equal(error_step(zero, np.eye(3), np.full(3, 0.1), np.zeros((3, 2)), scn.costs), zero)
    e = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    err = np.hstack([e, e.conj()])
    out = error_step(err, np.eye(3), np.full(3, 0.1), np.zeros((3, 2)), scn.costs)
    assert np.allclose(out, 0.9 * err, atol=1e-15)


def test_error_step_refuses_non_quadratic_costs():
    with pytest.raises(TypeError):
        error_step(np.zeros((1, 2)), np.eye(1), [0.1], np.zeros((1, 1)), [object()])


def test_direct_and_error_form_agree():
    assert recursion_gap(ring_scenario(), 500, 3) <= 1e-10


def test_batched_kernel_matches_reference_steps():
    scn = ring_scenario()
    seed = 99
    ser = engine.simulate_trials(scn, [seed], 40)
    blk = engine.draw_block(scn, engine.trial_streams(seed), engine.DRAW_BLOCK)
    state = NetworkState.initial(scn.w_init)
    for i in range(40):
        data = [DataSample(blk.u[i, k], blk.d[i, k]) for k in range(3)]
        state = atc_step(state, blk.A[i], blk.mu[i], data, scn.costs)
        msd = np.sum(np.abs(W_OPT - state.w) ** 2, axis=1)
        assert np.allclose(ser.msd[0, i + 1], msd, rtol=1e-12, atol=1e-15)


def test_horizon_zero_keeps_only_initial_condition():
    rec = run_experiment(ring_scenario(), 1, 0, 5)
    assert rec.msd.shape == (1, 3)
    assert rec.msd_max[0] == pytest.approx(1.0)
    assert rec.msd_se[0, 0] == 0.0 and rec.n_trials == 1


def test_trial_seeds_and_determinism():
    a = run_experiment(ring_scenario(), 20, 50, 1000)
    b = run_experiment(ring_scenario(), 20, 50, 1000)
    assert a.equals(b)
    assert list(a.seeds) == [1000 ^ t for t in range(20)]


def test_worker_count_does_not_change_results(monkeypatch):
    scn = ring_scenario()
    one = run_experiment(scn, 40, 60, 8, workers=1)
    monkeypatch.setenv(engine.THREADS_ENV, "8")
    many = run_experiment(scn, 40, 60, 8)
    assert one.equals(many)


def test_series_are_nonnegative_with_standard_errors():
    rec = run_experiment(ring_scenario(), 10, 100, 3)
    for name in ("msd", "disagreement", "m4", "msd_max", "disagreement_mean", "disagreement_maxpair", "m4_max"):
        assert np.all(getattr(rec, name) >= 0)
        assert getattr(rec, name + "_se").shape == getattr(rec, name).shape
    assert np.all(rec.disagreement_maxpair >= rec.disagreement_mean - 1e-15)


def test_divergence_is_flagged_without_nan():
    rec = run_experiment(ring_scenario(step=Constant(1.5)), 6, 400, 11)
    assert rec.diverged.all()
    assert np.all(rec.divergence_iter > 0)
    assert np.all(np.isfinite(rec.msd)) and np.all(np.isfinite(rec.m4))
    assert rec.peak_msd.min() > engine.DIVERGENCE_THRESHOLD


def test_diverged_trials_excluded_only_when_condition_fails():
    series = engine.TrialSeries(
        msd=np.array([[[1.0]], [[1e13]]]), disagreement=np.zeros((2, 1, 1)),
        pair_mean=np.zeros((2, 1)), pair_max=np.zeros((2, 1)),
        diverged=np.array([False, True]), divergence_iter=np.array([-1, 0]))
    kept = engine.aggregate(series, [0, 1], 0, exclude_diverged=True)
    assert kept.n_used == 1 and kept.msd[0, 0] == 1.0
    full = engine.aggregate(series, [0, 1], 0, exclude_diverged=False)
    assert full.n_used == 2


def test_steady_state_of_constant_and_geometric_series():
    c = np.full(100, 3.0)
    est = window_estimate(c, np.zeros(100), 0.5)
    assert (est.value, est.se) == (3.0, 0.0)
    t = np.arange(2000)
    g = 2.0 + 5.0 * 0.9 ** t
    assert window_estimate(g, np.zeros_like(g), 0.25).value == pytest.approx(2.0, rel=0.01)


def test_steady_state_window_validation():
    rec = run_experiment(ring_scenario(), 2, 15, 0)
    with pytest.raises(ValueError, match="at least 10"):
        steady_state(rec, 0.5)
    with pytest.raises(ValueError):
        steady_state(rec, 0.7)


def test_record_csv_round_trip(tmp_path):
    rec = run_experiment(ring_scenario(), 5, 30, 2 ** 63 + 5)
    records.write_record(rec, tmp_path)
    back = records.read_record(tmp_path)
    assert isinstance(back, ExperimentRecord)
    assert back.equals(rec)
