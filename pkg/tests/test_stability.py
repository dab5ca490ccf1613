import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncnet.costs import NoiseParams
from asyncnet.netmodel import (Bernoulli, BernoulliLink, Beta, CombinationModel, Constant, MeanGraph,
                               StepSizeModel, analytic_moments, ring_graph_links)
from asyncnet.stability import (FAIL, MARGINAL, PASS, bound_envelope, build_report, compare, fourth_bound,
                                model_bound, read_report_scalars, required_horizon, write_report)

RING = CombinationModel(3, ring_graph_links(3, BernoulliLink(0.8, 0.5)))
NOISE = NoiseParams(alpha=2.0, sigma_v_sq=0.02)


def report_for(dist, noise=NOISE, lam=(1.0, 1.0)):
    sm = StepSizeModel.uniform(dist, 3)
    ms = analytic_moments(MeanGraph.from_model(RING), sm, RING)
    return build_report([lam] * 3, noise, ms, mu_upper=sm.upper)


def test_ring3_benchmark_quantities():
    r = report_for(Bernoulli(0.5, 0.1))
    assert r.gamma_sq == pytest.approx([0.905] * 3)
    assert r.beta == pytest.approx(0.915)
    assert r.theta == pytest.approx(0.005)
    assert r.kappa == 1.0
    assert r.nu_o == pytest.approx(0.1)
    assert r.b == pytest.approx(0.02)
    assert r.msd_bound == pytest.approx(2e-3)
    assert r.steady_state_limit == pytest.approx(0.005 * 0.02 / 0.085)
    assert r.ms_condition and not r.fourth_condition


def test_smaller_step_passes_fourth_order():
    r = report_for(Bernoulli(0.5, 0.05))
    assert r.fourth_condition
    assert r.b4 == pytest.approx(0.12)
    assert fourth_bound(r) == pytest.approx(0.12 ** 2 * (0.05 / math.sqrt(0.5)) ** 2)


def test_large_constant_step_fails():
    r = report_for(Constant(0.5))
    assert r.ms_status == FAIL
    assert r.ms_ratio[0] == pytest.approx(0.5)
    with pytest.raises(ValueError, match="fourth-order condition"):
        fourth_bound(r)


def test_beta_example_ratio():
    r = report_for(Beta.from_ratio(2.0, 1.5, 0.5))
    assert r.ms_ratio == pytest.approx([0.25] * 3)
    assert r.ms_condition


def test_beta_bound_doubles_bernoulli_and_grows_with_xi():
    base = model_bound(Bernoulli(0.5, 0.1), 1.0, 1.0, 2.0)
    assert abs(model_bound(Beta.from_ratio(2.0, 1.5, 0.5), 1.0, 1.0, 2.0) - 2 * base) <= 1e-12
    seq = [model_bound(Beta.from_ratio(xi, 1.5, 0.5), 1.0, 1.0, 2.0) for xi in (1, 2, 4, 6)]
    assert all(a < b for a, b in zip(seq, seq[1:]))
    assert model_bound(Constant(0.1), 1.0, 1.0, 2.0) == base


def test_compare_guard_band():
    assert compare(1.0, 2.0) == PASS
    assert compare(2.0, 1.0) == FAIL
    assert compare(1.0, 1.0) == MARGINAL


@given(st.floats(0.01, 0.99), st.floats(1e-3, 1.0), st.floats(0.0, 5.0), st.floats(0.1, 3.0))
def test_condition_implications(q, mu, alpha, lam):
    r = report_for(Bernoulli(q, mu), NoiseParams(alpha, 0.01), (lam, lam * 1.5))
    if r.ms_condition:
        assert r.beta < 1
        assert r.steady_state_limit <= r.msd_bound * (1 + 1e-12)
    if r.fourth_condition:
        assert r.ms_condition
    assert r.nu_o <= r.nu * (1 + 1e-12)


def test_envelope_recursion():
    r = report_for(Bernoulli(0.5, 0.1))
    env = bound_envelope(r, 1.0, 50)
    assert env.values[0] == 1.0
    v = np.empty(51)
    v[0] = 1.0
    for t in range(1, 51):
        v[t] = r.beta * v[t - 1] + r.theta * r.sigma_v_sq
    assert np.allclose(env.values, v, rtol=1e-12)
    assert env.limit == pytest.approx(r.steady_state_limit)


def test_envelope_flags_divergent_beta():
    assert bound_envelope(report_for(Constant(1.0)), 1.0, 10).divergent


def test_required_horizon_puts_transient_under_one_percent():
    r = report_for(Bernoulli(0.5, 0.1))
    T = required_horizon(r, 1.0, 0.5)
    start = int(T * 0.5)
    assert r.beta ** start * 1.0 <= 0.01 * r.steady_state_limit * 1.0001


def test_zero_mean_step_is_rejected():
    sm = StepSizeModel.uniform(Constant(0.1), 3)
    ms = analytic_moments(MeanGraph.from_model(RING), sm, RING)
    ms.mu_moments[1] = 0
    with pytest.raises(ValueError, match="agent 1"):
        build_report([(1.0, 1.0)] * 3, NOISE, ms)


def test_report_files_round_trip(tmp_path):
    r = report_for(Bernoulli(0.5, 0.1))
    write_report(r, tmp_path / "s.txt", tmp_path / "s.csv")
    back = read_report_scalars(tmp_path / "s.txt")
    assert back["beta"] == r.beta and back["msd_bound"] == r.msd_bound
    assert back["ms_condition"] == "pass"
    assert (tmp_path / "s.csv").read_text().count("\n") == 4
