import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncnet.netmodel import (Bernoulli, BernoulliLink, Beta, BetaWeight, CombinationModel, Constant,
                               MeanGraph, StepSizeModel, analytic_moments, check_left_stochastic,
                               link_covariance_pattern, neighborhood_union, required_union_samples, ring_graph_links,
                               self_weight_positive_prob)


def test_bernoulli_step_moments():
    d = Bernoulli(0.5, 0.1)
    assert d.moment(1) == pytest.approx(0.05)
    assert d.moment(2) - d.moment(1) ** 2 == pytest.approx(0.5 * 0.5 * 0.01)
    assert d.moment(4) == pytest.approx(0.5 * 1e-4)


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1])
def test_bernoulli_needs_open_probability(q):
    with pytest.raises(ValueError):
        Bernoulli(q, 0.1)


def test_beta_step_moments_and_ratio():
    d = Beta.from_ratio(2.0, 1.5, 0.5)
    assert d.zeta == pytest.approx(3.0)
    assert d.moment(1) == pytest.approx(0.2)
    assert d.moment(2) - d.moment(1) ** 2 == pytest.approx(0.01)
    assert d.moment(2) / d.moment(1) == pytest.approx(0.25)
    xs = d.sample(np.random.default_rng(0), 400_000)
    assert xs.min() >= 0 and xs.max() <= 0.5
    for m in (1, 2, 4):
        assert np.mean(xs ** m) == pytest.approx(d.moment(m), rel=0.01)


def test_constant_step():
    d = Constant(0.3)
    assert d.moment(4) == pytest.approx(0.3 ** 4)
    assert np.all(d.sample(np.random.default_rng(0), 5) == 0.3)


def test_link_moments_match_samples(rng):
    for d in (BernoulliLink(0.8, 0.5), BetaWeight(2.0, 3.0, 0.4)):
        x = d.sample(rng, 400_000)
        assert x.mean() == pytest.approx(d.mean, rel=0.01)
        assert x.var() == pytest.approx(d.variance, rel=0.02)


def test_combination_rejects_overfull_column():
    links = {(0, 1): BernoulliLink(0.5, 0.6), (2, 1): BernoulliLink(0.5, 0.6), (1, 0): BernoulliLink(1, 0.5)}
    with pytest.raises(ValueError, match="agent 1 sum to 1.2"):
        CombinationModel(3, links)
    with pytest.raises(ValueError, match="self-loop"):
        CombinationModel(2, {(0, 0): BernoulliLink(1, 0.5)})


@st.composite
def random_models(draw):
    n = draw(st.integers(2, 5))
    links = {}
    for k in range(n):
        sources = [l for l in range(n) if l != k and draw(st.booleans())]
        budget = draw(st.floats(0.1, 1.0))
        for l in sources:
            a = budget / len(sources) * 0.999
            if draw(st.booleans()):
                links[(l, k)] = BernoulliLink(draw(st.floats(0.05, 1.0)), a)
            else:
                links[(l, k)] = BetaWeight(draw(st.floats(0.2, 5)), draw(st.floats(0.2, 5)), a)
    steps = StepSizeModel([Bernoulli(draw(st.floats(0.05, 0.95)), draw(st.floats(0.01, 1))) for _ in range(n)])
    return n, CombinationModel(n, links), steps


@settings(max_examples=40, deadline=None)
@given(random_models(), st.integers(0, 2 ** 31))
def test_realizations_are_left_stochastic(model, seed):
    n, cm, _ = model
    A = cm.sample(np.random.default_rng(seed), 200)
    assert np.all(A >= 0)
    assert np.max(np.abs(A.sum(axis=1) - 1)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(random_models())
def test_analytic_second_moment_is_left_stochastic_and_patterned(model):
    n, cm, sm = model
    graph = MeanGraph.from_model(cm)
    ms = analytic_moments(graph, sm, cm)
    assert check_left_stochastic(ms).passed
    assert not np.any((ms.C_A_dense() != 0) & ~link_covariance_pattern(graph))
    # x_rc x_nm = x_nm x_rc: invariant under swapping the Kronecker factors
    C = ms.C_A_dense().reshape(n, n, n, n)
    assert np.array_equal(C, C.transpose(1, 0, 3, 2))


def test_analytic_moments_match_monte_carlo(rng):
    cm = CombinationModel(3, ring_graph_links(3, BernoulliLink(0.8, 0.5)))
    A = cm.sample(rng, 200_000)
    dA = A - A.mean(axis=0)
    emp = np.einsum("sij,skl->ikjl", dA, dA).reshape(9, 9) / A.shape[0]
    ms = analytic_moments(MeanGraph.from_model(cm), StepSizeModel.uniform(Bernoulli(0.5, 0.1), 3), cm)
    assert np.allclose(emp, ms.C_A_dense(), atol=2e-3)
    assert np.allclose(ms.c_mu, 0.0025)


def test_mean_graph_validation_and_connectivity():
    with pytest.raises(ValueError, match="column 1"):
        MeanGraph(np.array([[1.0, 0.5], [0.0, 0.4]]))
    g = MeanGraph(np.eye(2))
    assert not g.is_connected()
    assert MeanGraph.from_model(CombinationModel(3, ring_graph_links(3, BernoulliLink(0.5, 0.3)))).is_connected()


def test_check_left_stochastic_names_bad_column():
    cm = CombinationModel(2, {(0, 1): BernoulliLink(0.5, 0.5), (1, 0): BernoulliLink(0.5, 0.5)})
    ms = analytic_moments(MeanGraph.from_model(cm), StepSizeModel.uniform(Constant(0.1), 2), cm)
    ms.C_A[0, 0] += 0.1
    rep = check_left_stochastic(ms)
    assert not rep.passed and "column 0" in rep.failures[0]


def test_neighborhood_union_recovers_mean_graph(rng):
    cm = CombinationModel(4, ring_graph_links(4, BernoulliLink(0.3, 0.5)))
    graph = MeanGraph.from_model(cm)
    n = required_union_samples(cm)
    for k, (got, want) in neighborhood_union(graph, cm, n, rng).items():
        assert got == want
    with pytest.raises(ValueError):
        neighborhood_union(graph, cm, 1, rng)


def test_self_weight_can_vanish_when_links_fill_the_column():
    cm = CombinationModel(3, ring_graph_links(3, BernoulliLink(0.8, 0.5)))
    assert self_weight_positive_prob(cm, 0) == pytest.approx(1 - 0.64)
    assert MeanGraph.from_model(cm).neighbors[0] == frozenset({0, 1, 2})
