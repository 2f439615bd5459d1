import itertools

import numpy as np
import pytest
from scipy.special import digamma as sp_digamma, gammaln, logsumexp

from avi.core import Exponential, Schedule
from avi.data import SequenceSet, synth_hmm
from avi.errors import ConfigError, DataError
from avi.harness import matched_tv
from avi.hmm import (HmmPosterior, HmmPriors, HmmSuffStats, hmm_accumulate, hmm_elbo, hmm_fit,
                     hmm_forward_backward, hmm_random_init, hmm_update)
from avi.oracle import hmm_exact_loglik, mc_elbo_estimate


def random_params(rng, K, V):
    return (rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), size=K), rng.dirichlet(np.ones(V), size=K))


# ---------------------------------------------------------------- forward-backward

def test_single_state_log_normaliser(rng):
    seq = rng.integers(0, 4, size=6)
    lB = np.log(rng.dirichlet(np.ones(4)))[None]
    fb = hmm_forward_backward(seq, np.array([-0.3]), np.array([[-0.1]]), lB)
    assert fb.log_norm == pytest.approx(-0.3 + 5 * -0.1 + lB[0, seq].sum(), abs=1e-12)


def test_log_normaliser_matches_enumeration(rng):
    pi, A, B = random_params(rng, 2, 3)
    seq = rng.integers(0, 3, size=4)
    fb = hmm_forward_backward(seq, np.log(pi), np.log(A), np.log(B))
    assert abs(fb.log_norm - hmm_exact_loglik(seq, pi, A, B)) < 1e-10


def test_enumeration_over_100_instances(rng):
    for _ in range(100):
        K, V, L = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 7)
        pi, A, B = random_params(rng, K, V)
        seq = rng.integers(0, V, size=L)
        fb = hmm_forward_backward(seq, np.log(pi), np.log(A), np.log(B))
        assert abs(fb.log_norm - hmm_exact_loglik(seq, pi, A, B)) < 1e-10


def test_uniform_parameters_give_uniform_marginals():
    K, V = 3, 4
    fb = hmm_forward_backward(np.array([0, 3, 1, 1]), np.full(K, -1.0), np.full((K, K), -2.0), np.full((K, V), -0.5))
    np.testing.assert_allclose(fb.gamma, 1 / K, atol=1e-15)
    np.testing.assert_allclose(fb.xi, 1 / K**2, atol=1e-15)


def test_marginals_consistent_and_match_enumeration(rng):
    K, V, L = 3, 4, 5
    pi, A, B = random_params(rng, K, V)
    # unnormalised surrogate parameters as used by the E-step
    lp, lA, lB = np.log(pi) - 0.2, np.log(A) - 0.1, np.log(B) - 0.3
    seq = rng.integers(0, V, size=L)
    fb = hmm_forward_backward(seq, lp, lA, lB)
    np.testing.assert_allclose(fb.gamma.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(fb.xi.sum(axis=(1, 2)), 1.0, atol=1e-12)
    np.testing.assert_allclose(fb.xi.sum(axis=2), fb.gamma[:-1], atol=1e-10)
    np.testing.assert_allclose(fb.xi.sum(axis=1), fb.gamma[1:], atol=1e-10)
    paths = np.array(list(itertools.product(range(K), repeat=L)))
    score = lp[paths[:, 0]] + lB[paths, seq].sum(1) + lA[paths[:, :-1], paths[:, 1:]].sum(1)
    q = np.exp(score - logsumexp(score))
    for t in range(L):
        np.testing.assert_allclose(fb.gamma[t], np.bincount(paths[:, t], weights=q, minlength=K), atol=1e-12)


def test_extreme_parameters_stay_finite():
    lB = np.array([[0.0, -800.0], [-800.0, 0.0]])
    fb = hmm_forward_backward(np.array([0, 1, 0, 1] * 20), np.log([0.5, 0.5]), np.log([[0.99, 0.01], [0.01, 0.99]]), lB)
    assert np.isfinite(fb.log_norm) and np.all(np.isfinite(fb.gamma))


def test_forward_backward_errors():
    with pytest.raises(DataError):
        hmm_forward_backward(np.array([0, 5]), np.zeros(2), np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(DataError):
        hmm_forward_backward(np.array([], dtype=int), np.zeros(2), np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------------------------------------------------------- statistics

def test_length_one_sequence_has_no_transitions(rng):
    pi, A, B = random_params(rng, 2, 3)
    seqs = SequenceSet([np.array([2])], 3)
    fb = hmm_forward_backward(seqs.sequences[0], np.log(pi), np.log(A), np.log(B))
    st = hmm_accumulate(seqs, [fb])
    np.testing.assert_array_equal(st.trans, 0.0)
    assert st.emit.sum() == pytest.approx(1.0)


def test_hard_marginals_give_integer_counts():
    from avi.hmm import ForwardBackward
    seq = np.array([0, 1, 1])
    z = np.array([0, 1, 1])
    gamma = np.eye(2)[z]
    xi = np.stack([np.outer(gamma[t], gamma[t + 1]) for t in range(2)])
    st = hmm_accumulate(SequenceSet([seq], 2), [ForwardBackward(gamma, xi, 0.0)])
    np.testing.assert_array_equal(st.init, [1, 0])
    np.testing.assert_array_equal(st.trans, [[0, 1], [0, 1]])
    np.testing.assert_array_equal(st.emit, [[1, 0], [0, 2]])


def test_accumulate_two_sequences_hand_sum(rng):
    pi, A, B = random_params(rng, 2, 3)
    seqs = SequenceSet([np.array([0, 2, 1]), np.array([1, 1])], 3)
    fbs = [hmm_forward_backward(s, np.log(pi), np.log(A), np.log(B)) for s in seqs.sequences]
    st = hmm_accumulate(seqs, fbs)
    init = fbs[0].gamma[0] + fbs[1].gamma[0]
    trans = fbs[0].xi[0] + fbs[0].xi[1] + fbs[1].xi[0]
    emit = np.zeros((2, 3))
    for s, fb in zip(seqs.sequences, fbs):
        for t, x in enumerate(s):
            emit[:, x] += fb.gamma[t]
    np.testing.assert_allclose(st.init, init, atol=1e-14)
    np.testing.assert_allclose(st.trans, trans, atol=1e-14)
    np.testing.assert_allclose(st.emit, emit, atol=1e-14)
    assert abs(st.emit.sum() - 5) < 1e-10


# ---------------------------------------------------------------- init and update

def test_random_init_scale():
    a = hmm_random_init(3, 5, 10, 7.0, np.random.default_rng(1))
    b = hmm_random_init(3, 5, 10, 7.0, np.random.default_rng(2))
    scale = 7.0 * 10 / 3
    for post in (a, b):
        assert post.pi.sum() == pytest.approx(scale)
        np.testing.assert_allclose(post.A.sum(1), scale)
        np.testing.assert_allclose(post.B.sum(1), scale)
        post.validate()
    assert not np.allclose(a.B, b.B)
    with pytest.raises(ConfigError):
        hmm_random_init(0, 5, 10, 7.0, np.random.default_rng(1))


def test_update_rules(rng):
    priors = HmmPriors.default(2, 3)
    st = HmmSuffStats(np.array([1.0, 2.0]), np.array([[1.0, 0.0], [2.0, 3.0]]), np.array([[1.0, 0, 2], [0, 4, 1]]))
    eta = hmm_random_init(2, 3, 4, 5.0, rng)
    exact = hmm_update(st, priors)
    np.testing.assert_allclose(exact.B, st.emit + priors.B0)
    np.testing.assert_array_equal(hmm_update(st, priors, eta, 0.0, regime="stoch").B, exact.B)
    np.testing.assert_array_equal(hmm_update(st, priors, eta, 1.0, regime="stoch").A, eta.A)
    half = hmm_update(st, priors, eta, 0.5, regime="stoch")
    np.testing.assert_allclose(half.pi, 0.5 * (st.init + priors.pi0) + 0.5 * eta.pi)
    np.testing.assert_allclose(hmm_update(st, priors, T=4.0, regime="det").A, (st.trans + priors.A0) / 4)


# ---------------------------------------------------------------- objective

def test_elbo_prior_no_data_is_zero():
    priors = HmmPriors.default(3, 4)
    post = HmmPosterior(priors.pi0.copy(), priors.A0.copy(), priors.B0.copy())
    assert hmm_elbo([], post, priors) == pytest.approx(0.0, abs=1e-12)


def test_elbo_single_state_closed_form(rng):
    # K = 1: one path; data term is sum of E[ln B] over tokens plus E[ln pi] and E[ln A]
    V = 4
    seqs = SequenceSet([rng.integers(0, V, 5), rng.integers(0, V, 3)], V)
    priors = HmmPriors.default(1, V)
    post = HmmPosterior(np.array([2.5]), np.array([[6.0]]), rng.uniform(1, 5, (1, V)))
    counts = np.bincount(np.concatenate(seqs.sequences), minlength=V)
    elogB = sp_digamma(post.B[0]) - sp_digamma(post.B[0].sum())
    data = counts @ elogB  # E[ln pi] = E[ln A] = 0 for a single state

    def kl(a, b):
        return (gammaln(a.sum()) - gammaln(b.sum()) - (gammaln(a) - gammaln(b)).sum()
                + ((a - b) * (sp_digamma(a) - sp_digamma(a.sum()))).sum())
    expected = data - kl(post.pi, priors.pi0) - kl(post.A[0], priors.A0[0]) - kl(post.B[0], priors.B0[0])
    assert hmm_elbo(seqs, post, priors) == pytest.approx(expected, rel=1e-12)


def test_elbo_matches_monte_carlo_tiny_instance():
    seqs = SequenceSet([np.array([0, 1, 1]), np.array([2, 0])], 3)
    priors = HmmPriors.default(2, 3)
    post = hmm_fit(seqs, 2, max_iter=4, seed=3).posterior
    est = mc_elbo_estimate("hmm", seqs, post, priors, S=10_000, seed=5)
    assert est.report("hmm", hmm_elbo(seqs, post, priors)).passed


# ---------------------------------------------------------------- fit

def test_fit_reductions_exact():
    seqs, _ = synth_hmm(2, 4, 10, 12, 0)
    vi = hmm_fit(seqs, 2, schedule=Schedule("vi"), max_iter=25, seed=9)
    st = hmm_fit(seqs, 2, schedule=Schedule("stoch", Exponential(0.0)), max_iter=25, seed=9)
    det = hmm_fit(seqs, 2, schedule=Schedule("det", Exponential(0.0), temperature_scale=1.0), max_iter=25, seed=9)
    assert np.array_equal(vi.elbo, st.elbo) and np.array_equal(vi.elbo, det.elbo)


def test_fit_recovers_two_state_emissions():
    B = np.array([[0.7, 0.2, 0.05, 0.05], [0.05, 0.05, 0.2, 0.7]])
    seqs, truth = synth_hmm(2, 4, 40, 50, 21, emissions=B)
    res = max((hmm_fit(seqs, 2, seed=s) for s in range(3)), key=lambda r: r.final_elbo)
    assert matched_tv(res.posterior.mean_emissions(), truth["emissions"]).max() < 0.1


@pytest.mark.parametrize("regime", ["vi", "det", "stoch"])
def test_fit_monotone_after_cutoff(regime):
    seqs, _ = synth_hmm(3, 5, 15, 20, 4)
    res = hmm_fit(seqs, 3, schedule=Schedule(regime, "linear:0.25:50", cutoff=30), max_iter=70, seed=1, tol=0.0)
    tail = res.elbo if regime == "vi" else res.elbo[29:]
    assert np.all(np.diff(tail) >= -1e-8 * np.abs(tail[:-1]))


def test_default_schedule_is_linear():
    seqs, _ = synth_hmm(2, 3, 3, 5, 0)
    res = hmm_fit(seqs, 2, max_iter=2)
    assert str(res.schedule.decay) == "linear:0.25:50"


def test_fit_errors():
    with pytest.raises(ConfigError):
        hmm_fit([], 2, V=3)
    with pytest.raises(ConfigError):
        hmm_fit(SequenceSet([np.array([0])], 2), 0)
