"""Variational Bayes for K-topic LDA.

q(beta_1:K, pi_1:D) = prod_k Dir(lambda_k) prod_d Dir(gamma_d), with
per-token topic responsibilities phi.  Tokens sharing a word id inside a
document share one phi row, weighted by the count.

One iteration updates every phi from the current factors, then every topic
and every document factor from those phi.  Under stochastic annealing both
kinds of factor are blended with a fresh random initialisation: topics at
scale c D / K, documents at scale c / K, c being the mean document length.
"""
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import Regime, RunResult, Schedule, annealed_update, det_annealed_update, \
    dirichlet_expected_log, dirichlet_kl, run_schedule
from .data import BowCorpus
from .errors import ConfigError, InvariantError


@dataclass
class LdaPriors:
    topic0: float  # Dirichlet parameter on each topic-word distribution
    doc0: float    # Dirichlet parameter on each document's topic proportions

    @classmethod
    def default(cls, K, V):
        return cls(topic0=100.0 / V, doc0=1.0 / K)


@dataclass
class LdaPosterior:
    lam: np.ndarray    # (K, V) topic Dirichlets
    gamma: np.ndarray  # (D, K) document Dirichlets

    @property
    def K(self):
        return self.lam.shape[0]

    def validate(self):
        for name in ("lam", "gamma"):
            arr = getattr(self, name)
            if not (np.all(arr > 0) and np.all(np.isfinite(arr))):
                raise InvariantError(f"{name} must be positive and finite")
        return self

    def topics(self):
        return self.lam / self.lam.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {"lam": self.lam.tolist(), "gamma": self.gamma.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lam"], dtype=float), np.asarray(d["gamma"], dtype=float))


def lda_update_phi(doc, elog_beta, elog_theta):
    """Responsibilities for one document's distinct words, shape (n_words, K).

    ``doc`` is ``(word_ids, counts)``; counts do not affect phi.
    """
    ids = np.asarray(doc[0], dtype=np.int64)
    log_phi = elog_beta[:, ids].T + np.asarray(elog_theta)[None, :]
    return np.exp(log_phi - logsumexp(log_phi, axis=1, keepdims=True))


def _estep(corpus, post):
    """All phi rows at once plus the data term sum n log sum_k exp(...)."""
    doc, word, count = corpus.flat()
    log_phi = dirichlet_expected_log(post.lam)[:, word].T + dirichlet_expected_log(post.gamma)[doc]
    norm = logsumexp(log_phi, axis=1, keepdims=True)
    phi = np.exp(log_phi - norm)
    return phi, float(count @ norm[:, 0])


def _expected_counts(corpus, phi, K):
    doc, word, count = corpus.flat()
    w = phi * count[:, None]
    topic_counts = np.stack([np.bincount(word, weights=w[:, k], minlength=corpus.V) for k in range(K)])
    doc_counts = np.stack([np.bincount(doc, weights=w[:, k], minlength=corpus.D) for k in range(K)], axis=1)
    return topic_counts, doc_counts


def _anneal(exact, eta, rho, T, regime):
    if regime is Regime.STOCHASTIC and rho > 0:
        if eta is None:
            raise ValueError("stochastic update with rho > 0 needs eta")
        return annealed_update(exact, eta, rho)
    if regime is Regime.DETERMINISTIC:
        return det_annealed_update(exact, T)
    return exact


def lda_update_beta(corpus, phi, prior, eta=None, rho=0.0, T=1.0, regime=Regime.NONE):
    """New topic parameters (K, V) from flat phi rows (see ``BowCorpus.flat``)."""
    topic_counts, _ = _expected_counts(corpus, phi, phi.shape[1])
    return _anneal(topic_counts + prior, eta, rho, T, Regime.parse(regime))


def lda_update_theta(doc, phi, prior, eta=None, rho=0.0, T=1.0, regime=Regime.NONE):
    """New Dirichlet parameters for one document's topic proportions."""
    counts = np.asarray(doc[1], dtype=float)
    return _anneal(counts @ phi + prior, eta, rho, T, Regime.parse(regime))


def lda_random_init(K, corpus, rng):
    """Topics at scale c D / K and documents at scale c / K times Dir(1) draws."""
    topics = lda_topic_eta(K, corpus, rng)
    docs = lda_doc_eta(K, corpus, rng)
    return LdaPosterior(topics, docs)


def lda_topic_eta(K, corpus, rng):
    return (corpus.c * corpus.D / K) * rng.dirichlet(np.ones(corpus.V), size=K)


def lda_doc_eta(K, corpus, rng):
    return (corpus.c / K) * rng.dirichlet(np.ones(K), size=corpus.D)


def lda_kl(post, priors):
    return float(np.sum(dirichlet_kl(post.lam, priors.topic0))
                 + np.sum(dirichlet_kl(post.gamma, priors.doc0)))


def lda_elbo(corpus, post, priors):
    """Full mean-field ELBO with phi at its optimum for ``post``."""
    data = _estep(corpus, post)[1] if corpus.D else 0.0
    return data - lda_kl(post, priors)


def lda_fit(corpus, K, schedule=None, max_iter=200, seed=0, tol=1e-6, priors=None):
    """Fit K-topic LDA; returns a :class:`RunResult`."""
    if not isinstance(corpus, BowCorpus):
        raise ConfigError("lda_fit expects a BowCorpus")
    if corpus.D == 0:
        raise ConfigError("empty corpus")
    if K < 1:
        raise ConfigError("K must be at least 1")
    schedule = schedule or Schedule()
    priors = priors or LdaPriors.default(K, corpus.V)
    rng = np.random.default_rng(seed)
    start = time.perf_counter()

    state = {"post": lda_random_init(K, corpus, rng)}
    state["phi"], _ = _estep(corpus, state["post"])

    def step(t, rho, T):
        topic_counts, doc_counts = _expected_counts(corpus, state["phi"], K)
        eta_topics = eta_docs = None
        if schedule.regime is Regime.STOCHASTIC and rho > 0:
            eta_topics = lda_topic_eta(K, corpus, rng)
            eta_docs = lda_doc_eta(K, corpus, rng)
        lam = _anneal(topic_counts + priors.topic0, eta_topics, rho, T, schedule.regime)
        gamma = _anneal(doc_counts + priors.doc0, eta_docs, rho, T, schedule.regime)
        post = LdaPosterior(lam, gamma).validate()
        state["post"] = post
        state["phi"], data = _estep(corpus, post)
        return data - lda_kl(post, priors)

    trace = []
    converged = run_schedule(schedule, max_iter, tol, step, trace)
    return RunResult(seed=seed, regime=schedule.regime, K=K, elbo=np.array(trace),
                     posterior=state["post"], converged=converged,
                     wall_ms=1e3 * (time.perf_counter() - start), schedule=schedule)
