"""Brute-force reference computations used to check the models.

Nothing here imports the model modules or the package's own special
functions: densities are written out directly on top of scipy, HMM paths
are enumerated, and the ELBO is estimated by sampling the global factors.

Monte-Carlo ELBO estimates need the local factor q(z).  Its optimum depends
on expected log parameters, which are estimated here from an independent
pilot batch of samples (``pilot`` times ``S`` draws).  The ELBO is stationary
in q(z) at the optimum, so pilot noise only enters at second order.
"""
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, multigammaln

from .errors import ConfigError


@dataclass
class OracleReport:
    name: str
    target: float
    oracle: float
    tolerance: float
    se: Optional[float] = None

    @property
    def passed(self):
        if not (np.isfinite(self.target) and np.isfinite(self.oracle)):
            return False
        return abs(self.target - self.oracle) <= self.tolerance

    def line(self):
        se = f" se={self.se:.3g}" if self.se is not None else ""
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: target={self.target:.12g} oracle={self.oracle:.12g} "
                f"|diff|={abs(self.target - self.oracle):.3g} tol={self.tolerance:.3g}{se}")


@dataclass
class MonteCarloEstimate:
    estimate: float
    se: float
    n_samples: int
    n_nonfinite: int = 0

    def report(self, name, target, n_se=3.0):
        return OracleReport(name, float(target), self.estimate, n_se * self.se, self.se)


# ---------------------------------------------------------------- HMM paths

def hmm_exact_loglik(seq, pi, A, B, max_paths=10**6):
    """ln of the sum over every state path of pi[z1] prod A[z,z'] prod B[z, x].

    Parameters need not be normalised (surrogate parameters are fine).
    """
    seq = np.asarray(seq, dtype=np.int64)
    K, T = len(pi), len(seq)
    if K ** T > max_paths:
        raise ConfigError(f"{K}^{T} paths exceeds the enumeration limit {max_paths}")
    with np.errstate(divide="ignore"):
        lp, lA, lB = np.log(pi), np.log(A), np.log(B)
    paths = np.array(list(itertools.product(range(K), repeat=T)))
    score = lp[paths[:, 0]] + lB[paths, seq[None, :]].sum(axis=1)
    if T > 1:
        score += lA[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    return float(logsumexp(score))


# ---------------------------------------------------------------- densities

def _dirichlet_logpdf(x, alpha):
    """Rows of x against Dirichlet(alpha) along the last axis."""
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1)
                + ((alpha - 1.0) * np.log(x)).sum(axis=-1))


def _wishart_logpdf(L, scale, df):
    """Batch of precision matrices L (S, d, d) against Wishart(scale, df)."""
    d = scale.shape[0]
    logdet_L = np.linalg.slogdet(L)[1]
    tr = np.einsum("ij,sji->s", np.linalg.inv(scale), L)
    return (0.5 * (df - d - 1) * logdet_L - 0.5 * tr - 0.5 * df * d * math.log(2.0)
            - 0.5 * df * np.linalg.slogdet(scale)[1] - multigammaln(0.5 * df, d))


def _gauss_logpdf_prec(x, mu, L):
    """ln N(x | mu, L^-1) for points x (N, d) and batches mu (S, d), L (S, d, d) -> (S, N)."""
    d = x.shape[1]
    diff = x[None, :, :] - mu[:, None, :]
    quad = np.einsum("sni,sij,snj->sn", diff, L, diff)
    return 0.5 * np.linalg.slogdet(L)[1][:, None] - 0.5 * d * math.log(2 * math.pi) - 0.5 * quad


def _gauss_logpdf_cov(x, mean, cov):
    return stats.multivariate_normal(mean, cov).logpdf(x)


def _summarize(values):
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    v = values[ok]
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("inf")
    return MonteCarloEstimate(float(v.mean()) if v.size else float("nan"), se, int(v.size), int((~ok).sum()))


def _softmax_rows(logits):
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


def _xlogx(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(p), 0.0)


# ---------------------------------------------------------------- GMM

def _gmm_draw(post, S, rng):
    K, d = post.m.shape
    pis = rng.dirichlet(post.alpha, size=S)
    mus = np.stack([rng.multivariate_normal(post.m[k], post.S[k], size=S) for k in range(K)], axis=1)
    lams = np.stack([stats.wishart.rvs(df=post.nu[k], scale=post.W[k], size=S, random_state=rng)
                     .reshape(S, d, d) for k in range(K)], axis=1)
    return pis, mus, lams


def _gmm_loglik_terms(X, pis, mus, lams):
    """ln pi_k + ln N(x_n | mu_k, Lambda_k^-1), shape (S, N, K)."""
    K = pis.shape[1]
    with np.errstate(divide="ignore"):
        lp = np.log(pis)
    return np.stack([lp[:, k, None] + _gauss_logpdf_prec(X, mus[:, k], lams[:, k]) for k in range(K)], axis=2)


def mc_elbo_gmm(X, post, priors, S=10_000, seed=12345, pilot=10):
    """Monte-Carlo ELBO for a GMM posterior (independent Normal/Wishart factors)."""
    X = np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, post.m.shape[1])
    rng = np.random.default_rng(seed)
    K = post.alpha.shape[0]
    if X.shape[0]:
        expected = np.zeros((X.shape[0], K))
        for _ in range(pilot):
            expected += _gmm_loglik_terms(X, *_gmm_draw(post, S, rng)).mean(axis=0)
        r = _softmax_rows(expected / pilot)
    else:
        r = np.zeros((0, K))
    pis, mus, lams = _gmm_draw(post, S, rng)
    data = np.einsum("nk,snk->s", r, _gmm_loglik_terms(X, pis, mus, lams)) - _xlogx(r).sum()
    prior_cov = np.linalg.inv(priors.P0)
    log_p = _dirichlet_logpdf(pis, np.full(K, priors.alpha0))
    log_q = _dirichlet_logpdf(pis, post.alpha)
    for k in range(K):
        log_p += _gauss_logpdf_cov(mus[:, k], priors.m0, prior_cov) + _wishart_logpdf(lams[:, k], priors.W0, priors.nu0)
        log_q += _gauss_logpdf_cov(mus[:, k], post.m[k], post.S[k]) + _wishart_logpdf(lams[:, k], post.W[k], post.nu[k])
    return _summarize(data + log_p - log_q)


# ---------------------------------------------------------------- HMM

def _hmm_draw(post, S, rng):
    pis = rng.dirichlet(post.pi, size=S)
    As = np.stack([rng.dirichlet(row, size=S) for row in post.A], axis=1)
    Bs = np.stack([rng.dirichlet(row, size=S) for row in post.B], axis=1)
    return pis, As, Bs


def _path_posterior(seq, lp, lA, lB):
    """Enumerated q(z) for one sequence -> (expected initial, transition, emission counts, entropy term)."""
    K, V = lB.shape
    T = len(seq)
    paths = np.array(list(itertools.product(range(K), repeat=T)))
    score = lp[paths[:, 0]] + lB[paths, seq[None, :]].sum(axis=1)
    if T > 1:
        score += lA[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    q = _softmax_rows(score)
    init = np.bincount(paths[:, 0], weights=q, minlength=K)
    trans = np.zeros((K, K))
    for t in range(T - 1):
        np.add.at(trans, (paths[:, t], paths[:, t + 1]), q)
    emit = np.zeros((K, V))
    for t in range(T):
        np.add.at(emit, (paths[:, t], np.full(len(paths), seq[t])), q)
    return init, trans, emit, float(_xlogx(q).sum())


def mc_elbo_hmm(sequences, post, priors, S=10_000, seed=12345, pilot=10):
    """Monte-Carlo ELBO for a Dirichlet-factored discrete HMM (paths enumerated)."""
    rng = np.random.default_rng(seed)
    sequences = [np.asarray(s, dtype=np.int64) for s in sequences]
    K, V = post.B.shape
    counts = (np.zeros(K), np.zeros((K, K)), np.zeros((K, V)))
    neg_entropy = 0.0
    if sequences:
        acc = [np.zeros(K), np.zeros((K, K)), np.zeros((K, V))]
        for _ in range(pilot):
            for a, sample in zip(acc, _hmm_draw(post, S, rng)):
                a += np.log(sample).mean(axis=0)
        lp, lA, lB = (a / pilot for a in acc)
        for seq in sequences:
            init, trans, emit, negh = _path_posterior(seq, lp, lA, lB)
            counts[0][:] += init
            counts[1][:] += trans
            counts[2][:] += emit
            neg_entropy += negh
    pis, As, Bs = _hmm_draw(post, S, rng)
    with np.errstate(divide="ignore"):
        data = (np.log(pis) @ counts[0] + np.einsum("skj,kj->s", np.log(As), counts[1])
                + np.einsum("skv,kv->s", np.log(Bs), counts[2]) - neg_entropy)
    log_p = _dirichlet_logpdf(pis, priors.pi0) + _dirichlet_logpdf(As, priors.A0).sum(axis=1) \
        + _dirichlet_logpdf(Bs, priors.B0).sum(axis=1)
    log_q = _dirichlet_logpdf(pis, post.pi) + _dirichlet_logpdf(As, post.A).sum(axis=1) \
        + _dirichlet_logpdf(Bs, post.B).sum(axis=1)
    return _summarize(data + log_p - log_q)


# ---------------------------------------------------------------- LDA

def _lda_draw(post, S, rng):
    betas = np.stack([rng.dirichlet(row, size=S) for row in post.lam], axis=1)      # (S, K, V)
    thetas = np.stack([rng.dirichlet(row, size=S) for row in post.gamma], axis=1)   # (S, D, K)
    return betas, thetas


def mc_elbo_lda(counts, post, priors, S=10_000, seed=12345, pilot=10):
    """Monte-Carlo ELBO for LDA.  ``counts`` is the dense D x V count matrix."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    rng = np.random.default_rng(seed)
    K, V = post.lam.shape
    D = post.gamma.shape[0]
    if counts.size and counts.sum() > 0:
        lb, lt = np.zeros((K, V)), np.zeros((D, K))
        for _ in range(pilot):
            betas, thetas = _lda_draw(post, S, rng)
            lb += np.log(betas).mean(axis=0)
            lt += np.log(thetas).mean(axis=0)
        lb, lt = lb / pilot, lt / pilot
        r = _softmax_rows(lt[:, None, :] + lb.T[None, :, :])      # (D, V, K)
    else:
        r = np.zeros((D, V, K))
    weights = counts[:, :, None] * r
    betas, thetas = _lda_draw(post, S, rng)
    with np.errstate(divide="ignore"):
        data = (np.einsum("dvk,skv->s", weights, np.log(betas))
                + np.einsum("dvk,sdk->s", weights, np.log(thetas)))
    data -= float((counts[:, :, None] * _xlogx(r)).sum())
    log_p = _dirichlet_logpdf(betas, np.full(V, priors.topic0)).sum(axis=1) \
        + _dirichlet_logpdf(thetas, np.full(K, priors.doc0)).sum(axis=1)
    log_q = _dirichlet_logpdf(betas, post.lam).sum(axis=1) + _dirichlet_logpdf(thetas, post.gamma).sum(axis=1)
    return _summarize(data + log_p - log_q)


def mc_elbo_estimate(model, data, post, priors, S=10_000, seed=12345):
    """Dispatch on ``model`` in {"gmm", "hmm", "lda"}."""
    fn = {"gmm": mc_elbo_gmm, "hmm": mc_elbo_hmm, "lda": mc_elbo_lda}.get(model)
    if fn is None:
        raise ConfigError(f"unknown model {model!r}")
    if S < 1000:
        raise ConfigError("Monte-Carlo ELBO needs S >= 1000")
    return fn(data, post, priors, S=S, seed=seed)
