"""Variational Bayes for a K-component Gaussian mixture.

The mean-field family is q(pi) prod_k q(mu_k) q(Lambda_k) with a Dirichlet on
the weights and *independent* Normal and Wishart factors on each component's
mean and precision.  Cross terms use E[Lambda_k] = nu_k W_k.

Annealing:

* stochastic: each factor's natural parameters are blended with those of a
  fresh random initialisation, ``(1 - rho) * exact + rho * init``.  The
  initialisation of q(Lambda_k) is the prior, so its update shrinks towards
  the prior; q(mu_k) is pulled towards a newly drawn mean;
* deterministic: the Dirichlet on the weights gets ``(alpha0 + N_k) / T`` and
  the Normal/Wishart factors see the data statistics divided by ``T``.
"""
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import Regime, RunResult, Schedule, annealed_update, det_annealed_update, \
    dirichlet_expected_log, dirichlet_kl, run_schedule
from .errors import ConfigError, DataError, InvariantError
from .special import digamma, ln_multigamma

_LOG_2PI = math.log(2.0 * math.pi)
_TINY = 1e-300
# q(mu_k) starts with ten times the empirical precision of the data
INIT_PRECISION_FACTOR = 10.0


@dataclass
class GmmPriors:
    alpha0: float
    m0: np.ndarray
    P0: np.ndarray
    nu0: float
    W0: np.ndarray

    @classmethod
    def from_data(cls, X, K):
        """Data-calibrated priors: weights Dir(1/K), mean N(xbar, Sigma),
        precision Wishart with nu0 = d + 2 and E[Lambda] = Sigma^-1."""
        _, mean, cov = data_summary(X)
        d = mean.shape[0]
        prec = _inv_spd(cov)
        nu0 = d + 2.0
        return cls(1.0 / K, mean, prec, nu0, prec / nu0)

    @property
    def dim(self):
        return self.m0.shape[0]


@dataclass
class GmmPosterior:
    alpha: np.ndarray  # (K,)
    m: np.ndarray      # (K, d) means of q(mu_k)
    S: np.ndarray      # (K, d, d) covariances of q(mu_k)
    W: np.ndarray      # (K, d, d) Wishart scales of q(Lambda_k)
    nu: np.ndarray     # (K,) Wishart degrees of freedom

    @property
    def K(self):
        return self.alpha.shape[0]

    @property
    def dim(self):
        return self.m.shape[1]

    def validate(self):
        if not np.all(self.alpha > 0):
            raise InvariantError("q(pi) parameters must be positive")
        if not np.all(self.nu > self.dim - 1):
            raise InvariantError("Wishart dof must exceed d - 1")
        for k in range(self.K):
            for name, mat in (("S", self.S[k]), ("W", self.W[k])):
                try:
                    np.linalg.cholesky(mat)
                except np.linalg.LinAlgError:
                    raise InvariantError(f"{name}[{k}] is not positive definite") from None
        return self

    def expected_precision(self):
        return self.nu[:, None, None] * self.W

    def expected_logdet_precision(self):
        d = self.dim
        i = np.arange(1, d + 1)
        psi = digamma(0.5 * (self.nu[:, None] + 1 - i[None, :])).sum(axis=1)
        return psi + d * math.log(2.0) + np.linalg.slogdet(self.W)[1]

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("alpha", "m", "S", "W", "nu")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("alpha", "m", "S", "W", "nu")})


@dataclass
class GmmSuffStats:
    N: np.ndarray   # (K,) soft counts
    s1: np.ndarray  # (K, d) sum_n r_nk x_n
    s2: np.ndarray  # (K, d, d) sum_n r_nk x_n x_n^T

    def arrays(self):
        return self.N, self.s1, self.s2

    def blend(self, other, rho):
        return GmmSuffStats(*(annealed_update(a, b, rho) for a, b in zip(self.arrays(), other.arrays())))

    def own_scatter(self):
        """Scatter of each cluster about its own mean, s2 - s1 s1^T / N."""
        safe = np.where(self.N > 0, self.N, 1.0)
        return _symmetrize(self.s2 - np.einsum("ki,kj->kij", self.s1, self.s1) / safe[:, None, None])

    def scaled(self, factor):
        return GmmSuffStats(*(a * factor for a in self.arrays()))


def _inv_spd(m):
    L = np.linalg.cholesky(m)
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def _symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _check_points(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError("points must form an N x d matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("points must be finite")
    return X


def data_summary(X):
    """(N, mean, covariance) with a small ridge when the covariance is singular."""
    X = _check_points(X)
    N, d = X.shape
    if N == 0:
        raise ConfigError("empty data set")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X.T, bias=True)) if N > 1 else np.zeros((d, d))
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        ridge = 1e-6 * max(np.trace(cov) / d, 1.0)
        cov = cov + ridge * np.eye(d)
    return N, mean, cov


def gmm_log_resp(X, post):
    """Unnormalised log responsibilities (N, K), including -d/2 ln 2 pi."""
    X = _check_points(X)
    d = post.dim
    if X.shape[1] != d:
        raise ValueError(f"data dimension {X.shape[1]} does not match posterior dimension {d}")
    elog_pi = dirichlet_expected_log(post.alpha)
    elogdet = post.expected_logdet_precision()
    out = np.empty((X.shape[0], post.K))
    for k in range(post.K):
        try:
            L = np.linalg.cholesky(post.W[k])
        except np.linalg.LinAlgError:
            raise InvariantError(f"W[{k}] is not positive definite") from None
        diff = (X - post.m[k]) @ L
        quad = post.nu[k] * (np.einsum("nd,nd->n", diff, diff) + np.trace(post.W[k] @ post.S[k]))
        out[:, k] = elog_pi[k] + 0.5 * elogdet[k] - 0.5 * d * _LOG_2PI - 0.5 * quad
    return out


def gmm_responsibilities(X, post):
    log_r = gmm_log_resp(X, post)
    return np.exp(log_r - logsumexp(log_r, axis=1, keepdims=True))


def gmm_accumulate(X, resp):
    X = _check_points(X)
    resp = np.asarray(resp, dtype=float)
    N = resp.sum(axis=0)
    s1 = resp.T @ X
    s2 = np.einsum("nk,ni,nj->kij", resp, X, X)
    return GmmSuffStats(N, s1, _symmetrize(s2))


def _draw_init(summary, K, rng):
    N, mean, cov = summary
    if K < 1:
        raise ConfigError("K must be at least 1")
    weights = rng.dirichlet(np.ones(K)) if K > 1 else np.ones(1)
    means = rng.multivariate_normal(mean, cov, size=K)
    return N * weights, means


def _init_stats(counts, means, cov):
    s1 = counts[:, None] * means
    s2 = counts[:, None, None] * (np.einsum("ki,kj->kij", means, means) + cov[None])
    return GmmSuffStats(counts, s1, s2)


def gmm_random_init_stats(summary, K, rng):
    """Statistics of a random allocation of N points to K clusters.

    Proportions ~ Dir(1,...,1) scaled by N; each cluster gets a mean drawn
    from N(mean, cov) and a scatter equal to the empirical covariance.
    ``summary`` is ``(N, mean, cov)`` as returned by :func:`data_summary`.
    """
    counts, means = _draw_init(summary, K, rng)
    return _init_stats(counts, means, summary[2])


def gmm_init_posterior(summary, K, priors, rng):
    """Random initial posterior.

    Component means are drawn from N(mean, cov) with q(mu_k) precision ten
    times the empirical precision; q(Lambda_k) starts at the prior, whose
    expectation is the empirical precision; q(pi) reflects a random
    allocation of the N points.
    """
    counts, means = _draw_init(summary, K, rng)
    return GmmPosterior(
        alpha=priors.alpha0 + counts,
        m=means,
        S=np.repeat(_inv_spd(INIT_PRECISION_FACTOR * priors.P0)[None], K, axis=0),
        W=np.repeat(priors.W0[None], K, axis=0),
        nu=np.full(K, float(priors.nu0)),
    )


def gmm_update(post, stats, priors, stats_init=None, rho=0.0, T=1.0, regime=Regime.NONE):
    """One round of conjugate updates: q(pi), then q(Lambda_k), then q(mu_k).

    Stochastic regime with ``rho > 0``: every factor's natural parameters are
    blended with those of the random initialisation described by
    ``stats_init`` (see :func:`gmm_random_init_stats`):

    * q(pi): ``alpha = (1 - rho) (alpha0 + N) + rho (alpha0 + N_init)``;
    * q(Lambda_k): the initialisation is the prior, so the update shrinks
      towards it, ``nu = nu0 + (1 - rho) N_k`` and
      ``W^-1 = W0^-1 + (1 - rho) scatter_k``;
    * q(mu_k): precision ``(1 - rho) (P0 + N_k E[Lambda_k]) + rho 10 P0`` and
      the matching blend of precision-weighted means, which pulls the mean
      towards a freshly drawn one.
    """
    regime = Regime.parse(regime)
    if not 0.0 <= rho <= 1.0 or T < 1.0:
        raise ValueError("need rho in [0, 1] and T >= 1")
    stoch = regime is Regime.STOCHASTIC and rho > 0
    if stoch and stats_init is None:
        raise ValueError("stochastic update with rho > 0 needs stats_init")

    if regime is Regime.DETERMINISTIC:
        alpha = det_annealed_update(priors.alpha0 + stats.N, T)
        stats = stats.scaled(1.0 / T) if T != 1.0 else stats
    elif stoch:
        alpha = annealed_update(priors.alpha0 + stats.N, priors.alpha0 + stats_init.N, rho)
    else:
        alpha = priors.alpha0 + stats.N

    keep = 1.0 - rho if stoch else 1.0
    K, d = post.m.shape
    W0_inv = _inv_spd(priors.W0)
    h0 = priors.P0 @ priors.m0
    W = np.empty((K, d, d))
    S = np.empty((K, d, d))
    m = np.empty((K, d))
    nu = priors.nu0 + keep * stats.N
    for k in range(K):
        mk, Nk, s1 = post.m[k], stats.N[k], stats.s1[k]
        scatter = stats.s2[k] - np.outer(s1, mk) - np.outer(mk, s1) + Nk * (np.outer(mk, mk) + post.S[k])
        W[k] = _inv_spd(_symmetrize(W0_inv + keep * scatter))
        e_lambda = nu[k] * W[k]
        P = priors.P0 + Nk * e_lambda
        h = h0 + e_lambda @ s1
        if stoch:
            P_init = INIT_PRECISION_FACTOR * priors.P0
            mean_init = stats_init.s1[k] / max(stats_init.N[k], _TINY)
            P = annealed_update(P, P_init, rho)
            h = annealed_update(h, P_init @ mean_init, rho)
        S[k] = _inv_spd(_symmetrize(P))
        m[k] = S[k] @ h
    return GmmPosterior(alpha, m, S, W, nu)


def _kl_normal(m, S, m0, P0):
    d = m.shape[0]
    diff = m - m0
    return 0.5 * (np.trace(P0 @ S) + diff @ P0 @ diff - d
                  - np.linalg.slogdet(P0)[1] - np.linalg.slogdet(S)[1])


def _wishart_expected_logpdf(W_q, nu_q, elogdet, W, nu):
    """E_{q(Lambda)}[ln Wishart(Lambda | W, nu)] given q's E ln|Lambda|."""
    d = W.shape[0]
    return (-0.5 * nu * np.linalg.slogdet(W)[1] - 0.5 * nu * d * math.log(2.0)
            - ln_multigamma(0.5 * nu, d) + 0.5 * (nu - d - 1) * elogdet
            - 0.5 * nu_q * np.trace(np.linalg.solve(W, W_q)))


def gmm_kl(post, priors):
    """Sum of KL(q || prior) over every global factor."""
    kl = dirichlet_kl(post.alpha, np.full(post.K, priors.alpha0))
    elogdet = post.expected_logdet_precision()
    for k in range(post.K):
        kl += _kl_normal(post.m[k], post.S[k], priors.m0, priors.P0)
        kl += (_wishart_expected_logpdf(post.W[k], post.nu[k], elogdet[k], post.W[k], post.nu[k])
               - _wishart_expected_logpdf(post.W[k], post.nu[k], elogdet[k], priors.W0, priors.nu0))
    return float(kl)


def _estep(X, post):
    log_r = gmm_log_resp(X, post)
    norm = logsumexp(log_r, axis=1, keepdims=True)
    return np.exp(log_r - norm), float(norm.sum())


def gmm_elbo(X, post, priors):
    """ELBO with the responsibilities at their optimum for ``post``."""
    X = _check_points(X)
    ll = _estep(X, post)[1] if X.shape[0] else 0.0
    return ll - gmm_kl(post, priors)


def gmm_fit(X, K, schedule=None, max_iter=200, seed=0, tol=1e-6, priors=None):
    """Fit a K-component mixture; returns a :class:`RunResult`."""
    X = _check_points(X)
    if X.shape[0] == 0:
        raise ConfigError("empty data set")
    if not 1 <= K <= X.shape[0]:
        raise ConfigError(f"need 1 <= K <= N, got K={K}, N={X.shape[0]}")
    schedule = schedule or Schedule()
    priors = priors or GmmPriors.from_data(X, K)
    rng = np.random.default_rng(seed)
    summary = data_summary(X)
    start = time.perf_counter()

    state = {"post": gmm_init_posterior(summary, K, priors, rng)}
    state["resp"], _ = _estep(X, state["post"])

    def step(t, rho, T):
        stats = gmm_accumulate(X, state["resp"])
        stats_init = None
        if schedule.regime is Regime.STOCHASTIC and rho > 0:
            stats_init = gmm_random_init_stats(summary, K, rng)
        post = gmm_update(state["post"], stats, priors, stats_init, rho, T, schedule.regime)
        post.validate()
        state["post"] = post
        state["resp"], ll = _estep(X, post)
        return ll - gmm_kl(post, priors)

    trace = []
    converged = run_schedule(schedule, max_iter, tol, step, trace)
    return RunResult(seed=seed, regime=schedule.regime, K=K, elbo=np.array(trace),
                     posterior=state["post"], converged=converged,
                     wall_ms=1e3 * (time.perf_counter() - start), schedule=schedule)


def gmm_classify(X, posteriors, class_priors=None):
    """Naive-Bayes labels from the posterior-mean mixture of each class.

    Ties go to the lowest class index.
    """
    X = _check_points(X)
    C = len(posteriors)
    if C == 0:
        raise ConfigError("need at least one class model")
    if class_priors is None:
        class_priors = np.full(C, 1.0 / C)
    scores = np.empty((X.shape[0], C))
    for c, post in enumerate(posteriors):
        if post.dim != X.shape[1]:
            raise ValueError("test point dimension does not match class model")
        scores[:, c] = math.log(class_priors[c]) + mixture_logpdf(X, post)
    return np.argmax(scores, axis=1)


def mixture_logpdf(X, post):
    """ln p(x) for the mixture whose parameters are the posterior means."""
    weights = post.alpha / post.alpha.sum()
    prec = post.expected_precision()
    d = post.dim
    comp = np.empty((X.shape[0], post.K))
    for k in range(post.K):
        L = np.linalg.cholesky(prec[k])
        diff = (X - post.m[k]) @ L
        comp[:, k] = (math.log(weights[k]) + np.log(np.diag(L)).sum() - 0.5 * d * _LOG_2PI
                      - 0.5 * np.einsum("nd,nd->n", diff, diff))
    return logsumexp(comp, axis=1)
