"""Oracle and property suites run by ``avi verify``.

Each suite returns a list of :class:`~avi.oracle.OracleReport`; a suite
passes when every report does.  Property checks are phrased as reports too:
the target is the observed worst-case value and the oracle is its ideal.
"""
import numpy as np
from scipy import special as sps

from . import data as data_mod
from .core import Exponential, Regime, Schedule, dirichlet_kl
from .errors import ConfigError
from .gmm import GmmPriors, gmm_elbo, gmm_fit
from .harness import matched_tv
from .hmm import HmmPriors, hmm_elbo, hmm_fit, hmm_forward_backward
from .lda import LdaPriors, lda_elbo, lda_fit
from .oracle import OracleReport, hmm_exact_loglik, mc_elbo_gmm, mc_elbo_hmm, mc_elbo_lda
from .special import digamma, ln_gamma

MODELS = ("gmm", "hmm", "lda")

# committed seeds for the recovery checks
RECOVERY_SEEDS = {"hmm": 7, "lda": 11}


def _instance(model, seed, small=False):
    """A random synthetic dataset of each model type."""
    if model == "gmm":
        N = 12 if small else 300
        return data_mod.synth_gmm(2 if small else 3, 2, N, 3.0, seed)[0].X
    if model == "hmm":
        return data_mod.synth_hmm(2, 3, 3 if small else 20, 4 if small else 25, seed)[0]
    return data_mod.synth_lda(2, 4 if small else 20, 3 if small else 60, 5 if small else 40, 0.3, seed)[0]


def _fit(model, data, K, schedule, max_iter=200, seed=0, tol=1e-6):
    fit = {"gmm": gmm_fit, "hmm": hmm_fit, "lda": lda_fit}[model]
    return fit(data, K, schedule=schedule, max_iter=max_iter, seed=seed, tol=tol)


def fb_enum(n=100, seed=0):
    """Forward-backward log normaliser against enumeration of every path."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        K, V, L = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 7)
        pi = rng.dirichlet(np.ones(K))
        A = rng.dirichlet(np.ones(K), size=K)
        B = rng.dirichlet(np.ones(V), size=K)
        seq = rng.integers(0, V, size=L)
        fb = hmm_forward_backward(seq, np.log(pi), np.log(A), np.log(B))
        worst = max(worst, abs(fb.log_norm - hmm_exact_loglik(seq, pi, A, B)))
    return [OracleReport(f"fb-enum max |diff| over {n} instances", worst, 0.0, 1e-10)]


def mc_elbo(S=10_000, seed=0):
    """Analytic ELBO of a briefly fitted tiny instance against Monte Carlo."""
    out = []
    X = _instance("gmm", seed, small=True)
    res = gmm_fit(X, 2, max_iter=5, seed=seed)
    priors = GmmPriors.from_data(X, 2)
    out.append(mc_elbo_gmm(X, res.posterior, priors, S=S, seed=seed + 1)
               .report("mc-elbo gmm", gmm_elbo(X, res.posterior, priors)))
    seqs = _instance("hmm", seed, small=True)
    res = hmm_fit(seqs, 2, max_iter=5, seed=seed)
    priors = HmmPriors.default(2, seqs.V)
    out.append(mc_elbo_hmm(seqs, res.posterior, priors, S=S, seed=seed + 1)
               .report("mc-elbo hmm", hmm_elbo(seqs, res.posterior, priors)))
    corpus = _instance("lda", seed, small=True)
    res = lda_fit(corpus, 2, max_iter=5, seed=seed)
    priors = LdaPriors.default(2, corpus.V)
    out.append(mc_elbo_lda(corpus.dense(), res.posterior, priors, S=S, seed=seed + 1)
               .report("mc-elbo lda", lda_elbo(corpus, res.posterior, priors)))
    return out


def _worst_drop(trace, start=0):
    """Largest relative decrease between consecutive entries from ``start`` on."""
    trace = np.asarray(trace)[start:]
    if trace.size < 2:
        return 0.0
    drop = (trace[:-1] - trace[1:]) / np.abs(trace[:-1])
    return float(max(drop.max(), 0.0))


def monotone(n=10, seed=0, max_iter=60, cutoff=30):
    """Plain VI never decreases the objective; annealed runs stop decreasing after the cutoff."""
    out = []
    for model in MODELS:
        worst_vi, worst_ann = 0.0, 0.0
        for i in range(n):
            data = _instance(model, seed + i)
            K = 3 if model == "gmm" else 2
            vi = _fit(model, data, K, Schedule(Regime.NONE), max_iter=max_iter, seed=i, tol=0.0)
            worst_vi = max(worst_vi, _worst_drop(vi.elbo))
            for regime in (Regime.DETERMINISTIC, Regime.STOCHASTIC):
                sched = Schedule(regime, cutoff=cutoff)
                res = _fit(model, data, K, sched, max_iter=max_iter, seed=i, tol=0.0)
                worst_ann = max(worst_ann, _worst_drop(res.elbo, start=cutoff))
        out.append(OracleReport(f"monotone {model} vi max relative drop", worst_vi, 0.0, 1e-8))
        out.append(OracleReport(f"monotone {model} annealed after cutoff max relative drop",
                                worst_ann, 0.0, 1e-8))
    return out


def reductions(seed=0, max_iter=40):
    """stoch with rho = 0 and det with T = 1 reproduce plain VI bit for bit."""
    zero = Exponential(0.0)
    out = []
    for model in MODELS:
        data = _instance(model, seed)
        K = 3 if model == "gmm" else 2
        vi = _fit(model, data, K, Schedule(Regime.NONE), max_iter=max_iter, seed=seed)
        for regime in (Regime.STOCHASTIC, Regime.DETERMINISTIC):
            sched = Schedule(regime, decay=zero, temperature_scale=1.0)
            res = _fit(model, data, K, sched, max_iter=max_iter, seed=seed)
            same = res.elbo.shape == vi.elbo.shape and bool(np.array_equal(res.elbo, vi.elbo))
            label = "rho=0" if regime is Regime.STOCHASTIC else "T=1"
            out.append(OracleReport(f"reduction {model} {regime.value} {label} trace equals vi",
                                    float(not same), 0.0, 0.0))
    return out


def recovery_hmm(seed=RECOVERY_SEEDS["hmm"], K=3, V=12, N=60, c=60, restarts=3):
    """Largest matched TV between fitted and true emission rows (best of a few restarts)."""
    seqs, truth = data_mod.synth_hmm(K, V, N, c, seed, emission_concentration=0.1)
    best = max((hmm_fit(seqs, K, seed=seed * 100 + r) for r in range(restarts)), key=lambda r: r.final_elbo)
    return float(matched_tv(best.posterior.mean_emissions(), truth["emissions"]).max())


def recovery_lda(seed=RECOVERY_SEEDS["lda"], K=3, V=30, D=300, c=100, restarts=3):
    """Largest matched TV between fitted and true topics (best of a few restarts)."""
    corpus, truth = data_mod.synth_lda(K, V, D, c, 0.05, seed)
    best = max((lda_fit(corpus, K, seed=seed * 100 + r) for r in range(restarts)), key=lambda r: r.final_elbo)
    return float(matched_tv(best.posterior.topics(), truth["topics"]).max())


def recovery():
    return [OracleReport("recovery hmm emissions max TV", recovery_hmm(), 0.0, 0.1),
            OracleReport("recovery lda topics max TV", recovery_lda(), 0.0, 0.15)]


def kernels(n=1000, seed=0):
    """Special functions against scipy and Dirichlet KL non-negativity."""
    x = np.concatenate([np.logspace(-3, 6, 2000), np.linspace(0.5, 30, 500)])
    dg = float(np.max(np.abs(digamma(x) - sps.digamma(x)) / np.maximum(1.0, np.abs(sps.digamma(x)))))
    lg = float(np.max(np.abs(ln_gamma(x) - sps.gammaln(x)) / np.maximum(1.0, np.abs(sps.gammaln(x)))))
    y = np.logspace(-2, 3, 500)
    rec_dg = float(np.max(np.abs(digamma(y + 1) - digamma(y) - 1 / y) / np.maximum(1.0, 1 / y)))
    rec_lg = float(np.max(np.abs(ln_gamma(y + 1) - ln_gamma(y) - np.log(y)) / np.maximum(1.0, np.abs(ln_gamma(y + 1)))))
    rng = np.random.default_rng(seed)
    worst_kl = 0.0
    for _ in range(n):
        k = rng.integers(2, 8)
        a, b = rng.gamma(1.0, 2.0, size=(2, k)) + 1e-3
        worst_kl = min(worst_kl, float(dirichlet_kl(a, b)))
    return [OracleReport("kernels digamma max error vs scipy", dg, 0.0, 1e-12),
            OracleReport("kernels ln_gamma max error vs scipy", lg, 0.0, 1e-12),
            OracleReport("kernels digamma recurrence", rec_dg, 0.0, 1e-12),
            OracleReport("kernels ln_gamma recurrence", rec_lg, 0.0, 1e-12),
            OracleReport(f"kernels dirichlet KL min over {n} pairs (>= 0)", worst_kl, 0.0, 0.0)]


SUITES = {
    "fb-enum": fb_enum,
    "mc-elbo": mc_elbo,
    "monotone": monotone,
    "reductions": reductions,
    "recovery": recovery,
    "kernels": kernels,
}


def run_suite(name):
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; expected one of {', '.join(SUITES)}")
    return SUITES[name]()
