"""Variational Bayes for a K-state HMM with discrete emissions.

q(pi, A, B) = q(pi) prod_k q(A_k,:) q(B_k,:), all Dirichlet.  The E-step runs
forward-backward on the sub-normalised surrogate parameters exp(E[ln .]);
its log normaliser is exactly the data term of the ELBO.
"""
import time
from dataclasses import dataclass

import numpy as np

from .core import Regime, RunResult, Schedule, annealed_update, det_annealed_update, \
    dirichlet_expected_log, dirichlet_kl, run_schedule
from .data import SequenceSet
from .errors import ConfigError, DataError, InvariantError


@dataclass
class HmmPriors:
    pi0: np.ndarray  # (K,)
    A0: np.ndarray   # (K, K)
    B0: np.ndarray   # (K, V)

    @classmethod
    def default(cls, K, V):
        """Dir(1/K) on the initial state and transition rows, Dir(10/V) on emissions."""
        return cls(np.full(K, 1.0 / K), np.full((K, K), 1.0 / K), np.full((K, V), 10.0 / V))


@dataclass
class HmmPosterior:
    pi: np.ndarray  # (K,)
    A: np.ndarray   # (K, K)
    B: np.ndarray   # (K, V)

    @property
    def K(self):
        return self.pi.shape[0]

    @property
    def V(self):
        return self.B.shape[1]

    def validate(self):
        for name in ("pi", "A", "B"):
            arr = getattr(self, name)
            if not (np.all(arr > 0) and np.all(np.isfinite(arr))):
                raise InvariantError(f"q({name}) parameters must be positive and finite")
        return self

    def expected_logs(self):
        return (dirichlet_expected_log(self.pi), dirichlet_expected_log(self.A),
                dirichlet_expected_log(self.B))

    def mean_emissions(self):
        return self.B / self.B.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("pi", "A", "B")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("pi", "A", "B")))


@dataclass
class HmmSuffStats:
    init: np.ndarray   # (K,)
    trans: np.ndarray  # (K, K)
    emit: np.ndarray   # (K, V)


@dataclass
class ForwardBackward:
    gamma: np.ndarray     # (T, K) state marginals
    xi: np.ndarray        # (T-1, K, K) pairwise marginals
    log_norm: float


def _as_sequence_set(sequences, V=None):
    if isinstance(sequences, SequenceSet):
        return sequences
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if V is None:
        V = int(max(s.max() for s in seqs)) + 1 if seqs else 1
    return SequenceSet(seqs, V)


def _shifted_exp(log_p, axis=None):
    shift = np.max(log_p, axis=axis, keepdims=axis is not None)
    return np.exp(log_p - shift), shift


def _forward_backward_batch(codes, log_pi, log_A, log_B):
    """Scaled forward-backward over a (n, T) batch of equal-length sequences.

    Every factor is divided by its maximum before exponentiation and the
    shifts are added back to the log normaliser, so very negative expected
    logs do not underflow.
    """
    n, T = codes.shape
    K = log_pi.shape[0]
    pi_s, pi_shift = _shifted_exp(log_pi)
    A_s, A_shift = _shifted_exp(log_A)
    B_s, B_shift = _shifted_exp(log_B, axis=0)         # per-symbol shift, (1, V)
    em = np.moveaxis(B_s[:, codes], 0, -1)             # (n, T, K)

    alpha = np.empty((n, T, K))
    scale = np.empty((n, T))
    a = pi_s[None, :] * em[:, 0]
    scale[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / scale[:, 0, None]
    for t in range(1, T):
        a = (alpha[:, t - 1] @ A_s) * em[:, t]
        scale[:, t] = a.sum(axis=1)
        alpha[:, t] = a / scale[:, t, None]

    beta = np.empty((n, T, K))
    beta[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[:, t] = ((em[:, t + 1] * beta[:, t + 1]) @ A_s.T) / scale[:, t + 1, None]

    gamma = alpha * beta
    if T > 1:
        right = em[:, 1:] * beta[:, 1:] / scale[:, 1:, None]       # (n, T-1, K)
        xi = alpha[:, :-1, :, None] * A_s[None, None] * right[:, :, None, :]
    else:
        xi = np.zeros((n, 0, K, K))
    with np.errstate(divide="ignore"):
        log_norm = (np.log(scale).sum(axis=1) + pi_shift + (T - 1) * A_shift
                    + B_shift[0, codes].sum(axis=1))
    return gamma, xi, log_norm


def hmm_forward_backward(seq, log_pi, log_A, log_B):
    """Marginals and log normaliser for one sequence under surrogate parameters.

    ``log_pi``, ``log_A``, ``log_B`` are (expected) log parameters; they need
    not be normalised.  ``log_norm`` is ln sum over all state paths of
    exp(log_pi[z_1] + sum log_A[z_t-1, z_t] + sum log_B[z_t, x_t]).
    """
    seq = np.asarray(seq, dtype=np.int64)
    log_pi, log_A, log_B = (np.asarray(a, dtype=float) for a in (log_pi, log_A, log_B))
    if seq.ndim != 1 or seq.size == 0:
        raise DataError("sequence must be a non-empty 1-d array of codes")
    if seq.min() < 0 or seq.max() >= log_B.shape[1]:
        raise DataError(f"code outside [0, {log_B.shape[1]})")
    if not all(np.all(np.isfinite(a)) for a in (log_pi, log_A, log_B)):
        raise ValueError("expected log parameters must be finite")
    gamma, xi, log_norm = _forward_backward_batch(seq[None], log_pi, log_A, log_B)
    return ForwardBackward(gamma[0], xi[0], float(log_norm[0]))


def _length_groups(seqset):
    groups = {}
    for i, s in enumerate(seqset.sequences):
        groups.setdefault(s.size, []).append(i)
    return [(T, np.stack([seqset.sequences[i] for i in idx])) for T, idx in sorted(groups.items())]


def hmm_accumulate(sequences, marginals, K=None):
    """Expected counts from per-sequence :class:`ForwardBackward` results."""
    seqset = _as_sequence_set(sequences)
    K = K if K is not None else marginals[0].gamma.shape[1]
    stats = HmmSuffStats(np.zeros(K), np.zeros((K, K)), np.zeros((K, seqset.V)))
    for seq, fb in zip(seqset.sequences, marginals):
        stats.init += fb.gamma[0]
        stats.trans += fb.xi.sum(axis=0)
        for k in range(K):
            stats.emit[k] += np.bincount(seq, weights=fb.gamma[:, k], minlength=seqset.V)
    return stats


def _estep(groups, post):
    """Summed expected counts and total log normaliser over all sequences."""
    log_pi, log_A, log_B = post.expected_logs()
    K, V = post.K, post.V
    stats = HmmSuffStats(np.zeros(K), np.zeros((K, K)), np.zeros((K, V)))
    total = 0.0
    for _, codes in groups:
        gamma, xi, log_norm = _forward_backward_batch(codes, log_pi, log_A, log_B)
        stats.init += gamma[:, 0].sum(axis=0)
        stats.trans += xi.sum(axis=(0, 1))
        flat = codes.ravel()
        g = gamma.reshape(-1, K)
        for k in range(K):
            stats.emit[k] += np.bincount(flat, weights=g[:, k], minlength=V)
        total += float(log_norm.sum())
    return stats, total


def hmm_random_init(K, V, N, c, rng):
    """Each Dirichlet factor is (c N / K) times a Dir(1, ..., 1) draw."""
    if min(K, V, N) < 1:
        raise ConfigError("K, V and N must be positive")
    scale = c * N / K
    return HmmPosterior(scale * rng.dirichlet(np.ones(K)),
                        scale * rng.dirichlet(np.ones(K), size=K),
                        scale * rng.dirichlet(np.ones(V), size=K))


def hmm_update(stats, priors, eta=None, rho=0.0, T=1.0, regime=Regime.NONE):
    """Conjugate Dirichlet updates, annealed according to ``regime``."""
    regime = Regime.parse(regime)
    exact = (stats.init + priors.pi0, stats.trans + priors.A0, stats.emit + priors.B0)
    if regime is Regime.STOCHASTIC and rho > 0:
        if eta is None:
            raise ValueError("stochastic update with rho > 0 needs eta")
        blocks = [annealed_update(x, e, rho) for x, e in zip(exact, (eta.pi, eta.A, eta.B))]
    elif regime is Regime.DETERMINISTIC:
        blocks = [det_annealed_update(x, T) for x in exact]
    else:
        blocks = exact
    return HmmPosterior(*blocks)


def hmm_kl(post, priors):
    return float(dirichlet_kl(post.pi, priors.pi0) + np.sum(dirichlet_kl(post.A, priors.A0))
                 + np.sum(dirichlet_kl(post.B, priors.B0)))


def hmm_elbo(sequences, post, priors, log_norms=None):
    """Sum of per-sequence log normalisers minus the Dirichlet KL terms.

    ``log_norms`` may carry the normalisers from an E-step already run with
    ``post``; otherwise they are recomputed.
    """
    if log_norms is None:
        seqset = _as_sequence_set(sequences, post.V)
        total = _estep(_length_groups(seqset), post)[1] if len(seqset) else 0.0
    else:
        total = float(np.sum(log_norms))
    return total - hmm_kl(post, priors)


def hmm_fit(sequences, K, V=None, schedule=None, max_iter=200, seed=0, tol=1e-6, priors=None):
    """Fit a K-state HMM; returns a :class:`RunResult`.

    The default schedule for this model anneals with rho_t = 0.25 max(0, 1 - t/50).
    """
    if not isinstance(sequences, SequenceSet) and len(sequences) == 0:
        raise ConfigError("empty sequence set")
    seqset = _as_sequence_set(sequences, V)
    if len(seqset) == 0:
        raise ConfigError("empty sequence set")
    if K < 1:
        raise ConfigError("K must be at least 1")
    schedule = schedule or Schedule(decay="linear:0.25:50")
    priors = priors or HmmPriors.default(K, seqset.V)
    rng = np.random.default_rng(seed)
    groups = _length_groups(seqset)
    N, c = len(seqset), seqset.mean_length
    start = time.perf_counter()

    state = {"post": hmm_random_init(K, seqset.V, N, c, rng)}
    state["stats"], _ = _estep(groups, state["post"])

    def step(t, rho, T):
        eta = None
        if schedule.regime is Regime.STOCHASTIC and rho > 0:
            eta = hmm_random_init(K, seqset.V, N, c, rng)
        post = hmm_update(state["stats"], priors, eta, rho, T, schedule.regime).validate()
        state["post"] = post
        state["stats"], total = _estep(groups, post)
        return total - hmm_kl(post, priors)

    trace = []
    converged = run_schedule(schedule, max_iter, tol, step, trace)
    return RunResult(seed=seed, regime=schedule.regime, K=K, elbo=np.array(trace),
                     posterior=state["post"], converged=converged,
                     wall_ms=1e3 * (time.perf_counter() - start), schedule=schedule)
