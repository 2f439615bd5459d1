"""Annealing schedules, the annealed natural-parameter updates, and
Dirichlet helpers shared by the GMM, HMM and LDA models.

Iterations are numbered from ``t = 1``.  For ``t <= cutoff`` a schedule yields
a step size ``rho_t`` from its decay law and a temperature
``T_t = temperature_scale / (1 - rho_t)``; afterwards ``rho_t = 0`` and
``T_t = 1`` so every regime finishes with exact coordinate-ascent updates.
"""
import enum
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, InvariantError, ScheduleError
from .special import digamma, ln_gamma


class Regime(str, enum.Enum):
    NONE = "vi"
    DETERMINISTIC = "det"
    STOCHASTIC = "stoch"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"none": cls.NONE, "deterministic": cls.DETERMINISTIC,
                   "stochastic": cls.STOCHASTIC, "detavi": cls.DETERMINISTIC,
                   "stochavi": cls.STOCHASTIC}
        key = str(value).strip().lower()
        try:
            return cls(key)
        except ValueError:
            if key in aliases:
                return aliases[key]
        raise ConfigError(f"unknown regime {value!r}; expected one of vi, det, stoch")


@dataclass(frozen=True)
class Exponential:
    """rho_t = base ** t.  ``base = 0`` gives rho identically zero."""

    base: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.base < 1.0:
            raise ScheduleError(f"exponential base must lie in [0, 1), got {self.base}")

    def __call__(self, t):
        return self.base ** t

    def __str__(self):
        return f"exp:{self.base:g}"


@dataclass(frozen=True)
class Linear:
    """rho_t = c * max(0, 1 - t / horizon)."""

    c: float = 0.25
    horizon: int = 50

    def __post_init__(self):
        if self.c < 0 or self.horizon < 1:
            raise ScheduleError("linear decay needs c >= 0 and horizon >= 1")
        if self(1) >= 1.0:
            raise ScheduleError(f"linear decay gives rho_1 = {self(1)} >= 1")

    def __call__(self, t):
        return self.c * max(0.0, 1.0 - t / self.horizon)

    def __str__(self):
        return f"linear:{self.c:g}:{self.horizon:d}"


Decay = Union[Exponential, Linear]


def parse_decay(text):
    """Parse ``exp:0.9`` or ``linear:0.25:50``."""
    parts = str(text).strip().lower().split(":")
    try:
        if parts[0] in ("exp", "exponential") and len(parts) == 2:
            return Exponential(float(parts[1]))
        if parts[0] == "linear" and len(parts) == 3:
            return Linear(float(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise ScheduleError(f"bad decay spec {text!r}: {exc}") from None
    raise ScheduleError(f"bad decay spec {text!r}; use exp:BASE or linear:C:HORIZON")


@dataclass(frozen=True)
class Schedule:
    regime: Regime = Regime.NONE
    decay: Decay = field(default_factory=Exponential)
    temperature_scale: float = 5.0
    cutoff: int = 100

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        if isinstance(self.decay, str):
            object.__setattr__(self, "decay", parse_decay(self.decay))
        if self.temperature_scale < 1.0:
            raise ScheduleError("temperature_scale must be >= 1")
        if self.cutoff < 0:
            raise ScheduleError("cutoff must be >= 0")

    def rho(self, t):
        return schedule_rho(self, t)

    def temperature(self, t):
        return schedule_temperature(self, t)

    def step(self, t):
        """(rho_t, T_t) as used by this schedule's regime at iteration t."""
        if self.regime is Regime.STOCHASTIC:
            return self.rho(t), 1.0
        if self.regime is Regime.DETERMINISTIC:
            return 0.0, self.temperature(t)
        return 0.0, 1.0


def schedule_rho(s, t):
    if t < 1:
        raise ValueError("iterations are numbered from t = 1")
    if t > s.cutoff:
        return 0.0
    return float(s.decay(t))


def schedule_temperature(s, t):
    if t < 1:
        raise ValueError("iterations are numbered from t = 1")
    if t > s.cutoff:
        return 1.0
    rho = schedule_rho(s, t)
    if rho >= 1.0:
        raise ScheduleError(f"rho_{t} = {rho} gives an infinite temperature")
    return s.temperature_scale / (1.0 - rho)


class Family(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NORMAL = "normal"
    WISHART = "wishart"


@dataclass
class NaturalParams:
    """Parameter blocks of one variational factor.

    Block conventions: Dirichlet ``(alpha,)``; Normal ``(mean, covariance)``;
    Wishart ``(scale, dof)``.
    """

    family: Family
    blocks: Sequence[np.ndarray]

    def __post_init__(self):
        self.family = Family(self.family)
        self.blocks = tuple(np.asarray(b, dtype=float) for b in self.blocks)

    def validate(self):
        if self.family is Family.DIRICHLET:
            if not np.all(self.blocks[0] > 0):
                raise InvariantError("Dirichlet parameters must be strictly positive")
        elif self.family is Family.NORMAL:
            _require_spd(self.blocks[1], "Normal covariance")
        else:
            scale, dof = self.blocks
            _require_spd(scale, "Wishart scale")
            if not dof > scale.shape[-1] - 1:
                raise InvariantError("Wishart degrees of freedom must exceed d - 1")
        return self


def _require_spd(m, what):
    m = np.asarray(m)
    if not np.allclose(m, np.swapaxes(m, -1, -2), rtol=1e-10, atol=1e-12):
        raise InvariantError(f"{what} is not symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise InvariantError(f"{what} is not positive definite") from None


def _blocks(p):
    return p.blocks if isinstance(p, NaturalParams) else (np.asarray(p, dtype=float),)


def _rebuild(template, blocks):
    if isinstance(template, NaturalParams):
        return NaturalParams(template.family, blocks).validate()
    return blocks[0]


def annealed_update(correct, eta, rho):
    """Blend the exact update with a fresh random initialisation.

    Returns ``(1 - rho) * correct + rho * eta`` block by block.  ``correct``
    is the usual conjugate update (expected statistics plus prior).  Accepts
    plain arrays or :class:`NaturalParams` of the same family.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if isinstance(correct, NaturalParams) or isinstance(eta, NaturalParams):
        if not (isinstance(correct, NaturalParams) and isinstance(eta, NaturalParams)):
            raise ValueError("cannot blend NaturalParams with a bare array")
        if correct.family is not eta.family:
            raise ValueError("family mismatch in annealed_update")
    a, b = _blocks(correct), _blocks(eta)
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ValueError("shape mismatch in annealed_update")
    if rho == 0.0:
        return _rebuild(correct, tuple(x.copy() for x in a))
    return _rebuild(correct, tuple((1.0 - rho) * x + rho * y for x, y in zip(a, b)))


def det_annealed_update(correct, T):
    """Deterministic annealing: divide the exact update by the temperature."""
    if not T >= 1.0:
        raise ValueError(f"temperature must be >= 1, got {T}")
    return _rebuild(correct, tuple(x / T for x in _blocks(correct)))


def dirichlet_expected_log(alpha):
    """E[ln theta] under Dir(alpha), along the last axis."""
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(alpha > 0):
        raise ValueError("Dirichlet parameters must be positive")
    return digamma(alpha) - digamma(alpha.sum(axis=-1, keepdims=True))


def dirichlet_kl(alpha, alpha0):
    """KL(Dir(alpha) || Dir(alpha0)) along the last axis."""
    alpha = np.asarray(alpha, dtype=float)
    alpha0 = np.broadcast_to(np.asarray(alpha0, dtype=float), alpha.shape)
    if alpha.shape[-1:] != np.shape(alpha0)[-1:]:
        raise ValueError("length mismatch in dirichlet_kl")
    if not (np.all(alpha > 0) and np.all(alpha0 > 0)):
        raise ValueError("Dirichlet parameters must be positive")
    a_sum = alpha.sum(axis=-1)
    kl = (ln_gamma(a_sum) - ln_gamma(alpha0.sum(axis=-1))
          - np.sum(ln_gamma(alpha) - ln_gamma(alpha0), axis=-1)
          + np.sum((alpha - alpha0) * dirichlet_expected_log(alpha), axis=-1))
    # rounding can leave a -1e-16 residue at alpha == alpha0
    kl = np.maximum(kl, 0.0)
    return float(kl) if np.ndim(kl) == 0 else kl


@dataclass
class RunResult:
    """Outcome of one fit.  ``elbo[i]`` is the objective after iteration i + 1."""

    seed: int
    regime: Regime
    K: int
    elbo: np.ndarray
    posterior: Any
    converged: bool = False
    run: int = 0
    wall_ms: float = 0.0
    schedule: Optional[Schedule] = None

    @property
    def iterations(self):
        return len(self.elbo)

    @property
    def final_elbo(self):
        return float(self.elbo[-1]) if len(self.elbo) else float("nan")


def run_schedule(schedule, max_iter, tol, step, elbo_trace):
    """Drive an annealed fit loop.

    ``step(t, rho, T)`` performs one full iteration and returns the objective
    of the updated posterior.  Stops at ``max_iter`` or when the relative
    change drops under ``tol`` once annealing has switched off.
    """
    converged = False
    for t in range(1, max_iter + 1):
        rho, T = schedule.step(t)
        value = step(t, rho, T)
        if not np.isfinite(value):
            raise InvariantError(f"non-finite objective at iteration {t}")
        elbo_trace.append(value)
        if t > schedule.cutoff and len(elbo_trace) > 1 and tol > 0:
            prev = elbo_trace[-2]
            if abs(value - prev) <= tol * abs(prev):
                converged = True
                break
    return converged
