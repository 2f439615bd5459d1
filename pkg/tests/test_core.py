import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from avi.core import (Exponential, Family, Linear, NaturalParams, Regime, Schedule, annealed_update,
                      det_annealed_update, dirichlet_expected_log, dirichlet_kl, parse_decay,
                      run_schedule, schedule_rho, schedule_temperature)
from avi.errors import ConfigError, InvariantError, ScheduleError


# ---------------------------------------------------------------- schedules

def test_rho_exponential():
    s = Schedule(Regime.STOCHASTIC, Exponential(0.9))
    assert schedule_rho(s, 1) == pytest.approx(0.9)
    assert schedule_rho(s, 2) == pytest.approx(0.81)


def test_rho_linear_clamps():
    s = Schedule(Regime.STOCHASTIC, Linear(0.25, 50))
    assert schedule_rho(s, 60) == 0.0
    assert schedule_rho(s, 1) == pytest.approx(0.25 * (1 - 1 / 50))


def test_temperature_values():
    s = Schedule(Regime.DETERMINISTIC, Exponential(0.9), temperature_scale=5)
    assert schedule_temperature(s, 1) == pytest.approx(50.0)
    flat = Schedule(Regime.DETERMINISTIC, Exponential(0.0), temperature_scale=5)
    assert schedule_temperature(flat, 3) == pytest.approx(5.0)
    for scale in (1.0, 5.0, 17.0):
        late = Schedule(Regime.DETERMINISTIC, Exponential(0.9), temperature_scale=scale, cutoff=10)
        assert schedule_temperature(late, 11) == 1.0


def test_cutoff_rule_exact_zero():
    s = Schedule(Regime.STOCHASTIC, Exponential(0.9), cutoff=5)
    assert schedule_rho(s, 5) > 0
    assert schedule_rho(s, 6) == 0.0


def test_temperature_rejects_rho_one():
    # only reachable through a hand-built decay law
    s = Schedule(Regime.DETERMINISTIC, Exponential(0.9))
    object.__setattr__(s, "decay", lambda t: 1.0)
    with pytest.raises(ScheduleError):
        schedule_temperature(s, 1)


def test_t_starts_at_one():
    with pytest.raises(ValueError):
        schedule_rho(Schedule(), 0)


@pytest.mark.parametrize("text,expected", [("exp:0.9", Exponential(0.9)), ("linear:0.25:50", Linear(0.25, 50)),
                                           ("EXP:0", Exponential(0.0))])
def test_parse_decay(text, expected):
    assert parse_decay(text) == expected


@pytest.mark.parametrize("text", ["exp", "exp:1.0", "exp:-0.1", "linear:0.25", "linear:2:4", "cos:0.5", "exp:x"])
def test_parse_decay_rejects(text):
    with pytest.raises(ScheduleError):
        parse_decay(text)


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        Schedule(temperature_scale=0.5)
    with pytest.raises(ScheduleError):
        Schedule(cutoff=-1)
    with pytest.raises(ConfigError):
        Schedule(regime="hot")


def test_schedule_step_by_regime():
    assert Schedule(Regime.NONE).step(1) == (0.0, 1.0)
    rho, T = Schedule(Regime.STOCHASTIC).step(1)
    assert (rho, T) == (pytest.approx(0.9), 1.0)
    rho, T = Schedule(Regime.DETERMINISTIC).step(1)
    assert (rho, T) == (0.0, pytest.approx(50.0))


def test_regime_aliases():
    assert Regime.parse("stochastic") is Regime.STOCHASTIC
    assert Regime.parse("detAVI") is Regime.DETERMINISTIC
    assert Regime.parse("none") is Regime.NONE


@settings(max_examples=100, deadline=None)
@given(base=st.floats(0.0, 0.99), c=st.floats(0.0, 0.99), horizon=st.integers(1, 200),
       cutoff=st.integers(0, 150), scale=st.floats(1.0, 20.0))
def test_schedule_invariants(base, c, horizon, cutoff, scale):
    for decay in (Exponential(base), Linear(c, horizon)):
        s = Schedule(Regime.DETERMINISTIC, decay, scale, cutoff)
        rhos = np.array([s.rho(t) for t in range(1, 220)])
        temps = np.array([s.temperature(t) for t in range(1, 220)])
        assert np.all((rhos >= 0) & (rhos < 1))
        assert np.all(np.diff(rhos) <= 0)
        assert np.all(rhos[cutoff:] == 0.0)
        assert np.all(temps >= 1.0)
        assert np.all(temps[cutoff:] == 1.0)


# ---------------------------------------------------------------- updates

def test_annealed_update_examples():
    np.testing.assert_allclose(annealed_update(np.array([2.0, 4.0]), np.array([1.0, 1.0]), 0.5), [1.5, 2.5])
    c, e = np.array([2.0, 4.0]), np.array([7.0, 1.0])
    out = annealed_update(c, e, 0.0)
    assert np.array_equal(out, c) and out is not c
    np.testing.assert_array_equal(annealed_update(c, e, 1.0), e)


def test_annealed_update_errors():
    with pytest.raises(ValueError):
        annealed_update(np.ones(2), np.ones(3), 0.5)
    with pytest.raises(ValueError):
        annealed_update(np.ones(2), np.ones(2), 1.5)
    a = NaturalParams(Family.DIRICHLET, [np.ones(2)])
    b = NaturalParams(Family.NORMAL, [np.zeros(2), np.eye(2)])
    with pytest.raises(ValueError):
        annealed_update(a, b, 0.5)


@settings(max_examples=100, deadline=None)
@given(rho=st.floats(0.0, 1.0), seed=st.integers(0, 2**31))
def test_annealed_update_convex_hull_and_invariants(rho, seed):
    rng = np.random.default_rng(seed)
    d = 3
    def wishart():
        A = rng.standard_normal((d, d))
        return NaturalParams(Family.WISHART, [A @ A.T + 0.1 * np.eye(d), d + rng.uniform(0, 5)])
    def dirichlet():
        return NaturalParams(Family.DIRICHLET, [rng.gamma(1.0, 1.0, 4) + 1e-3])
    for make in (wishart, dirichlet):
        a, b = make(), make()
        out = annealed_update(a, b, rho)
        out.validate()
        for x, y, z in zip(a.blocks, b.blocks, out.blocks):
            lo, hi = np.minimum(x, y), np.maximum(x, y)
            assert np.all(z >= lo - 1e-12) and np.all(z <= hi + 1e-12)


def test_det_annealed_update_examples():
    np.testing.assert_array_equal(det_annealed_update(np.array([2.0, 4.0]), 1.0), [2.0, 4.0])
    np.testing.assert_array_equal(det_annealed_update(np.array([2.0, 4.0]), 2.0), [1.0, 2.0])
    np.testing.assert_array_equal(det_annealed_update(np.array([10.0]), 5.0), [2.0])
    with pytest.raises(ValueError):
        det_annealed_update(np.ones(2), 0.5)


def test_natural_params_validation():
    with pytest.raises(InvariantError):
        NaturalParams(Family.DIRICHLET, [np.array([1.0, 0.0])]).validate()
    with pytest.raises(InvariantError):
        NaturalParams(Family.NORMAL, [np.zeros(2), -np.eye(2)]).validate()
    with pytest.raises(InvariantError):
        NaturalParams(Family.WISHART, [np.eye(3), 1.5]).validate()
    NaturalParams(Family.WISHART, [np.eye(3), 2.5]).validate()


# ---------------------------------------------------------------- Dirichlet math

def test_dirichlet_expected_log_examples():
    np.testing.assert_allclose(dirichlet_expected_log([1.0, 1.0]), [-1.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(dirichlet_expected_log([2.0, 2.0]), [-5 / 6, -5 / 6], atol=1e-12)
    v = dirichlet_expected_log(np.full(5, 0.3))
    assert np.all(v == v[0])
    with pytest.raises(ValueError):
        dirichlet_expected_log([1.0, 0.0])


def test_dirichlet_kl_examples():
    assert dirichlet_kl([3.0, 1.0, 2.0], [3.0, 1.0, 2.0]) == 0.0
    with pytest.raises(ValueError):
        dirichlet_kl([1.0, 2.0], [1.0, 2.0, 3.0])


def test_dirichlet_kl_matches_monte_carlo():
    # oracle: average of ln q - ln p over draws from q, scipy densities
    alpha, alpha0 = np.array([2.0, 2.0]), np.array([1.0, 1.0])
    draws = np.random.default_rng(1).dirichlet(alpha, size=200_000)
    draws = np.clip(draws, 1e-300, None)
    vals = stats.dirichlet(alpha).logpdf(draws.T) - stats.dirichlet(alpha0).logpdf(draws.T)
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(dirichlet_kl(alpha, alpha0) - vals.mean()) <= 3 * se


def test_dirichlet_kl_nonnegative_on_random_pairs(rng):
    for _ in range(1000):
        k = rng.integers(2, 8)
        a, b = rng.gamma(1.0, 2.0, size=(2, k)) + 1e-3
        kl = dirichlet_kl(a, b)
        assert kl > 0 if not np.allclose(a, b) else kl >= 0


def test_dirichlet_kl_batched():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = dirichlet_kl(a, 1.0)
    assert out.shape == (2,)
    assert out[0] == pytest.approx(dirichlet_kl(a[0], [1.0, 1.0]))


# ---------------------------------------------------------------- loop driver

def test_run_schedule_convergence_only_after_cutoff():
    calls = []
    def step(t, rho, T):
        calls.append((t, rho, T))
        return -1.0  # constant: would converge at t = 2 without the cutoff rule
    trace = []
    converged = run_schedule(Schedule(Regime.STOCHASTIC, cutoff=5), 50, 1e-6, step, trace)
    assert converged and len(trace) == 6
    assert calls[0][1] == pytest.approx(0.9) and calls[-1][1] == 0.0


def test_run_schedule_rejects_non_finite():
    with pytest.raises(InvariantError):
        run_schedule(Schedule(), 5, 1e-6, lambda t, r, T: float("nan"), [])
