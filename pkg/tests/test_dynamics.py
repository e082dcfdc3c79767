from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from reldiv import dynamics
from reldiv.dynamics import (
    GameState,
    critic_step,
    generator_grad,
    generator_objective_q,
    generator_step,
    run,
)
from reldiv.estimators import ScoreBatch, generator_loss
from reldiv.losses import get_loss
from reldiv.oracle import CriticTable, DiscreteDist, solve_divergence

from conftest import LOSSES, RELATIVISTIC, VARIANTS

P2 = DiscreteDist([0.0, 1.0], [0.8, 0.2])


def state_with(P, loss, variant, theta, critic):
    s = GameState.start(P, loss, variant)
    return GameState(s.support, P, np.asarray(theta, float), CriticTable(critic),
                     s.loss, s.variant)


def test_start_defaults():
    s = GameState.start(P2, "lsgan", "Rp")
    np.testing.assert_allclose(s.q, [0.5, 0.5])
    np.testing.assert_array_equal(s.critic.values, [0.0, 0.0])
    assert s.variant == "rp" and s.step == 0


def test_start_with_zero_mass():
    s = GameState.start(P2, "lsgan", "rp", q0=[1.0, 0.0])
    np.testing.assert_allclose(s.q, [1.0, 0.0])


@pytest.mark.parametrize("loss", LOSSES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_critic_step_stationary_at_equality(loss, variant):
    s = GameState.start(P2, loss, variant, q0=P2.probs)
    t = critic_step(s, 0.1)
    np.testing.assert_allclose(t.critic.values, 0.0, atol=1e-15)


@pytest.mark.parametrize("loss", LOSSES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_critic_ascent_monotone(loss, variant):
    rng = np.random.default_rng(0)
    P = DiscreteDist([0, 1, 2, 3], rng.dirichlet(np.ones(4)))
    s = GameState.start(P, loss, variant, q0=rng.dirichlet(np.ones(4)))
    prev = s.critic_objective()
    for _ in range(200):
        s = critic_step(s, 0.5)
        cur = s.critic_objective()
        assert cur >= prev - 1e-15
        prev = cur


@pytest.mark.parametrize("variant", VARIANTS)
def test_critic_converges_to_oracle(variant):
    Q = DiscreteDist([0.0, 1.0], [0.2, 0.8])
    s = GameState.start(P2, "lsgan", variant, q0=Q.probs)
    for _ in range(5000):
        s = critic_step(s, 0.2)
    best = solve_divergence(P2, Q, "lsgan", variant)
    c, ref = s.critic.values, best.critic.values
    if variant in RELATIVISTIC:
        c, ref = c - c[0], ref - ref[0]
    np.testing.assert_allclose(c, ref, atol=1e-3)
    assert s.critic_objective() == pytest.approx(best.value, abs=1e-6)


def test_step_validation():
    s = GameState.start(P2, "lsgan", "rp")
    with pytest.raises(ValueError):
        critic_step(s, 0.0)
    with pytest.raises(ValueError):
        generator_step(s, -1.0)


# -- generator -----------------------------------------------------------------------------

@pytest.mark.parametrize("variant", VARIANTS)
def test_generator_objective_matches_batch_estimator(variant):
    # a batch listing each support point in proportion to its mass gives the
    # exact expectation for the paired and one-sample forms
    P = DiscreteDist([0.0, 1.0], [0.5, 0.5])
    q = np.array([0.5, 0.5])
    c = np.array([0.3, -0.4])
    batch = ScoreBatch(c, c[::-1]) if variant == "rp" else ScoreBatch(c, c)
    want = generator_loss(batch, "lsgan", variant)
    if variant == "rp":
        want = 2 * np.mean([1 - (b - a - 1) ** 2 for a in c for b in c])
    got = generator_objective_q(P.probs, q, c, get_loss("lsgan"), variant)
    assert got == pytest.approx(want)


def _theta_objective(state, theta):
    return generator_objective_q(state.P.probs, softmax(theta), state.critic.values,
                                 state.loss, state.variant)


@pytest.mark.parametrize("loss", LOSSES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_generator_gradient_finite_differences(loss, variant):
    rng = np.random.default_rng(7)
    P = DiscreteDist([0, 1, 2, 3], rng.dirichlet(np.ones(4)))
    checked = 0
    while checked < 10:
        theta = rng.normal(size=4)
        critic = rng.normal(scale=0.4, size=4)
        s = state_with(P, loss, variant, theta, critic)
        if loss == "hinge":
            # keep every critic difference away from the kink at 1
            diffs = np.abs(np.subtract.outer(critic, critic).ravel() - 1)
            mus = np.concatenate([critic - P.probs @ critic, critic - s.q @ critic])
            if diffs.min() < 1e-2 or np.abs(np.abs(mus) - 1).min() < 1e-2:
                continue
        g = generator_grad(s)
        h = 1e-5
        fd = np.array([(_theta_objective(s, theta + h * e) - _theta_objective(s, theta - h * e)) / (2 * h)
                       for e in np.eye(4)])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-3)
        checked += 1


@pytest.mark.parametrize("loss", LOSSES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_generator_stationary_at_equality(loss, variant):
    s = GameState.start(P2, loss, variant, q0=P2.probs)
    assert np.linalg.norm(generator_grad(s)) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(shift=st.floats(-5, 5), variant=st.sampled_from(VARIANTS))
def test_generator_gradient_ignores_logit_shift(shift, variant):
    theta = np.array([0.3, -0.2, 1.0])
    P = DiscreteDist([0, 1, 2], [0.2, 0.3, 0.5])
    a = generator_grad(state_with(P, "sgan", variant, theta, [0.1, 0.5, -0.3]))
    b = generator_grad(state_with(P, "sgan", variant, theta + shift, [0.1, 0.5, -0.3]))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_generator_step_counts_and_moves():
    s = GameState.start(P2, "lsgan", "rp")
    s = critic_step(s, 0.1)
    t = generator_step(s, 0.1)
    assert t.step == 1
    # the critic scores the P-heavy point higher, so mass moves towards it
    assert t.q[0] > s.q[0]


# -- run -----------------------------------------------------------------------------------

@pytest.mark.parametrize("iters, log_every", [(10, 3), (100, 10), (7, 7), (5, 10)])
def test_trajectory_length(iters, log_every):
    traj = run(GameState.start(P2, "lsgan", "ra"), iters, 1, 0.05, 0.05, log_every)
    assert len(traj.rows) == iters // log_every + 1
    assert [r["step"] for r in traj.rows] == list(range(0, iters + 1, log_every))[: len(traj.rows)]
    assert not traj.aborted
    assert traj.final.step == iters


@pytest.mark.parametrize("variant", VARIANTS)
def test_equal_start_stays_put(variant):
    traj = run(GameState.start(P2, "lsgan", variant, q0=P2.probs), 500, 5, 0.05, 0.05, 100)
    assert max(r["tv"] for r in traj.rows) <= 1e-6


def test_run_deterministic():
    a = run(GameState.start(P2, "sgan", "rc"), 300, 2, 0.05, 0.05, 50)
    b = run(GameState.start(P2, "sgan", "rc"), 300, 2, 0.05, 0.05, 50)
    assert a.rows == b.rows
    np.testing.assert_array_equal(a.final.theta, b.final.theta)


def test_lsgan_rp_smoke():
    traj = run(GameState.start(P2, "lsgan", "rp"), 2000, 5, 0.05, 0.05, 2000)
    assert traj.rows[-1]["divergence"] < traj.rows[0]["divergence"]


def test_run_aborts_on_non_finite(monkeypatch):
    def bad_step(state, lr):
        return replace(state, theta=np.full_like(state.theta, np.nan), step=state.step + 1)

    monkeypatch.setattr(dynamics, "generator_step", bad_step)
    traj = run(GameState.start(P2, "lsgan", "rp"), 10, 1, 0.05, 0.05, 1)
    assert traj.aborted
    assert "non-finite" in traj.reason
    assert len(traj.rows) == 1


def test_run_validation():
    s = GameState.start(P2, "lsgan", "rp")
    for kwargs in ({"iters": 0}, {"log_every": 0}, {"critic_steps_per_gen": 0},
                   {"lr_c": 0.0}, {"lr_g": -1.0}):
        args = {"iters": 5, "critic_steps_per_gen": 1, "lr_c": 0.1, "lr_g": 0.1,
                "log_every": 1} | kwargs
        with pytest.raises(ValueError):
            run(s, **args)
