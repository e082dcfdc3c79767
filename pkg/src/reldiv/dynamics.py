"""Full-batch GAN game on a fixed discrete support.

The generator is a categorical distribution ``Q = softmax(theta)`` over the
support, the critic a table of scores.  Both players take exact gradient
steps; the generator uses the non-saturating objective with real and fake
roles swapped.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax

from reldiv.losses import ConcaveLoss, get_loss
from reldiv.oracle import (
    CriticTable,
    DiscreteDist,
    objective_terms,
    solve_divergence,
    total_variation,
)

TRAJECTORY_HEADER = ("step", "divergence", "objective", "tv")


@dataclass(frozen=True)
class GameState:
    support: np.ndarray
    P: DiscreteDist
    theta: np.ndarray
    critic: CriticTable
    loss: ConcaveLoss
    variant: str
    step: int = 0

    @classmethod
    def start(cls, P: DiscreteDist, loss, variant: str, q0=None, critic=None):
        """Game on ``P``'s support; ``q0`` defaults to uniform, critic to zeros."""
        n = P.points.size
        q0 = np.full(n, 1.0 / n) if q0 is None else np.asarray(q0, dtype=float)
        with np.errstate(divide="ignore"):
            theta = np.log(q0)
        theta = theta - theta[np.isfinite(theta)].max()
        critic = np.zeros(n) if critic is None else critic
        return cls(P.points, P, theta, CriticTable(critic), get_loss(loss), variant.lower())

    @property
    def q(self) -> np.ndarray:
        return softmax(self.theta)

    @property
    def Q(self) -> DiscreteDist:
        q = self.q
        return DiscreteDist(self.support, q / q.sum())

    def critic_objective(self) -> float:
        w, A = objective_terms(self.P.probs, self.q, self.variant)
        return float(w @ self.loss.value(A @ self.critic.values))


def generator_objective_q(p, q, c, loss, variant) -> float:
    """Non-saturating generator objective as a function of the fake probabilities."""
    f = loss.value
    if variant == "sy":
        return float(q @ f(c))
    if variant == "rp":
        return float(2.0 * q @ f(c[:, None] - c[None, :]) @ p)
    mu_p, mu_q = p @ c, q @ c
    if variant == "ralf":
        return float(2.0 * q @ f(c - mu_p))
    if variant == "ra":
        return float(q @ f(c - mu_p) + p @ f(mu_q - c))
    m = 0.5 * (mu_p + mu_q)
    return float(q @ f(c - m) + p @ f(m - c))


def generator_grad_q(p, q, c, loss, variant) -> np.ndarray:
    """Gradient of :func:`generator_objective_q` with respect to ``q``."""
    f, df = loss.value, loss.grad
    if variant == "sy":
        return f(c)
    if variant == "rp":
        return 2.0 * f(c[:, None] - c[None, :]) @ p
    mu_p, mu_q = p @ c, q @ c
    if variant == "ralf":
        return 2.0 * f(c - mu_p)
    if variant == "ra":
        return f(c - mu_p) + c * (p @ df(mu_q - c))
    m = 0.5 * (mu_p + mu_q)
    # q enters through the centre m = (mu_p + q.c)/2 as well
    dm = -(q @ df(c - m)) + p @ df(m - c)
    return f(c - m) + 0.5 * c * dm


def generator_grad(state: GameState) -> np.ndarray:
    """Gradient of the generator objective with respect to the logits."""
    q = state.q
    g = generator_grad_q(state.P.probs, q, state.critic.values, state.loss, state.variant)
    # softmax Jacobian: diag(q) - q q^T
    return q * (g - q @ g)


def critic_step(state: GameState, lr: float, backtrack: bool = True,
                max_halvings: int = 30) -> GameState:
    """One exact-gradient ascent step on the critic objective.

    With ``backtrack`` the step is halved until the objective does not
    decrease.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    w, A = objective_terms(state.P.probs, state.q, state.variant)
    f, df = state.loss.value, state.loss.grad
    c = state.critic.values
    z = A @ c
    g = A.T @ (w * df(z))
    if backtrack:
        before = float(w @ f(z))
        for _ in range(max_halvings):
            trial = c + lr * g
            if float(w @ f(A @ trial)) >= before:
                return replace(state, critic=CriticTable(trial))
            lr *= 0.5
        return state
    return replace(state, critic=CriticTable(c + lr * g))


def generator_step(state: GameState, lr: float) -> GameState:
    """One exact-gradient ascent step on the generator logits, critic fixed."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    theta = state.theta + lr * generator_grad(state)
    return replace(state, theta=theta - theta.max(), step=state.step + 1)


@dataclass
class Trajectory:
    rows: list = field(default_factory=list)
    final: GameState | None = None
    aborted: bool = False
    reason: str = ""


def _record(state, solver_opts):
    Q = state.Q
    div = solve_divergence(state.P, Q, state.loss, state.variant, **solver_opts).value
    return {"step": state.step, "divergence": div,
            "objective": state.critic_objective(), "tv": total_variation(state.P, Q)}


def run(initial: GameState, iters: int, critic_steps_per_gen: int = 1,
        lr_c: float = 0.05, lr_g: float = 0.05, log_every: int = 100,
        solver_opts: dict | None = None) -> Trajectory:
    """Alternate critic and generator updates, logging every ``log_every`` steps.

    A step is one generator update preceded by ``critic_steps_per_gen``
    critic updates.  The trajectory has ``iters // log_every + 1`` rows
    unless the state becomes non-finite, in which case the run stops and the
    trajectory is flagged as aborted.
    """
    if iters < 1 or critic_steps_per_gen < 1 or log_every < 1:
        raise ValueError("iters, critic_steps_per_gen and log_every must be positive")
    if lr_c <= 0 or lr_g <= 0:
        raise ValueError("learning rates must be positive")
    solver_opts = solver_opts or {}
    state = initial
    traj = Trajectory([_record(state, solver_opts)])
    for _ in range(iters):
        try:
            for _ in range(critic_steps_per_gen):
                state = critic_step(state, lr_c)
            state = generator_step(state, lr_g)
        except ValueError as exc:
            traj.aborted = True
            traj.reason = f"non-finite state after step {state.step}: {exc}"
            break
        if np.any(np.isnan(state.theta)) or np.any(np.isposinf(state.theta)):
            traj.aborted = True
            traj.reason = f"non-finite logits at step {state.step}"
            break
        if state.step % log_every == 0:
            traj.rows.append(_record(state, solver_opts))
    traj.final = state
    return traj
