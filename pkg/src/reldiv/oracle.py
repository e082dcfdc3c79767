"""Exact relativistic divergences between finite 1-D distributions.

Every critic objective handled here is a positively weighted sum of ``f``
applied to affine functions of the critic table::

    F(C) = sum_t w_t f(a_t . C)

so it is concave in ``C`` and its sup is found by gradient ascent with a
Barzilai-Borwein trial step and Armijo backtracking.  The piecewise-linear
hinge objective is finished off with an exact linear program.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from reldiv.losses import get_loss

log = logging.getLogger(__name__)

VARIANTS = ("sy", "rp", "ra", "ralf", "rc")
RELATIVISTIC = ("rp", "ra", "ralf", "rc")


@dataclass(frozen=True)
class DiscreteDist:
    """Finite distribution on distinct real points, stored in increasing order."""

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).ravel()
        probs = np.asarray(self.probs, dtype=float).ravel()
        if points.size == 0 or points.size != probs.size:
            raise ValueError("points and probs must be non-empty and of equal length")
        if not np.all(np.isfinite(points)):
            raise ValueError("points must be finite")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs must be non-negative and sum to 1 (sum={probs.sum()!r})")
        order = np.argsort(points, kind="stable")
        points, probs = points[order], probs[order]
        if np.any(np.diff(points) <= 0):
            raise ValueError("support points must be distinct")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def delta(cls, point: float) -> "DiscreteDist":
        return cls([point], [1.0])

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteDist":
        return cls(obj["points"], obj["probs"])

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "probs": self.probs.tolist()}

    def on(self, support: np.ndarray) -> np.ndarray:
        """Probabilities re-indexed onto a (super)set of the support."""
        idx = np.searchsorted(support, self.points)
        if np.any(idx >= support.size) or np.any(support[np.minimum(idx, support.size - 1)] != self.points):
            raise ValueError("support does not contain every point of the distribution")
        out = np.zeros(support.size)
        out[idx] = self.probs
        return out


@dataclass(frozen=True)
class CriticTable:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise ValueError("critic values must be finite")
        object.__setattr__(self, "values", values)


@dataclass
class OracleResult:
    value: float
    critic: CriticTable
    iterations: int
    grad_norm: float
    converged: bool
    method: str = "ascent"
    history: list = field(default_factory=list, repr=False)


def union_support(P: DiscreteDist, Q: DiscreteDist):
    """Return ``(points, p, q)`` with both distributions on the union support."""
    points = np.union1d(P.points, Q.points)
    return points, P.on(points), Q.on(points)


def mixture(P: DiscreteDist, Q: DiscreteDist) -> DiscreteDist:
    points, p, q = union_support(P, Q)
    return DiscreteDist(points, 0.5 * p + 0.5 * q)


def total_variation(P: DiscreteDist, Q: DiscreteDist) -> float:
    _, p, q = union_support(P, Q)
    return 0.5 * float(np.abs(p - q).sum())


def _check_variant(variant: str) -> str:
    v = variant.lower()
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return v


def objective_terms(p: np.ndarray, q: np.ndarray, variant: str):
    """Weights ``w`` and rows ``A`` with objective ``sum_t w_t f(A[t] @ C)``.

    Zero-weight terms are dropped.
    """
    variant = _check_variant(variant)
    n = p.size
    eye = np.eye(n)
    if variant == "sy":
        w = np.concatenate([p, q])
        A = np.vstack([eye, -eye])
    elif variant == "rp":
        w = 2.0 * np.outer(p, q).ravel()
        A = (eye[:, None, :] - eye[None, :, :]).reshape(n * n, n)
    elif variant == "ra":
        w = np.concatenate([p, q])
        A = np.vstack([eye - q[None, :], p[None, :] - eye])
    elif variant == "ralf":
        w = 2.0 * p
        A = eye - q[None, :]
    else:
        m = 0.5 * (p + q)
        w = np.concatenate([p, q])
        A = np.vstack([eye - m[None, :], m[None, :] - eye])
    keep = w > 0
    return w[keep], A[keep]


def _aligned(P, Q, C):
    points, p, q = union_support(P, Q)
    c = C.values if isinstance(C, CriticTable) else np.asarray(C, dtype=float)
    if c.shape != points.shape:
        raise ValueError(
            f"critic has {c.size} entries but the union support has {points.size} points"
        )
    return p, q, c


def objective(P, Q, C, loss, variant) -> float:
    """Exact critic objective by summation over the union support."""
    p, q, c = _aligned(P, Q, C)
    w, A = objective_terms(p, q, variant)
    return float(w @ get_loss(loss).value(A @ c))


def objective_grad(P, Q, C, loss, variant) -> np.ndarray:
    """Gradient (a supergradient for hinge) of :func:`objective` w.r.t. the critic."""
    p, q, c = _aligned(P, Q, C)
    w, A = objective_terms(p, q, variant)
    return A.T @ (w * get_loss(loss).grad(A @ c))


def _hinge_lp(w, A, gauge):
    """max sum_t w_t min(A_t c, 1) as an LP over (c, u)."""
    T, n = A.shape
    cost = np.concatenate([np.zeros(n), -w])
    A_ub = np.hstack([-A, np.eye(T)])
    bounds = [(None, None)] * n + [(None, 1.0)] * T
    if gauge:
        bounds[0] = (0.0, 0.0)
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(T), bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return res.x[:n]


def solve_divergence(P: DiscreteDist, Q: DiscreteDist, loss, variant: str,
                     tol: float = 1e-6, max_iters: int = 100_000,
                     eps_sup: float = 1e-4, armijo: float = 1e-4,
                     backtrack: float = 0.5, trace: bool = False) -> OracleResult:
    """Sup of the critic objective over all critic tables.

    Ascent stops when the gradient norm drops below ``tol`` or the value is
    within ``eps_sup`` of ``2M`` (the sup can sit at infinity for the
    log-sigmoid loss on separable supports).  A non-converged result still
    carries a valid lower bound.  Relativistic objectives are invariant to
    shifting the critic, so ``C[0]`` is pinned to 0 for them.
    """
    loss = get_loss(loss)
    variant = _check_variant(variant)
    points, p, q = union_support(P, Q)
    n = points.size
    if n > 64:
        raise ValueError(f"union support has {n} points; at most 64 supported")
    w, A = objective_terms(p, q, variant)
    gauge = variant in RELATIVISTIC
    free = slice(1, None) if gauge else slice(None)
    ceiling = 2.0 * loss.M - eps_sup

    def F(c):
        return float(w @ loss.value(A @ c))

    def G(c):
        g = A.T @ (w * loss.grad(A @ c))
        if gauge:
            g[0] = 0.0
        return g

    c = np.zeros(n)
    val, g = F(c), G(c)
    gnorm = float(np.linalg.norm(g))
    history = [val] if trace else []
    step = 1.0
    it = 0
    stalled = False
    # hinge line searches crawl along kinks; hand over to the LP early
    budget = min(max_iters, 500) if loss.kind == "Hinge" else max_iters
    while it < budget and gnorm > tol and val < ceiling:
        gg = gnorm ** 2
        t = step
        while True:
            c_new = c + t * g
            val_new = F(c_new)
            if val_new >= val + armijo * t * gg:
                break
            t *= backtrack
            if t < 1e-14:
                break
        if t < 1e-14 or val_new < val:
            stalled = True
            break
        g_new = G(c_new)
        s, yv = c_new - c, g_new - g
        sy = float(s[free] @ yv[free])
        # BB1 step for ascent on a concave function: s.y <= 0
        step = float(s[free] @ s[free]) / -sy if sy < 0 else 2.0 * t
        step = min(max(step, 1e-10), 1e10)
        c, val, g = c_new, val_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        if trace:
            history.append(val)

    converged = gnorm <= tol or val >= ceiling
    method = "ascent"
    if loss.kind == "Hinge" and not converged:
        if stalled or it >= budget:
            # diminishing subgradient steps from the stall point, keeping the best
            best_c, best_v = c.copy(), val
            cur = c.copy()
            for j in range(1, 201):
                sg = G(cur)
                nrm = np.linalg.norm(sg)
                if nrm == 0:
                    break
                cur = cur + (0.1 / math.sqrt(j)) * sg / nrm
                v = F(cur)
                if v > best_v:
                    best_c, best_v = cur.copy(), v
            c, val = best_c, best_v
            it += 200
        c_lp = _hinge_lp(w, A, gauge)
        if c_lp is not None:
            v_lp = F(c_lp)
            if v_lp >= val:
                c, val = c_lp, v_lp
            converged = True
            method = "lp"
        gnorm = float(np.linalg.norm(G(c)))
    if not converged:
        log.warning("solve_divergence: no convergence after %d iterations (|g|=%.3g)", it, gnorm)
    return OracleResult(val, CriticTable(c), it, gnorm, converged, method, history)


def wasserstein_1d(P: DiscreteDist, Q: DiscreteDist) -> float:
    """W1 as the integral of |F_P - F_Q| over the union support grid."""
    points, p, q = union_support(P, Q)
    if points.size == 1:
        return 0.0
    cdf_gap = np.abs(np.cumsum(p) - np.cumsum(q))[:-1]
    return float(cdf_gap @ np.diff(points))


@dataclass
class Witness:
    critic: CriticTable
    nabla_star: float
    L_value: float


def witness_critic(P: DiscreteDist, Q: DiscreteDist, loss, variant: str,
                   grid_size: int = 400, max_nabla: float = 50.0) -> Witness:
    """Two-level critic certifying a strictly positive divergence.

    The critic is ``nabla`` on ``T = {x : p(x) > q(x)}`` and 0 elsewhere;
    ``nabla`` is scanned on a log grid over ``(0, x_star]`` and the best
    value of the objective is returned.
    """
    loss = get_loss(loss)
    points, p, q = union_support(P, Q)
    in_T = p > q
    if not in_T.any() or np.allclose(p, q, rtol=0, atol=0):
        raise ValueError("witness critic needs P != Q")
    w, A = objective_terms(p, q, variant)
    top = loss.x_star if math.isfinite(loss.x_star) else max_nabla
    grid = np.geomspace(1e-8, top, grid_size)
    a = A @ in_T.astype(float)
    values = loss.value(np.outer(grid, a)) @ w
    best = int(np.argmax(values))
    nabla = float(grid[best])
    return Witness(CriticTable(nabla * in_T), nabla, float(values[best]))


@dataclass
class CheckReport:
    passed: bool
    values: dict
    failures: list = field(default_factory=list)


def check_axioms(P: DiscreteDist, Q: DiscreteDist, loss, variant: str,
                 tol: float = 1e-6, **solver_opts) -> CheckReport:
    """Non-negativity, zero at P = Q, and witnessed positivity at P != Q."""
    res = solve_divergence(P, Q, loss, variant, **solver_opts)
    tv = total_variation(P, Q)
    values = {"value": res.value, "tv": tv, "converged": res.converged,
              "iterations": res.iterations, "witness": None}
    failures = []
    if res.value < -tol:
        failures.append(("non-negative", res.value))
    if tv == 0.0:
        if res.value > tol:
            failures.append(("zero at P=Q", res.value))
    else:
        wit = witness_critic(P, Q, loss, variant)
        values["witness"] = wit.L_value
        values["nabla_star"] = wit.nabla_star
        if not wit.L_value > 0:
            failures.append(("witness positive", wit.L_value))
        if res.value < wit.L_value - tol:
            failures.append(("sup >= witness", (res.value, wit.L_value)))
        if not res.value > 0:
            failures.append(("positive at P!=Q", res.value))
    return CheckReport(not failures, values, failures)


def check_ordering(P: DiscreteDist, Q: DiscreteDist, loss, tol: float = 1e-6,
                   **solver_opts) -> CheckReport:
    """D_Sy <= D_Rp <= D_Ralf and D_Rp <= D_Ra, each up to ``tol``."""
    values = {v: solve_divergence(P, Q, loss, v, **solver_opts).value
              for v in ("sy", "rp", "ralf", "ra")}
    failures = []
    for lo, hi in (("sy", "rp"), ("rp", "ralf"), ("rp", "ra")):
        if values[lo] > values[hi] + tol:
            failures.append((f"{lo}<={hi}", values[lo], values[hi]))
    return CheckReport(not failures, values, failures)


def weakness_sequence(steps: int, loss, kind: str = "shrinking_offset",
                      **solver_opts) -> list[dict]:
    """Rows ``(n, w1, sy, rp, ra)`` for ``P_n = delta(1/n)`` against ``delta(0)``.

    W1 goes to zero while the f-based divergences stay at ``2M`` because
    the supports never overlap.
    """
    if kind != "shrinking_offset":
        raise ValueError(f"unknown sequence kind {kind!r}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    loss = get_loss(loss)
    target = DiscreteDist.delta(0.0)
    rows = []
    for n in range(1, steps + 1):
        Pn = DiscreteDist.delta(1.0 / n)
        row = {"n": n, "w1": wasserstein_1d(Pn, target)}
        for v in ("sy", "rp", "ra"):
            row[v] = solve_divergence(Pn, target, loss, v, **solver_opts).value
        rows.append(row)
    return rows


def random_instance(rng: np.random.Generator, min_size: int = 2, max_size: int = 6):
    """Random (P, Q) pair on a shared support.

    Support size uniform in ``[min_size, max_size]``, points sorted uniform
    in [-1, 1], each distribution drawn from a flat Dirichlet.
    """
    n = int(rng.integers(min_size, max_size + 1))
    points = np.sort(rng.uniform(-1.0, 1.0, n))
    p = rng.dirichlet(np.ones(n))
    q = rng.dirichlet(np.ones(n))
    return DiscreteDist(points, p), DiscreteDist(points, q)
