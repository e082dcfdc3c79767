"""Concave loss family used by symmetric and relativistic GAN objectives.

Each loss satisfies ``f(0) = 0``, ``f'(0) != 0``, ``sup f = M > 0`` and
``argsup f > 0``.  Values and derivatives are vectorized over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

LOG2 = math.log(2.0)

# config-file names -> internal kind
LOSS_NAMES = {"sgan": "S", "lsgan": "LS", "hinge": "Hinge"}


@dataclass(frozen=True)
class ConcaveLoss:
    """Loss descriptor: kind, supremum ``M`` and argsup ``x_star`` (inf for S)."""

    kind: str
    M: float
    x_star: float

    @property
    def name(self) -> str:
        return {v: k for k, v in LOSS_NAMES.items()}[self.kind]

    def value(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "S":
            # log(sigmoid(z)) + log 2, stable for large |z|
            return LOG2 - np.logaddexp(0.0, -z)
        if self.kind == "LS":
            return 1.0 - (z - 1.0) ** 2
        return np.minimum(z, 1.0)

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "S":
            return expit(-z)
        if self.kind == "LS":
            return -2.0 * (z - 1.0)
        # subgradient 0 at the kink z == 1
        return np.where(z < 1.0, 1.0, 0.0)

    def __str__(self):
        return self.name


SGAN = ConcaveLoss("S", LOG2, math.inf)
LSGAN = ConcaveLoss("LS", 1.0, 1.0)
HINGE = ConcaveLoss("Hinge", 1.0, 1.0)

_BY_KIND = {"S": SGAN, "LS": LSGAN, "Hinge": HINGE}


def get_loss(name) -> ConcaveLoss:
    """Look up a loss by config name (``sgan``/``lsgan``/``hinge``) or kind."""
    if isinstance(name, ConcaveLoss):
        return name
    kind = LOSS_NAMES.get(name, name)
    try:
        return _BY_KIND[kind]
    except KeyError:
        raise ValueError(
            f"unknown loss {name!r}; expected one of {sorted(LOSS_NAMES)}"
        ) from None


def _check_finite(z):
    z = float(z)
    if not math.isfinite(z):
        raise ValueError(f"loss argument must be finite, got {z}")
    return z


def f_eval(loss, z: float) -> float:
    return float(get_loss(loss).value(_check_finite(z)))


def f_grad(loss, z: float) -> float:
    return float(get_loss(loss).grad(_check_finite(z)))


@dataclass
class PropsReport:
    loss: str
    passed: bool = True
    failures: list = field(default_factory=list)

    def fail(self, check, witness):
        self.passed = False
        self.failures.append((check, witness))


def f_props_check(loss, samples: int = 1000, seed: int = 0,
                  bound: float = 50.0, tol: float = 1e-9) -> PropsReport:
    """Randomized certificate that ``loss`` meets the divergence hypotheses.

    Checks f(0) = 0, f'(0) != 0 (and agreement with a central difference),
    M > 0, x_star > 0, f <= M, the chord inequality on random pairs in
    ``[-bound, bound]``, the slope inequality f(g*b)/b <= f(g*a)/a for
    b >= a > 0, and f(g) + f(-g) <= 0.  Failures carry a witness point.
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    loss = get_loss(loss)
    report = PropsReport(loss.name)
    rng = np.random.default_rng(seed)

    f0 = float(loss.value(0.0))
    if abs(f0) > 1e-12:
        report.fail("f(0)=0", {"f(0)": f0})
    d0 = float(loss.grad(0.0))
    if d0 == 0.0:
        report.fail("f'(0)!=0", {"f'(0)": d0})
    h = 1e-6
    fd = float((loss.value(h) - loss.value(-h)) / (2 * h))
    if abs(fd - d0) > 1e-6:
        report.fail("f'(0) finite difference", {"analytic": d0, "fd": fd})
    if not loss.M > 0:
        report.fail("M>0", {"M": loss.M})
    if not loss.x_star > 0:
        report.fail("x_star>0", {"x_star": loss.x_star})
    elif math.isfinite(loss.x_star):
        fx = float(loss.value(loss.x_star))
        if abs(fx - loss.M) > 1e-12:
            report.fail("f(x_star)=M", {"f(x_star)": fx, "M": loss.M})

    a = rng.uniform(-bound, bound, samples)
    b = rng.uniform(-bound, bound, samples)
    alpha = rng.uniform(0.0, 1.0, samples)
    fa, fb = loss.value(a), loss.value(b)
    if np.any(np.maximum(fa, fb) > loss.M + tol):
        i = int(np.argmax(np.maximum(fa, fb)))
        report.fail("f<=M", {"z": float(a[i]) if fa[i] >= fb[i] else float(b[i])})
    gap = loss.value(alpha * a + (1 - alpha) * b) - (alpha * fa + (1 - alpha) * fb)
    if np.any(gap < -tol):
        i = int(np.argmin(gap))
        report.fail("chord", {"a": float(a[i]), "b": float(b[i]), "alpha": float(alpha[i])})

    lo = rng.uniform(1e-3, 10.0, samples)
    hi = lo + rng.uniform(0.0, 10.0, samples)
    nabla = rng.uniform(-5.0, 5.0, samples)
    nabla[nabla == 0.0] = 1.0
    slope_gap = loss.value(nabla * lo) / lo - loss.value(nabla * hi) / hi
    if np.any(slope_gap < -tol):
        i = int(np.argmin(slope_gap))
        report.fail("slope", {"a": float(lo[i]), "b": float(hi[i]), "nabla": float(nabla[i])})

    sym = loss.value(nabla) + loss.value(-nabla)
    if np.any(sym > tol):
        i = int(np.argmax(sym))
        report.fail("f(g)+f(-g)<=0", {"nabla": float(nabla[i])})
    return report
