"""Mini-batch estimators of GAN critic objectives for a fixed critic.

All estimators consume critic scores, never raw data.  The array kernels
(``KERNELS``) accept real/fake score arrays of shape ``(..., k)`` so the
enumeration and Monte Carlo code can evaluate millions of batches at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reldiv.losses import LSGAN, get_loss


@dataclass(frozen=True)
class ScoreBatch:
    """k real scores C(x_i) and k fake scores C(y_i)."""

    real_scores: np.ndarray
    fake_scores: np.ndarray

    def __post_init__(self):
        real = np.asarray(self.real_scores, dtype=float).ravel()
        fake = np.asarray(self.fake_scores, dtype=float).ravel()
        if real.size == 0 or fake.size == 0:
            raise ValueError("score arrays must be non-empty")
        if real.size != fake.size:
            raise ValueError(
                f"real and fake batches differ in size: {real.size} != {fake.size}"
            )
        if not (np.all(np.isfinite(real)) and np.all(np.isfinite(fake))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "real_scores", real)
        object.__setattr__(self, "fake_scores", fake)

    @property
    def k(self) -> int:
        return self.real_scores.size


@dataclass(frozen=True)
class MomentSpec:
    mu_x: float
    var_x: float
    mu_y: float
    var_y: float
    k: int = 1

    def __post_init__(self):
        if self.var_x < 0 or self.var_y < 0:
            raise ValueError("variances must be non-negative")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class EstimateResult:
    value: float
    estimator: str
    k: int


# -- array kernels -----------------------------------------------------------

def _sy(x, y, loss):
    return loss.value(x).mean(-1) + loss.value(-y).mean(-1)


def _rp(x, y, loss):
    return 2.0 * loss.value(x - y).mean(-1)


def _rp_mvue(x, y, loss):
    diffs = x[..., :, None] - y[..., None, :]
    return 2.0 * loss.value(diffs).mean(axis=(-2, -1))


def _ra1(x, y, loss):
    return loss.value(x - y.mean(-1, keepdims=True)).mean(-1)


def _ra2(x, y, loss):
    return loss.value(x.mean(-1, keepdims=True) - y).mean(-1)


def _ra(x, y, loss):
    return _ra1(x, y, loss) + _ra2(x, y, loss)


def _ralf(x, y, loss):
    return 2.0 * _ra1(x, y, loss)


def _center(x, y):
    return 0.5 * (x.mean(-1, keepdims=True) + y.mean(-1, keepdims=True))


def _rc1(x, y, loss):
    return loss.value(x - _center(x, y)).mean(-1)


def _rc2(x, y, loss):
    return loss.value(_center(x, y) - y).mean(-1)


def _rc(x, y, loss):
    return _rc1(x, y, loss) + _rc2(x, y, loss)


def _sample_var(a):
    k = a.shape[-1]
    if k < 2:
        raise ValueError("LS-unbiased estimators need k >= 2")
    return a.var(-1, ddof=1)


# Corrections for f_LS, each coefficient checked against exhaustive
# enumeration in the test suite.  E[batch-mean Ra term 1] is short by
# var_y/k, term 2 by var_x/k; centering on the pooled batch mean overshoots
# by (var_x + var_y)/(2k) in total.
def _ra_ls_unbiased(x, y, loss=LSGAN):
    k = x.shape[-1]
    return _ra(x, y, LSGAN) + (_sample_var(x) + _sample_var(y)) / k


def _ralf_ls_unbiased(x, y, loss=LSGAN):
    k = x.shape[-1]
    return _ralf(x, y, LSGAN) + 2.0 * _sample_var(y) / k


def _rc_ls_unbiased(x, y, loss=LSGAN):
    k = x.shape[-1]
    return _rc(x, y, LSGAN) - (_sample_var(x) + _sample_var(y)) / (2.0 * k)


KERNELS = {
    "sy": _sy,
    "rp": _rp,
    "rp_mvue": _rp_mvue,
    "ra": _ra,
    "ralf": _ralf,
    "rc": _rc,
    "ra_ls_unbiased": _ra_ls_unbiased,
    "ralf_ls_unbiased": _ralf_ls_unbiased,
    "rc_ls_unbiased": _rc_ls_unbiased,
    # single terms, used by the bias lab
    "ra1": _ra1,
    "ra2": _ra2,
    "rc1": _rc1,
    "rc2": _rc2,
}

ESTIMATORS = tuple(KERNELS)
LS_ONLY = ("ra_ls_unbiased", "ralf_ls_unbiased", "rc_ls_unbiased")


def estimate(batch: ScoreBatch, estimator: str, loss=LSGAN) -> EstimateResult:
    """Evaluate any registered estimator on a batch."""
    try:
        kernel = KERNELS[estimator]
    except KeyError:
        raise ValueError(
            f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}"
        ) from None
    loss = get_loss(loss)
    value = float(kernel(batch.real_scores, batch.fake_scores, loss))
    return EstimateResult(value, estimator, batch.k)


def est_sy(batch, loss):
    return estimate(batch, "sy", loss)


def est_rp_naive(batch, loss):
    return estimate(batch, "rp", loss)


def est_rp_mvue(batch, loss):
    """All-pairs U-statistic, ``(2/k^2) sum_ij f(C(x_i) - C(y_j))``; O(k^2)."""
    return estimate(batch, "rp_mvue", loss)


def est_ra(batch, loss):
    return estimate(batch, "ra", loss)


def est_ralf(batch, loss):
    return estimate(batch, "ralf", loss)


def est_rc(batch, loss):
    return estimate(batch, "rc", loss)


def est_ls_unbiased(batch: ScoreBatch, variant: str) -> EstimateResult:
    """Bias-corrected f_LS estimator for ``variant`` in {ra, ralf, rc}."""
    tag = f"{variant.lower()}_ls_unbiased"
    if tag not in LS_ONLY:
        raise ValueError(f"variant must be one of ra, ralf, rc; got {variant!r}")
    if batch.k < 2:
        raise ValueError("LS-unbiased estimators need k >= 2")
    return estimate(batch, tag, LSGAN)


# -- closed forms for f_LS -----------------------------------------------------

def _ls_term(mean, var, shift):
    """E[f_LS(Z)] for Z with the given mean/variance, where the mean is ``mean - shift``."""
    return -var - (mean - shift - 1.0) ** 2 + 1.0


def closed_div_ls(moments: MomentSpec, variant: str, population: bool = True) -> float:
    """Population (or finite-batch expected) LS objective from score moments.

    ``variant`` is one of ``ra1`` (real term of Ra), ``ra2`` (fake term),
    ``ra``, ``ralf``, ``rc1``, ``rc2``, ``rc``.  With ``population=False``
    the value is the expectation of the batch-mean estimator with batch
    size ``moments.k``.
    """
    mx, vx, my, vy = moments.mu_x, moments.var_x, moments.mu_y, moments.var_y
    k = moments.k
    variant = variant.lower()
    if variant == "ra":
        return (closed_div_ls(moments, "ra1", population)
                + closed_div_ls(moments, "ra2", population))
    if variant == "rc":
        return (closed_div_ls(moments, "rc1", population)
                + closed_div_ls(moments, "rc2", population))
    if variant == "ralf":
        return 2.0 * closed_div_ls(moments, "ra1", population)

    centre = 0.5 * (mx + my)
    if variant == "ra1":
        # C(x) - mean_y, with mean_y estimated from k samples
        extra = 0.0 if population else vy / k
        return _ls_term(mx, vx + extra, my)
    if variant == "ra2":
        # mean_x - C(y) has mean mx - my
        extra = 0.0 if population else vx / k
        return _ls_term(mx - my, vy + extra, 0.0)
    if variant == "rc1":
        # Var(x_i - (xbar + ybar)/2) = vx (1 - 3/(4k)) + vy/(4k)
        var = vx if population else vx * (1.0 - 0.75 / k) + vy / (4.0 * k)
        return _ls_term(mx, var, centre)
    if variant == "rc2":
        var = vy if population else vy * (1.0 - 0.75 / k) + vx / (4.0 * k)
        return _ls_term(centre - my, var, 0.0)
    raise ValueError(f"unknown LS closed-form variant {variant!r}")


# -- generator side --------------------------------------------------------------

GENERATOR_VARIANTS = ("sy", "rp", "ra", "ralf", "rc")


def generator_loss(batch: ScoreBatch, loss, variant: str) -> float:
    """Non-saturating generator objective (to be maximized by the generator).

    ``batch.fake_scores`` are the critic's scores on generated samples; the
    relativistic forms are the critic objectives with real and fake swapped.
    """
    loss = get_loss(loss)
    x, y = batch.real_scores, batch.fake_scores
    variant = variant.lower()
    if variant == "sy":
        return float(loss.value(y).mean())
    if variant not in GENERATOR_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    # swapping the roles turns every critic objective into its generator form
    return float(KERNELS[variant](y, x, loss))
