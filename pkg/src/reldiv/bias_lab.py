"""Bias and variance of mini-batch estimators on synthetic score distributions.

A :class:`ScoreDist` stands in for the law of ``C(x)`` under P (or Q).  For
small supports every pair of batches can be enumerated, which gives exact
expectations and variances; larger settings fall back to seeded Monte Carlo.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from reldiv.estimators import KERNELS, LS_ONLY, MomentSpec, closed_div_ls
from reldiv.losses import LSGAN, get_loss

log = logging.getLogger(__name__)

ENUMERATION_BUDGET = 10**7
CSV_HEADER = ("k", "estimator", "loss", "mean", "variance", "bias",
              "relative_bias", "replicates")


@dataclass(frozen=True)
class ScoreDist:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        probs = np.asarray(self.probs, dtype=float).ravel()
        if values.size == 0 or values.size != probs.size:
            raise ValueError("values and probs must be non-empty and of equal length")
        if not np.all(np.isfinite(values)):
            raise ValueError("score values must be finite")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("score probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def delta(cls, value):
        return cls([value], [1.0])

    @classmethod
    def uniform(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(values, np.full(values.size, 1.0 / values.size))

    @classmethod
    def discretized_normal(cls, mean, std, size=401, width=5.0):
        """Normal law restricted to an evenly spaced grid of ``size`` points."""
        grid = np.linspace(-width, width, size)
        w = np.exp(-0.5 * grid**2)
        return cls(mean + std * grid, w / w.sum())

    @classmethod
    def from_json(cls, obj):
        return cls(obj["values"], obj["probs"])

    @property
    def mean(self) -> float:
        return float(self.probs @ self.values)

    @property
    def var(self) -> float:
        return float(self.probs @ (self.values - self.mean) ** 2)

    def sample(self, rng, shape):
        return self.values[rng.choice(self.values.size, size=shape, p=self.probs)]


def moments(real: ScoreDist, fake: ScoreDist, k: int = 1) -> MomentSpec:
    return MomentSpec(real.mean, real.var, fake.mean, fake.var, k)


# -- exact targets ----------------------------------------------------------------

def population_value(real: ScoreDist, fake: ScoreDist, estimator: str, loss=LSGAN) -> float:
    """The quantity ``estimator`` targets, with every expectation exact."""
    loss = LSGAN if estimator in LS_ONLY else get_loss(loss)
    base = estimator.replace("_ls_unbiased", "").replace("_mvue", "")
    px, x = real.probs, real.values
    py, y = fake.probs, fake.values
    mx, my = real.mean, fake.mean
    centre = 0.5 * (mx + my)
    f = loss.value
    terms = {
        "sy": lambda: px @ f(x) + py @ f(-y),
        "rp": lambda: 2.0 * px @ f(x[:, None] - y[None, :]) @ py,
        "ra1": lambda: px @ f(x - my),
        "ra2": lambda: py @ f(mx - y),
        "rc1": lambda: px @ f(x - centre),
        "rc2": lambda: py @ f(centre - y),
    }
    if base == "ra":
        return float(terms["ra1"]() + terms["ra2"]())
    if base == "rc":
        return float(terms["rc1"]() + terms["rc2"]())
    if base == "ralf":
        return float(2.0 * terms["ra1"]())
    try:
        return float(terms[base]())
    except KeyError:
        raise ValueError(f"unknown estimator {estimator!r}") from None


# -- enumeration -------------------------------------------------------------------

def all_batches(dist: ScoreDist, k: int):
    """Every ordered k-batch of ``dist`` with its probability."""
    m = dist.values.size
    idx = np.indices((m,) * k).reshape(k, -1).T
    return dist.values[idx], np.prod(dist.probs[idx], axis=1)


def _kernel(estimator):
    try:
        return KERNELS[estimator]
    except KeyError:
        raise ValueError(f"unknown estimator {estimator!r}") from None


def _enumerate(real, fake, k, estimator, loss, budget):
    m_r, m_f = real.values.size, fake.values.size
    outcomes = float(m_r) ** k * float(m_f) ** k
    if outcomes > budget:
        raise ValueError(
            f"enumeration needs {outcomes:.3g} outcomes (m_real^k * m_fake^k); "
            f"budget is {budget:.3g}"
        )
    kernel = _kernel(estimator)
    loss = get_loss(loss)
    xs, wx = all_batches(real, k)
    ys, wy = all_batches(fake, k)
    per_row = ys.shape[0] * k * (k if estimator == "rp_mvue" else 1)
    chunk = max(1, 4_000_000 // per_row)
    values = np.empty((xs.shape[0], ys.shape[0]))
    for start in range(0, xs.shape[0], chunk):
        xb = xs[start:start + chunk, None, :]
        values[start:start + chunk] = kernel(
            np.broadcast_to(xb, (xb.shape[0], ys.shape[0], k)),
            np.broadcast_to(ys[None], (xb.shape[0], ys.shape[0], k)),
            loss,
        )
    return values, np.outer(wx, wy)


def exact_moments(real, fake, k, estimator, loss=LSGAN, budget=ENUMERATION_BUDGET):
    """Exact ``(mean, variance)`` of an estimator by enumerating all batch pairs."""
    values, weights = _enumerate(real, fake, k, estimator, loss, budget)
    mean = float(np.sum(weights * values))
    var = float(np.sum(weights * (values - mean) ** 2))
    return mean, var


def exact_expectation(real, fake, k, estimator, loss=LSGAN, budget=ENUMERATION_BUDGET) -> float:
    return exact_moments(real, fake, k, estimator, loss, budget)[0]


def exact_variance(real, fake, k, estimator, loss=LSGAN, budget=ENUMERATION_BUDGET) -> float:
    return exact_moments(real, fake, k, estimator, loss, budget)[1]


def exact_bias(real, fake, k, estimator, loss=LSGAN, budget=ENUMERATION_BUDGET) -> float:
    return (exact_expectation(real, fake, k, estimator, loss, budget)
            - population_value(real, fake, estimator, loss))


# Candidate bias expressions for f_LS.  Each variant maps a readable label
# to the candidate's value; the enumeration decides which one holds.
def bias_candidates(variant: str, vx: float, vy: float, k: int) -> dict:
    cands = {
        "ra1": {
            "-var_y/k": -vy / k,
            "3var_x/(4k) - var_y/(4k)": 0.75 * vx / k - 0.25 * vy / k,
        },
        "ra2": {
            "-var_x/k": -vx / k,
            "3var_y/(4k) - var_x/(4k)": 0.75 * vy / k - 0.25 * vx / k,
        },
        "ra": {
            "-(var_x+var_y)/k": -(vx + vy) / k,
        },
        "ralf": {
            "-(var_x+var_y)/k": -(vx + vy) / k,
            "-2var_y/k": -2.0 * vy / k,
            "(var_x+var_y)/(2k)": (vx + vy) / (2.0 * k),
        },
        "rc": {
            "(var_x+var_y)/(2k)": (vx + vy) / (2.0 * k),
            "-(var_x+var_y)/k": -(vx + vy) / k,
        },
        "rc1": {
            "3var_x/(4k) - var_y/(4k)": 0.75 * vx / k - 0.25 * vy / k,
            "-var_y/k": -vy / k,
        },
        "rc2": {
            "3var_y/(4k) - var_x/(4k)": 0.75 * vy / k - 0.25 * vx / k,
            "-var_x/k": -vx / k,
        },
    }
    try:
        return cands[variant]
    except KeyError:
        raise ValueError(f"no bias candidates for {variant!r}") from None


_VARIANT_ALIASES = {"ra_term1": "ra1", "ra_term2": "ra2", "rc_term1": "rc1",
                    "rc_term2": "rc2"}


@dataclass
class BiasReport:
    variant: str
    k: int
    exact_bias: float
    closed_form_bias: float
    matches: dict = field(default_factory=dict)
    candidate_values: dict = field(default_factory=dict)

    @property
    def matched(self) -> list:
        return [name for name, ok in self.matches.items() if ok]


def verify_bias_formula(real: ScoreDist, fake: ScoreDist, k: int, variant: str,
                        tol: float = 1e-10, budget=ENUMERATION_BUDGET) -> BiasReport:
    """Arbitrate candidate closed-form LS biases against exact enumeration.

    The exact bias is ``E[estimator] - population value``; it is also
    compared with the finite-minus-population difference of
    :func:`closed_div_ls`.  A mismatching candidate is a finding, not an error.
    """
    v = _VARIANT_ALIASES.get(variant.lower(), variant.lower())
    bias = exact_bias(real, fake, k, v, LSGAN, budget)
    mom = moments(real, fake, k)
    closed = closed_div_ls(mom, v, population=False) - closed_div_ls(mom, v, population=True)
    cands = bias_candidates(v, real.var, fake.var, k)
    report = BiasReport(v, k, bias, closed)
    for name, value in cands.items():
        report.candidate_values[name] = value
        report.matches[name] = abs(value - bias) <= tol
    return report


# -- Monte Carlo ------------------------------------------------------------------------

@dataclass
class SweepRow:
    k: int
    estimator: str
    loss: str
    mean: float
    variance: float
    bias: float
    relative_bias: float
    replicates: int
    bias_se: float = math.nan
    seconds_per_eval: float = math.nan

    def csv_fields(self):
        return [self.k, self.estimator, self.loss, repr(self.mean), repr(self.variance),
                repr(self.bias), repr(self.relative_bias), self.replicates]


_CENTRED = ("ra", "ra1", "ra2", "ralf", "rc", "rc1", "rc2")


def _centred_value(estimator, x, y, mx, my, loss):
    """Mean-based estimator with the centring means supplied explicitly."""
    f = loss.value
    if estimator in ("rc", "rc1", "rc2"):
        c = 0.5 * (mx + my)
        t1 = f(x - c).mean(-1)
        t2 = f(c - y).mean(-1)
        return {"rc": t1 + t2, "rc1": t1, "rc2": t2}[estimator]
    t1 = f(x - my).mean(-1)
    t2 = f(mx - y).mean(-1)
    return {"ra": t1 + t2, "ra1": t1, "ra2": t2, "ralf": 2.0 * t1}[estimator]


def _control_variate(estimator, x, y, mx, my, loss):
    """Zero-mean first-order term of the Ra-family bias.

    ``d est / d mean_y`` depends on the real batch only and multiplies
    ``ybar - mean_y``, which is independent of it (and symmetrically for
    the fake term), so the product has expectation zero.
    """
    g = loss.grad
    d_my = -g(x - my).mean(-1)
    d_mx = g(mx - y).mean(-1)
    dy = y.mean(-1) - my[..., 0]
    dx = x.mean(-1) - mx[..., 0]
    coef = {"ra": (1.0, 1.0), "ra1": (1.0, 0.0), "ra2": (0.0, 1.0),
            "ralf": (2.0, 0.0)}[estimator]
    return coef[0] * d_my * dy + coef[1] * d_mx * dx


def _chunk_seeds(seed, k, n_chunks):
    return np.random.SeedSequence([seed, k]).spawn(n_chunks)


def _replicate_chunk(real, fake, k, estimator, loss, size, seed_seq, reference):
    rng = np.random.default_rng(seed_seq)
    x = real.sample(rng, (size, k))
    y = fake.sample(rng, (size, k))
    values = KERNELS[estimator](x, y, loss)
    paired = ref = None
    if estimator in _CENTRED:
        mx = np.full((size, 1), real.mean)
        my = np.full((size, 1), fake.mean)
        if reference == "exact":
            paired = values - _centred_value(estimator, x, y, mx, my, loss)
            if not estimator.startswith("rc"):
                paired = paired + _control_variate(estimator, x, y, mx, my, loss)
        else:
            # means from 10k independent samples, mirroring a 10x larger pool
            pool = 10 * k
            mx_hat = real.sample(rng, (size, pool)).mean(-1, keepdims=True)
            my_hat = fake.sample(rng, (size, pool)).mean(-1, keepdims=True)
            ref = _centred_value(estimator, x, y, mx_hat, my_hat, loss)
            paired = values - ref
    return values, paired, ref


def mc_sweep(real: ScoreDist, fake: ScoreDist, ks, estimator: str, loss=LSGAN,
             replicates: int = 100_000, seed: int = 0, reference: str = "exact",
             chunk: int = 10_000) -> list[SweepRow]:
    """Monte Carlo mean, variance and bias of an estimator for each batch size.

    ``reference="exact"`` measures bias against the exact population value;
    for mean-based estimators the bias is averaged from paired differences
    against the same batch centred on the true means.  ``reference="resample"``
    replaces the true means by means of ``10 k`` fresh samples.  Replicates
    are drawn in fixed-size chunks with independent spawned seeds, so the
    result does not depend on how chunks are scheduled.
    """
    if reference not in ("exact", "resample"):
        raise ValueError("reference must be 'exact' or 'resample'")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    _kernel(estimator)
    loss = LSGAN if estimator in LS_ONLY else get_loss(loss)
    truth = population_value(real, fake, estimator, loss)
    rows = []
    for k in ks:
        k = int(k)
        n_chunks = -(-replicates // chunk)
        sizes = [chunk] * (n_chunks - 1) + [replicates - chunk * (n_chunks - 1)]
        parts = [
            _replicate_chunk(real, fake, k, estimator, loss, size, ss, reference)
            for size, ss in zip(sizes, _chunk_seeds(seed, k, n_chunks))
        ]
        values = np.concatenate([p[0] for p in parts])
        mean = float(np.mean(values))
        variance = float(np.var(values, ddof=1)) if values.size > 1 else 0.0
        if parts[0][1] is not None:
            paired = np.concatenate([p[1] for p in parts])
            bias = float(np.mean(paired))
            bias_se = float(np.std(paired, ddof=1) / math.sqrt(paired.size)) if paired.size > 1 else 0.0
        else:
            bias = mean - truth
            bias_se = math.sqrt(variance / values.size)
        if reference == "resample" and parts[0][2] is not None:
            unbiased = float(np.mean(np.concatenate([p[2] for p in parts])))
        else:
            unbiased = truth
        rel = mean / unbiased if abs(unbiased) > 1e-12 else math.nan
        rows.append(SweepRow(k, estimator, loss.name, mean, variance, bias, rel,
                             replicates, bias_se))
    return rows


def _time_eval(kernel, x, y, loss, min_time=0.02):
    n, start = 0, time.perf_counter()
    while True:
        kernel(x, y, loss)
        n += 1
        elapsed = time.perf_counter() - start
        if elapsed >= min_time:
            return elapsed / n


def mvue_compare(real: ScoreDist, fake: ScoreDist, ks, loss=LSGAN,
                 replicates: int = 100_000, seed: int = 0):
    """Paired (naive, MVUE) sweep rows on identical batches, with eval timings.

    Timings are stored on the rows and logged; they are not part of the CSV
    output, which must be reproducible.
    """
    loss = get_loss(loss)
    pairs = []
    for k in ks:
        naive = mc_sweep(real, fake, [k], "rp", loss, replicates, seed)[0]
        mvue = mc_sweep(real, fake, [k], "rp_mvue", loss, replicates, seed)[0]
        rng = np.random.default_rng(seed)
        x, y = real.sample(rng, k), fake.sample(rng, k)
        naive.seconds_per_eval = _time_eval(KERNELS["rp"], x, y, loss)
        mvue.seconds_per_eval = _time_eval(KERNELS["rp_mvue"], x, y, loss)
        log.info("k=%d naive %.3g s/eval, mvue %.3g s/eval (ratio %.2f)", k,
                 naive.seconds_per_eval, mvue.seconds_per_eval,
                 mvue.seconds_per_eval / naive.seconds_per_eval)
        pairs.append((naive, mvue))
    return pairs
