"""Command-line experiment runner.

Every subcommand writes one CSV (to ``--out`` or stdout).  Options can come
from a JSON config (``--config``); flags given on the command line win.
Exit status: 0 success, 1 a checked property failed, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from reldiv import __version__
from reldiv import bias_lab, dynamics, estimators, oracle
from reldiv.losses import LOSS_NAMES

log = logging.getLogger("reldiv")

SUBCOMMANDS = ("oracle", "estimate", "axioms", "ordering", "weakness",
               "bias-sweep", "mvue-compare", "verify-bias", "dynamics")
STOCHASTIC = ("bias-sweep", "mvue-compare")

HEADERS = {
    "oracle": ("instance", "loss", "variant", "value", "converged", "iters"),
    "estimate": ("estimator", "loss", "k", "value"),
    "axioms": ("instance", "pair", "loss", "variant", "value", "witness", "tv", "passed"),
    "ordering": ("instance", "loss", "sy", "rp", "ralf", "ra", "passed"),
    "weakness": ("n", "w1", "sy", "rp", "ra"),
    "bias-sweep": bias_lab.CSV_HEADER,
    "mvue-compare": bias_lab.CSV_HEADER,
    "verify-bias": ("variant", "k", "exact_bias", "closed_form_bias", "candidate",
                    "candidate_value", "match"),
    "dynamics": dynamics.TRAJECTORY_HEADER,
}

DEFAULTS = {
    "loss": "lsgan",
    "variant": "rp",
    "instances": None,
    "count": 100,
    "tol": 1e-6,
    "max_iters": 100_000,
    "eps_sup": 1e-4,
    "steps": 8,
    "ks": [2, 4, 8, 16, 32],
    "replicates": 100_000,
    "reference": "exact",
    "estimator": "ra",
    "variants": ["ra1", "ra2", "ra", "ralf", "rc1", "rc2", "rc"],
    "iters": 5000,
    "critic_steps": 5,
    "lr_c": 0.05,
    "lr_g": 0.05,
    "log_every": 100,
}

# config key -> accepted python types
_FIELD_TYPES = {
    "subcommand": str, "seed": int, "loss": (str, list), "variant": (str, list),
    "p": (str, dict), "q": (str, dict), "q0": (str, dict), "real": (str, dict),
    "fake": (str, dict), "scores": (str, dict), "instances": str, "count": int,
    "tol": (int, float), "max_iters": int, "eps_sup": (int, float), "steps": int,
    "ks": (list, str), "replicates": int, "reference": str, "estimator": str,
    "variants": (list, str), "iters": int, "critic_steps": int, "lr_c": (int, float),
    "lr_g": (int, float), "log_every": int, "out": str, "real_scores": (list, str),
    "fake_scores": (list, str),
}


class ConfigError(Exception):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int | None = None
    loss: object = "lsgan"
    variant: object = "rp"
    out: str | None = None
    params: dict = field(default_factory=dict)

    def __getattr__(self, name):
        params = self.__dict__.get("params", {})
        if name in params:
            return params[name]
        if name in DEFAULTS:
            return DEFAULTS[name]
        raise AttributeError(name)


# -- loading and validation -------------------------------------------------------

def _read_json(value, field_name, base=None):
    if isinstance(value, dict):
        return value
    text = value.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{field_name}: invalid inline JSON ({exc})") from None
    path = Path(text)
    if base is not None and not path.is_absolute() and not path.exists():
        path = Path(base) / path
    if not path.exists():
        raise ConfigError(f"{field_name}: file not found: {text}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{field_name}: invalid JSON in {path} ({exc})") from None


def _discrete(value, field_name, base=None) -> oracle.DiscreteDist:
    obj = _read_json(value, field_name, base)
    try:
        return oracle.DiscreteDist.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{field_name}: invalid distribution ({exc})") from None


def _score_dist(value, field_name, base=None) -> bias_lab.ScoreDist:
    if isinstance(value, str) and value.startswith("normal:"):
        try:
            mean, std = (float(v) for v in value[len("normal:"):].split(","))
        except ValueError:
            raise ConfigError(f"{field_name}: expected normal:MEAN,STD") from None
        return bias_lab.ScoreDist.discretized_normal(mean, std)
    obj = _read_json(value, field_name, base)
    try:
        return bias_lab.ScoreDist.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{field_name}: invalid score distribution ({exc})") from None


def _int_list(value, field_name):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    try:
        out = [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{field_name}: expected a list of integers") from None
    if not out or any(v < 1 for v in out):
        raise ConfigError(f"{field_name}: values must be positive integers")
    return out


def _str_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return list(value)


def validate(raw: dict, base=None) -> ExperimentConfig:
    """Check a merged option dict and build an :class:`ExperimentConfig`."""
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{key}: unknown field")
        types = _FIELD_TYPES[key]
        if value is not None and (not isinstance(value, types) or isinstance(value, bool)):
            raise ConfigError(f"{key}: wrong type {type(value).__name__}")
    sub = raw.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"subcommand: expected one of {', '.join(SUBCOMMANDS)}")
    random_instances = raw.get("instances") == "random"
    if (sub in STOCHASTIC or random_instances) and raw.get("seed") is None:
        raise ConfigError("seed: required for stochastic subcommands")

    params = {k: v for k, v in raw.items()
              if k not in ("subcommand", "seed", "loss", "variant", "out")}
    for key in ("p", "q", "q0"):
        if params.get(key) is not None:
            params[key] = _discrete(params[key], key, base)
    for key in ("real", "fake"):
        if params.get(key) is not None:
            params[key] = _score_dist(params[key], key, base)
    if params.get("scores") is not None:
        params["scores"] = _read_json(params["scores"], "scores", base)
    if "ks" in params:
        params["ks"] = _int_list(params["ks"], "ks")
    if "variants" in params:
        params["variants"] = _str_list(params["variants"])
    if params.get("instances") not in (None, "random"):
        raise ConfigError("instances: only 'random' is supported")
    for key in ("count", "steps", "replicates", "iters", "critic_steps", "log_every",
                "max_iters"):
        if key in params and params[key] < 1:
            raise ConfigError(f"{key}: must be >= 1")
    for key in ("lr_c", "lr_g", "tol", "eps_sup"):
        if key in params and not params[key] > 0:
            raise ConfigError(f"{key}: must be positive")
    if params.get("reference", "exact") not in ("exact", "resample"):
        raise ConfigError("reference: expected 'exact' or 'resample'")

    losses = _str_list(raw.get("loss") or DEFAULTS["loss"])
    for name in losses:
        if name not in LOSS_NAMES:
            raise ConfigError(f"loss: expected one of {', '.join(LOSS_NAMES)}")
    variants = _str_list(raw.get("variant") or DEFAULTS["variant"])
    for name in variants:
        if name.lower() not in oracle.VARIANTS:
            raise ConfigError(f"variant: expected one of {', '.join(oracle.VARIANTS)}")
    return ExperimentConfig(sub, raw.get("seed"), losses, [v.lower() for v in variants],
                            raw.get("out"), params)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config file; ``overrides`` (from flags) take precedence."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    raw.update(overrides or {})
    return validate(raw, base=path.parent)


# -- output ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(header, rows, out):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- subcommands ------------------------------------------------------------------------

def _instances(cfg):
    """(label, P, Q) triples from --p/--q or seeded random draws."""
    if cfg.params.get("instances") == "random":
        rng = np.random.default_rng(cfg.seed)
        return [(str(i), *oracle.random_instance(rng)) for i in range(cfg.count)]
    P = cfg.params.get("p")
    if P is None:
        raise ConfigError("p: a distribution (or --instances random) is required")
    Q = cfg.params.get("q") or P
    return [("0", P, Q)]


def _solver_opts(cfg):
    return {"tol": cfg.tol, "max_iters": cfg.max_iters, "eps_sup": cfg.eps_sup}


def cmd_oracle(cfg):
    rows = []
    for label, P, Q in _instances(cfg):
        for loss in cfg.loss:
            for variant in cfg.variant:
                res = oracle.solve_divergence(P, Q, loss, variant, **_solver_opts(cfg))
                rows.append((label, loss, variant, res.value, res.converged, res.iterations))
    failed = not all(r[4] for r in rows)
    return rows, failed


def cmd_estimate(cfg):
    scores = cfg.params.get("scores") or {}
    real = cfg.params.get("real_scores", scores.get("real_scores"))
    fake = cfg.params.get("fake_scores", scores.get("fake_scores"))
    if real is None or fake is None:
        raise ConfigError("scores: real_scores and fake_scores are required")
    try:
        batch = estimators.ScoreBatch(
            [float(v) for v in _str_list(real)] if isinstance(real, str) else real,
            [float(v) for v in _str_list(fake)] if isinstance(fake, str) else fake,
        )
    except ValueError as exc:
        raise ConfigError(f"scores: {exc}") from None
    names = (estimators.ESTIMATORS if cfg.estimator == "all"
             else _str_list(cfg.estimator))
    rows = []
    for loss in cfg.loss:
        for name in names:
            if name not in estimators.KERNELS:
                raise ConfigError(f"estimator: unknown estimator {name!r}")
            if name in estimators.LS_ONLY and (loss != "lsgan" or batch.k < 2):
                continue
            res = estimators.estimate(batch, name, loss)
            rows.append((name, loss, res.k, res.value))
    return rows, False


def cmd_axioms(cfg):
    rows, failed = [], False
    for label, P, Q in _instances(cfg):
        for loss in cfg.loss:
            for variant in cfg.variant:
                if variant == "sy":
                    continue
                for pair, (A, B) in (("PQ", (P, Q)), ("PP", (P, P))):
                    rep = oracle.check_axioms(A, B, loss, variant, tol=cfg.tol,
                                              max_iters=cfg.max_iters, eps_sup=cfg.eps_sup)
                    failed |= not rep.passed
                    witness = rep.values["witness"]
                    rows.append((label, pair, loss, variant, rep.values["value"],
                                 math.nan if witness is None else witness,
                                 rep.values["tv"], rep.passed))
    return rows, failed


def cmd_ordering(cfg):
    rows, failed = [], False
    for label, P, Q in _instances(cfg):
        for loss in cfg.loss:
            rep = oracle.check_ordering(P, Q, loss, tol=cfg.tol,
                                        max_iters=cfg.max_iters, eps_sup=cfg.eps_sup)
            failed |= not rep.passed
            v = rep.values
            rows.append((label, loss, v["sy"], v["rp"], v["ralf"], v["ra"], rep.passed))
    return rows, failed


def cmd_weakness(cfg):
    rows = []
    for loss in cfg.loss:
        for r in oracle.weakness_sequence(cfg.steps, loss, **_solver_opts(cfg)):
            rows.append((r["n"], r["w1"], r["sy"], r["rp"], r["ra"]))
    return rows, False


def _score_pair(cfg):
    real, fake = cfg.params.get("real"), cfg.params.get("fake")
    if real is None or fake is None:
        raise ConfigError("real: --real and --fake score distributions are required")
    return real, fake


def cmd_bias_sweep(cfg):
    real, fake = _score_pair(cfg)
    if cfg.estimator not in estimators.KERNELS:
        raise ConfigError(f"estimator: unknown estimator {cfg.estimator!r}")
    rows = []
    for loss in cfg.loss:
        for r in bias_lab.mc_sweep(real, fake, cfg.ks, cfg.estimator, loss,
                                   cfg.replicates, cfg.seed, cfg.reference):
            rows.append(r.csv_fields())
    return rows, False


def cmd_mvue_compare(cfg):
    real, fake = _score_pair(cfg)
    rows = []
    for loss in cfg.loss:
        for naive, mvue in bias_lab.mvue_compare(real, fake, cfg.ks, loss,
                                                 cfg.replicates, cfg.seed):
            rows.append(naive.csv_fields())
            rows.append(mvue.csv_fields())
    return rows, False


def cmd_verify_bias(cfg):
    real, fake = _score_pair(cfg)
    rows, failed = [], False
    for k in cfg.ks:
        for variant in cfg.variants:
            try:
                rep = bias_lab.verify_bias_formula(real, fake, k, variant)
            except ValueError as exc:
                raise ConfigError(f"variants: {exc}") from None
            failed |= abs(rep.exact_bias - rep.closed_form_bias) > 1e-10
            for name, value in rep.candidate_values.items():
                rows.append((rep.variant, k, rep.exact_bias, rep.closed_form_bias,
                             name, value, rep.matches[name]))
    return rows, failed


def cmd_dynamics(cfg):
    P = cfg.params.get("p")
    if P is None:
        raise ConfigError("p: target distribution is required")
    q0 = cfg.params.get("q0")
    if q0 is not None and not np.array_equal(q0.points, P.points):
        raise ConfigError("q0: must share the support of p")
    rows, failed = [], False
    for loss in cfg.loss:
        for variant in cfg.variant:
            state = dynamics.GameState.start(P, loss, variant,
                                             None if q0 is None else q0.probs)
            traj = dynamics.run(state, cfg.iters, cfg.critic_steps, cfg.lr_c, cfg.lr_g,
                                cfg.log_every)
            if traj.aborted:
                log.error("dynamics aborted: %s", traj.reason)
                failed = True
            rows.extend((r["step"], r["divergence"], r["objective"], r["tv"])
                        for r in traj.rows)
    return rows, failed


COMMANDS = {
    "oracle": cmd_oracle, "estimate": cmd_estimate, "axioms": cmd_axioms,
    "ordering": cmd_ordering, "weakness": cmd_weakness, "bias-sweep": cmd_bias_sweep,
    "mvue-compare": cmd_mvue_compare, "verify-bias": cmd_verify_bias,
    "dynamics": cmd_dynamics,
}


# -- argument parsing -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reldiv", description="Relativistic f-divergence verification lab.")
    parser.add_argument("--version", action="version", version=f"reldiv {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", default=S, help="JSON config; flags override it")
        p.add_argument("--out", default=S, help="output CSV path (default stdout)")
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--loss", default=S, help="sgan|lsgan|hinge, comma-separated")
        p.add_argument("--log-level", default="WARNING")

    def solver(p):
        p.add_argument("--tol", type=float, default=S)
        p.add_argument("--max-iters", dest="max_iters", type=int, default=S)
        p.add_argument("--eps-sup", dest="eps_sup", type=float, default=S)

    def instances(p):
        p.add_argument("--p", default=S, help="distribution JSON {points, probs}")
        p.add_argument("--q", default=S)
        p.add_argument("--instances", choices=["random"], default=S)
        p.add_argument("--count", type=int, default=S)

    def scores(p):
        p.add_argument("--real", default=S, help="score dist JSON {values, probs} or normal:M,S")
        p.add_argument("--fake", default=S)
        p.add_argument("--ks", default=S, help="comma-separated batch sizes")

    p = sub.add_parser("oracle", help="exact divergence by critic maximization")
    common(p); solver(p); instances(p)
    p.add_argument("--variant", default=S)

    p = sub.add_parser("estimate", help="evaluate estimators on a score batch")
    common(p)
    p.add_argument("--scores", default=S, help="JSON {real_scores, fake_scores}")
    p.add_argument("--real-scores", dest="real_scores", default=S)
    p.add_argument("--fake-scores", dest="fake_scores", default=S)
    p.add_argument("--estimator", default=S, help="estimator tag(s) or 'all'")

    p = sub.add_parser("axioms", help="check divergence axioms with witnesses")
    common(p); solver(p); instances(p)
    p.add_argument("--variant", default=S)

    p = sub.add_parser("ordering", help="check Sy <= Rp <= Ralf and Rp <= Ra")
    common(p); solver(p); instances(p)

    p = sub.add_parser("weakness", help="W1 vs f-divergences on shrinking offsets")
    common(p); solver(p)
    p.add_argument("--steps", type=int, default=S)

    p = sub.add_parser("bias-sweep", help="Monte Carlo bias/variance sweep over k")
    common(p); scores(p)
    p.add_argument("--estimator", default=S)
    p.add_argument("--replicates", type=int, default=S)
    p.add_argument("--reference", choices=["exact", "resample"], default=S)

    p = sub.add_parser("mvue-compare", help="naive vs all-pairs Rp estimator")
    common(p); scores(p)
    p.add_argument("--replicates", type=int, default=S)

    p = sub.add_parser("verify-bias", help="arbitrate LS bias formulas by enumeration")
    common(p); scores(p)
    p.add_argument("--variants", default=S)

    p = sub.add_parser("dynamics", help="simulate the discrete GAN game")
    common(p); solver(p)
    p.add_argument("--p", default=S)
    p.add_argument("--q0", default=S)
    p.add_argument("--variant", default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--critic-steps", dest="critic_steps", type=int, default=S)
    p.add_argument("--lr-c", dest="lr_c", type=float, default=S)
    p.add_argument("--lr-g", dest="lr_g", type=float, default=S)
    p.add_argument("--log-every", dest="log_every", type=int, default=S)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = vars(args)
    logging.basicConfig(level=getattr(logging, str(flags.pop("log_level")).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = flags.pop("config", None)
    try:
        if config_path is not None:
            cfg = load_config(config_path, flags)
        else:
            cfg = validate(flags)
        rows, failed = COMMANDS[cfg.subcommand](cfg)
        write_csv(HEADERS[cfg.subcommand], rows, cfg.out)
    except ConfigError as exc:
        print(f"reldiv: config error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    if failed:
        print(f"reldiv {cfg.subcommand}: check failed", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
