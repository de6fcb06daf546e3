"""Command-line front end: experiment runs, verification suites, parameters.

Subcommands:

    run <config.yaml> [--seed N] [--threads N] [--out PATH]
        Execute an experiment config, write the report CSV plus a
        machine-readable summary JSON sidecar, print a human summary.

    verify <suite> [--trials N] [--seed N]
        Run a named numerical verification suite; failures print the full
        serialized counterexample instance.

    params (--n N --T T --tau TAU --delta D | --median --T T --rmax R
            --delta D [--wmax W] [--n N])
        Print the mechanism parameter schedule and budget for a planned run.

Exit codes: 0 success, 2 config/usage error, 3 suite or consistency failure.
The CSV schema is fixed: header ``trial,t,query_id,mechanism,answer,
sample_value,truth,bias,threshold,within_bound,cost``; numeric fields are
written with 12 significant digits, so identical config and seed produce
byte-identical files. ADASUB_OUT_DIR sets the default output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import divergence as dv
from .core import Dataset
from .engine import RandomSource, exact_response_pmf
from .harness import ExperimentConfig, ExperimentReport, ROW_COLUMNS, run_experiment
from .mechanisms import cost_hp, median_params, sq_params

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3

OUT_DIR_ENV = "ADASUB_OUT_DIR"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config ingestion.

_TOP_KEYS = {"seed", "trials", "n", "population", "mechanism", "analyst",
             "out", "threads"}
_REQUIRED_KEYS = {"seed", "trials", "n", "population", "mechanism", "analyst"}


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and schema-validate a YAML experiment config; unknown keys are
    rejected by name."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse as YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    missing = _REQUIRED_KEYS - set(raw)
    if missing:
        raise ConfigError(f"missing config key {sorted(missing)[0]!r}")
    for key in ("population", "mechanism", "analyst"):
        if not isinstance(raw[key], dict) or "name" not in raw[key]:
            raise ConfigError(f"config key {key!r} must be a mapping with a 'name'")
    try:
        return ExperimentConfig(
            seed=int(raw["seed"]), trials=int(raw["trials"]), n=int(raw["n"]),
            population=dict(raw["population"]), mechanism=dict(raw["mechanism"]),
            analyst=dict(raw["analyst"]), out=raw.get("out"),
            threads=int(raw.get("threads", 1)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def format_number(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".12g")


def write_csv(report: ExperimentReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROW_COLUMNS)
        for row in report.rows:
            writer.writerow([
                row["trial"], row["t"], row["query_id"], row["mechanism"],
                *(format_number(row[c]) for c in
                  ("answer", "sample_value", "truth", "bias", "threshold",
                   "within_bound", "cost")),
            ])


def write_summary_json(report: ExperimentReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.summary, indent=2, sort_keys=True,
                               default=float) + "\n")


def _default_out(seed: int) -> Path:
    base = Path(os.environ.get(OUT_DIR_ENV, "."))
    return base / f"run-{seed}.csv"


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = int(args.seed)
        if args.threads is not None:
            cfg.threads = int(args.threads)
        out = Path(args.out) if args.out else (
            Path(cfg.out) if cfg.out else _default_out(cfg.seed))
        report = run_experiment(cfg)
    except (ConfigError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report.verify_consistency()
    except RuntimeError as exc:
        print(f"report consistency failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    write_csv(report, out)
    write_summary_json(report, out.with_suffix(out.suffix + ".summary.json"))
    print(f"wrote {len(report.rows)} rows to {out}")
    for key in sorted(report.summary):
        print(f"  {key}: {report.summary[key]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Verification suites.

@dataclass
class SuiteResult:
    name: str
    instances: int
    failures: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures


def _suite_chi2_stability(trials: int, seed: int) -> SuiteResult:
    """Average leave-one-out chi-squared never exceeds its closed form; for
    arity-1 deterministic queries it attains it exactly (with the range
    measured on the realized answer support)."""
    res = SuiteResult("chi2-stability", trials)
    max_excess = -math.inf
    max_eq_dev = 0.0
    for i in range(trials):
        gen = RandomSource(seed).child(i).generator
        q, S = dv.random_query_instance(gen)
        try:
            report = dv.measure_leave_one_out_chi2(q, S)
        except RuntimeError as exc:
            res.failures.append(f"instance {i}: {exc}; {_describe_instance(q, S)}")
            continue
        max_excess = max(max_excess, report.measured - report.bound)
        if q.arity == 1:
            support = len(exact_response_pmf(q, S).support())
            eq_bound = dv.chi2_stability_bound(len(S), 1, support)
            dev = abs(report.measured - eq_bound)
            max_eq_dev = max(max_eq_dev, dev)
            if dev > 1e-10:
                res.failures.append(
                    f"instance {i}: w=1 equality off by {dev:.3e}; "
                    f"{_describe_instance(q, S)}")
    res.stats = {"max_excess": max_excess, "max_equality_dev": max_eq_dev}
    return res


def _describe_instance(q, S: Dataset) -> str:
    return f"query={q.name} tag={q.tag!r} dataset={list(S)!r}"


def _suite_var_contraction(trials: int, seed: int, linear: bool) -> SuiteResult:
    name = "var-contraction-linear-equality" if linear else "var-contraction"
    res = SuiteResult(name, trials)
    max_dev = 0.0
    for i in range(trials):
        gen = RandomSource(seed).child(i).generator
        n = int(gen.integers(3, 9))
        w = int(gen.integers(1, min(3, n - 1) + 1))
        f = dv.random_subset_function(gen, n, w, linear=linear)
        lhs, rhs = dv.verify_variance_contraction(f, n, w)
        dev = abs(lhs - rhs) if linear else lhs - rhs
        max_dev = max(max_dev, dev)
        if dev > 1e-10:
            res.failures.append(
                f"instance {i}: n={n} w={w} lhs={lhs!r} rhs={rhs!r} f={f!r}")
    res.stats = {"max_dev": max_dev}
    return res


def _suite_kl_chi2(trials: int, seed: int) -> SuiteResult:
    res = SuiteResult("kl-chi2", trials)
    for i in range(trials):
        gen = RandomSource(seed).child(i).generator
        dp, ep = dv.random_pmf_pair(gen)
        tau = float(np.min(ep.masses / dp.masses))
        check = dv.verify_kl_chi2_inequality(dp, ep, min(tau, 1.0))
        if not check.passed:
            res.failures.append(
                f"instance {i}: D={dp.masses.tolist()} E={ep.masses.tolist()} "
                f"tau={tau!r} kl={check.lhs!r} bound={check.rhs!r}")
    return res


def _suite_kl_mixture(trials: int, seed: int) -> SuiteResult:
    res = SuiteResult("kl-mixture", trials)
    taus = (0.5, 0.1, 0.01)
    for i in range(trials):
        gen = RandomSource(seed).child(i).generator
        dp, ep = dv.random_pmf_pair(gen)
        tau = taus[i % len(taus)]
        check = dv.verify_kl_mixture_inequality(dp, ep, tau)
        if not check.passed:
            res.failures.append(
                f"instance {i}: D={dp.masses.tolist()} E={ep.masses.tolist()} "
                f"tau={tau} kl={check.lhs!r} bound={check.rhs!r}")
    return res


def _suite_exceeds_mean(trials: int, seed: int) -> SuiteResult:
    """Three probe instances of the exceeds-mean-minus-one lower bound
    0.0357: a constant list, a large two-value Monte Carlo run, and an
    exactly enumerated small instance."""
    res = SuiteResult("exceeds-mean", 3)
    floor = 0.0357
    rng = RandomSource(seed).child(0)
    est = dv.sample_exceeds_mean_probe([0.5] * 12, 3, min(trials, 2000), rng)
    if est < 1.0:
        res.failures.append(f"constant probe: estimate {est!r} < 1")
    two_val = [0.0] * 200 + [1.0] * 200
    est2 = dv.sample_exceeds_mean_probe(two_val, 100, trials, RandomSource(seed).child(1))
    se = math.sqrt(max(est2 * (1 - est2), 1e-12) / trials)
    if est2 < floor - 4 * se:
        res.failures.append(f"two-value probe: estimate {est2!r} < {floor} - 4se")
    exact = dv.sample_exceeds_mean_exact([i % 2 for i in range(10)], 5)
    if exact < floor:
        res.failures.append(f"exact probe: {exact!r} < {floor}")
    res.stats = {"constant": est, "two_value": est2, "exact": exact}
    return res


SUITES = {
    "chi2-stability": (1000, _suite_chi2_stability),
    "var-contraction": (1000, lambda t, s: _suite_var_contraction(t, s, False)),
    "var-contraction-linear-equality":
        (200, lambda t, s: _suite_var_contraction(t, s, True)),
    "kl-chi2": (10_000, _suite_kl_chi2),
    "kl-mixture": (10_000, _suite_kl_mixture),
    "exceeds-mean": (100_000, _suite_exceeds_mean),
}


def run_suite(name: str, trials: int | None = None, seed: int = 1) -> SuiteResult:
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r} (known: {', '.join(sorted(SUITES))})")
    default_trials, fn = SUITES[name]
    return fn(trials if trials is not None else default_trials, seed)


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    try:
        results = [run_suite(n, args.trials, args.seed) for n in names]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = EXIT_OK
    for res in results:
        status = "pass" if res.passed else "FAIL"
        stats = " ".join(f"{k}={format_number(v)}" for k, v in sorted(res.stats.items()))
        print(f"{res.name}: {status} ({res.instances} instances) {stats}".rstrip())
        for failure in res.failures:
            print(f"  counterexample: {failure}")
        if not res.passed:
            code = EXIT_FAILURE
    return code


# ---------------------------------------------------------------------------
# Parameter tables.

def cmd_params(args) -> int:
    try:
        if args.median:
            if args.T is None or args.rmax is None or args.delta is None:
                raise ConfigError("median params need --T, --rmax and --delta")
            wmax = args.wmax or 1
            mp = median_params(args.T, [wmax] * args.T, [args.rmax] * args.T,
                               args.delta)
            print(f"groups k            : {mp.k}")
            print(f"advisory minimal n  : {mp.advisory_min_n}")
            print(f"search rounds/query : {max(1, math.ceil(math.log2(args.rmax)))}")
            if args.n:
                print(f"requested n         : {args.n} "
                      f"({'above' if args.n >= mp.advisory_min_n else 'BELOW'} advisory)")
            return EXIT_OK
        for flag in ("n", "T", "tau", "delta"):
            if getattr(args, flag) is None:
                raise ConfigError(f"statistical-query params need --{flag}")
        sp = sq_params(args.n, args.T, args.tau, args.delta)
        per_query = sp.k * cost_hp(args.n, 2, sp.epsilon, args.delta)
        total = args.T * per_query
        print(f"epsilon (squash)    : {format_number(sp.epsilon)}")
        print(f"votes per query k   : {sp.k}")
        print(f"advisory minimal n  : {sp.advisory_min_n}")
        print(f"per-query cost      : {format_number(per_query)}")
        print(f"total budget (T={args.T}): {format_number(total)}")
        print(f"MI upper bound      : {format_number(args.n * total)}")
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adasub",
        description="Subsampling mechanisms for adaptive data analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(fn=cmd_run)

    p_verify = sub.add_parser("verify", help="run a named verification suite")
    p_verify.add_argument("suite")
    p_verify.add_argument("--trials", type=int, default=None)
    p_verify.add_argument("--seed", type=int, default=1)
    p_verify.set_defaults(fn=cmd_verify)

    p_params = sub.add_parser("params", help="print mechanism parameter tables")
    p_params.add_argument("--median", action="store_true")
    p_params.add_argument("--n", type=int, default=None)
    p_params.add_argument("--T", type=int, default=None)
    p_params.add_argument("--tau", type=float, default=None)
    p_params.add_argument("--delta", type=float, default=None)
    p_params.add_argument("--rmax", type=int, default=None)
    p_params.add_argument("--wmax", type=int, default=None)
    p_params.set_defaults(fn=cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
