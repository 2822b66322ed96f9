"""``qtoken`` command line.

Subcommands: ``run`` (single point), ``sweep`` (grid over one noise field),
``forge`` (forgery experiment) and ``selftest``.

Exit codes
----------
0  success
1  selftest failure
2  configuration or output error (including an empty sweep grid)
3  photon repetition budget exhausted in at least one trial
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import Optional, Sequence

from . import checks, harness
from .adversary import AdversaryStrategy, run_forgery_experiment
from .config import FORMATS, ConfigError, RunConfiguration, load

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3

log = logging.getLogger("qtoken")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--trials", type=int, help="Monte Carlo trials (per grid point for sweeps)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout for run/forge)")
    common.add_argument("--format", choices=FORMATS, help="report format")
    common.add_argument("--threads", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qtoken", description="Quantum token protocol simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single-point acceptance experiment")
    sub.add_parser("sweep", parents=[common], help="sweep one noise parameter")
    sub.add_parser("forge", parents=[common], help="forgery experiment")
    st = sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    # negative control: run the suite against a deliberately wrong Bell labeling
    st.add_argument("--corrupt-bell-labeling", action="store_true", help=argparse.SUPPRESS)
    return p


def _configure(args) -> RunConfiguration:
    cfg = load(args.config) if args.config else RunConfiguration()
    h = cfg.harness
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        h.trials = args.trials
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        h.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        h.threads = args.threads
    if args.out is not None:
        cfg.output.path = args.out
    if args.format is not None:
        cfg.output.format = args.format
    return cfg


def _render(rows, fmt: str) -> str:
    return harness.reports_to_json(rows) if fmt == "json" else harness.reports_to_csv(rows)


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_run(cfg: RunConfiguration) -> int:
    pc = cfg.protocol_config()
    report, mc = harness.evaluate_point(pc, cfg.harness.trials, cfg.harness.seed, cfg.harness.threads)
    _emit(_render([report], cfg.output.format), cfg.output.path)
    print(
        f"acceptance mc={_num(mc.estimate)} [{_num(mc.ci[0])}, {_num(mc.ci[1])}] "
        f"exact={_num(report.exact_p)} analytic={_num(report.analytic_p)} "
        f"trials={mc.n_trials} failed={mc.failed}",
        file=sys.stderr,
    )
    if mc.failed:
        print(f"error: {mc.failed} trial(s) exhausted the photon repetition budget", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def plot_path(out: str) -> str:
    root, _ = os.path.splitext(out)
    return root + ".plot.dat"


def cmd_sweep(cfg: RunConfiguration) -> int:
    sw = cfg.harness.sweep
    if sw is None or not sw.values:
        print("error: sweep grid is empty", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.output.path or f"sweep.{cfg.output.format}"
    # fail on an unwritable destination before spending time on the sweep
    for path in (out, plot_path(out)):
        try:
            with open(path, "a", encoding="utf-8"):
                pass
        except OSError as exc:
            print(f"error: cannot write {path}: {exc.strerror}", file=sys.stderr)
            return EXIT_CONFIG
    spec = harness.SweepSpec(sw.parameter, list(sw.values), cfg.harness.trials, cfg.harness.seed)
    rows = harness.sweep(spec, cfg.protocol_config(), cfg.harness.threads)
    _emit(_render(rows, cfg.output.format), out)
    _emit(harness.plot_table(rows), plot_path(out))
    print(f"wrote {out} and {plot_path(out)}", file=sys.stderr)
    failed = sum(r.failed for r in rows)
    if failed:
        print(f"error: {failed} trial(s) exhausted the photon repetition budget", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_forge(cfg: RunConfiguration) -> int:
    adv = cfg.adversary
    report = run_forgery_experiment(
        AdversaryStrategy(adv.strategy),
        cfg.protocol_config(),
        adv.rounds,
        cfg.harness.trials,
        seed=cfg.harness.seed,
        target_halfwidth=adv.target_halfwidth,
        workers=cfg.harness.threads,
    )
    _emit(_render([report], cfg.output.format), cfg.output.path)
    f = report.forgery
    print(f"strategy={f.strategy} rounds={f.n_rounds} trials={f.n_trials}", file=sys.stderr)
    print(f"per-round acceptance {f.per_round_p:.6f} [{f.per_round_ci[0]:.6f}, {f.per_round_ci[1]:.6f}]", file=sys.stderr)
    print(f"{f.n_rounds}-round acceptance {f.n_round_p:.6g} [{f.n_round_ci[0]:.6g}, {f.n_round_ci[1]:.6g}]", file=sys.stderr)
    print(f"bound <F_verif>^n = {f.forge_bound_honest:.6g}; 2^-n = {f.forge_bound_half:.6g}", file=sys.stderr)
    for w in f.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_selftest(corrupt: bool = False) -> int:
    results = checks.run_all(checks.CORRUPT_BELL_LABELING if corrupt else None)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"selftest failed: {', '.join(failed)}")
        return EXIT_SELFTEST
    print("selftest passed")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "selftest":
        return cmd_selftest(args.corrupt_bell_labeling)
    try:
        cfg = _configure(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_forge(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "cmd_run", "cmd_sweep", "cmd_forge", "cmd_selftest"]
