"""Exact evaluation, Monte Carlo estimation, sweeps and report assembly."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import binomtest

from . import analytics
from .noise import NoiseConfig, NoiseConfigError
from .protocol import (
    ProtocolConfig,
    Transcript,
    acceptance_from_distribution,
    exact_distribution,
    run_honest_protocol,
)

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "parameter_value",
    "exact_p",
    "mc_p",
    "ci_lo",
    "ci_hi",
    "analytic_p",
    "soundness",
    "forge_n",
)


# ---------------------------------------------------------------------------
# Randomness and statistics
# ---------------------------------------------------------------------------


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trial ``index``: SeedSequence(seed, spawn_key=(index,)).

    Depends only on (seed, index), so any partition of trials across workers
    sees the same draws.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    ci = binomtest(int(successes), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def standard_error(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else float("inf")


# ---------------------------------------------------------------------------
# Exact and analytic acceptance
# ---------------------------------------------------------------------------


def predicted_acceptance(config: ProtocolConfig) -> float:
    """Closed-form honest acceptance, extended with the BSM-fidelity mixture.

    Independent apparatus phases give Delta-theta variance 2 sigma^2.
    """
    nc = config.noise
    sigma = nc.sigma_theta if config.delta_mode else nc.sigma_theta * math.sqrt(2.0)
    if nc.alpha_mode == "uniform":
        base = analytics.f_verif_avg(nc.t_s, nc.t_m, sigma, nc.delta_phi)
    else:
        base = analytics.f_verif_fixed_alpha(nc.alpha, nc.t_s, nc.t_m, sigma, nc.delta_phi)
    return analytics.with_bsm_fidelity(base, nc.f_bsm)


def exact_acceptance(config: ProtocolConfig, tol: float = 1e-11) -> float:
    """Honest acceptance probability by density-matrix evolution over all branches.

    For uniform alpha the density-matrix result is integrated over alpha with
    adaptive quadrature.
    """
    if config.noise.alpha_mode == "fixed":
        return acceptance_from_distribution(exact_distribution(config))
    val, err = integrate.quad(
        lambda a: acceptance_from_distribution(exact_distribution(config, alpha=a)),
        0.0,
        1.0,
        epsabs=tol,
        epsrel=0,
        limit=200,
    )
    if err > 100 * tol:
        raise analytics.QuadratureError(err, 100 * tol)
    return float(val)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class MCResult:
    n_trials: int
    accepted: int
    failed: int
    estimate: float
    ci: tuple[float, float]
    transcripts: list[Transcript] = field(default_factory=list, repr=False)

    @property
    def completed(self) -> int:
        return self.n_trials - self.failed

    @property
    def halfwidth(self) -> float:
        return (self.ci[1] - self.ci[0]) / 2.0

    @property
    def stderr(self) -> float:
        return standard_error(self.estimate, self.completed)


def _run_chunk(args) -> list[Transcript]:
    config, seed, start, stop = args
    return [run_honest_protocol(config, trial_rng(seed, i), seed=seed) for i in range(start, stop)]


def run_transcripts(config: ProtocolConfig, n_trials: int, seed: int, workers: int = 1) -> list[Transcript]:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    workers = max(1, int(workers))
    if workers == 1:
        return _run_chunk((config, seed, 0, n_trials))
    bounds = np.linspace(0, n_trials, workers + 1).astype(int)
    chunks = [(config, seed, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    return [t for part in parts for t in part]


def summarize(transcripts: Sequence[Transcript], keep: bool = True) -> MCResult:
    n = len(transcripts)
    failed = sum(t.failed for t in transcripts)
    accepted = sum(t.accepted for t in transcripts)
    done = n - failed
    est = accepted / done if done else float("nan")
    return MCResult(n, accepted, failed, est, wilson_interval(accepted, done), list(transcripts) if keep else [])


def run_mc(
    config: ProtocolConfig, n_trials: int, seed: int, workers: int = 1, keep_transcripts: bool = True
) -> MCResult:
    """Acceptance estimate over completed runs with a Wilson 95% interval.

    Runs that exhaust the photon-repetition budget are counted in ``failed``
    and excluded from the estimate.
    """
    return summarize(run_transcripts(config, n_trials, seed, workers), keep_transcripts)


# ---------------------------------------------------------------------------
# Reports and sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    parameter: str
    values: list
    trials: int = 10_000
    seed: int = 42

    def __post_init__(self):
        names = {f.name for f in dataclasses.fields(NoiseConfig)}
        if self.parameter not in names:
            raise NoiseConfigError(f"sweep parameter must be a noise field, got {self.parameter!r}")
        if not len(self.values):
            raise NoiseConfigError("sweep grid is empty")
        if self.trials < 1:
            raise NoiseConfigError("trials must be >= 1")


@dataclass
class SecurityReport:
    parameter_value: float
    exact_p: float
    mc_p: float
    ci_lo: float
    ci_hi: float
    analytic_p: float
    soundness: float
    forge_n: float
    n_trials: int = 0
    failed: int = 0
    x: float = 0.0
    forgery: Optional[object] = None
    warnings: list = field(default_factory=list)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


def evaluate_point(
    config: ProtocolConfig, n_trials: int, seed: int, workers: int = 1, parameter_value: float = float("nan")
) -> tuple[SecurityReport, MCResult]:
    analytic = predicted_acceptance(config)
    exact = exact_acceptance(config)
    mc = run_mc(config, n_trials, seed, workers)
    report = SecurityReport(
        parameter_value=float(parameter_value),
        exact_p=exact,
        mc_p=mc.estimate,
        ci_lo=mc.ci[0],
        ci_hi=mc.ci[1],
        analytic_p=analytic,
        soundness=analytics.soundness(analytic, 0.5),
        forge_n=analytics.forge_bound(analytic, config.repetitions),
        n_trials=n_trials,
        failed=mc.failed,
        x=config.noise.storage_ratio,
    )
    if mc.failed:
        report.warnings.append(f"{mc.failed} run(s) exhausted the photon repetition budget")
    return report, mc


def sweep(spec: SweepSpec, config: ProtocolConfig, workers: int = 1) -> list[SecurityReport]:
    """One report per grid value; point i uses a seed derived from (spec.seed, i)."""
    rows = []
    for i, value in enumerate(spec.values):
        noise = dataclasses.replace(config.noise, **{spec.parameter: value})
        cfg = dataclasses.replace(config, noise=noise)
        report, _ = evaluate_point(cfg, spec.trials, point_seed(spec.seed, i), workers, value)
        if spec.parameter not in ("t_s", "t_m"):
            report.x = float(value)
        log.info("sweep %s=%s exact=%.6f mc=%.6f", spec.parameter, value, report.exact_p, report.mc_p)
        rows.append(report)
    return rows


def _fmt_csv(v) -> str:
    return format(float(v), ".9g")


def _fmt_json(v) -> str:
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return "null"
    return format(v, ".17g")


def reports_to_csv(rows: Sequence[SecurityReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([_fmt_csv(getattr(r, k)) for k in CSV_FIELDS])
    return buf.getvalue()


def reports_to_json(rows: Sequence[SecurityReport]) -> str:
    objs = []
    for r in rows:
        body = ", ".join(f"{json.dumps(k)}: {_fmt_json(getattr(r, k))}" for k in CSV_FIELDS)
        objs.append("  {" + body + "}")
    return "[\n" + ",\n".join(objs) + "\n]\n"


def plot_table(rows: Sequence[SecurityReport]) -> str:
    """Two whitespace-separated columns: x (t_s/t_m for time sweeps) and MC acceptance."""
    lines = ["# x acceptance"]
    lines += [f"{_fmt_csv(r.x)} {_fmt_csv(r.mc_p)}" for r in rows]
    return "\n".join(lines) + "\n"
