"""Command line driver: presets, single runs and replicated suites.

    utpswarm run desk-homog-tcp --seed 2 --out results
    utpswarm suite desk-homog-default desk-homog-utp my.ini --seeds 1,2,3 --out results
    utpswarm presets list
    utpswarm validate my.ini

A config argument is either a path to a scenario file or a preset name.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from .config import ConfigError, PeerClass, ScenarioConfig
from .metrics import (Envelope, MetricsError, RegressionFit, SimulationReport, build_report,
                      envelope_of_reports, export_report, linear_fit, spearman, write_csv)
from .sim import DeadlockError
from .swarm.disposition import DEFAULT, PREFER_TCP, PREFER_UTP, TCP_ONLY, UTP_ONLY
from .swarm.swarm import Swarm

MB = 1024 * 1024
KIB = 1024

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DEADLOCK = 3

# scale name -> (leechers, file size, chunk size)
_SCALES = {
    "full": (75, 100 * MB, 1024 * KIB),
    "desk": (23, 10 * MB, 256 * KIB),
}
_HOMOG = {"default": DEFAULT, "utp": UTP_ONLY, "tcp": TCP_ONLY}
_SPLITS = {"75-25": 0.75, "50-50": 0.50, "25-75": 0.25}


def _split(n: int, tcp_fraction: float) -> tuple[int, int]:
    tcp = int(n * tcp_fraction + 0.5)
    return tcp, n - tcp


def _build_presets() -> dict[str, ScenarioConfig]:
    out = {}
    for scale, (n, size, chunk) in _SCALES.items():
        prefix = "" if scale == "full" else "desk-"
        rates = [1_000_000] if scale == "desk" else [1_000_000, 2_000_000, 5_000_000]
        for rate in rates:
            suffix = "" if rate == 1_000_000 else f"-{rate // 1_000_000}mbps"
            common = dict(file_size=size, chunk_size=chunk, seed_uplink_bps=rate,
                          rng_seeds=[1, 2, 3])
            for label, disp in _HOMOG.items():
                name = f"{prefix}homog-{label}{suffix}"
                out[name] = ScenarioConfig(
                    name=name, leechers=[PeerClass(label, n, disp, rate)], **common)
            for label, frac in _SPLITS.items():
                name = f"{prefix}heter-{label}{suffix}"
                tcp, utp = _split(n, frac)
                out[name] = ScenarioConfig(
                    name=name, leechers=[PeerClass("tcp", tcp, PREFER_TCP, rate),
                                         PeerClass("utp", utp, PREFER_UTP, rate)], **common)
    return out


PRESETS = _build_presets()
DESK_SUITE = ["desk-homog-default", "desk-homog-utp", "desk-homog-tcp",
              "desk-heter-75-25", "desk-heter-50-50", "desk-heter-25-75"]
FULL_SUITE = [name[len("desk-"):] for name in DESK_SUITE]


def resolve(ref: str) -> ScenarioConfig:
    """Preset name or path to a scenario file."""
    if ref in PRESETS:
        return PRESETS[ref]
    if os.path.exists(ref):
        return cfgmod.load(ref)
    raise ConfigError(f"{ref!r} is neither a preset nor a readable file")


def run_scenario(config: ScenarioConfig, seed: Optional[int] = None,
                 keep_logs: bool = True) -> SimulationReport:
    """One seeded run to completion of every leecher."""
    seed = config.rng_seeds[0] if seed is None else seed
    swarm = Swarm(config, seed)
    swarm.run()
    return build_report(swarm, keep_logs=keep_logs)


def _run_job(args) -> SimulationReport:
    config, seed, out = args
    report = run_scenario(config, seed, keep_logs=out is not None)
    if out is not None:
        export_report(report, run_dir(out, config.name, seed))
        report.queue_logs = {}  # on disk now; keeps suites light in memory
    return report


def run_dir(out: str, scenario: str, seed: int) -> str:
    return os.path.join(out, scenario, str(seed))


@dataclass
class ScenarioMeans:
    scenario: str
    runs: int
    mean_T: float
    mean_Q_ms: float
    tcp_share: float


@dataclass
class SuiteResult:
    reports: dict[str, list[SimulationReport]]
    envelopes: dict[str, dict[str, Envelope]]
    means: list[ScenarioMeans]
    regression: Optional[RegressionFit]  # E[T] against TCP share, non-0-TCP scenarios
    buffer_regression: Optional[RegressionFit]  # E[T] against E[Q] ms, same scenarios
    share_buffer_rank: Optional[float]  # Spearman(TCP share, E[Q]) over all scenarios


def summarize(reports: dict[str, list[SimulationReport]]) -> SuiteResult:
    envelopes = {}
    means = []
    for name, runs in reports.items():
        envelopes[name] = {"completion": envelope_of_reports(runs, "completion"),
                           "queue": envelope_of_reports(runs, "queue")}
        means.append(ScenarioMeans(name, len(runs),
                                   float(np.mean([r.mean_T for r in runs])),
                                   float(np.mean([r.mean_Q_ms for r in runs])),
                                   float(np.mean([r.tcp_share for r in runs]))))
    fit = bfit = rank = None
    nonzero = [m for m in means if m.tcp_share > 0]
    try:
        fit = linear_fit([(m.tcp_share, m.mean_T) for m in nonzero])
        bfit = linear_fit([(m.mean_Q_ms, m.mean_T) for m in nonzero], exclude_zero=False)
    except MetricsError:
        pass
    if len(means) >= 2:
        rank = spearman([m.tcp_share for m in means], [m.mean_Q_ms for m in means])
    return SuiteResult(reports, envelopes, means, fit, bfit, rank)


def run_suite(configs: Sequence[ScenarioConfig], seeds: Optional[Sequence[int]] = None,
              out: Optional[str] = None, jobs: int = 1) -> SuiteResult:
    """k replications per config, envelopes per scenario and the regression
    over scenario means.  Finished runs are on disk even if a later one fails."""
    if not configs:
        raise ConfigError("suite needs at least one config")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate scenario names in suite: {names}")
    work = [(c, s, out) for c in configs for s in (seeds or c.rng_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = [_run_job(w) for w in work]
    reports: dict[str, list[SimulationReport]] = {c.name: [] for c in configs}
    for (c, _, _), r in zip(work, results):
        reports[c.name].append(r)
    result = summarize(reports)
    if out is not None:
        _export_suite(result, out)
    return result


def _export_suite(result: SuiteResult, out: str) -> None:
    fit = result.regression
    for name, runs in result.reports.items():
        for r in runs:
            # every run directory carries the suite-level regression
            write_csv(os.path.join(run_dir(out, name, r.seed), "regression.csv"),
                      ["slope", "intercept", "r2", "n"],
                      [] if fit is None else [(fit.slope, fit.intercept, fit.r2, fit.n)])
        for curve, env in result.envelopes[name].items():
            write_csv(os.path.join(out, name, f"envelope_{curve}.csv"), ["x", "lower", "upper"],
                      zip(env.grid, env.lower, env.upper))
    write_csv(os.path.join(out, "suite.csv"),
              ["scenario", "runs", "mean_T_s", "mean_Q_ms", "tcp_share_pct"],
              [(m.scenario, m.runs, m.mean_T, m.mean_Q_ms, m.tcp_share) for m in result.means])
    rows = []
    for label, f in (("share", fit), ("buffer_ms", result.buffer_regression)):
        if f is not None:
            rows.append((label, f.slope, f.intercept, f.r2, f.n))
    write_csv(os.path.join(out, "regression.csv"), ["x", "slope", "intercept", "r2", "n"], rows)


# --------------------------------------------------------------------------- CLI

def _fail(kind: str, message: str, code: int, **extra) -> int:
    payload = {"error": kind, "message": message}
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def _cmd_run(args) -> int:
    config = resolve(args.config)
    seed = args.seed if args.seed is not None else config.rng_seeds[0]
    report = run_scenario(config, seed)
    if args.out:
        export_report(report, run_dir(args.out, config.name, seed))
    print(json.dumps({k: v for k, v in report.summary_row().items()}, sort_keys=True))
    return EXIT_OK


def _cmd_suite(args) -> int:
    configs = [resolve(ref) for ref in (args.configs or DESK_SUITE)]
    seeds = _parse_seeds(args.seeds) if args.seeds else None
    result = run_suite(configs, seeds, args.out, jobs=args.jobs)
    for m in result.means:
        print(f"{m.scenario:24s} runs={m.runs} E[T]={m.mean_T:8.1f} s "
              f"E[Q]={m.mean_Q_ms:6.1f} ms TCP={m.tcp_share:5.1f}%")
    if result.regression is not None:
        f = result.regression
        print(f"regression E[T] = {f.slope:.3f} * share + {f.intercept:.1f}  (r2={f.r2:.3f}, n={f.n})")
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.action == "list":
        for name, c in PRESETS.items():
            classes = ", ".join(f"{k.name}:{k.count}x{k.disposition}" for k in c.leechers)
            print(f"{name:28s} {c.file_size // MB:4d} MB  chunk {c.chunk_size // KIB:4d} KiB  "
                  f"C={c.seed_uplink_bps // 1_000_000} Mbps  [{classes}]")
    else:
        config = PRESETS.get(args.name)
        if config is None:
            raise ConfigError(f"unknown preset {args.name!r}")
        sys.stdout.write(cfgmod.serialize(config))
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = resolve(args.config)
    print(json.dumps({"ok": True, "name": config.name, "peers": config.peer_count,
                      "chunks": config.chunk_count, "digest": config.digest()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="utpswarm",
                                     description="BitTorrent flash-crowd simulator over uTP/TCP")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario with one seed")
    p.add_argument("config", help="scenario file or preset name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write CSVs under OUT/<scenario>/<seed>/")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("suite", help="replicate scenarios and fit the regression")
    p.add_argument("configs", nargs="*", help="scenario files or presets (default: desk suite)")
    p.add_argument("--seeds", help="comma separated seeds (default: each config's own)")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("presets", help="list or print presets")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.set_defaults(func=_cmd_presets)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except DeadlockError as exc:
        return _fail("deadlock", str(exc), EXIT_DEADLOCK,
                     time_us=exc.now, diagnostic=exc.diagnostic)
    except (MetricsError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
