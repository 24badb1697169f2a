"""Command-line entry point: run, sweep, lowerbound, verify and replay."""

from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from .adversary import ScheduleError, parse_adversary
from .channel import ContractViolation
from .engine import trace_lines
from .experiments import (
    PROTOCOLS, ExperimentConfig, PreconditionFailed, check_grid, ProtocolSpec, blocking_experiment, latency_of,
    latency_bound, rows_to_csv, run_one, run_trials, scaling_check, summary_rows, wilson_interval,
)
from .rng import trial_seeds
from .verify import run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_MISMATCH = 0, 1, 2, 3, 4

# every key a config file may set, with its type and default (None = required or unset)
KEYS = {
    "protocol": (str, "nak"),
    "k": (int, None),
    "c": (int, 8),
    "b": (int, 8),
    "ack": (str, "on"),
    "q": (float, 2.0),
    "sawtooth_initial_phase": (int, 1),
    "min_control_exponent": (int, 2),
    "adversary": (str, "batch"),
    "trials": (int, 1),
    "seed": (int, 0),
    "max_rounds": (int, None),
    "eta": (float, 1.0),
    "output": (str, None),
    "csv": (str, None),
    "trace_dir": (str, None),
    "workers": (int, 1),
    "k_grid": (str, None),
    "tolerance": (float, 2.0),
    "gamma": (float, 3.0),
    "variant": (str, "frontloaded"),
    "t1": (int, None),
    "t2": (int, None),
    "mc_trials": (int, 20_000),
}


class ConfigError(ValueError):
    pass


def read_config_file(path: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        if key not in KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = KEYS[key][0](value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: bad value for {key}: {exc}") from exc
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    resolved = {key: default for key, (_, default) in KEYS.items()}
    if getattr(args, "config", None):
        resolved.update(read_config_file(args.config))
    for key in KEYS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def experiment_config(opts: dict, k: int | None = None, record_traces: bool = False) -> ExperimentConfig:
    k = opts["k"] if k is None else k
    if k is None:
        raise ConfigError(f"--k is required for protocol {opts['protocol']}")
    if opts["protocol"] not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {opts['protocol']!r}; choose from {', '.join(PROTOCOLS)}")
    if opts["ack"] not in ("on", "off"):
        raise ConfigError("--ack must be on or off")
    spec = ProtocolSpec(opts["protocol"], k if opts["protocol"] == "nak" else None, opts["c"], opts["b"],
                        opts["ack"], opts["q"], opts["sawtooth_initial_phase"], opts["min_control_exponent"])
    try:
        cfg = ExperimentConfig(spec, parse_adversary(opts["adversary"]), k, opts["trials"], opts["seed"],
                               opts["max_rounds"], opts["eta"], record_traces)
        spec.build()
    except (ValueError, ContractViolation) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def config_from_banner(d: dict) -> ExperimentConfig:
    spec = ProtocolSpec(**d["protocol"])
    return ExperimentConfig(spec, parse_adversary(d["adversary"]), d["k"], d["trials"], d["master_seed"],
                            d["max_rounds"], d["eta"], d["record_traces"])


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), default=_json_default)


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    raise TypeError(f"not serializable: {type(x).__name__}")


def _finite(x: float):
    return "inf" if math.isinf(x) else x


@contextmanager
def output_stream(path: str | None) -> Iterator:
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def cmd_run(opts: dict, args) -> int:
    cfg = experiment_config(opts, record_traces=opts["trace_dir"] is not None)
    records = run_trials(cfg, opts["workers"])
    rows = summary_rows(cfg, records)
    with output_stream(opts["output"]) as out:
        out.write(dumps({"type": "config", "command": "run", "resolved": opts,
                         "experiment": cfg.resolved()}) + "\n")
        for i, rec in enumerate(records):
            out.write(dumps({"type": "trial", "trial": i, **rec.to_dict()}) + "\n")
        for row in rows:
            out.write(dumps({"type": "summary", **{k: _finite(v) if isinstance(v, float) else v
                                                   for k, v in row.items()}}) + "\n")
        passes = sum(r.completed for r in records)
        lo, hi = wilson_interval(passes, len(records))
        out.write(dumps({"type": "fraction", "completed": passes / len(records), "trials": len(records),
                         "wilson_low": lo, "wilson_high": hi}) + "\n")
    if opts["csv"]:
        Path(opts["csv"]).write_text(rows_to_csv(rows))
    if opts["trace_dir"]:
        write_traces(Path(opts["trace_dir"]), cfg, records)
    if args.assert_fraction is not None and passes / len(records) < args.assert_fraction:
        print(f"completed fraction {passes / len(records):.4f} below {args.assert_fraction}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def trace_file_lines(cfg: ExperimentConfig, seed: int, trial: int, record) -> list[str]:
    header = dumps({"type": "trace-header", "experiment": cfg.resolved(), "seed": seed, "trial": trial})
    return [header, *trace_lines(record)]


def write_traces(directory: Path, cfg: ExperimentConfig, records) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(records):
        lines = trace_file_lines(cfg, rec.seed, i, rec)
        (directory / f"trial-{i:05d}.ndjson").write_text("\n".join(lines) + "\n")


def cmd_replay(opts: dict, args) -> int:
    try:
        text = Path(args.trace).read_text()
        header = json.loads(text.split("\n", 1)[0])
        cfg = config_from_banner(header["experiment"])
        seed = int(header["seed"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cannot read trace header: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not cfg.record_traces:
        cfg = ExperimentConfig(cfg.protocol, cfg.adversary, cfg.k, cfg.trials, cfg.master_seed,
                               cfg.max_rounds, cfg.eta, True)
    fresh = "\n".join(trace_file_lines(cfg, seed, header.get("trial", 0), run_one(cfg, seed))) + "\n"
    # the header must also be consistent with the master seed it claims to come from
    expected = trial_seeds(cfg.master_seed, cfg.trials)
    trial = header.get("trial", 0)
    if not (0 <= trial < len(expected)) or expected[trial] != seed:
        print(f"seed {seed} does not derive from master seed {cfg.master_seed} at trial {trial}",
              file=sys.stderr)
        return EXIT_MISMATCH
    if fresh.encode() != text.encode():
        old, new = text.splitlines(), fresh.splitlines()
        at = next((i for i, (a, b) in enumerate(zip(old, new)) if a != b), min(len(old), len(new)))
        print(f"trace differs at line {at + 1}", file=sys.stderr)
        return EXIT_MISMATCH
    print(dumps({"type": "replay", "trace": args.trace, "identical": True, "lines": len(fresh.splitlines())}))
    return EXIT_OK


def cmd_sweep(opts: dict, args) -> int:
    if not opts["k_grid"]:
        raise ConfigError("--k-grid is required, e.g. 16,64,256")
    try:
        grid = sorted(int(x) for x in opts["k_grid"].split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --k-grid: {exc}") from exc
    bound = None
    points = {}
    print(dumps({"type": "config", "command": "sweep", "resolved": opts}))
    try:
        check_grid(grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for k in grid:
        cfg = experiment_config(opts, k=k)
        if bound is None:
            bound = latency_bound(cfg.protocol)
        records = run_trials(cfg, opts["workers"])
        lat = sorted(latency_of(r)[1] for r in records)
        points[k] = lat[(len(lat) - 1) // 2]
    report = scaling_check(points, bound, opts["tolerance"])
    for k, ratio in zip(report.ks, report.ratios):
        print(dumps({"type": "ratio", "k": k, "median_max_latency": _finite(points[k]),
                     "bound": bound(k), "ratio": _finite(ratio)}))
    print(dumps({"type": "scaling", "fitted_C": _finite(report.fitted_c), "spread": _finite(report.spread),
                 "tolerance": report.tolerance, "ok": report.ok}))
    if args.assert_fraction is not None and not report.ok:
        return EXIT_FAIL
    return EXIT_OK


def cmd_lowerbound(opts: dict, args) -> int:
    if opts["k"] is None:
        raise ConfigError("--k is required")
    print(dumps({"type": "config", "command": "lowerbound", "resolved": opts}))
    try:
        report = blocking_experiment(opts["k"], opts["gamma"], opts["b"], opts["trials"], opts["seed"],
                                     opts["variant"], opts["t1"], opts["t2"])
    except PreconditionFailed as exc:
        print(dumps({"type": "precondition-failed", "diagnostic": str(exc)}))
        print(f"lower-bound hypothesis not met: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ScheduleError, ContractViolation, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    print(dumps({"type": "lowerbound", **report.to_dict()}))
    return EXIT_OK


def cmd_verify(opts: dict, args) -> int:
    print(dumps({"type": "config", "command": "verify", "resolved": opts}))
    checks = run_suite(opts["mc_trials"], opts["seed"])
    for c in checks:
        print(dumps({"type": "check", "name": c.name, "ok": c.ok, "detail": c.detail}))
    return EXIT_OK if all(c.ok for c in checks) else EXIT_FAIL


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--ack", choices=("on", "off"))
    p.add_argument("--q", type=float)
    p.add_argument("--sawtooth-initial-phase", type=int)
    p.add_argument("--min-control-exponent", type=int)
    p.add_argument("--adversary", help="batch | trickle:G | uniform:H | wake-on-success:B | blocking:V,GAMMA[,T1,T2]")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--output", help="NDJSON destination (default stdout)")
    p.add_argument("--workers", type=int)
    p.add_argument("--assert", dest="assert_fraction", type=float, metavar="FRACTION",
                   help="exit 1 when the pass fraction falls below FRACTION")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contention", description="Contention resolution simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment configuration")
    _add_common(p)
    p.add_argument("--csv", help="write the CSV summary here")
    p.add_argument("--trace-dir", help="record traces and write one file per trial here")
    p = sub.add_parser("sweep", help="scaling check over a k grid")
    _add_common(p)
    p.add_argument("--k-grid")
    p.add_argument("--tolerance", type=float)
    p = sub.add_parser("lowerbound", help="blocking-instance demonstration")
    _add_common(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--variant", choices=("frontloaded", "twophase"))
    p.add_argument("--t1", type=int)
    p.add_argument("--t2", type=int)
    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--mc-trials", type=int)
    p = sub.add_parser("replay", help="re-run a recorded trace and compare byte-wise")
    p.add_argument("trace")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "lowerbound": cmd_lowerbound,
            "verify": cmd_verify, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        opts = resolve(args)
        if opts["trials"] < 1:
            raise ConfigError("--trials must be >= 1")
        return COMMANDS[args.command](opts, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
