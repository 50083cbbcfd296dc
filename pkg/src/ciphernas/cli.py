"""Command-line entry point.

Subcommands: search, estimate, calibrate, pareto.  Exit codes:
0 success, 2 validation error, 3 infeasibility, 4 trainer/protocol
error.  All outputs are reproducible bit for bit under a fixed seed and
profile.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from .bridge import TrainerClient, TrainerError
from .config import ConfigError, RunConfig, load_profile
from .model import (CalibrationProfile, CryptoParams, ParseError,
                    parse_network, serialize_network, validate_network)
from .pce import (LayerInfeasibleError, ScoreWeights, ValidationError,
                  calibrate, characterize_network, score)
from .pie import InfeasibleError
from .policy import decode
from .pareto import pareto_indices
from .search import (EpisodeRecord, SurrogateEstimator, TrainerEstimator,
                     run_search)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_TRAINER = 4

TRACE_COLUMNS = ("Eps", "actions", "A", "T", "B", "xi", "R", "sw_flag")
CONFIG_ENV = "CIPHERNAS_CONFIG"


def _fail(code: int, category: str, message: str) -> int:
    print(f"ciphernas: error: {category}: {message}", file=sys.stderr)
    return code


def _load_config(args) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    cfg = RunConfig.from_file(path) if path else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "profile", None) is not None:
        cfg.profile_ref = args.profile
    if getattr(args, "episodes", None) is not None:
        cfg.episodes = args.episodes
    if getattr(args, "out", None) is not None:
        cfg.output_dir = args.out
    return cfg


def _trace_row(r: EpisodeRecord) -> tuple:
    return (r.eps, ";".join(str(a) for a in r.actions), repr(r.A), repr(r.T),
            repr(r.B), repr(r.xi), repr(r.reward), int(r.sw_flag))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_search(args) -> int:
    cfg = _load_config(args)
    if cfg.space is None:
        return _fail(EXIT_VALIDATION, "config", "search requires input/template sections")
    profile = load_profile(cfg.profile_ref)
    estimator = None
    client = None
    if cfg.dataset != "surrogate":
        if not cfg.trainer_cmd:
            return _fail(EXIT_VALIDATION, "config",
                         f"dataset {cfg.dataset!r} requires trainer_cmd")
        client = TrainerClient(cfg.trainer_cmd, timeout=cfg.trainer_timeout)
        estimator = TrainerEstimator(client, cfg.dataset)
    try:
        result = run_search(cfg.space, cfg.episodes, cfg.sw_n, cfg.policy,
                            cfg.pie, profile, cfg.weights, cfg.shaping,
                            seed=cfg.seed, estimator=estimator, jobs=cfg.jobs,
                            quant_range=cfg.quant_range)
    finally:
        if client is not None:
            client.shutdown()

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "trace.csv", TRACE_COLUMNS,
               [_trace_row(r) for r in result.trace])
    _write_csv(out / "pareto.csv", TRACE_COLUMNS,
               [_trace_row(r) for r in result.pareto])
    ok = result.ok_records()
    lines = [f"episodes: {len(result.trace)}",
             f"evaluated: {len(ok)}",
             f"pareto size: {len(result.pareto)}"]
    if ok:
        best = max(ok, key=lambda r: r.reward)
        net = decode(best.actions, cfg.space, episode_id=best.eps, sw_n=cfg.sw_n)
        (out / "best_network.json").write_text(serialize_network(net))
        lines += [f"best reward: {best.reward!r} at episode {best.eps}",
                  f"best A={best.A!r} T={best.T!r} B={best.B!r}"]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    profile = load_profile(cfg.profile_ref)
    try:
        net = parse_network(Path(args.network).read_text())
    except OSError as e:
        return _fail(EXIT_VALIDATION, "io", str(e))
    except ParseError as e:
        return _fail(EXIT_VALIDATION, "parse", str(e))
    violations = validate_network(net, quant_range=cfg.quant_range)
    if violations:
        for v in violations:
            print(f"ciphernas: violation: {v}", file=sys.stderr)
        return _fail(EXIT_VALIDATION, "network", f"{len(violations)} violation(s)")
    try:
        report = characterize_network(net, cfg.pie, profile,
                                      quant_range=cfg.quant_range)
    except LayerInfeasibleError as e:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(e))
    xi = score(report.T, report.B, cfg.weights)
    print(report.text_summary())
    print(f"Score xi:   {xi!r} (beta={cfg.weights.beta})")
    if args.csv:
        _write_csv(Path(args.csv), report.csv_rows()[0], report.csv_rows()[1:])
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    dims = [int(x) for x in args.dims.split(",")] if args.dims else [1024, 2048, 4096]
    params_list = []
    for n in dims:
        for bits_q in (50, 100):
            from .primes import gen_prime_congruent
            p = gen_prime_congruent(20, 2 * n)
            q = gen_prime_congruent(bits_q, 2 * n)
            params_list.append(CryptoParams(n=n, p=p, q=q))
    profile = calibrate(params_list, reps=args.reps)
    bad = profile.check()
    if bad:
        return _fail(EXIT_VALIDATION, "profile", "; ".join(bad))
    Path(args.out).write_text(profile.to_json())
    print(f"wrote {args.out} ({len(profile.rows)} linear rows)")
    return EXIT_OK


def read_trace_csv(path) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ParseError(f"unexpected trace header {header}")
        for row in reader:
            eps, actions, a, t, b, xi, r, sw = row
            records.append(EpisodeRecord(
                eps=int(eps),
                actions=tuple(int(x) for x in actions.split(";")) if actions else (),
                A=float(a), T=float(t), B=float(b), xi=float(xi),
                reward=float(r), sw_flag=bool(int(sw)),
                status="ok" if not (float(a) == 0.0 and float(t) == 0.0
                                    and float(b) == 0.0) else "rejected"))
    return records


def cmd_pareto(args) -> int:
    try:
        records = read_trace_csv(args.trace)
    except OSError as e:
        return _fail(EXIT_VALIDATION, "io", str(e))
    except (ParseError, ValueError) as e:
        return _fail(EXIT_VALIDATION, "parse", str(e))
    # Rejected episodes carry the (0, 0, 0) sentinel triple and are not
    # evaluated networks; they never enter the front.
    ok = [r for r in records if r.status == "ok"]
    front = pareto_indices([(r.A, r.T, r.B) for r in ok])
    _write_csv(Path(args.out), TRACE_COLUMNS,
               [_trace_row(ok[i]) for i in front])
    print(f"{len(front)} non-dominated of {len(ok)} evaluated rows -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ciphernas",
        description="Architecture search and cost estimation for secure CNN inference")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"run config JSON (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--jobs", type=int, help="evaluation workers")
    common.add_argument("--profile", help="calibration profile path or 'reference'")

    p = sub.add_parser("search", parents=[common], help="run an architecture search")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("estimate", parents=[common],
                       help="estimate one network's secure-inference cost")
    p.add_argument("network", help="network JSON file")
    p.add_argument("--csv", help="also write the per-layer CSV here")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("calibrate", parents=[common],
                       help="measure primitive-op costs on this machine")
    p.add_argument("--out", default="profile.json")
    p.add_argument("--dims", help="comma-separated ring dimensions")
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("pareto", parents=[common],
                       help="extract the non-dominated set from a trace")
    p.add_argument("trace", help="trace.csv from a search run")
    p.add_argument("--out", default="pareto.csv")
    p.set_defaults(fn=cmd_pareto)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        return _fail(EXIT_VALIDATION, "config", str(e))
    except ValidationError as e:
        return _fail(EXIT_VALIDATION, "network", str(e))
    except InfeasibleError as e:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(e))
    except TrainerError as e:
        return _fail(EXIT_TRAINER, "trainer", str(e))


if __name__ == "__main__":
    sys.exit(main())
