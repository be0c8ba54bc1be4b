"""Command-line interface: solve, simulate, sweep, threshold, serve."""

from __future__ import annotations

import argparse
import json
import socket
import sys
import time
from pathlib import Path

from .core import InvalidConfigError, SolverConfig, lambda_f_threshold
from .sim import (
    BRAR,
    FIXED,
    MDP,
    RAR,
    DesignMismatchError,
    DesignSpec,
    NoPowerError,
    Scenario,
    frontier_sweep,
    metrics_record,
    run_scenario,
    write_records,
)
from .solver import SolverCapacityError, solve
from .store import BINARY_SUFFIX, TEXT_SUFFIX, load, save

USAGE_EXIT = 2
CAPACITY_EXIT = 3
MISMATCH_EXIT = 4
BIND_EXIT = 5

BASELINES = {"onetoone": FIXED, "rar": RAR, "brar": BRAR}

REDESIGN_PRESET = {
    "lambda_f": [2.0, 3.0, 4.0, 5.0],
    "lambda_k": [0.01, 0.025, 0.05, 0.1],
    "scenarios": [
        {"p_a": 0.4, "p_b": 0.4, "n": 20},
        {"p_a": 0.8, "p_b": 0.4, "n": 20},
    ],
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _gammas(text: str) -> tuple[float, float, float, float]:
    vals = _floats(text)
    if len(vals) == 1:
        vals = vals * 4
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("--gamma takes one value or four comma-separated values")
    return vals


def _common_flags(for_subcommand: bool) -> argparse.ArgumentParser:
    # Global flags are accepted both before and after the subcommand; the
    # subcommand variant suppresses defaults so it cannot clobber values
    # already parsed at the top level.
    parent = argparse.ArgumentParser(add_help=False)
    suppress = {"default": argparse.SUPPRESS} if for_subcommand else {}
    parent.add_argument("--seed", type=int, help="base RNG seed (default 0)",
                        **(suppress or {"default": 0}))
    parent.add_argument("--out", type=Path, help="output file path",
                        **(suppress or {"default": None}))
    parent.add_argument("--format", choices=("text", "binary"),
                        help="policy file encoding (default text)",
                        **(suppress or {"default": "text"}))
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags(for_subcommand=True)
    parser = argparse.ArgumentParser(
        prog="blockrar",
        description="Optimal blocked response-adaptive randomization designs",
        parents=[_common_flags(for_subcommand=False)],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", parents=[common], help="compute an optimal policy")
    p_solve.add_argument("--n", type=int, required=True, help="number of patients")
    p_solve.add_argument("--lambda-f", type=float, required=True, help="failure weight")
    p_solve.add_argument("--lambda-k", type=float, required=True, help="per-block cost")
    p_solve.add_argument("--phi", type=_floats, default=None, help="comma-separated allocation fractions")
    p_solve.add_argument("--t-min", type=int, default=0, help="minimum block size (default ceil(N/8))")
    p_solve.add_argument("--kappa", type=int, default=2, help="block increment (default 2)")
    p_solve.add_argument("--gamma", type=_gammas, default=(1.0, 1.0, 1.0, 1.0),
                         help="smoothing pseudo-counts: one value or gA1,gA0,gB1,gB0")
    p_solve.add_argument("--memory-budget-gb", type=float, default=4.0)
    p_solve.add_argument("--progress", action="store_true", help="print per-level progress")

    p_sim = sub.add_parser("simulate", parents=[common], help="Monte-Carlo evaluation of one design")
    src = p_sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--policy", type=Path, help="solved policy file (mdp design)")
    src.add_argument("--design", choices=sorted(BASELINES), help="baseline design")
    p_sim.add_argument("--p-a", type=float, required=True)
    p_sim.add_argument("--p-b", type=float, required=True)
    p_sim.add_argument("--n", type=int, default=None, help="patients (required for baselines)")
    p_sim.add_argument("--sims", type=int, default=10_000)
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--lambda-f", type=float, default=4.0, help="failure weight for utility scoring")
    p_sim.add_argument("--lambda-k", type=float, default=0.01, help="block cost for utility scoring")
    p_sim.add_argument("--gamma", type=_gammas, default=(1.0, 1.0, 1.0, 1.0))
    p_sim.add_argument("--burn-in", type=float, default=0.25, help="burn-in fraction for the rar baseline")

    p_sweep = sub.add_parser("sweep", parents=[common], help="grid sweep over failure/block weights")
    p_sweep.add_argument("--grid", type=Path, help='JSON file {"lambda_f": [...], "lambda_k": [...]}')
    p_sweep.add_argument("--scenarios", type=Path, help='JSON file [{"p_a":..., "p_b":..., "n":...}]')
    p_sweep.add_argument("--preset", choices=("redesign",), help="built-in grid + scenarios")
    p_sweep.add_argument("--out-dir", type=Path, required=True)
    p_sweep.add_argument("--sims", type=int, default=10_000)
    p_sweep.add_argument("--phi", type=_floats, default=None)
    p_sweep.add_argument("--memory-budget-gb", type=float, default=4.0)

    p_thr = sub.add_parser("threshold", parents=[common],
                           help="failure weight needed for two blocks to beat one")
    p_thr.add_argument("--p-a", type=float, required=True)
    p_thr.add_argument("--p-b", type=float, required=True)
    p_thr.add_argument("--n", type=int, required=True)
    p_thr.add_argument("--t", type=int, required=True, help="first block size")
    p_thr.add_argument("--lambda-k", type=float, required=True)

    p_serve = sub.add_parser("serve", parents=[common], help="run the conduct service")
    p_serve.add_argument("--policies", type=Path, required=True, help="directory of policy files")
    p_serve.add_argument("--sessions", type=Path, required=True, help="directory for session logs")
    p_serve.add_argument("--bind", type=str, default="127.0.0.1:8100", help="host:port")

    return parser


def cmd_solve(args) -> int:
    cfg = SolverConfig(
        n_patients=args.n,
        failure_weight=args.lambda_f,
        block_cost=args.lambda_k,
        **({"allocation_set": args.phi} if args.phi else {}),
        min_block=args.t_min,
        block_increment=args.kappa,
        smoothing=args.gamma,
    )
    progress = None
    if args.progress:
        def progress(level, done, total):
            print(f"  level {level}: {done}/{total} states", file=sys.stderr)
    started = time.perf_counter()
    policy = solve(cfg, memory_budget_bytes=int(args.memory_budget_gb * (1 << 30)), progress=progress)
    elapsed = time.perf_counter() - started
    print(f"U*(empty) = {policy.start_value:.6f}")
    print(f"states = {policy.entry_count}")
    print(f"wall time = {elapsed:.2f} s")
    if args.out is not None:
        suffix = TEXT_SUFFIX if args.format == "text" else BINARY_SUFFIX
        out = args.out if str(args.out).endswith(suffix) else Path(str(args.out) + suffix)
        info = save(policy, out, fmt=args.format)
        print(f"wrote {info.path} ({info.entry_count} entries, {info.byte_size} bytes)")
    return 0


def cmd_simulate(args) -> int:
    if args.policy is not None:
        policy = load(args.policy)
        cfg = policy.config
        if args.n is not None and args.n != cfg.n_patients:
            raise DesignMismatchError(
                f"policy solved for N={cfg.n_patients} but --n {args.n} was given"
            )
        design = DesignSpec(kind=MDP, policy=policy)
        label = MDP
        n = cfg.n_patients
    else:
        if args.n is None:
            print("error: --n is required with a baseline design", file=sys.stderr)
            return USAGE_EXIT
        n = args.n
        cfg = SolverConfig(n, args.lambda_f, args.lambda_k, smoothing=args.gamma)
        design = DesignSpec(kind=BASELINES[args.design], burn_in_fraction=args.burn_in)
        label = BASELINES[args.design]
    scenario = Scenario(args.p_a, args.p_b, n, n_sims=args.sims, alpha=args.alpha, seed=args.seed)
    metrics = run_scenario(design, scenario, cfg)
    record = metrics_record(label, scenario, metrics)
    print(f"seed = {scenario.seed}")
    print(json.dumps(record, indent=2))
    if args.out is not None:
        csv_path = args.out
        write_records([record], csv_path, "csv")
        json_path = csv_path.with_suffix(".json") if csv_path.suffix else Path(str(csv_path) + ".json")
        write_records([record], json_path, "json")
        print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_sweep(args) -> int:
    if args.preset == "redesign":
        grid = REDESIGN_PRESET
        scenario_docs = REDESIGN_PRESET["scenarios"]
    else:
        if args.grid is None or args.scenarios is None:
            print("error: provide --grid and --scenarios, or --preset", file=sys.stderr)
            return USAGE_EXIT
        grid = json.loads(args.grid.read_text())
        scenario_docs = json.loads(args.scenarios.read_text())
    scenarios = [
        Scenario(float(d["p_a"]), float(d["p_b"]), int(d["n"]), n_sims=args.sims, seed=args.seed)
        for d in scenario_docs
    ]
    rows = frontier_sweep(
        grid["lambda_f"],
        grid["lambda_k"],
        scenarios,
        solver_budget_bytes=int(args.memory_budget_gb * (1 << 30)),
        allocation_set=args.phi,
        progress=lambda row: print(
            f"  lf={row['lambda_f']} lk={row['lambda_k']} p=({row['p_a']},{row['p_b']}): {row['status']}",
            file=sys.stderr,
        ),
    )
    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records(rows, out_dir / "sweep.csv", "csv")
    write_records(rows, out_dir / "sweep.json", "json")
    points = out_dir / "points"
    points.mkdir(exist_ok=True)
    for row in rows:
        name = f"lf{row['lambda_f']}-lk{row['lambda_k']}-pa{row['p_a']}-pb{row['p_b']}.json"
        (points / name).write_text(json.dumps(row, indent=2) + "\n")
    failed = sum(1 for row in rows if row["status"] != "ok")
    print(f"wrote {len(rows)} rows to {out_dir / 'sweep.csv'} ({failed} failed)")
    return 0


def cmd_threshold(args) -> int:
    value = lambda_f_threshold(args.p_a, args.p_b, args.n, args.t, args.lambda_k)
    print(f"{value:.6f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, _, port_text = args.bind.rpartition(":")
    if not host or not port_text.isdigit():
        print(f"error: --bind expects host:port, got {args.bind!r}", file=sys.stderr)
        return USAGE_EXIT
    app = create_app(args.policies, args.sessions)
    try:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, int(port_text)))
        sock.listen(128)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return BIND_EXIT
    config = uvicorn.Config(app, log_level="info")
    server = uvicorn.Server(config)
    server.run(sockets=[sock])
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve": cmd_solve,
        "simulate": cmd_simulate,
        "sweep": cmd_sweep,
        "threshold": cmd_threshold,
        "serve": cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except SolverCapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CAPACITY_EXIT
    except DesignMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return MISMATCH_EXIT
    except (InvalidConfigError, NoPowerError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
