"""Command-line front end: ``run``, ``oracle``, ``report`` and ``validate``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from . import models
from .engine import LABELS, METHODS, EngineError, MethodConfig, SubproblemInfeasible, run
from .program import ModelError, TreeTooLarge, load, save, solve_extensive, validate

EXIT_OK, EXIT_MODEL, EXIT_MAX_ITERS, EXIT_TREE = 0, 1, 2, 3
FAMILY_EPSILON = {"inventory": 0.05, "portfolio": 0.1, "random": 0.1}


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def convergence_header(T: int) -> list[str]:
    return ["iteration", "z_inf", "z_sup", "cost_mean", "cost_std", "elapsed_ms"] + [
        f"sel_t{t}" for t in range(2, T + 1)
    ]


def write_convergence(path: Path, log, T: int, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(convergence_header(T))
        for r in log.records:
            w.writerow([r.iteration, _fmt(r.z_inf), _fmt(r.z_sup), _fmt(r.cost_mean), _fmt(r.cost_std),
                        f"{r.elapsed_ms:.3f}" if timing else "0"]
                       + [_fmt(r.proportions[t]) for t in range(2, T + 1)])


def write_selection(path: Path, log, T: int) -> None:
    means = log.mean_proportions()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "mean_selected_proportion"])
        for t in range(2, T + 1):
            w.writerow([t, _fmt(means.get(t, float("nan")))])


# --- model source -------------------------------------------------------

def _load_program(args):
    if args.model:
        return load(args.model), None
    params = {"T": args.T, "M": args.M, "n": args.n}
    if args.family == "random":
        return models.random_program(args.seed, T=args.T, M=args.M, d=args.n), "random"
    spec = models.generate_paper_instance(args.family, params, args.seed)
    return models.build(spec), args.family


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model file in the cutplane-sp/1 JSON format")
    src.add_argument("--family", choices=["inventory", "portfolio", "random"], help="generated instance family")
    p.add_argument("--T", type=int, default=5, help="stages (generated models)")
    p.add_argument("--M", type=int, default=5, help="realizations per stage (generated models)")
    p.add_argument("--n", type=int, default=3, help="risky assets (portfolio) or state size (random)")
    p.add_argument("--seed", type=int, default=0)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("CUTPLANE_WORKERS", "1")))
    except ValueError:
        return 1


def cmd_run(args) -> int:
    try:
        program, family = _load_program(args)
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_model:
        save(program, args.dump_model)
    epsilon = args.epsilon if args.epsilon is not None else FAMILY_EPSILON.get(family, 0.1)
    names = list(METHODS) if args.method == "all-six" else [args.method]
    codes = []
    summaries = []
    for name in names:
        cfg = MethodConfig.for_method(
            name, N=args.N, S=args.S, alpha=args.alpha, epsilon=epsilon, epsilon0=args.epsilon0,
            max_iterations=args.max_iters, seed=args.seed, sampling=args.sampling,
            workers=args.workers if args.workers is not None else _default_workers(),
        )
        try:
            log = run(program, cfg)
        except SubproblemInfeasible as exc:
            print(f"error: {name}: {exc} (t={exc.t}, j={exc.j + 1}, scenario={exc.scenario})", file=sys.stderr)
            return EXIT_MODEL
        except EngineError as exc:
            print(f"error: {name}: {exc}", file=sys.stderr)
            return EXIT_MODEL
        write_convergence(out / f"{name}.convergence.csv", log, program.T, timing=not args.no_timing)
        write_selection(out / f"{name}.selection.csv", log, program.T)
        summary = log.summary()
        summary["model"] = program.name
        summary["T"] = program.T
        if args.no_timing:
            summary["elapsed_ms"] = 0.0
        (out / f"{name}.summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        summaries.append(summary)
        codes.append(EXIT_OK if log.converged else EXIT_MAX_ITERS)
        print(f"{LABELS[name]:<14} {summary['status']:<15} iterations={summary['iterations']:<4} "
              f"z_inf={summary['z_inf']:.10g} z_sup={_fmt(summary['z_sup']) or '-'}")
    return max(codes)


def cmd_oracle(args) -> int:
    try:
        program, _ = _load_program(args)
        value = solve_extensive(program, cap=args.cap)
    except TreeTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TREE
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    print(f"{value:.10g}")
    return EXIT_OK


def report_rows(directory: Path) -> list[dict]:
    rows = []
    for path in sorted(directory.glob("*.summary.json")):
        rows.append(json.loads(path.read_text()))
    order = {name: i for i, name in enumerate(METHODS)}
    rows.sort(key=lambda r: (order.get(r["method"], len(order)), r["method"]))
    return rows


def format_report(rows: list[dict]) -> str:
    stages = sorted({int(t) for r in rows for t in r["mean_selected_proportion"]})
    head = ["method", "status", "iters", "time_s", "z_inf", "z_sup"] + [f"sel_t{t}" for t in stages]
    table = [head]
    for r in rows:
        sel = r["mean_selected_proportion"]
        table.append([
            r["label"], r["status"], str(r["iterations"]), f"{r['elapsed_ms'] / 1e3:.2f}",
            f"{r['z_inf']:.8g}", "-" if r["z_sup"] is None else f"{r['z_sup']:.8g}",
        ] + [f"{sel[str(t)]:.3f}" if str(t) in sel else "-" for t in stages])
    widths = [max(len(row[i]) for row in table) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table)


def cmd_report(args) -> int:
    directory = Path(args.directory)
    rows = report_rows(directory) if directory.is_dir() else []
    if not rows:
        print(f"error: no completed runs in {directory}", file=sys.stderr)
        return EXIT_MODEL
    print(format_report(rows))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        program, _ = _load_program(args)
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    problems = validate(program, n_scenarios=args.scenarios, seed=args.seed)
    for msg in problems:
        print(msg, file=sys.stderr)
    if problems:
        return EXIT_MODEL
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutplane", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve with one or all six methods")
    _add_source(p)
    p.add_argument("--method", default="all-six", choices=list(METHODS) + ["all-six"])
    p.add_argument("--N", type=int, default=1, help="forward scenarios per iteration")
    p.add_argument("--S", type=int, default=100, help="policy simulations for the upper bound")
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--epsilon", type=float, default=None,
                   help="relative gap tolerance (default 0.05 for inventory, 0.1 otherwise)")
    p.add_argument("--epsilon0", type=float, default=1e-6, help="tie tolerance of the cut selectors")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--sampling", choices=["random", "exhaustive"], default="random")
    p.add_argument("--workers", type=int, default=None, help="threads for stage solves (env CUTPLANE_WORKERS)")
    p.add_argument("--out", default="runs")
    p.add_argument("--no-timing", action="store_true", help="write 0 for elapsed times (byte-stable output)")
    p.add_argument("--dump-model", help="also write the model to this path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="solve the deterministic equivalent")
    _add_source(p)
    p.add_argument("--cap", type=int, default=100_000, help="maximum scenario tree nodes")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="tabulate the summaries in a run directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="structural and sampled feasibility checks")
    _add_source(p)
    p.add_argument("--scenarios", type=int, default=20)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
