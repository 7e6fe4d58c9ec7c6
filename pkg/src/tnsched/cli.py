"""Command line: ``tnsched generate | solve | verify | bench``.

Exit codes: 0 feasible / success, 1 input error, 2 no solution found
(infeasible, budget exhausted, memory cap or timeout).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import math
import signal
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .casegen import GenSpec, generate
from .errors import (
    GenerationError,
    InfeasibleError,
    InvalidAssignmentError,
    InvalidInstanceError,
    MemoryCapExceeded,
    NoSolutionFound,
    OracleSizeError,
)
from .model import Instance, check_rules, cost, dump_instance, load_instance, normalize, total_cost, validate_assignment
from .oracle import brute_force
from .solvers import GeneticConfig, IterativeConfig, solve_genetic, solve_iterative
from .state_engine import DEFAULT_TAU, SolveTrace, solve_full

log = logging.getLogger("tnsched")

METHODS = ("full", "iterative", "genetic", "combined", "oracle")
EXIT_OK, EXIT_INPUT, EXIT_NO_SOLUTION = 0, 1, 2


class SolveTimeout(Exception):
    pass


@contextlib.contextmanager
def time_limit(seconds: float | None):
    if not seconds or not hasattr(signal, "SIGALRM"):
        yield
        return

    def _raise(signum, frame):
        raise SolveTimeout(f"timed out after {seconds} s")

    previous = signal.signal(signal.SIGALRM, _raise)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous)


# --------------------------------------------------------------------------
# configuration


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInstanceError(f"config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInstanceError(f"config {path}: expected a JSON object")
    return doc


def build_configs(args) -> tuple[IterativeConfig, GeneticConfig]:
    doc = _load_config(getattr(args, "config", None))
    it = dict(doc.get("iterative", {}))
    ge = dict(doc.get("genetic", {}))
    overrides_it = {"max_iterations": args.max_iterations, "tau": args.tau}
    overrides_ge = {
        "population": args.population,
        "active_tasks_per_machine": args.chromosome_size,
        "rules_per_individual": args.rules_per_individual,
        "mutations_per_child": args.mutations,
        "survival_ratio": args.survival_ratio,
        "max_generations": args.max_generations,
        "seed": args.seed,
        "tau": args.tau,
    }
    it.update({k: v for k, v in overrides_it.items() if v is not None})
    ge.update({k: v for k, v in overrides_ge.items() if v is not None})
    try:
        return IterativeConfig.from_dict(it), GeneticConfig.from_dict(ge)
    except (TypeError, ValueError) as exc:
        raise InvalidInstanceError(f"bad solver configuration: {exc}") from exc


# --------------------------------------------------------------------------
# solving


def run_method(instance: Instance, method: str, it_cfg: IterativeConfig, ge_cfg: GeneticConfig,
               memory_cap_bytes: int | None = None, on_generation=None) -> dict:
    """Run one solver and return the result document (without timing)."""
    norm = normalize(instance)
    stats: dict = {}
    ranked = None
    if method == "full":
        trace = SolveTrace()
        x = solve_full(norm, it_cfg.tau, memory_cap_bytes, trace)
        stats = {"contractions": trace.contractions, "max_boundary": trace.max_boundary}
    elif method == "iterative":
        res = solve_iterative(instance, it_cfg, memory_cap_bytes)
        x = res.assignment
        stats = {"iterations": res.iterations, "active_rules": len(res.active_rules),
                 "max_boundary": res.max_boundary}
    elif method in ("genetic", "combined"):
        res = solve_genetic(instance, ge_cfg, "full" if method == "genetic" else "iterative",
                            it_cfg, memory_cap_bytes, on_generation)
        stats = {"generations": res.generations, "generation_of_best": res.generation_of_best,
                 "evaluations": res.evaluations}
        if not res.ranked:
            raise NoSolutionFound(f"no globally feasible individual in {res.generations} generations")
        x = res.ranked[0][0]
        ranked = [{"assignment": list(a), "cost": c} for a, c in res.ranked[:10]]
    elif method == "oracle":
        rep = brute_force(instance)
        if rep.optimum is None:
            raise InfeasibleError("no assignment satisfies every rule")
        x = rep.optimum
        stats = {"optima_count": rep.optima_count,
                 "runner_up_gap": None if math.isinf(rep.runner_up_gap) else rep.runner_up_gap}
    else:
        raise ValueError(f"unknown method {method!r}")
    violated = check_rules(x, instance.rules)
    doc = {
        "method": method,
        "assignment": list(x),
        "raw_cost": total_cost(instance, x),
        "time_cost": cost(instance, x),
        "normalized_cost": norm.scaled_cost_original(x),
        "feasible": not violated,
        "violated_rules": violated,
        "stats": stats,
    }
    if ranked is not None:
        doc["ranked"] = ranked
    return doc


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def cmd_solve(args) -> int:
    try:
        instance = load_instance(args.instance)
        it_cfg, ge_cfg = build_configs(args)
    except (OSError, InvalidInstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    cap = int(args.memory_cap_mb * 2**20) if args.memory_cap_mb else None
    stats_file = open(args.stats, "w") if args.stats else None

    def on_generation(record):
        line = json.dumps(record, sort_keys=True)
        if stats_file:
            stats_file.write(line + "\n")
        log.info("generation %s", line)

    start = time.perf_counter()
    try:
        with time_limit(args.timeout_s):
            doc = run_method(instance, args.method, it_cfg, ge_cfg, cap, on_generation)
        code = EXIT_OK if doc["feasible"] else EXIT_NO_SOLUTION
    except (NoSolutionFound, InfeasibleError, MemoryCapExceeded, SolveTimeout, OracleSizeError) as exc:
        doc = {"method": args.method, "assignment": None, "feasible": False,
               "error": type(exc).__name__, "message": str(exc)}
        code = EXIT_NO_SOLUTION
    finally:
        if stats_file:
            stats_file.close()
    if args.timing:
        doc["wall_time_s"] = time.perf_counter() - start
    _emit(_dumps(doc), args.output)
    return code


def cmd_generate(args) -> int:
    try:
        lo, _, hi = args.conditions.partition("-")
        spec = GenSpec(args.machines, args.tasks, args.rules, (int(lo), int(hi or lo)), args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        instance = generate(spec)
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    _emit(dump_instance(instance), args.output)
    print(
        f"generated {spec.machines} machines x {spec.tasks_per_machine} tasks, "
        f"{len(instance.rules)} rules (seed {spec.seed})",
        file=sys.stderr,
    )
    return EXIT_OK


def _read_assignment(text_or_path: str):
    path = Path(text_or_path)
    if path.exists():
        doc = json.loads(path.read_text())
        if isinstance(doc, dict):
            doc = doc.get("assignment")
        return doc
    return [int(t) for t in text_or_path.replace(" ", "").split(",") if t]


def cmd_verify(args) -> int:
    try:
        instance = load_instance(args.instance)
        raw = _read_assignment(args.assignment)
        if not isinstance(raw, list):
            raise InvalidAssignmentError("assignment must be a list of task indices")
        x = validate_assignment(instance, raw)
    except (OSError, ValueError, InvalidInstanceError, InvalidAssignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    violated = check_rules(x, instance.rules)
    doc = {
        "assignment": list(x),
        "raw_cost": total_cost(instance, x),
        "time_cost": cost(instance, x),
        "feasible": not violated,
        "violated_rules": violated,
    }
    _emit(_dumps(doc), args.output)
    return EXIT_OK if not violated else EXIT_NO_SOLUTION


# --------------------------------------------------------------------------
# benchmarking

BENCH_COLUMNS = [
    "suite", "case", "seed", "machines", "tasks", "rules", "method", "status", "feasible",
    "cost", "oracle_cost", "gap", "iterations", "generations", "generations_to_best",
    "max_boundary", "time_s",
]

SUITES = {
    # name: (machine choices, task choices, rule range, conditions per rule, default methods)
    "small": ((3, 4, 5), (2, 3, 4), (1, 6), (1, 2), ("full", "iterative")),
    "paper-iterative": ((10,), (10,), (30, 30), (1, 2), ("iterative",)),
    "paper-genetic": ((10,), (10,), (1000, 1000), (2, 3), ("genetic",)),
    "empty": ((), (), (0, 0), (1, 2), ()),
}


@dataclass(frozen=True)
class BenchCase:
    suite: str
    case: int
    seed: int
    machines: int
    tasks: int
    rules: int
    conditions: tuple[int, int]
    method: str
    timeout_s: float | None
    memory_cap_bytes: int | None
    oracle_limit: int = 10**6


def bench_cases(suite: str, cases: int, seed: int, methods, timeout_s, cap) -> list[BenchCase]:
    import numpy as np

    machine_opts, task_opts, (rlo, rhi), conds, default_methods = SUITES[suite]
    methods = tuple(methods) if methods else default_methods
    if not machine_opts:
        return []
    rng = np.random.default_rng(seed)
    out = []
    for k in range(cases):
        m = int(rng.choice(machine_opts))
        p = int(rng.choice(task_opts))
        r = int(rng.integers(rlo, rhi + 1))
        case_seed = int(rng.integers(2**31))
        for method in methods:
            out.append(BenchCase(suite, k, case_seed, m, p, r, conds, method, timeout_s, cap))
    return out


def run_case(case: BenchCase) -> dict:
    row = {c: "" for c in BENCH_COLUMNS}
    row.update(suite=case.suite, case=case.case, seed=case.seed, machines=case.machines,
               tasks=case.tasks, rules=case.rules, method=case.method)
    start = time.perf_counter()
    try:
        instance = generate(GenSpec(case.machines, case.tasks, case.rules, case.conditions, case.seed))
        with time_limit(case.timeout_s):
            doc = run_method(instance, case.method, IterativeConfig(),
                             GeneticConfig(seed=case.seed), case.memory_cap_bytes)
        row.update(status="ok", feasible=doc["feasible"], cost=doc["raw_cost"])
        st = doc["stats"]
        row.update(iterations=st.get("iterations", ""), generations=st.get("generations", ""),
                   generations_to_best=st.get("generation_of_best", "") or "",
                   max_boundary=st.get("max_boundary", ""))
        if math.prod([case.tasks] * case.machines) <= case.oracle_limit:
            rep = brute_force(instance)
            if rep.optimum is not None:
                row["oracle_cost"] = rep.optimal_cost
                row["gap"] = (doc["raw_cost"] - rep.optimal_cost) * normalize(instance).slope
    except MemoryCapExceeded:
        row.update(status="memory_cap", feasible=False)
    except SolveTimeout:
        row.update(status="timeout", feasible=False)
    except (NoSolutionFound, InfeasibleError):
        row.update(status="no_solution", feasible=False)
    except GenerationError:
        row.update(status="generation_error", feasible=False)
    except Exception as exc:  # a failing case must not abort the suite
        row.update(status=f"error:{type(exc).__name__}", feasible=False)
    row["time_s"] = round(time.perf_counter() - start, 4)
    return row


def bench_rows(cases: list[BenchCase], workers: int = 1) -> list[dict]:
    if workers > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_case, cases))
    return [run_case(c) for c in cases]


def format_csv(rows: list[dict], timing: bool) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        if not timing:
            row = {**row, "time_s": ""}
        writer.writerow(row)
    return buf.getvalue()


def cmd_bench(args) -> int:
    methods = [m for m in args.methods.split(",") if m] if args.methods else None
    if methods and any(m not in METHODS for m in methods):
        print(f"error: methods must be among {METHODS}", file=sys.stderr)
        return EXIT_INPUT
    cap = int(args.memory_cap_mb * 2**20) if args.memory_cap_mb else None
    cases = bench_cases(args.suite, args.cases, args.seed, methods, args.timeout_s, cap)
    rows = bench_rows(cases, args.workers)
    _emit(format_csv(rows, args.timing), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="full")
    p.add_argument("--config", help="JSON file with optional 'iterative' and 'genetic' objects")
    p.add_argument("--tau", type=float, default=None, help=f"damping constant (default {DEFAULT_TAU})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--chromosome-size", type=int, default=None)
    p.add_argument("--rules-per-individual", type=int, default=None)
    p.add_argument("--mutations", type=int, default=None)
    p.add_argument("--survival-ratio", type=float, default=None)
    p.add_argument("--max-generations", type=int, default=None)
    p.add_argument("--memory-cap-mb", type=float, default=None)
    p.add_argument("--timeout-s", type=float, default=None)
    p.add_argument("--stats", help="write per-generation records (JSON lines) here")
    p.add_argument("--timing", action="store_true", help="include wall time in the output")
    p.add_argument("--output", "-o")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnsched", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve an instance file")
    p.add_argument("instance")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", parents=[common], help="write a random instance")
    p.add_argument("-m", "--machines", type=int, required=True)
    p.add_argument("-p", "--tasks", type=int, required=True)
    p.add_argument("-r", "--rules", type=int, required=True)
    p.add_argument("--conditions", default="1-2", help="conditions per rule, e.g. 1-2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", parents=[common], help="check an assignment against an instance")
    p.add_argument("instance")
    p.add_argument("assignment", help="JSON file (list or result document) or comma list")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="run a seeded benchmark suite, CSV out")
    p.add_argument("--suite", choices=sorted(SUITES), default="small")
    p.add_argument("--methods", help="comma list, default depends on the suite")
    p.add_argument("--cases", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout-s", type=float, default=60.0)
    p.add_argument("--memory-cap-mb", type=float, default=2048.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill the time_s column")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
