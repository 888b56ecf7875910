"""Command-line interface for async-dual-qp."""

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Iterator, TextIO

import numpy as np

from . import report
from .analysis import (
    STABILITY_MARGIN,
    Scheme,
    enumerated_ms_radius,
    ms_stability,
    rate_envelope,
)
from .errors import ConvergenceError, DualQPError, ModelError
from .executor import DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE, ExecutorConfig, benchmark, run
from .problem_file import (
    DelaySpec,
    ProblemFile,
    problem_hash,
    read_delay,
    read_problem,
    write_problem,
)
from .qp import SeparableQP, coupling_matrix, generate_problem, tune_alpha, with_alpha
from .simulator import SimConfig, simulate_model, simulate_per_node
from .switched import DelayModel, initial_state, switched_system

logger = logging.getLogger(__name__)

EXIT_NOT_CONVERGED = 2
EXIT_UNSTABLE = 3
EXIT_INPUT_ERROR = 4
MAX_ENUMERATE = 3
AUTO = "auto"

Handler = Callable[[argparse.Namespace], int]


def parse_alpha(value: str) -> float | str:
    """``auto`` or a positive step size."""
    if value.lower() == AUTO:
        return AUTO
    alpha = float(value)
    if not alpha > 0:
        raise argparse.ArgumentTypeError(f"alpha must be positive or 'auto', got {value}")
    return alpha


def parse_floats(value: str) -> list[float]:
    """Comma-separated reals like '2' or '1.0,0.5'."""
    return [float(item) for item in value.split(",")]


def parse_ints(value: str) -> list[int]:
    """Comma-separated integers like '1,2,4,8'."""
    return [int(item) for item in value.split(",")]


def parse_schemes(value: str) -> list[Scheme]:
    """Comma-separated scheme names."""
    try:
        return [Scheme(item.strip()) for item in value.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


@contextlib.contextmanager
def _output(path: Path | None) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
    else:
        with path.open("w", newline="") as handle:
            yield handle


def _load_problem(args: argparse.Namespace) -> tuple[ProblemFile, SeparableQP]:
    pf = read_problem(args.problem)
    qp = pf.qp
    if args.alpha is not None:
        alpha = tune_alpha(coupling_matrix(qp)) if args.alpha == AUTO else args.alpha
        logger.info("step size overridden: %.6g", alpha)
        qp = with_alpha(qp, alpha)
    return pf, qp


def _delay_spec(args: argparse.Namespace, pf: ProblemFile) -> DelaySpec:
    if args.delay is not None:
        spec = read_delay(args.delay)
    elif args.geometric is not None:
        q = args.q if args.q is not None else pf.q
        spec = DelaySpec.from_model(DelayModel.geometric(pf.qp.nodes, q, args.geometric))
    elif pf.delay is not None:
        spec = pf.delay
    else:
        raise ModelError("no delay model: pass --delay or --geometric, or embed one with gen")
    if args.q is not None and args.q != spec.q:
        raise ModelError(f"--q {args.q} disagrees with the delay model's q={spec.q}")
    return spec


def _y0(args: argparse.Namespace, m: int) -> np.ndarray:
    values = np.array(args.y0, dtype=np.float64)
    if values.size == 1:
        return np.full(m, values[0])
    if values.size != m:
        raise ModelError(f"--y0 needs 1 or {m} values, got {values.size}")
    return values


def cmd_gen(args: argparse.Namespace) -> int:
    """Generate a random problem and write it as a ProblemFile."""
    alpha = None if args.alpha == AUTO else args.alpha
    qp = generate_problem(
        args.nodes,
        args.dim,
        args.constraints,
        args.seed,
        alpha,
        block_constraints=args.block_constraints,
        target_rho=args.target_rho,
    )
    delay = read_delay(args.delay) if args.delay is not None else None
    if delay is not None:
        delay.model(qp.nodes)
        if delay.q != args.q:
            raise ModelError(f"--q {args.q} disagrees with the delay file's q={delay.q}")
    pf = ProblemFile(qp=qp, q=args.q, delay=delay)
    write_problem(args.out, pf)
    logger.info("wrote %s (sha256 %s)", args.out, problem_hash(pf))
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    """Mean-square verdict, summary and per-scheme rate envelopes."""
    pf, qp = _load_problem(args)
    spec = _delay_spec(args, pf)
    pi = spec.mode_probabilities(qp.nodes)
    system = switched_system(qp, pi)
    stability = ms_stability(system)
    meta = report.metadata(
        qp.seed, problem_hash(pf), command="analyze", q=spec.q, alpha=qp.alpha,
        ms_convergent=stability.is_ms_convergent,
        ms_spectral_radius=stability.ms_spectral_radius,
    )
    summary = report.stability_rows(stability, pi, qp.m)
    if args.enumerate:
        model = spec.model(qp.nodes)
        if model is None:
            raise ModelError("--enumerate needs per-node delay distributions")
        if qp.nodes > MAX_ENUMERATE or spec.q > MAX_ENUMERATE:
            raise ModelError(f"--enumerate supports N and q up to {MAX_ENUMERATE}")
        oracle = enumerated_ms_radius(qp, model)
        summary.append(("enumerated_ms_radius", oracle))
        summary.append(("enumerated_ms_convergent", oracle < 1.0 - STABILITY_MARGIN))
        summary.append(("raw_ms_radius", enumerated_ms_radius(qp, model, aggregate=False)))
    report.write_table(sys.stdout, meta, ("key", "value"), summary)

    Y0 = initial_state(_y0(args, qp.m), spec.q)
    envelopes = [rate_envelope(scheme, system, Y0, args.k_max) for scheme in Scheme]
    with _output(args.out) as out:
        report.write_table(out, {**meta, "k_max": str(args.k_max)},
                           report.ENVELOPE_HEADER, report.envelope_rows(envelopes))
    if args.require_stable and not stability.is_ms_convergent:
        print(f"Error: not mean-square convergent (rho={stability.ms_spectral_radius:.6g})",
              file=sys.stderr)
        return EXIT_UNSTABLE
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    """Monte Carlo ensemble of dual trajectories."""
    pf, qp = _load_problem(args)
    spec = _delay_spec(args, pf)
    cfg = SimConfig(
        runs=args.runs, k_max=args.k_max, seed=args.seed, y0=_y0(args, qp.m),
        record_every=args.record_every,
    )
    if args.per_node:
        model = spec.model(qp.nodes)
        if model is None:
            raise ModelError("--per-node needs per-node delay distributions")
        ensemble = simulate_per_node(qp, model, cfg, aggregate=not args.raw_ages)
        kind = "per_node_raw" if args.raw_ages else "per_node"
    else:
        ensemble = simulate_model(switched_system(qp, spec.mode_probabilities(qp.nodes)), cfg)
        kind = "model"
    meta = report.metadata(
        args.seed, problem_hash(pf), command="simulate", simulation=kind, runs=args.runs,
        k_max=args.k_max, q=spec.q, alpha=qp.alpha,
    )
    with _output(args.out) as out:
        report.write_table(out, meta, report.ensemble_header(ensemble),
                           report.ensemble_rows(ensemble))
    if args.runs_out is not None:
        with _output(args.runs_out) as out:
            report.write_table(out, meta, report.RUNS_HEADER, report.ensemble_run_rows(ensemble))
    return 0


def _executor_config(args: argparse.Namespace, pf: ProblemFile, **overrides: object) -> ExecutorConfig:
    fields: dict[str, object] = {
        "q": args.q if args.q is not None else pf.q,
        "tolerance": args.tol,
        "max_iters": args.max_iters,
        "seed": args.seed,
        "jitter": args.jitter,
        "clamp": args.clamp,
    }
    fields.update(overrides)
    return ExecutorConfig(**fields)  # type: ignore[arg-type]


def cmd_solve(args: argparse.Namespace) -> int:
    """One executor run."""
    pf, qp = _load_problem(args)
    cfg = _executor_config(args, pf, scheme=args.scheme, threads=args.threads,
                           trace=args.trace is not None, y0=_y0(args, qp.m))
    result = run(qp, cfg)
    meta = report.metadata(args.seed, problem_hash(pf), command="solve")
    with _output(args.out) as out:
        report.write_table(out, meta, ("key", "value"), report.run_rows(result))
    if args.trace is not None:
        with _output(args.trace) as out:
            report.write_table(out, meta, report.TRACE_HEADER, report.trace_rows(result))
    if not result.converged:
        print(f"Error: {result.scheme.value} did not converge in {result.iterations} iterations",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    """Time every scheme and thread count."""
    pf, qp = _load_problem(args)
    base = _executor_config(args, pf, threads=1)
    records = benchmark(qp, args.schemes, args.thread_counts, args.repeats, base)
    meta = report.metadata(args.seed, problem_hash(pf), command="bench", q=base.q,
                           repeats=args.repeats)
    with _output(args.out) as out:
        report.write_table(out, meta, report.benchmark_header(base.q),
                           report.benchmark_rows(records))
    if not all(rec.report.converged for rec in records):
        print("Error: one or more benchmark runs did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return 0


def _add_alpha(parser: argparse.ArgumentParser, default_auto: bool = False) -> None:
    parser.add_argument(
        "--alpha",
        type=parse_alpha,
        default=AUTO if default_auto else None,
        help="Dual step size, or 'auto' to tune rho(I - R) to the target",
    )


def _add_problem(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--problem", required=True, type=Path, help="ProblemFile to read")
    _add_alpha(parser)


def _add_delay(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--delay", type=Path, default=None, help="Delay file to use")
    parser.add_argument(
        "--geometric",
        type=float,
        default=None,
        help="Use P(age = j) proportional to exp(-RATE*j) for every node",
    )
    parser.add_argument("--q", type=int, default=None, help="Maximum delay (buffer length)")


def _add_y0(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--y0",
        type=parse_floats,
        default=[0.0],
        help="Initial dual value: one number for every entry, or m comma-separated values",
    )


def _add_executor(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--q", type=int, default=None, help="Staleness bound (default: from problem)")
    parser.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE,
                        help="Stop when ||y^k - y^(k-1)||_inf <= TOL")
    parser.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS,
                        help="Iteration cap")
    parser.add_argument("--seed", type=int, default=0, help="Seed for worker jitter streams")
    parser.add_argument("--jitter", type=float, default=0.0,
                        help="Mean of an exponential sleep injected after each worker update")
    parser.add_argument("--clamp", action="store_true", help="Project the dual onto y >= 0")
    parser.add_argument("--out", type=Path, default=None, help="CSV output (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    """The full argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog="async-dual-qp",
        description="Dual decomposition of separable QPs under synchronous and asynchronous updates",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Log INFO (-v) or DEBUG (-vv) to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers: dict[str, Handler] = {}

    gen = sub.add_parser("gen", help="Generate a random problem instance")
    gen.add_argument("--nodes", type=int, required=True, help="Number of nodes N")
    gen.add_argument("--dim", type=int, required=True, help="Primal variables per node")
    gen.add_argument("--constraints", type=int, default=1, help="Coupling constraints m")
    gen.add_argument("--block-constraints", action="store_true",
                     help="One constraint row per node (m = N)")
    gen.add_argument("--q", type=int, default=2, help="Maximum delay stored with the problem")
    gen.add_argument("--target-rho", type=float, default=0.7,
                     help="rho(I - R) aimed for by --alpha auto")
    gen.add_argument("--seed", type=int, default=0, help="Generator seed")
    gen.add_argument("--delay", type=Path, default=None, help="Delay file to embed")
    gen.add_argument("--out", type=Path, required=True, help="ProblemFile to write")
    _add_alpha(gen, default_auto=True)
    handlers["gen"] = cmd_gen

    analyze = sub.add_parser("analyze", help="Mean-square test and rate envelopes")
    _add_problem(analyze)
    _add_delay(analyze)
    _add_y0(analyze)
    analyze.add_argument("--k-max", type=int, default=200, help="Envelope horizon")
    analyze.add_argument("--enumerate", action="store_true",
                         help=f"Also test the full joint-mode system (N, q <= {MAX_ENUMERATE})")
    analyze.add_argument("--require-stable", action="store_true",
                         help=f"Exit {EXIT_UNSTABLE} unless mean-square convergent")
    analyze.add_argument("--out", type=Path, default=None,
                         help="Envelope CSV (default: stdout)")
    handlers["analyze"] = cmd_analyze

    simulate = sub.add_parser("simulate", help="Monte Carlo trajectory ensemble")
    _add_problem(simulate)
    _add_delay(simulate)
    _add_y0(simulate)
    simulate.add_argument("--runs", type=int, default=100, help="Number of trajectories")
    simulate.add_argument("--k-max", type=int, default=200, help="Steps per trajectory")
    simulate.add_argument("--record-every", type=int, default=1, help="Recording stride")
    simulate.add_argument("--seed", type=int, default=0, help="Master seed")
    simulate.add_argument("--per-node", action="store_true",
                          help="Sample each node's age instead of the reduced mode")
    simulate.add_argument("--raw-ages", action="store_true",
                          help="With --per-node, read every node at its own age")
    simulate.add_argument("--out", type=Path, default=None, help="Ensemble CSV (default: stdout)")
    simulate.add_argument("--runs-out", type=Path, default=None,
                          help="Also write every run in long format")
    handlers["simulate"] = cmd_simulate

    solve = sub.add_parser("solve", help="Run the parallel executor once")
    _add_problem(solve)
    _add_executor(solve)
    _add_y0(solve)
    solve.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.SYNC.value,
                       help="Update scheme")
    solve.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="Worker threads (default: CPU count)")
    solve.add_argument("--trace", type=Path, default=None, help="Write the residual per iteration")
    handlers["solve"] = cmd_solve

    bench = sub.add_parser("bench", help="Benchmark schemes and thread counts")
    _add_problem(bench)
    _add_executor(bench)
    bench.add_argument("--schemes", type=parse_schemes,
                       default=list(Scheme), help="Comma-separated schemes")
    bench.add_argument("--threads", dest="thread_counts", type=parse_ints,
                       default=[os.cpu_count() or 1], help="Comma-separated thread counts")
    bench.add_argument("--repeats", type=int, default=3, help="Runs per cell")
    handlers["bench"] = cmd_bench

    parser.set_defaults(handlers=handlers)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main() -> None:
    """Run the async-dual-qp CLI."""
    parser = build_parser()
    try:
        args = parser.parse_args()
    except SystemExit as e:
        sys.exit(EXIT_INPUT_ERROR if e.code != 0 else 0)

    _configure_logging(args.verbose)
    try:
        code = args.handlers[args.command](args)
    except ConvergenceError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_NOT_CONVERGED)
    except OSError as e:
        print(f"Error reading or writing files: {e}", file=sys.stderr)
        sys.exit(EXIT_INPUT_ERROR)
    except DualQPError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_INPUT_ERROR)
    sys.exit(code)
