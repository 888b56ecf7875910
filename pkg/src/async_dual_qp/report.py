"""CSV emission with ``#``-prefixed metadata headers.

Every table starts with ``# key=value`` lines (tool, version, seed, problem
hash, then command-specific extras) followed by a one-line column header.
Floats are written with ``repr`` so identical inputs give identical bytes.
"""

import csv
from typing import Any, Iterable, Sequence, TextIO

import numpy as np

from . import __version__
from .analysis import RateEnvelope, StabilityReport
from .executor import BenchmarkRecord, RunReport
from .simulator import TrajectoryEnsemble

TOOL = "async-dual-qp"

Row = Sequence[Any]


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def metadata(seed: int | None, problem_sha256: str, **extra: Any) -> dict[str, str]:
    """Header fields in output order."""
    fields = {
        "tool": TOOL,
        "version": __version__,
        "seed": "none" if seed is None else str(seed),
        "problem_sha256": problem_sha256,
    }
    fields.update({key: _cell(value) for key, value in extra.items()})
    return fields


def write_table(out: TextIO, meta: dict[str, str], header: Row, rows: Iterable[Row]) -> None:
    """Write metadata lines, the column header and the rows."""
    for key, value in meta.items():
        out.write(f"# {key}={value}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([_cell(value) for value in row] for row in rows)


def stability_rows(report: StabilityReport, pi: np.ndarray, m: int) -> list[Row]:
    """``key,value`` summary of a mean-square analysis."""
    rows: list[Row] = [
        ("ms_convergent", report.is_ms_convergent),
        ("ms_spectral_radius", report.ms_spectral_radius),
        ("lambda_spectral_radius", report.lambda_spectral_radius),
    ]
    rows.extend((f"pi_{r}", p) for r, p in enumerate(pi))
    if report.fixed_point is not None:
        rows.extend((f"y_star_{j}", v) for j, v in enumerate(report.fixed_point[:m]))
        rows.append(("fixed_point_residual", report.fixed_point_residual))
    rows.extend(("note", note) for note in report.notes)
    return rows


ENVELOPE_HEADER = ("scheme", "k", "bound", "normalized", "update_instant")


def envelope_rows(envelopes: Sequence[RateEnvelope]) -> list[Row]:
    """Long-format envelope table, one row per scheme and step."""
    rows: list[Row] = []
    for env in envelopes:
        instants = {k for k, _ in env.raw_points}
        for (k, bound), (_, normalized) in zip(env.steps, env.normalized()):
            rows.append((env.scheme.value, k, bound, normalized, k in instants))
    return rows


def ensemble_header(ens: TrajectoryEnsemble) -> list[str]:
    """``k`` then ``mean_j`` and ``std_j`` for every recorded component."""
    width = ens.mean.shape[1]
    return ["k", *(f"mean_{j}" for j in range(width)), *(f"std_{j}" for j in range(width))]


def ensemble_rows(ens: TrajectoryEnsemble) -> list[Row]:
    """Per-step mean and population standard deviation."""
    return [
        (int(k), *mean, *std)
        for k, mean, std in zip(ens.steps, ens.mean, ens.std)
    ]


RUNS_HEADER = ("run", "k", "component", "value")


def ensemble_run_rows(ens: TrajectoryEnsemble) -> Iterable[Row]:
    """Every recorded value of every run, long format."""
    for run, trajectory in enumerate(ens.trajectories):
        for k, values in zip(ens.steps, trajectory):
            for j, value in enumerate(values):
                yield run, int(k), j, value


def run_rows(report: RunReport) -> list[Row]:
    """``key,value`` summary of one executor run."""
    rows: list[Row] = [
        ("scheme", report.scheme.value),
        ("threads", report.threads),
        ("q", report.q),
        ("iterations", report.iterations),
        ("wall_time", report.wall_time),
        ("final_residual", report.final_residual),
        ("converged", report.converged),
        ("tolerance", report.tolerance),
    ]
    rows.extend((f"y_{j}", v) for j, v in enumerate(report.y))
    rows.extend((f"age_{r}", n) for r, n in enumerate(report.observed_age_histogram))
    return rows


TRACE_HEADER = ("k", "residual")


def trace_rows(report: RunReport) -> list[Row]:
    """``‖yᵏ − yᵏ⁻¹‖∞`` for k = 1 … iterations."""
    return [(k, residual) for k, residual in enumerate(report.residual_trace, start=1)]


def benchmark_header(q: int) -> list[str]:
    """Columns of the benchmark table."""
    return [
        "scheme", "threads", "repeat", "iterations", "wall_time", "median_wall_time",
        "speedup", "final_residual", "converged", *(f"age_{r}" for r in range(q)),
    ]


def benchmark_rows(records: Sequence[BenchmarkRecord]) -> list[Row]:
    """One row per repeat, fastest cells first."""
    ordered = sorted(records, key=lambda rec: rec.median_wall_time)
    return [
        (
            rec.report.scheme.value,
            rec.report.threads,
            rec.repeat,
            rec.report.iterations,
            rec.report.wall_time,
            rec.median_wall_time,
            rec.speedup,
            rec.report.final_residual,
            rec.report.converged,
            *rec.report.observed_age_histogram,
        )
        for rec in ordered
    ]
