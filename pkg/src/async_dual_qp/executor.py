"""Shared-memory parallel dual decomposition under the three update schemes.

A single coordinator owns the dual variable. Worker threads each own a
contiguous chunk of nodes; they read published dual snapshots and publish
their nodes' contributions ``A_i x_i`` tagged with the iteration index of the
snapshot they used. All cross-thread traffic goes through ``StalenessBuffer``.

- ``sync``: the coordinator waits for every node's contribution computed
  from the current iterate (a barrier per iteration).
- ``det_async``: the coordinator uses contributions computed from the
  iterate exactly ``q − 1`` steps back (the initial iterate while warming up).
- ``sto_async``: the coordinator uses the freshest contribution available,
  stalling only when it would be older than ``q − 1`` steps.
"""

# pylint: disable=invalid-name

import dataclasses
import logging
import statistics
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import Scheme
from .errors import ModelError
from .qp import SeparableQP, Vector, as_vector
from .switched import DelayModel

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-5
DEFAULT_MAX_ITERS = 10_000


@dataclass(frozen=True, eq=False)
class ExecutorConfig:
    """Run parameters for one executor invocation."""

    scheme: Scheme = Scheme.SYNC
    threads: int = 1
    q: int = 2
    tolerance: float = DEFAULT_TOLERANCE
    max_iters: int = DEFAULT_MAX_ITERS
    seed: int = 0
    jitter: float = 0.0
    clamp: bool = False
    trace: bool = False
    y0: Vector | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.threads < 1:
            raise ModelError(f"threads must be at least 1, got {self.threads}")
        if self.q < 1:
            raise ModelError(f"q must be at least 1, got {self.q}")
        if not self.tolerance > 0:
            raise ModelError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iters < 1:
            raise ModelError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.jitter < 0:
            raise ModelError(f"jitter must be nonnegative, got {self.jitter}")
        if self.y0 is not None:
            object.__setattr__(self, "y0", as_vector(self.y0))


@dataclass(frozen=True, eq=False)
class RunReport:
    """Outcome of one executor run."""

    scheme: Scheme
    threads: int
    q: int
    iterations: int
    wall_time: float
    final_residual: float
    converged: bool
    tolerance: float
    y: Vector
    node_age_counts: np.ndarray
    residual_trace: list[float] = field(default_factory=list)

    @property
    def observed_age_histogram(self) -> np.ndarray:
        """Reads per age 0 … q−1, summed over nodes; totals N·iterations."""
        return self.node_age_counts.sum(axis=0)

    def delay_model(self) -> DelayModel:
        """The observed per-node age frequencies as a DelayModel."""
        if self.iterations == 0:
            raise ModelError("no iterations were run, so no ages were observed")
        counts = self.node_age_counts.astype(np.float64)
        return DelayModel(probs=counts / counts.sum(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class BenchmarkRecord:
    """One repeat of one (scheme, threads) cell."""

    report: RunReport
    repeat: int
    median_wall_time: float
    speedup: float


class ChunkKernel:
    """Batched primal updates for the contiguous node range ``[start, stop)``.

    Blocks are grouped by dimension and solved with stacked ``np.linalg.solve``.
    """

    def __init__(self, qp: SeparableQP, start: int, stop: int) -> None:
        self.start = start
        self.stop = stop
        self.m = qp.m
        by_dim: dict[int, list[int]] = {}
        for i in range(start, stop):
            by_dim.setdefault(qp.blocks[i].dim, []).append(i)
        self._groups = []
        for members in by_dim.values():
            blocks = [qp.blocks[i] for i in members]
            self._groups.append((
                np.array(members) - start,
                np.stack([blk.Q for blk in blocks]),
                np.stack([blk.A for blk in blocks]),
                np.stack([blk.c for blk in blocks]),
            ))

    def contributions(self, y: Vector) -> np.ndarray:
        """``A_i x_i`` for every node in the chunk, with ``x_i = −Q_i⁻¹(A_iᵀy + c_i)``."""
        out = np.empty((self.stop - self.start, self.m))
        for rows, Q, A, c in self._groups:
            rhs = np.einsum("gmn,m->gn", A, y) + c
            x = -np.linalg.solve(Q, rhs[..., None])[..., 0]
            out[rows] = np.einsum("gmn,gn->gm", A, x)
        return out


class StalenessBuffer:
    """Published dual snapshots and per-chunk rings of the last q contributions.

    Every record is stored and read as one ``(index, contributions)`` tuple
    under a single condition variable.
    """

    def __init__(self, chunks: int, q: int) -> None:
        self._cond = threading.Condition()
        self._records: list[deque[tuple[int, np.ndarray]]] = [
            deque(maxlen=q) for _ in range(chunks)
        ]
        self._duals: dict[int, Vector] = {}
        self._latest = -1
        self._keep = q + 1
        self._stopped = False
        self._error: BaseException | None = None

    def publish_dual(self, index: int, y: Vector) -> None:
        """Make ``y^index`` visible to the workers."""
        with self._cond:
            self._duals[index] = y
            self._latest = index
            for old in [i for i in self._duals if i <= index - self._keep]:
                del self._duals[old]
            self._cond.notify_all()

    def next_dual(self, after: int, sequential: bool) -> tuple[int, Vector] | None:
        """Block until a dual newer than ``after`` exists; None once stopped.

        Sequential readers get ``after + 1``; others get the newest snapshot.
        """
        with self._cond:
            self._cond.wait_for(lambda: self._stopped or self._latest > after)
            if self._stopped:
                return None
            index = after + 1 if sequential else self._latest
            return index, self._duals[index]

    def publish(self, chunk: int, index: int, contributions: np.ndarray) -> None:
        """Store a chunk's contributions computed from ``y^index``."""
        with self._cond:
            self._records[chunk].append((index, contributions))
            self._cond.notify_all()

    def _pick(self, chunk: int, exact: int | None, oldest: int) -> tuple[int, np.ndarray] | None:
        ring = self._records[chunk]
        if exact is not None:
            for record in ring:
                if record[0] == exact:
                    return record
            return None
        if ring and ring[-1][0] >= oldest:
            return ring[-1]
        return None

    def collect(self, exact: int | None, oldest: int) -> list[tuple[int, np.ndarray]]:
        """One record per chunk: index ``exact`` if given, else the freshest ≥ ``oldest``.

        Waits until every chunk has a usable record.
        """
        chunks = range(len(self._records))
        with self._cond:
            self._cond.wait_for(lambda: self._error is not None or all(
                self._pick(chunk, exact, oldest) is not None for chunk in chunks
            ))
            if self._error is not None:
                raise self._error
            return [self._pick(chunk, exact, oldest) for chunk in chunks]  # type: ignore[misc]

    def fail(self, error: BaseException) -> None:
        """Record a worker failure and wake everyone."""
        with self._cond:
            self._error = error
            self._stopped = True
            self._cond.notify_all()

    def stop(self) -> None:
        """Tell workers to exit."""
        with self._cond:
            self._stopped = True
            self._cond.notify_all()


def _chunk_bounds(nodes: int, chunks: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, nodes, chunks + 1).round().astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(chunks)]


def _worker(
    buffer: StalenessBuffer,
    kernel: ChunkKernel,
    chunk: int,
    sequential: bool,
    rng: np.random.Generator,
    jitter: float,
) -> None:
    try:
        last = -1
        while True:
            snapshot = buffer.next_dual(last, sequential)
            if snapshot is None:
                return
            index, y = snapshot
            contributions = kernel.contributions(y)
            if jitter > 0:
                time.sleep(rng.exponential(jitter))
            buffer.publish(chunk, index, contributions)
            last = index
    except Exception as e:  # pylint: disable=broad-exception-caught
        logger.error("worker %d failed: %s", chunk, e)
        buffer.fail(e)


def _required_index(scheme: Scheme, k: int, q: int) -> tuple[int | None, int]:
    """``(exact, oldest)`` acceptable snapshot indices at iteration k."""
    oldest = max(0, k - q + 1)
    if scheme is Scheme.SYNC:
        return k, k
    if scheme is Scheme.DET_ASYNC:
        return oldest, oldest
    return None, oldest


Fetch = Callable[[int, Vector], list[tuple[int, int, int, np.ndarray]]]


def _coordinate(qp: SeparableQP, cfg: ExecutorConfig, fetch: Fetch,
                publish: Callable[[int, Vector], None]) -> RunReport:
    """Run the dual iteration, pulling ``(start, stop, index, contributions)`` per chunk."""
    y = cfg.y0 if cfg.y0 is not None else np.zeros(qp.m)
    if y.shape != (qp.m,):
        raise ModelError(f"y0 must have length {qp.m}, got {y.shape[0]}")
    counts = np.zeros((qp.nodes, cfg.q), dtype=np.int64)
    full = np.empty((qp.nodes, qp.m))
    trace: list[float] = []
    residual = float("inf")
    k = 0
    start_time = time.perf_counter()
    publish(0, y)
    while k < cfg.max_iters:
        for start, stop, index, contributions in fetch(k, y):
            full[start:stop] = contributions
            counts[start:stop, k - index] += 1
        y_next = y + qp.alpha * (full.sum(axis=0) - qp.b)
        if cfg.clamp:
            y_next = np.maximum(y_next, 0.0)
        residual = float(np.max(np.abs(y_next - y)))
        y = y_next
        k += 1
        publish(k, y)
        if cfg.trace:
            trace.append(residual)
        logger.debug("iteration %d residual %.3e", k, residual)
        if residual <= cfg.tolerance:
            break
    wall_time = time.perf_counter() - start_time
    converged = residual <= cfg.tolerance
    if not converged:
        logger.warning("%s did not converge in %d iterations (residual %.3e)",
                       cfg.scheme.value, k, residual)
    return RunReport(
        scheme=cfg.scheme,
        threads=cfg.threads,
        q=cfg.q,
        iterations=k,
        wall_time=wall_time,
        final_residual=residual,
        converged=converged,
        tolerance=cfg.tolerance,
        y=y,
        node_age_counts=counts,
        residual_trace=trace,
    )


def _run_serial(qp: SeparableQP, cfg: ExecutorConfig) -> RunReport:
    kernel = ChunkKernel(qp, 0, qp.nodes)
    history: dict[int, Vector] = {}

    def publish(index: int, y: Vector) -> None:
        history[index] = y
        history.pop(index - cfg.q - 1, None)

    def fetch(k: int, _y: Vector) -> list[tuple[int, int, int, np.ndarray]]:
        index = max(0, k - cfg.q + 1) if cfg.scheme is Scheme.DET_ASYNC else k
        return [(0, qp.nodes, index, kernel.contributions(history[index]))]

    return _coordinate(qp, cfg, fetch, publish)


def _run_threaded(qp: SeparableQP, cfg: ExecutorConfig) -> RunReport:
    bounds = _chunk_bounds(qp.nodes, min(cfg.threads, qp.nodes))
    buffer = StalenessBuffer(len(bounds), cfg.q)
    sequential = cfg.scheme is not Scheme.STO_ASYNC
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(len(bounds))]
    workers = [
        threading.Thread(
            target=_worker,
            args=(buffer, ChunkKernel(qp, start, stop), chunk, sequential, streams[chunk], cfg.jitter),
            name=f"dual-worker-{chunk}",
            daemon=True,
        )
        for chunk, (start, stop) in enumerate(bounds)
    ]

    def fetch(k: int, _y: Vector) -> list[tuple[int, int, int, np.ndarray]]:
        exact, oldest = _required_index(cfg.scheme, k, cfg.q)
        records = buffer.collect(exact, oldest)
        return [(start, stop, index, contributions)
                for (start, stop), (index, contributions) in zip(bounds, records)]

    for worker in workers:
        worker.start()
    try:
        return _coordinate(qp, cfg, fetch, buffer.publish_dual)
    finally:
        buffer.stop()
        for worker in workers:
            worker.join()


def run(qp: SeparableQP, cfg: ExecutorConfig) -> RunReport:
    """Solve ``qp`` with the configured scheme and thread count.

    With one thread the coordinator computes every primal update itself, so
    ``sync`` and ``sto_async`` reproduce the serial synchronous iteration and
    ``det_async`` follows its fixed ``q − 1`` delay schedule.
    """
    logger.info("running %s with %d thread(s), q=%d", cfg.scheme.value, cfg.threads, cfg.q)
    report = _run_serial(qp, cfg) if cfg.threads == 1 else _run_threaded(qp, cfg)
    logger.info("%s: %d iterations in %.4fs, residual %.3e",
                cfg.scheme.value, report.iterations, report.wall_time, report.final_residual)
    return report


def benchmark(
    qp: SeparableQP,
    schemes: Sequence[Scheme],
    thread_counts: Sequence[int],
    repeats: int,
    base: ExecutorConfig | None = None,
) -> list[BenchmarkRecord]:
    """Time every (scheme, threads) cell ``repeats`` times.

    Speedup is the median wall time of the serial synchronous reference
    divided by the cell's median wall time.
    """
    if not schemes or not thread_counts:
        raise ModelError("benchmark needs at least one scheme and one thread count")
    if repeats < 1:
        raise ModelError(f"repeats must be at least 1, got {repeats}")
    base = base or ExecutorConfig()
    reference = statistics.median(
        run(qp, dataclasses.replace(base, scheme=Scheme.SYNC, threads=1)).wall_time
        for _ in range(repeats)
    )
    records = []
    for scheme in schemes:
        for threads in thread_counts:
            cfg = dataclasses.replace(base, scheme=scheme, threads=threads)
            reports = [run(qp, cfg) for _ in range(repeats)]
            median = statistics.median(r.wall_time for r in reports)
            speedup = reference / median if median > 0 else float("inf")
            records.extend(
                BenchmarkRecord(report=r, repeat=i, median_wall_time=median, speedup=speedup)
                for i, r in enumerate(reports)
            )
    return records

