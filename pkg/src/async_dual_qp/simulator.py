"""Monte Carlo ensembles of the stochastic asynchronous dual iteration.

Each run owns an independent ``np.random.Generator`` spawned from the master
seed with ``SeedSequence(seed).spawn(runs)``, and draws its whole switching
sequence from that stream up front. Runs are then advanced together as one
array, so results depend only on the seed and never on how runs are batched.
"""

# pylint: disable=invalid-name

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .linalg import inverse
from .qp import SeparableQP, Vector, as_vector
from .switched import DelayModel, SwitchedSystem, initial_state, sample_modes

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Ensemble size, horizon, seed and initial dual value."""

    runs: int
    k_max: int
    seed: int
    y0: Vector
    record_every: int = 1
    full_state: bool = False

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ModelError(f"runs must be at least 1, got {self.runs}")
        if self.k_max < 1:
            raise ModelError(f"k_max must be at least 1, got {self.k_max}")
        if self.record_every < 1:
            raise ModelError(f"record_every must be at least 1, got {self.record_every}")
        object.__setattr__(self, "y0", as_vector(self.y0))

    @property
    def recorded_steps(self) -> np.ndarray:
        """Iteration indices kept in the ensemble, starting at k = 0."""
        return np.arange(0, self.k_max + 1, self.record_every)


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Recorded trajectories with per-step statistics.

    ``trajectories`` has shape (runs, len(steps), d) where d is m, or q·m
    when the full augmented state is recorded. ``std`` is the population
    standard deviation over runs.

    The initial state is recorded too, so ``steps`` holds
    ``k_max // record_every + 1`` indices starting at k = 0.
    """

    steps: np.ndarray
    trajectories: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    mode_histogram: np.ndarray
    seed: int

    @property
    def runs(self) -> int:
        """Number of trajectories."""
        return int(self.trajectories.shape[0])

    @property
    def stderr(self) -> np.ndarray:
        """Standard error of the ensemble mean."""
        return self.std / math.sqrt(self.runs)


def spawn_streams(seed: int, runs: int) -> list[np.random.Generator]:
    """One independent generator per run, derived from the master seed."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(runs)]


def _ensemble(records: list[np.ndarray], cfg: SimConfig, histogram: np.ndarray) -> TrajectoryEnsemble:
    trajectories = np.stack(records, axis=1)
    return TrajectoryEnsemble(
        steps=cfg.recorded_steps,
        trajectories=trajectories,
        mean=trajectories.mean(axis=0),
        std=trajectories.std(axis=0),
        mode_histogram=histogram,
        seed=cfg.seed,
    )


def simulate_model(sys: SwitchedSystem, cfg: SimConfig) -> TrajectoryEnsemble:
    """Evolve ``Y^{k+1} = W_σk Y^k + C`` with σ_k i.i.d. from the aggregated Π."""
    if cfg.y0.shape != (sys.m,):
        raise ModelError(f"y0 must have length {sys.m}, got {cfg.y0.shape[0]}")
    modes = np.stack([
        sample_modes(sys.pi, rng, cfg.k_max) for rng in spawn_streams(cfg.seed, cfg.runs)
    ])
    Y = np.tile(initial_state(cfg.y0, sys.q).Y, (cfg.runs, 1))
    width = sys.dim if cfg.full_state else sys.m
    records = [Y[:, :width].copy()]
    for k in range(cfg.k_max):
        selected = modes[:, k]
        nxt = np.empty_like(Y)
        for r, W in enumerate(sys.modes):
            rows = selected == r
            if rows.any():
                nxt[rows] = Y[rows] @ W.T + sys.C
        Y = nxt
        if (k + 1) % cfg.record_every == 0:
            records.append(Y[:, :width].copy())
    histogram = np.bincount(modes.ravel(), minlength=sys.q)
    logger.info("simulated %d runs x %d steps over %d modes", cfg.runs, cfg.k_max, sys.q)
    return _ensemble(records, cfg, histogram)


def sample_ages(dm: DelayModel, rng: np.random.Generator, k_max: int) -> np.ndarray:
    """Independent per-node ages for ``k_max`` steps, shape (k_max, N)."""
    cum = np.cumsum(dm.probs, axis=1)
    cum[:, -1] = 1.0
    u = rng.random((k_max, dm.nodes))
    return (u[..., None] >= cum[None, :, :]).sum(axis=-1)


def simulate_per_node(
    qp: SeparableQP, dm: DelayModel, cfg: SimConfig, aggregate: bool = True
) -> TrajectoryEnsemble:
    """Simulate the delayed dual iteration node by node.

    Every step samples each node's age from its own ``Π_i``. With
    ``aggregate`` the coordinator reads every node at the oldest sampled age
    ``ξ``; otherwise each node is read at its own age. Node ``i`` then solves
    ``x_i = −Q_i⁻¹(A_iᵀy^{k−age} + c_i)`` and the dual ascends with
    ``y⁺ = y^k + α(Σ A_i x_i − b)``. The mode histogram counts ``ξ``.
    """
    if dm.nodes != qp.nodes:
        raise ModelError(f"delay model has {dm.nodes} nodes, problem has {qp.nodes}")
    if cfg.y0.shape != (qp.m,):
        raise ModelError(f"y0 must have length {qp.m}, got {cfg.y0.shape[0]}")
    q, m, runs = dm.q, qp.m, cfg.runs
    ages = np.stack([sample_ages(dm, rng, cfg.k_max) for rng in spawn_streams(cfg.seed, runs)])
    oldest = ages.max(axis=2)
    q_inv = [inverse(block.Q) for block in qp.blocks]

    history = np.tile(cfg.y0, (runs, q, 1))
    width = q * m if cfg.full_state else m
    records = [history.reshape(runs, q * m)[:, :width].copy()]
    run_index = np.arange(runs)
    for k in range(cfg.k_max):
        read_age = np.repeat(oldest[:, k:k + 1], qp.nodes, axis=1) if aggregate else ages[:, k, :]
        total = np.zeros((runs, m))
        for i, block in enumerate(qp.blocks):
            y_read = history[run_index, read_age[:, i]]
            x_i = -(y_read @ block.A + block.c) @ q_inv[i].T
            total += x_i @ block.A.T
        y_next = history[:, 0] + qp.alpha * (total - qp.b)
        history = np.concatenate([y_next[:, None, :], history[:, :-1]], axis=1)
        if (k + 1) % cfg.record_every == 0:
            records.append(history.reshape(runs, q * m)[:, :width].copy())
    histogram = np.bincount(oldest.ravel(), minlength=q)
    logger.info("simulated %d nodes x %d runs x %d steps (aggregate=%s)",
                qp.nodes, runs, cfg.k_max, aggregate)
    return _ensemble(records, cfg, histogram)

