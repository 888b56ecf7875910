"""Jump-linear-system model of the asynchronous dual iteration.

The augmented state stacks the last ``q`` dual iterates,
``Y^k = [y^k; y^{k−1}; …; y^{k−q+1}]``, and evolves as
``Y^{k+1} = W_σ Y^k + C`` where the mode σ records how stale the primal
values used by the coordinator were. Modes and ages are 0-based here: mode
``r`` means the oldest value read at step k came from iteration ``k − r``,
so mode 0 is the synchronous update.
"""

# pylint: disable=invalid-name

import itertools
import logging
from dataclasses import dataclass
from functools import reduce
from typing import Iterator, NamedTuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import ModelError
from .linalg import Matrix, as_matrix
from .qp import SeparableQP, Vector, as_vector, dual_map_coefficients

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12
MAX_JOINT_OUTCOMES = 256


def check_probability(p: ArrayLike, name: str = "probability vector") -> Vector:
    """Validate a probability vector, clearing rounding residue below zero.

    Entries in ``[−1e-12, 0)`` are clamped to zero and the vector is
    renormalized; anything more negative, or a sum off by more than 1e-12,
    raises ModelError.
    """
    arr = as_vector(p)
    if arr.size == 0:
        raise ModelError(f"{name} is empty")
    if np.any(arr < -PROB_TOL):
        raise ModelError(f"{name} has negative entries: {arr}")
    arr = np.where(arr < 0.0, 0.0, arr)
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_TOL * max(1, arr.size):
        raise ModelError(f"{name} sums to {total!r}, not 1")
    return arr / total


@dataclass(frozen=True, eq=False)
class DelayModel:
    """Stationary per-node age distributions.

    Row ``i`` of ``probs`` is ``Π_i``; entry ``j`` is the probability that
    node ``i``'s value read by the coordinator is ``j`` iterations old.
    """

    probs: Matrix

    def __post_init__(self) -> None:
        probs = as_matrix(self.probs)
        rows = [check_probability(row, f"Π_{i}") for i, row in enumerate(probs)]
        object.__setattr__(self, "probs", np.vstack(rows))

    @property
    def q(self) -> int:
        """Maximum delay: ages range over 0 … q−1."""
        return int(self.probs.shape[1])

    @property
    def nodes(self) -> int:
        """Number of nodes N."""
        return int(self.probs.shape[0])

    @classmethod
    def uniform(cls, nodes: int, probs: ArrayLike) -> "DelayModel":
        """Every node shares the age distribution ``probs``."""
        if nodes < 1:
            raise ModelError(f"nodes must be positive, got {nodes}")
        return cls(probs=np.tile(as_vector(probs), (nodes, 1)))

    @classmethod
    def geometric(cls, nodes: int, q: int, rate: float) -> "DelayModel":
        """Every node has ``P(age = j) ∝ exp(−rate·j)`` for j = 0 … q−1."""
        weights = np.exp(-rate * np.arange(q, dtype=np.float64))
        return cls.uniform(nodes, weights / weights.sum())


@dataclass(frozen=True, eq=False)
class SwitchedSystem:
    """The reduced q-mode system ``Y⁺ = W_r Y + C`` with ``P(r) = pi[r]``."""

    modes: tuple[Matrix, ...]
    pi: Vector
    C: Vector
    m: int

    def __post_init__(self) -> None:
        modes = tuple(as_matrix(w) for w in self.modes)
        pi = check_probability(self.pi, "aggregated Π")
        C = as_vector(self.C)
        size = len(modes) * self.m
        if len(modes) != pi.shape[0]:
            raise ModelError(f"{len(modes)} modes but Π has length {pi.shape[0]}")
        if any(w.shape != (size, size) for w in modes) or C.shape != (size,):
            raise ModelError(f"mode matrices and C must have dimension {size}")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "C", C)

    @property
    def q(self) -> int:
        """Number of modes (the buffer length)."""
        return len(self.modes)

    @property
    def dim(self) -> int:
        """Dimension of the augmented state, q·m."""
        return self.q * self.m


@dataclass(frozen=True, eq=False)
class AugmentedState:
    """``Y = [y^k; y^{k−1}; …; y^{k−q+1}]``."""

    Y: Vector

    def __post_init__(self) -> None:
        object.__setattr__(self, "Y", as_vector(self.Y))

    def head(self, m: int) -> Vector:
        """The current dual iterate y^k."""
        return self.Y[:m]


class JointMode(NamedTuple):
    """One joint outcome of per-node ages in the unreduced system."""

    ages: tuple[int, ...]
    probability: float
    W: Matrix


def initial_state(y0: ArrayLike, q: int) -> AugmentedState:
    """Back-fill the history with ``q`` copies of the initial dual value."""
    if q < 1:
        raise ModelError(f"q must be at least 1, got {q}")
    return AugmentedState(Y=np.tile(as_vector(y0), q))


def companion(first_row: list[Matrix]) -> Matrix:
    """Block companion matrix with the given first block row and identity subdiagonal."""
    q = len(first_row)
    m = first_row[0].shape[0]
    W = np.zeros((q * m, q * m))
    for j, blk in enumerate(first_row):
        W[:m, j * m:(j + 1) * m] = blk
    for j in range(1, q):
        W[j * m:(j + 1) * m, (j - 1) * m:j * m] = np.eye(m)
    return W


def mode_matrix(R: Matrix, q: int, age: int) -> Matrix:
    """``W_r``: first block row is ``I`` at column 0 plus ``−R`` at column ``age``."""
    if not 0 <= age < q:
        raise ModelError(f"age {age} outside 0 … {q - 1}")
    m = R.shape[0]
    row = [np.zeros((m, m)) for _ in range(q)]
    row[0] = np.eye(m)
    row[age] = row[age] - R
    return companion(row)


def stacked_offset(B: Vector, q: int) -> Vector:
    """``C = [B; 0; …; 0]``."""
    return np.concatenate([B, np.zeros(B.shape[0] * (q - 1))])


def aggregate_probability(dm: DelayModel) -> Vector:
    """Distribution of the oldest age across nodes.

    ``P(max_i age_i ≤ r) = Π_i Σ_{j≤r} (π_j)_i`` for independent nodes; the
    mode probabilities are its successive differences.
    """
    cumulative = np.prod(np.cumsum(dm.probs, axis=1), axis=0)
    pi = np.diff(cumulative, prepend=0.0)
    return check_probability(pi, "aggregated Π")


def switched_system(qp: SeparableQP, pi: ArrayLike) -> SwitchedSystem:
    """Reduced system for ``qp`` with an explicit aggregated mode distribution."""
    pi = check_probability(pi, "aggregated Π")
    q = pi.shape[0]
    coeffs = dual_map_coefficients(qp)
    modes = tuple(mode_matrix(coeffs.R, q, r) for r in range(q))
    return SwitchedSystem(modes=modes, pi=pi, C=stacked_offset(coeffs.B, q), m=qp.m)


def reduce_modes(qp: SeparableQP, dm: DelayModel) -> SwitchedSystem:
    """Collapse the qᴺ joint age outcomes to q modes keyed by the oldest age."""
    if dm.nodes != qp.nodes:
        raise ModelError(f"delay model has {dm.nodes} nodes, problem has {qp.nodes}")
    system = switched_system(qp, aggregate_probability(dm))
    logger.debug("reduced %d nodes to %d modes, Π=%s", qp.nodes, system.q, system.pi)
    return system


def build_sync_system(qp: SeparableQP, q: int) -> tuple[Matrix, Vector]:
    """``W_sync`` (first block row ``[I−R, 0, …, 0]``) and ``C``."""
    coeffs = dual_map_coefficients(qp)
    return mode_matrix(coeffs.R, q, 0), stacked_offset(coeffs.B, q)


def build_det_async_system(qp: SeparableQP, q: int) -> tuple[Matrix, Vector]:
    """``W_det`` (first block row ``[I, 0, …, −R]``) and ``C``."""
    coeffs = dual_map_coefficients(qp)
    return mode_matrix(coeffs.R, q, q - 1), stacked_offset(coeffs.B, q)


def _cumulative(pi: ArrayLike) -> Vector:
    cum = np.cumsum(check_probability(pi))
    cum[-1] = 1.0
    return cum


def sample_mode(pi: ArrayLike, rng: np.random.Generator) -> int:
    """Draw a mode index with probability ``pi[r]``."""
    cum = _cumulative(pi)
    return int(np.searchsorted(cum, rng.random(), side="right"))


def sample_modes(pi: ArrayLike, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` i.i.d. mode indices (same inverse-CDF rule as ``sample_mode``)."""
    cum = _cumulative(pi)
    return np.searchsorted(cum, rng.random(size), side="right")


def step(sys: SwitchedSystem, Y: AugmentedState, mode: int) -> AugmentedState:
    """``Y⁺ = W_mode Y + C``."""
    if not 0 <= mode < sys.q:
        raise ModelError(f"mode {mode} outside 0 … {sys.q - 1}")
    if Y.Y.shape != (sys.dim,):
        raise ModelError(f"state has length {Y.Y.shape[0]}, expected {sys.dim}")
    return AugmentedState(Y=sys.modes[mode] @ Y.Y + sys.C)


def joint_age_outcomes(dm: DelayModel) -> Iterator[tuple[tuple[int, ...], float]]:
    """Every joint age outcome with its probability under ``Π_1 ⊗ … ⊗ Π_N``."""
    outcomes = dm.q ** dm.nodes
    if outcomes > MAX_JOINT_OUTCOMES:
        raise ModelError(
            f"{dm.q}^{dm.nodes} = {outcomes} joint outcomes exceeds {MAX_JOINT_OUTCOMES}"
        )
    joint = reduce(np.kron, dm.probs)
    for index, ages in enumerate(itertools.product(range(dm.q), repeat=dm.nodes)):
        yield ages, float(joint[index])


def enumerate_joint_modes(
    qp: SeparableQP, dm: DelayModel, aggregate: bool = True
) -> list[JointMode]:
    """The unreduced system, one mode per joint age outcome.

    Without ``aggregate`` each node's ``Φ_i`` lands in the column of its own
    age. With ``aggregate`` every node is read at the oldest age, which maps
    each joint outcome onto one of the q reduced modes.
    """
    if dm.nodes != qp.nodes:
        raise ModelError(f"delay model has {dm.nodes} nodes, problem has {qp.nodes}")
    coeffs = dual_map_coefficients(qp)
    q, m = dm.q, qp.m
    modes = []
    for ages, probability in joint_age_outcomes(dm):
        if aggregate:
            W = mode_matrix(coeffs.R, q, max(ages))
        else:
            row = [np.zeros((m, m)) for _ in range(q)]
            row[0] = np.eye(m)
            for phi_i, age in zip(coeffs.phi, ages):
                row[age] = row[age] - phi_i
            W = companion(row)
        modes.append(JointMode(ages=ages, probability=probability, W=W))
    return modes
