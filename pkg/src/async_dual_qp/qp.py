"""Separable QP instances and the closed-form dual decomposition maps.

The problem is ``minimize ½xᵀQx + cᵀx subject to Ax ≤ b`` with block-diagonal
``Q`` so that ``f(x) = Σ f_i(x_i)``. Each node minimizes its own block of the
Lagrangian in closed form and the coordinator ascends the dual variable.
"""

# pylint: disable=invalid-name

import dataclasses
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import GenerationError, ModelError, SingularMatrixError
from .linalg import Matrix, as_matrix, inf_norm, inverse, spectral_radius

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]

SYMMETRY_TOL = 1e-12
PD_SHIFT = 0.1
AUTO_RHO_TARGET = 0.7
MAX_GENERATION_RETRIES = 10
_BISECTION_STEPS = 60


def as_vector(v: ArrayLike) -> Vector:
    """Return ``v`` as a finite 1-D float64 array."""
    try:
        arr = np.asarray_chkfinite(v, dtype=np.float64)
    except ValueError as e:
        raise ModelError(f"vector has non-finite entries: {e}") from e
    return arr.reshape(-1)


@dataclass(frozen=True, eq=False)
class QPBlock:
    """Data owned by one node: ``f_i(x_i) = ½x_iᵀQ_i x_i + c_iᵀx_i`` and ``A_i``."""

    Q: Matrix
    c: Vector
    A: Matrix

    def __post_init__(self) -> None:
        Q = as_matrix(self.Q)
        c = as_vector(self.c)
        A = as_matrix(self.A)
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ModelError(f"Q_i must be square, got shape {Q.shape}")
        if inf_norm(Q - Q.T) >= SYMMETRY_TOL:
            raise ModelError("Q_i is not symmetric")
        try:
            np.linalg.cholesky(Q)
        except np.linalg.LinAlgError as e:
            raise ModelError("Q_i is not positive definite") from e
        if c.shape != (n,):
            raise ModelError(f"c_i must have length {n}, got {c.shape[0]}")
        if A.shape[1] != n:
            raise ModelError(f"A_i must have {n} columns, got {A.shape[1]}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)

    @property
    def dim(self) -> int:
        """Number of primal variables owned by the block."""
        return int(self.Q.shape[0])


@dataclass(frozen=True, eq=False)
class SeparableQP:
    """A block-separable QP together with the dual step size."""

    blocks: tuple[QPBlock, ...]
    b: Vector
    alpha: float
    seed: int | None = None

    def __post_init__(self) -> None:
        blocks = tuple(self.blocks)
        if not blocks:
            raise ModelError("a SeparableQP needs at least one block")
        b = as_vector(self.b)
        for i, block in enumerate(blocks):
            if block.A.shape[0] != b.shape[0]:
                raise ModelError(
                    f"A_{i} has {block.A.shape[0]} rows but b has length {b.shape[0]}"
                )
        if not self.alpha > 0:
            raise ModelError(f"alpha must be positive, got {self.alpha}")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def nodes(self) -> int:
        """Number of blocks N."""
        return len(self.blocks)

    @property
    def m(self) -> int:
        """Number of coupling constraints (dimension of the dual variable)."""
        return int(self.b.shape[0])

    @property
    def dims(self) -> tuple[int, ...]:
        """Per-block primal dimensions n_i."""
        return tuple(block.dim for block in self.blocks)

    @property
    def n(self) -> int:
        """Total primal dimension."""
        return sum(self.dims)


@dataclass(frozen=True, eq=False)
class PrimalState:
    """Per-block primal iterate."""

    x: tuple[Vector, ...]
    k: int = 0

    def stacked(self) -> Vector:
        """The full primal vector with blocks concatenated in node order."""
        return np.concatenate(self.x)


@dataclass(frozen=True, eq=False)
class DualState:
    """Dual iterate y^k."""

    y: Vector
    k: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "y", as_vector(self.y))


class DualMap(NamedTuple):
    """Coefficients of the dual iteration ``y ↦ (I − R)y + B``."""

    phi: list[Matrix]
    R: Matrix
    B: Vector


def _check_dual(qp: SeparableQP, y: DualState) -> None:
    if y.y.shape != (qp.m,):
        raise ModelError(f"dual vector must have length {qp.m}, got {y.y.shape[0]}")


def _solve_block(block: QPBlock, rhs: Vector) -> Vector:
    try:
        return np.linalg.solve(block.Q, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"Q_i is singular: {e}") from e


def primal_update(qp: SeparableQP, block: int, y: DualState) -> Vector:
    """Minimize the Lagrangian over block ``block``: ``x_i = −Q_i⁻¹(A_iᵀy + c_i)``."""
    if not 0 <= block < qp.nodes:
        raise ModelError(f"block index {block} out of range for {qp.nodes} blocks")
    _check_dual(qp, y)
    data = qp.blocks[block]
    return -_solve_block(data, data.A.T @ y.y + data.c)


def primal_sweep(qp: SeparableQP, y: DualState) -> PrimalState:
    """Run ``primal_update`` on every block against the same dual iterate."""
    return PrimalState(
        x=tuple(primal_update(qp, i, y) for i in range(qp.nodes)),
        k=y.k + 1,
    )


def constraint_residual(qp: SeparableQP, x: PrimalState) -> Vector:
    """``Σ A_i x_i − b`` accumulated in block order."""
    if len(x.x) != qp.nodes:
        raise ModelError(f"expected {qp.nodes} primal blocks, got {len(x.x)}")
    total = np.zeros(qp.m)
    for block, x_i in zip(qp.blocks, x.x):
        if x_i.shape != (block.dim,):
            raise ModelError(f"primal block has shape {x_i.shape}, expected ({block.dim},)")
        total += block.A @ x_i
    return total - qp.b


def dual_update_sync(qp: SeparableQP, y: DualState, x_new: PrimalState) -> DualState:
    """Dual ascent step ``y⁺ = y + α(Σ A_i x_i − b)``."""
    _check_dual(qp, y)
    return DualState(y=y.y + qp.alpha * constraint_residual(qp, x_new), k=y.k + 1)


def sync_iterates(
    qp: SeparableQP, y0: ArrayLike, max_iters: int, tol: float = 0.0
) -> list[Vector]:
    """Serial synchronous reference iteration.

    Returns ``[y^0, y^1, ...]``, stopping after ``max_iters`` updates or at the
    first k with ``‖y^k − y^{k−1}‖∞ ≤ tol``.
    """
    state = DualState(y=as_vector(y0))
    _check_dual(qp, state)
    history = [state.y]
    for _ in range(max_iters):
        state = dual_update_sync(qp, state, primal_sweep(qp, state))
        history.append(state.y)
        if np.max(np.abs(history[-1] - history[-2])) <= tol:
            break
    return history


def _coupling_terms(qp: SeparableQP) -> tuple[list[Matrix], Vector]:
    """Per-block ``A_i Q_i⁻¹ A_iᵀ`` and the sum of ``A_i Q_i⁻¹ c_i``."""
    gains = []
    offset = np.zeros(qp.m)
    for block in qp.blocks:
        q_inv = inverse(block.Q)
        gains.append(block.A @ q_inv @ block.A.T)
        offset += block.A @ (q_inv @ block.c)
    return gains, offset


def coupling_matrix(qp: SeparableQP) -> Matrix:
    """``AQ⁻¹Aᵀ`` assembled from the blocks."""
    gains, _ = _coupling_terms(qp)
    return np.sum(gains, axis=0)


def closed_form_optimum(qp: SeparableQP) -> tuple[Vector, PrimalState]:
    """Optimal dual and primal points of the equality-active problem.

    ``y* = −(AQ⁻¹Aᵀ)⁻¹(AQ⁻¹c + b)`` and ``x* = −Q⁻¹(Aᵀy* + c)``.
    """
    gains, offset = _coupling_terms(qp)
    k_inv = inverse(np.sum(gains, axis=0))
    y_star = -k_inv @ (offset + qp.b)
    x_star = primal_sweep(qp, DualState(y=y_star))
    return y_star, PrimalState(x=x_star.x, k=0)


def dual_map_coefficients(qp: SeparableQP) -> DualMap:
    """Per-node gains ``Φ_i = αA_iQ_i⁻¹A_iᵀ``, ``R = ΣΦ_i`` and the affine term ``B``.

    Each node contributes ``−αA_iQ_i⁻¹c_i − αb/N`` to ``B``.
    """
    gains, offset = _coupling_terms(qp)
    phi = [qp.alpha * g for g in gains]
    R = np.sum(phi, axis=0)
    B = -qp.alpha * (offset + qp.b)
    return DualMap(phi=phi, R=R, B=B)


def sync_iteration_matrix(qp: SeparableQP) -> Matrix:
    """``I − R``, the matrix of one synchronous dual round."""
    return np.eye(qp.m) - dual_map_coefficients(qp).R


def with_alpha(qp: SeparableQP, alpha: float) -> SeparableQP:
    """Copy of ``qp`` with a different step size."""
    return dataclasses.replace(qp, alpha=alpha)


def _sync_radius(k_mat: Matrix, alpha: float) -> float:
    return spectral_radius(np.eye(k_mat.shape[0]) - alpha * k_mat)


def tune_alpha(k_mat: Matrix, target: float = AUTO_RHO_TARGET) -> float:
    """Bisect for the step size giving ``ρ(I − αK) = target``.

    ``ρ(I − αK)`` decreases on ``(0, 2/(λmin + λmax)]``. When the target lies
    below the smallest reachable radius the minimizing step is returned.
    """
    eigenvalues = np.linalg.eigvalsh(k_mat)
    lam_min, lam_max = float(eigenvalues[0]), float(eigenvalues[-1])
    if lam_min <= 0:
        raise SingularMatrixError("AQ⁻¹Aᵀ is singular; no step size contracts the dual map")
    alpha_best = 2.0 / (lam_min + lam_max)
    best = _sync_radius(k_mat, alpha_best)
    if best >= target:
        logger.warning(
            "radius %.3f unreachable (best %.3f at alpha=%.4g); using the minimizer",
            target, best, alpha_best,
        )
        return alpha_best
    lo, hi = 0.0, alpha_best
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _sync_radius(k_mat, mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def guard_alpha(k_mat: Matrix, alpha: float) -> float:
    """Halve ``alpha`` until the synchronous dual map is a contraction."""
    guarded = alpha
    for _ in range(_BISECTION_STEPS):
        if _sync_radius(k_mat, guarded) < 1.0:
            if guarded != alpha:
                logger.warning("alpha %.4g rescaled to %.4g for a stable sync map",
                               alpha, guarded)
            return guarded
        guarded /= 2.0
    raise GenerationError(f"no stable step size found below alpha={alpha}")


def _random_blocks(
    rng: np.random.Generator, nodes: int, dim: int, constraints: int, block_constraints: bool
) -> tuple[list[QPBlock], Vector]:
    L = rng.uniform(-1.0, 1.0, size=(nodes, dim, dim))
    Q = np.einsum("kji,kjl->kil", L, L) + PD_SHIFT * np.eye(dim)
    Q = 0.5 * (Q + np.transpose(Q, (0, 2, 1)))
    c = rng.uniform(-1.0, 1.0, size=(nodes, dim))
    if block_constraints:
        rows = rng.uniform(-1.0, 1.0, size=(nodes, dim))
        A = np.zeros((nodes, nodes, dim))
        A[np.arange(nodes), np.arange(nodes)] = rows
        b = rng.uniform(-1.0, 1.0, size=nodes)
    else:
        A = rng.uniform(-1.0, 1.0, size=(nodes, constraints, dim))
        b = rng.uniform(-1.0, 1.0, size=constraints)
    blocks = [QPBlock(Q=Q[i], c=c[i], A=A[i]) for i in range(nodes)]
    return blocks, b


def generate_problem(
    nodes: int,
    dim: int,
    constraints: int,
    seed: int,
    alpha: float | None = None,
    *,
    block_constraints: bool = False,
    target_rho: float = AUTO_RHO_TARGET,
) -> SeparableQP:
    """Draw a reproducible random instance.

    ``Q_i = L_iᵀL_i + 0.1I`` with ``L_i`` uniform in [−1, 1]; ``A_i``, ``c_i``
    and ``b`` uniform in [−1, 1]. With ``block_constraints`` each node owns
    one constraint row and ``m = N``. ``alpha=None`` tunes the step size so
    that ``ρ(I − R) ≈ target_rho``; an explicit ``alpha`` is halved until the
    synchronous map contracts.
    """
    if nodes < 1 or dim < 1 or (constraints < 1 and not block_constraints):
        raise ModelError(
            f"invalid dimensions: nodes={nodes}, dim={dim}, constraints={constraints}"
        )
    if not block_constraints and nodes * dim < constraints:
        raise ModelError(
            f"infeasible dimensions: nodes*dim = {nodes * dim} primal variables "
            f"cannot make {constraints} constraints independent"
        )
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_GENERATION_RETRIES):
        blocks, b = _random_blocks(rng, nodes, dim, constraints, block_constraints)
        probe = SeparableQP(blocks=tuple(blocks), b=b, alpha=1.0, seed=seed)
        k_mat = coupling_matrix(probe)
        try:
            inverse(k_mat)
        except SingularMatrixError:
            logger.info("attempt %d: AQ⁻¹Aᵀ singular, redrawing", attempt + 1)
            continue
        chosen = tune_alpha(k_mat, target_rho) if alpha is None else guard_alpha(k_mat, alpha)
        logger.info("generated N=%d n=%d m=%d alpha=%.6g", nodes, dim, probe.m, chosen)
        return with_alpha(probe, chosen)
    raise GenerationError(
        f"AQ⁻¹Aᵀ stayed singular after {MAX_GENERATION_RETRIES} draws"
    )
