"""Mean-square stability, fixed points and rate-of-convergence envelopes."""

# pylint: disable=invalid-name

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import ModelError, SingularMatrixError
from .linalg import Matrix, inverse, kron, power_inf_norms, spectral_radius
from .qp import SeparableQP, Vector, as_vector
from .switched import AugmentedState, DelayModel, SwitchedSystem, enumerate_joint_modes

logger = logging.getLogger(__name__)

STABILITY_MARGIN = 1e-9
FIXED_POINT_TOL = 1e-8


class Scheme(str, enum.Enum):
    """Dual update schemes."""

    SYNC = "sync"
    DET_ASYNC = "det_async"
    STO_ASYNC = "sto_async"


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Mean-square verdict for a reduced switched system."""

    ms_spectral_radius: float
    is_ms_convergent: bool
    fixed_point: Vector | None
    lambda_matrix: Matrix
    lambda_spectral_radius: float
    fixed_point_residual: float | None
    notes: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True, eq=False)
class RateEnvelope:
    """Upper bounds ``‖M^k‖∞·‖Y⁰ − Y*‖∞`` for one scheme.

    ``steps`` holds a bound for every k in 0 … k_max. For the synchronous
    scheme the dual variable only moves every q+1 time steps, so the bound
    is held flat between updates and ``raw_points`` keeps just the update
    instants ``k = t(q+1)``.
    """

    scheme: Scheme
    steps: list[tuple[int, float]]
    raw_points: list[tuple[int, float]]
    initial_error: float
    sync_step_schedule: bool

    def normalized(self) -> list[tuple[int, float]]:
        """Bounds divided by ``‖Y⁰ − Y*‖∞`` (all zero when the start is optimal)."""
        if self.initial_error == 0.0:
            return [(k, 0.0) for k, _ in self.steps]
        return [(k, bound / self.initial_error) for k, bound in self.steps]

    def first_below(self, threshold: float) -> int | None:
        """First k whose bound drops below ``threshold``."""
        for k, bound in self.steps:
            if bound < threshold:
                return k
        return None


def second_moment_matrix(modes: Sequence[Matrix], pi: ArrayLike) -> Matrix:
    """``Σ_j π_j (W_j ⊗ W_j)``."""
    weights = as_vector(pi)
    return np.sum([p * kron(W, W) for p, W in zip(weights, modes)], axis=0)


def lambda_matrix(sys: SwitchedSystem) -> Matrix:
    """Mean dynamics ``Λ = Σ_r π_r W_r``."""
    return np.sum([p * W for p, W in zip(sys.pi, sys.modes)], axis=0)


def fixed_point(sys: SwitchedSystem) -> Vector:
    """``Y* = (I − W_sync)⁻¹ C``; every block equals the optimal dual point."""
    return inverse(np.eye(sys.dim) - sys.modes[0]) @ sys.C


def fixed_point_residual(sys: SwitchedSystem, Y_star: ArrayLike) -> float:
    """``max_r ‖(I − W_r)Y* − C‖∞`` over all modes."""
    Y = as_vector(Y_star)
    return max(float(np.max(np.abs(Y - W @ Y - sys.C))) for W in sys.modes)


def ms_stability(sys: SwitchedSystem, tol: float = STABILITY_MARGIN) -> StabilityReport:
    """Mean-square test: ``ρ(Σ π_j W_j⊗W_j) < 1``.

    The verdict uses the guard band ``ρ < 1 − tol``. A singular ``I − W_sync``
    leaves the fixed point unavailable but the verdict is still computed.
    """
    rho = spectral_radius(second_moment_matrix(sys.modes, sys.pi))
    lam = lambda_matrix(sys)
    notes = [f"verdict uses rho < 1 - {tol:g}"]
    Y_star: Vector | None
    residual: float | None
    try:
        Y_star = fixed_point(sys)
        residual = fixed_point_residual(sys, Y_star)
        if residual >= FIXED_POINT_TOL:
            notes.append(f"fixed point residual {residual:.3e} exceeds {FIXED_POINT_TOL:g}")
    except SingularMatrixError as e:
        Y_star, residual = None, None
        notes.append(f"fixed point unavailable: {e}")
    report = StabilityReport(
        ms_spectral_radius=rho,
        is_ms_convergent=rho < 1.0 - tol,
        fixed_point=Y_star,
        lambda_matrix=lam,
        lambda_spectral_radius=spectral_radius(lam),
        fixed_point_residual=residual,
        notes=tuple(notes),
    )
    logger.info("mean-square radius %.6f (%s)", rho,
                "convergent" if report.is_ms_convergent else "not convergent")
    return report


def enumerated_ms_radius(qp: SeparableQP, dm: DelayModel, aggregate: bool = True) -> float:
    """Mean-square radius over all qᴺ joint modes (small N and q only)."""
    joint = enumerate_joint_modes(qp, dm, aggregate=aggregate)
    return spectral_radius(
        second_moment_matrix([mode.W for mode in joint], [mode.probability for mode in joint])
    )


def _state(Y: AugmentedState | ArrayLike) -> Vector:
    return Y.Y if isinstance(Y, AugmentedState) else as_vector(Y)


def envelope_matrix(scheme: Scheme, sys: SwitchedSystem) -> Matrix:
    """``W_sync``, ``W_det`` or ``Λ`` for the given scheme."""
    if scheme is Scheme.SYNC:
        return sys.modes[0]
    if scheme is Scheme.DET_ASYNC:
        return sys.modes[-1]
    return lambda_matrix(sys)


def rate_envelope(
    scheme: Scheme, sys: SwitchedSystem, Y0: AugmentedState | ArrayLike, k_max: int
) -> RateEnvelope:
    """Bound sequence for k = 0 … k_max."""
    if k_max < 1:
        raise ModelError(f"k_max must be at least 1, got {k_max}")
    scheme = Scheme(scheme)
    Y = _state(Y0)
    e0 = float(np.max(np.abs(Y - fixed_point(sys))))
    M = envelope_matrix(scheme, sys)
    if scheme is Scheme.SYNC:
        period = sys.q + 1
        norms = power_inf_norms(M, k_max // period)
        steps = [(k, norms[k // period] * e0) for k in range(k_max + 1)]
        raw = [(t * period, norms[t] * e0) for t in range(len(norms))]
    else:
        norms = power_inf_norms(M, k_max)
        steps = [(k, norm * e0) for k, norm in enumerate(norms)]
        raw = list(steps)
    return RateEnvelope(
        scheme=scheme,
        steps=steps,
        raw_points=raw,
        initial_error=e0,
        sync_step_schedule=scheme is Scheme.SYNC,
    )


def expected_trajectory(
    sys: SwitchedSystem, Y0: AugmentedState | ArrayLike, k_max: int
) -> list[Vector]:
    """``E[Y^k]`` for k = 0 … k_max via ``E[Y⁺] = Λ E[Y] + C``."""
    lam = lambda_matrix(sys)
    mean = _state(Y0)
    trajectory = [mean]
    for _ in range(k_max):
        mean = lam @ mean + sys.C
        trajectory.append(mean)
    return trajectory


def second_moment_traces(
    modes: Sequence[Matrix], pi: ArrayLike, P0: ArrayLike, k_max: int
) -> list[float]:
    """``trace E[e^k e^kᵀ]`` for the error ``e = Y − Y*`` under i.i.d. switching.

    Propagates ``P⁺ = Σ π_j W_j P W_jᵀ`` exactly, starting from ``P0``.
    """
    weights = as_vector(pi)
    P = np.array(P0, dtype=np.float64)
    traces = [float(np.trace(P))]
    for _ in range(k_max):
        P = np.sum([p * (W @ P @ W.T) for p, W in zip(weights, modes)], axis=0)
        traces.append(float(np.trace(P)))
    return traces


def moment_growth_rate(modes: Sequence[Matrix], pi: ArrayLike, steps: int = 500) -> float:
    """Asymptotic per-step growth of ``E‖Y − Y*‖²`` from the exact moment recursion.

    Starts from ``P = I`` and renormalizes each step; the geometric mean of
    the last half of the trace ratios estimates the dominant growth factor.
    """
    weights = as_vector(pi)
    P = np.eye(modes[0].shape[0])
    log_ratios = []
    for _ in range(steps):
        P = np.sum([p * (W @ P @ W.T) for p, W in zip(weights, modes)], axis=0)
        trace = float(np.trace(P))
        if trace <= 0.0:
            return 0.0
        log_ratios.append(math.log(trace))
        P /= trace
    tail = log_ratios[len(log_ratios) // 2:]
    return math.exp(sum(tail) / len(tail))

