"""Pytest configuration and shared fixtures."""

from pathlib import Path
from unittest.mock import patch

import pytest

from async_dual_qp.cli import main
from async_dual_qp.problem_file import DelaySpec, ProblemFile, write_delay, write_problem
from async_dual_qp.qp import QPBlock, SeparableQP
from async_dual_qp.switched import DelayModel


def pytest_configure(config: pytest.Config) -> None:
    """Register custom pytest markers."""
    config.addinivalue_line("markers", "unit: unit tests")
    config.addinivalue_line("markers", "integration: integration tests")
    config.addinivalue_line("markers", "e2e: end-to-end tests")


def run_main_with_args(args: list[str]) -> int:
    """Run main() with given args and return exit code.

    Shared utility for CLI tests across unit, integration, and e2e test suites.
    """
    with patch("sys.argv", ["async-dual-qp", *args]):
        try:
            main()
            return 0
        except SystemExit as e:
            return int(e.code) if e.code is not None else 0


def make_t1(alpha: float = 0.5) -> SeparableQP:
    """Two scalar nodes: Q_i=[2], c_i=[-2], A_i=[1], b=[1]; y* = 1, x* = (0.5, 0.5)."""
    block = QPBlock(Q=[[2.0]], c=[-2.0], A=[[1.0]])
    return SeparableQP(blocks=(block, block), b=[1.0], alpha=alpha, seed=1)


def make_uniform(nodes: int = 8, alpha: float = 0.1) -> SeparableQP:
    """``nodes`` copies of the T1 block; R = 0.5·nodes·alpha."""
    block = QPBlock(Q=[[2.0]], c=[-2.0], A=[[1.0]])
    return SeparableQP(blocks=(block,) * nodes, b=[1.0], alpha=alpha, seed=2)


@pytest.fixture
def t1() -> SeparableQP:
    """The T1 instance with alpha = 0.5."""
    return make_t1()


@pytest.fixture
def half_delay() -> DelayModel:
    """Both T1 nodes fresh or one step stale with equal probability."""
    return DelayModel.uniform(2, [0.5, 0.5])


@pytest.fixture
def t1_problem(tmp_path: Path) -> Path:
    """T1 written as a ProblemFile with q=2 and the shared [0.5, 0.5] delay embedded."""
    path = tmp_path / "t1.json"
    delay = DelaySpec(q=2, kind="shared", probs=[[0.5, 0.5]])
    write_problem(path, ProblemFile(qp=make_t1(), q=2, delay=delay))
    return path


@pytest.fixture
def t1_bare_problem(tmp_path: Path) -> Path:
    """T1 as a ProblemFile without a delay model."""
    path = tmp_path / "t1_bare.json"
    write_problem(path, ProblemFile(qp=make_t1(), q=2))
    return path


@pytest.fixture
def unstable_problem(tmp_path: Path) -> Path:
    """T1 with alpha = 1.9: the sync map contracts but the async system diverges."""
    path = tmp_path / "unstable.json"
    delay = DelaySpec(q=2, kind="shared", probs=[[0.5, 0.5]])
    write_problem(path, ProblemFile(qp=make_t1(alpha=1.9), q=2, delay=delay))
    return path


@pytest.fixture
def shared_delay_file(tmp_path: Path) -> Path:
    """Delay file sharing [0.5, 0.5] across nodes."""
    path = tmp_path / "delay.json"
    write_delay(path, DelaySpec(q=2, kind="shared", probs=[[0.5, 0.5]]))
    return path
