"""Unit tests for the CLI module."""

import argparse
from pathlib import Path

import pytest

from async_dual_qp.analysis import Scheme
from async_dual_qp.cli import (
    AUTO,
    EXIT_INPUT_ERROR,
    EXIT_NOT_CONVERGED,
    EXIT_UNSTABLE,
    parse_alpha,
    parse_floats,
    parse_ints,
    parse_schemes,
)
from async_dual_qp.problem_file import read_problem
from test.helpers import data_lines, metadata_fields

from ..conftest import run_main_with_args


@pytest.mark.unit
class TestParsers:
    """Tests for the argument type helpers."""

    def test_alpha_auto(self) -> None:
        """'auto' is accepted in any case."""
        assert parse_alpha("AUTO") == AUTO

    def test_alpha_value(self) -> None:
        """A positive number is returned as float."""
        assert parse_alpha("0.25") == 0.25

    def test_alpha_nonpositive(self) -> None:
        """Zero and negative step sizes are rejected."""
        with pytest.raises(argparse.ArgumentTypeError):
            parse_alpha("0")

    def test_floats(self) -> None:
        """Comma-separated reals."""
        assert parse_floats("1.0,0.5") == [1.0, 0.5]

    def test_ints(self) -> None:
        """Comma-separated integers."""
        assert parse_ints("1,2,4,8") == [1, 2, 4, 8]

    def test_schemes(self) -> None:
        """Scheme names tolerate spaces."""
        assert parse_schemes("sync, sto_async") == [Scheme.SYNC, Scheme.STO_ASYNC]

    def test_unknown_scheme(self) -> None:
        """Unknown names become argparse errors."""
        with pytest.raises(argparse.ArgumentTypeError):
            parse_schemes("sync,eventual")


@pytest.mark.unit
class TestGen:
    """Tests for the gen subcommand."""

    def test_writes_problem(self, tmp_path: Path) -> None:
        """gen writes a readable ProblemFile."""
        out = tmp_path / "p.json"
        code = run_main_with_args(["gen", "--nodes", "3", "--dim", "2", "--seed", "4",
                                   "--out", str(out)])
        assert code == 0
        pf = read_problem(out)
        assert (pf.qp.nodes, pf.qp.m, pf.q) == (3, 1, 2)
        assert pf.qp.seed == 4
        assert pf.delay is None

    def test_explicit_alpha(self, tmp_path: Path) -> None:
        """A small explicit step size is kept as given."""
        out = tmp_path / "p.json"
        code = run_main_with_args(["gen", "--nodes", "2", "--dim", "2", "--alpha", "0.01",
                                   "--out", str(out)])
        assert code == 0
        assert read_problem(out).qp.alpha == 0.01

    def test_embeds_delay(self, tmp_path: Path, shared_delay_file: Path) -> None:
        """--delay stores the delay model with the problem."""
        out = tmp_path / "p.json"
        code = run_main_with_args(["gen", "--nodes", "2", "--dim", "1", "--delay",
                                   str(shared_delay_file), "--out", str(out)])
        assert code == 0
        delay = read_problem(out).delay
        assert delay is not None and delay.kind == "shared"

    def test_delay_q_mismatch(self, tmp_path: Path, shared_delay_file: Path) -> None:
        """--q must agree with the delay file."""
        code = run_main_with_args(["gen", "--nodes", "2", "--dim", "1", "--q", "3", "--delay",
                                   str(shared_delay_file), "--out", str(tmp_path / "p.json")])
        assert code == EXIT_INPUT_ERROR

    def test_invalid_dimensions(self, tmp_path: Path) -> None:
        """Zero nodes is an input error."""
        code = run_main_with_args(["gen", "--nodes", "0", "--dim", "1",
                                   "--out", str(tmp_path / "p.json")])
        assert code == EXIT_INPUT_ERROR

    @pytest.mark.parametrize("q", ["0", "-2"])
    def test_nonpositive_q(self, tmp_path: Path, q: str) -> None:
        """A buffer length below 1 exits 4 and writes nothing."""
        out = tmp_path / "p.json"
        code = run_main_with_args(["gen", "--nodes", "2", "--dim", "1", "--q", q,
                                   "--out", str(out)])
        assert code == EXIT_INPUT_ERROR
        assert not out.exists()

    def test_more_constraints_than_variables(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """N·n < m is rejected up front as infeasible."""
        code = run_main_with_args(["gen", "--nodes", "2", "--dim", "1", "--constraints", "4",
                                   "--out", str(tmp_path / "p.json")])
        assert code == EXIT_INPUT_ERROR
        assert "infeasible dimensions" in capsys.readouterr().err


@pytest.mark.unit
class TestAnalyze:
    """Tests for the analyze subcommand."""

    def test_stable_summary(self, t1_problem: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """T1 is certified and the summary reports y* = 1."""
        code = run_main_with_args(["analyze", "--problem", str(t1_problem), "--k-max", "10"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "ms_convergent,true" in stdout
        rows = dict(line.split(",", 1) for line in data_lines(stdout) if "," in line)
        assert abs(float(rows["y_star_0"]) - 1.0) < 1e-12
        assert "pi_0,0.25" in stdout

    def test_envelope_file(self, t1_problem: Path, tmp_path: Path) -> None:
        """--out receives one row per scheme and step."""
        out = tmp_path / "env.csv"
        code = run_main_with_args(["analyze", "--problem", str(t1_problem), "--k-max", "10",
                                   "--y0", "2", "--out", str(out)])
        assert code == 0
        text = out.read_text()
        lines = data_lines(text)
        assert lines[0] == "scheme,k,bound,normalized,update_instant"
        assert len(lines) == 1 + 3 * 11
        assert lines[1].startswith("sync,0,")
        assert lines[1].endswith(",1.0,true")
        assert metadata_fields(text)["k_max"] == "10"

    def test_unstable_reported(self, unstable_problem: Path,
                               capsys: pytest.CaptureFixture[str]) -> None:
        """Without --require-stable an unstable verdict still exits 0."""
        code = run_main_with_args(["analyze", "--problem", str(unstable_problem), "--k-max", "5"])
        assert code == 0
        assert "ms_convergent,false" in capsys.readouterr().out

    def test_require_stable(self, unstable_problem: Path) -> None:
        """--require-stable turns an unstable verdict into exit 3."""
        code = run_main_with_args(["analyze", "--problem", str(unstable_problem), "--k-max", "5",
                                   "--require-stable"])
        assert code == EXIT_UNSTABLE

    def test_require_stable_passes(self, t1_problem: Path) -> None:
        """A certified problem passes the gate."""
        code = run_main_with_args(["analyze", "--problem", str(t1_problem), "--k-max", "5",
                                   "--require-stable"])
        assert code == 0

    def test_missing_delay(self, t1_bare_problem: Path) -> None:
        """No delay model anywhere is an input error."""
        code = run_main_with_args(["analyze", "--problem", str(t1_bare_problem)])
        assert code == EXIT_INPUT_ERROR

    def test_delay_file(self, t1_bare_problem: Path, shared_delay_file: Path) -> None:
        """A separate delay file supplies the model."""
        code = run_main_with_args(["analyze", "--problem", str(t1_bare_problem), "--delay",
                                   str(shared_delay_file), "--k-max", "5"])
        assert code == 0

    def test_geometric(self, t1_bare_problem: Path) -> None:
        """--geometric builds a delay model from the problem's q."""
        code = run_main_with_args(["analyze", "--problem", str(t1_bare_problem),
                                   "--geometric", "1.0", "--k-max", "5"])
        assert code == 0

    def test_q_mismatch(self, t1_problem: Path) -> None:
        """--q must match the delay model."""
        code = run_main_with_args(["analyze", "--problem", str(t1_problem), "--q", "3"])
        assert code == EXIT_INPUT_ERROR

    def test_enumerate(self, t1_problem: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """The joint-mode verdict and radius agree with the reduced ones."""
        code = run_main_with_args(["analyze", "--problem", str(t1_problem), "--k-max", "5",
                                   "--enumerate"])
        assert code == 0
        rows = dict(line.split(",", 1) for line in data_lines(capsys.readouterr().out))
        assert float(rows["enumerated_ms_radius"]) == pytest.approx(
            float(rows["ms_spectral_radius"]), abs=1e-9)
        assert rows["enumerated_ms_convergent"] == rows["ms_convergent"] == "true"
        assert "raw_ms_radius" in rows

    def test_alpha_override(self, unstable_problem: Path) -> None:
        """--alpha replaces the stored step size."""
        code = run_main_with_args(["analyze", "--problem", str(unstable_problem), "--k-max", "5",
                                   "--alpha", "0.5", "--require-stable"])
        assert code == 0

    def test_y0_length(self, t1_problem: Path) -> None:
        """--y0 needs 1 or m values."""
        code = run_main_with_args(["analyze", "--problem", str(t1_problem), "--y0", "1,2"])
        assert code == EXIT_INPUT_ERROR


@pytest.mark.unit
class TestSimulate:
    """Tests for the simulate subcommand."""

    def test_ensemble(self, t1_problem: Path, tmp_path: Path) -> None:
        """One row per step including k = 0."""
        out = tmp_path / "ens.csv"
        code = run_main_with_args(["simulate", "--problem", str(t1_problem), "--runs", "5",
                                   "--k-max", "10", "--y0", "2", "--out", str(out)])
        assert code == 0
        lines = data_lines(out.read_text())
        assert lines[0] == "k,mean_0,std_0"
        assert lines[1] == "0,2.0,0.0"
        assert len(lines) == 12

    def test_runs_out(self, t1_problem: Path, tmp_path: Path) -> None:
        """--runs-out writes every run in long format."""
        runs = tmp_path / "runs.csv"
        code = run_main_with_args(["simulate", "--problem", str(t1_problem), "--runs", "3",
                                   "--k-max", "4", "--out", str(tmp_path / "ens.csv"),
                                   "--runs-out", str(runs)])
        assert code == 0
        assert len(data_lines(runs.read_text())) == 1 + 3 * 5

    def test_per_node(self, t1_problem: Path, tmp_path: Path) -> None:
        """--per-node samples node ages."""
        out = tmp_path / "ens.csv"
        code = run_main_with_args(["simulate", "--problem", str(t1_problem), "--runs", "2",
                                   "--k-max", "5", "--per-node", "--out", str(out)])
        assert code == 0
        assert metadata_fields(out.read_text())["simulation"] == "per_node"

    def test_per_node_needs_rows(self, t1_bare_problem: Path, tmp_path: Path) -> None:
        """An aggregated-only delay cannot drive --per-node."""
        delay = tmp_path / "agg.json"
        delay.write_text('{"format":"async-dual-qp/delay","version":1,"q":2,'
                         '"aggregated":[0.25,0.75]}\n')
        code = run_main_with_args(["simulate", "--problem", str(t1_bare_problem), "--delay",
                                   str(delay), "--per-node", "--runs", "1", "--k-max", "1"])
        assert code == EXIT_INPUT_ERROR


@pytest.mark.unit
class TestSolveAndBench:
    """Tests for the solve and bench subcommands."""

    def test_solve(self, t1_problem: Path, tmp_path: Path) -> None:
        """solve converges to y* = 1 and writes a trace."""
        out = tmp_path / "run.csv"
        trace = tmp_path / "trace.csv"
        code = run_main_with_args(["solve", "--problem", str(t1_problem), "--threads", "1",
                                   "--out", str(out), "--trace", str(trace)])
        assert code == 0
        rows = dict(line.split(",", 1) for line in data_lines(out.read_text())[1:])
        assert rows["converged"] == "true"
        assert abs(float(rows["y_0"]) - 1.0) < 1e-4
        assert data_lines(trace.read_text())[0] == "k,residual"

    def test_solve_not_converged(self, t1_problem: Path, tmp_path: Path) -> None:
        """Hitting the iteration cap exits 2."""
        code = run_main_with_args(["solve", "--problem", str(t1_problem), "--threads", "1",
                                   "--max-iters", "1", "--out", str(tmp_path / "run.csv")])
        assert code == EXIT_NOT_CONVERGED

    def test_solve_bad_scheme(self, t1_problem: Path) -> None:
        """Unknown schemes are argparse errors."""
        code = run_main_with_args(["solve", "--problem", str(t1_problem), "--scheme", "eventual"])
        assert code == EXIT_INPUT_ERROR

    def test_bench(self, t1_problem: Path, tmp_path: Path) -> None:
        """bench writes one row per scheme, thread count and repeat."""
        out = tmp_path / "bench.csv"
        code = run_main_with_args(["bench", "--problem", str(t1_problem), "--schemes",
                                   "sync,det_async", "--threads", "1,2", "--repeats", "2",
                                   "--out", str(out)])
        assert code == 0
        lines = data_lines(out.read_text())
        assert lines[0].startswith("scheme,threads,repeat,iterations")
        assert len(lines) == 1 + 2 * 2 * 2


@pytest.mark.unit
class TestMainErrors:
    """Tests for exit codes on bad input."""

    def test_help(self) -> None:
        """--help exits 0."""
        assert run_main_with_args(["--help"]) == 0

    def test_no_command(self) -> None:
        """A missing subcommand is an input error."""
        assert run_main_with_args([]) == EXIT_INPUT_ERROR

    def test_missing_problem_file(self, tmp_path: Path,
                                  capsys: pytest.CaptureFixture[str]) -> None:
        """An unreadable problem file exits 4."""
        code = run_main_with_args(["analyze", "--problem", str(tmp_path / "missing.json")])
        assert code == EXIT_INPUT_ERROR
        assert "Error reading or writing files" in capsys.readouterr().err

    def test_malformed_problem_file(self, tmp_path: Path) -> None:
        """A malformed problem file exits 4."""
        path = tmp_path / "bad.json"
        path.write_text("{}")
        assert run_main_with_args(["analyze", "--problem", str(path)]) == EXIT_INPUT_ERROR

    def test_negative_alpha(self, t1_problem: Path) -> None:
        """A nonpositive --alpha is rejected by the parser."""
        code = run_main_with_args(["analyze", "--problem", str(t1_problem), "--alpha", "-1"])
        assert code == EXIT_INPUT_ERROR
