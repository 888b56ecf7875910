"""Shared test utilities."""

import subprocess
import sys


def run_cli(*args: str) -> subprocess.CompletedProcess[str]:
    """Run the async-dual-qp CLI with the given arguments."""
    return subprocess.run(
        [sys.executable, "-m", "async_dual_qp", *args],
        capture_output=True,
        text=True,
        check=False,
    )


def data_lines(text: str) -> list[str]:
    """CSV lines without the ``#`` metadata header."""
    return [line for line in text.splitlines() if line and not line.startswith("#")]


def metadata_fields(text: str) -> dict[str, str]:
    """``# key=value`` header lines as a dict (later tables override earlier ones)."""
    fields = {}
    for line in text.splitlines():
        if line.startswith("# "):
            key, value = line[2:].split("=", 1)
            fields[key] = value
    return fields
