"""Versioned JSON formats for problem and delay files.

Problem file (``format: async-dual-qp/problem``, ``version: 1``)::

    {"format": ..., "version": 1, "nodes": N, "m": m, "dims": [n_1, ...],
     "q": q, "alpha": α, "seed": s, "b": [...],
     "blocks": [{"Q": [[...]], "c": [...], "A": [[...]]}, ...],
     "delay": {...}}                       # optional, same body as a delay file

Delay file (``format: async-dual-qp/delay``, ``version: 1``) carries ``q`` and
exactly one of ``per_node`` (N rows), ``shared`` (one row used by every node)
or ``aggregated`` (the reduced mode distribution itself).

Floats are written with ``repr`` precision and keys in a fixed order, so
write → read → write reproduces the same bytes.
"""

# pylint: disable=invalid-name

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DualQPError, ModelError, ProblemFileError
from .linalg import Matrix, as_matrix
from .qp import QPBlock, SeparableQP, Vector, as_vector
from .switched import DelayModel, aggregate_probability, check_probability

PROBLEM_FORMAT = "async-dual-qp/problem"
DELAY_FORMAT = "async-dual-qp/delay"
FORMAT_VERSION = 1
_DELAY_KINDS = ("per_node", "shared", "aggregated")


@dataclass(frozen=True, eq=False)
class DelaySpec:
    """A delay description as stored on disk."""

    q: int
    kind: str
    probs: Matrix

    def __post_init__(self) -> None:
        if self.kind not in _DELAY_KINDS:
            raise ProblemFileError(f"unknown delay kind {self.kind!r}")
        object.__setattr__(self, "probs", as_matrix(self.probs))

    def model(self, nodes: int) -> DelayModel | None:
        """Per-node DelayModel, or None when only the aggregate is known."""
        if self.kind == "aggregated":
            return None
        if self.kind == "shared":
            return DelayModel.uniform(nodes, self.probs[0])
        if self.probs.shape[0] != nodes:
            raise ProblemFileError(
                f"delay file lists {self.probs.shape[0]} nodes, problem has {nodes}"
            )
        return DelayModel(probs=self.probs)

    def mode_probabilities(self, nodes: int) -> Vector:
        """The aggregated Π over the q reduced modes."""
        model = self.model(nodes)
        if model is None:
            return check_probability(self.probs[0], "aggregated Π")
        return aggregate_probability(model)

    @classmethod
    def from_model(cls, dm: DelayModel) -> "DelaySpec":
        """Wrap a per-node DelayModel."""
        return cls(q=dm.q, kind="per_node", probs=dm.probs)


@dataclass(frozen=True, eq=False)
class ProblemFile:
    """A problem instance with its buffer length and optional delay model."""

    qp: SeparableQP
    q: int
    delay: DelaySpec | None = None

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ModelError(f"q must be at least 1, got {self.q}")


def _floats(arr: np.ndarray) -> Any:
    return arr.tolist()


def _delay_body(spec: DelaySpec) -> dict[str, Any]:
    rows = _floats(spec.probs)
    return {"q": spec.q, spec.kind: rows if spec.kind == "per_node" else rows[0]}


def dumps_problem(pf: ProblemFile) -> str:
    """Serialize a problem file to its canonical text."""
    qp = pf.qp
    body: dict[str, Any] = {
        "format": PROBLEM_FORMAT,
        "version": FORMAT_VERSION,
        "nodes": qp.nodes,
        "m": qp.m,
        "dims": list(qp.dims),
        "q": pf.q,
        "alpha": qp.alpha,
        "seed": qp.seed,
        "b": _floats(qp.b),
        "blocks": [
            {"Q": _floats(blk.Q), "c": _floats(blk.c), "A": _floats(blk.A)}
            for blk in qp.blocks
        ],
    }
    if pf.delay is not None:
        body["delay"] = _delay_body(pf.delay)
    return json.dumps(body, separators=(",", ":")) + "\n"


def dumps_delay(spec: DelaySpec) -> str:
    """Serialize a delay description to its canonical text."""
    body = {"format": DELAY_FORMAT, "version": FORMAT_VERSION, **_delay_body(spec)}
    return json.dumps(body, separators=(",", ":")) + "\n"


def _load(text: str, expected: str) -> dict[str, Any]:
    try:
        body = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"not valid JSON: {e}") from e
    if not isinstance(body, dict) or body.get("format") != expected:
        raise ProblemFileError(f"expected a {expected} document")
    if body.get("version") != FORMAT_VERSION:
        raise ProblemFileError(f"unsupported format version {body.get('version')!r}")
    return body


def _parse_delay(body: dict[str, Any]) -> DelaySpec:
    kinds = [kind for kind in _DELAY_KINDS if kind in body]
    if len(kinds) != 1:
        raise ProblemFileError(f"delay needs exactly one of {', '.join(_DELAY_KINDS)}")
    kind = kinds[0]
    try:
        q = int(body["q"])
        probs = as_matrix(body[kind])
    except (KeyError, TypeError, ValueError) as e:
        raise ProblemFileError(f"malformed delay description: {e}") from e
    if probs.shape[1] != q:
        raise ProblemFileError(f"delay rows have length {probs.shape[1]}, expected q={q}")
    if kind != "per_node" and probs.shape[0] != 1:
        raise ProblemFileError(f"'{kind}' must be a single probability vector")
    try:
        for row in probs:
            check_probability(row)
    except DualQPError as e:
        raise ProblemFileError(str(e)) from e
    return DelaySpec(q=q, kind=kind, probs=probs)


def loads_problem(text: str) -> ProblemFile:
    """Parse canonical problem text."""
    body = _load(text, PROBLEM_FORMAT)
    try:
        blocks = tuple(
            QPBlock(Q=as_matrix(blk["Q"]), c=as_vector(blk["c"]), A=as_matrix(blk["A"]))
            for blk in body["blocks"]
        )
        qp = SeparableQP(blocks=blocks, b=as_vector(body["b"]), alpha=float(body["alpha"]),
                         seed=body.get("seed"))
        q = int(body["q"])
    except (KeyError, TypeError) as e:
        raise ProblemFileError(f"malformed problem file: {e}") from e
    except DualQPError as e:
        raise ProblemFileError(f"invalid problem data: {e}") from e
    if qp.nodes != body.get("nodes") or qp.m != body.get("m") or list(qp.dims) != body.get("dims"):
        raise ProblemFileError("declared dimensions do not match the stored blocks")
    if q < 1:
        raise ProblemFileError(f"q must be at least 1, got {q}")
    delay = _parse_delay(body["delay"]) if "delay" in body else None
    return ProblemFile(qp=qp, q=q, delay=delay)


def loads_delay(text: str) -> DelaySpec:
    """Parse canonical delay text."""
    return _parse_delay(_load(text, DELAY_FORMAT))


def write_problem(path: Path, pf: ProblemFile) -> None:
    """Write a problem file."""
    path.write_text(dumps_problem(pf))


def read_problem(path: Path) -> ProblemFile:
    """Read a problem file."""
    return loads_problem(path.read_text())


def write_delay(path: Path, spec: DelaySpec) -> None:
    """Write a delay file."""
    path.write_text(dumps_delay(spec))


def read_delay(path: Path) -> DelaySpec:
    """Read a delay file."""
    return loads_delay(path.read_text())


def problem_hash(pf: ProblemFile) -> str:
    """SHA-256 of the canonical problem text."""
    return hashlib.sha256(dumps_problem(pf).encode()).hexdigest()
