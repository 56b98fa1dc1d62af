"""Reference implementations of the training objectives.

Pure operations over per-token categorical distributions, in nats. The
combined discoverer objective is ``ce + alpha * kl`` where ``kl`` runs from
the predictor (teacher) distribution to the discoverer (student)
distribution, averaged over target tokens.

Temperature softening is applied to both teacher and student logits before
the divergence, with no extra rescaling of the loss; a trainer that wants a
different convention can soften one side only before calling ``sequence_kl``.

The module also owns the distribution-dump file format used to cross-check
externally trained models against these definitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParamError, ParseError, ShapeError

EPS = 1e-12


@dataclass(frozen=True)
class DistributionSequence:
    """A (steps, vocab) array of per-token probability vectors."""

    steps: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.steps, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if np.any(arr < 0):
            raise ShapeError("probabilities must be non-negative")
        sums = arr.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ShapeError(f"rows must sum to 1 within 1e-9 (worst deviation {worst:.3e})")
        object.__setattr__(self, "steps", arr)

    def __len__(self) -> int:
        return self.steps.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.steps.shape[1]


@dataclass(frozen=True)
class TargetTokens:
    """Vocabulary indices of the target relation's tokens."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        ids = tuple(int(i) for i in self.ids)
        if not ids:
            raise ShapeError("target token sequence is empty")
        if any(i < 0 for i in ids):
            raise ShapeError("target token ids must be non-negative")
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.ids)


def sequence_ce(dist: DistributionSequence, target: TargetTokens) -> float:
    """Token-averaged negative log-likelihood of the target sequence."""
    if len(dist) != len(target):
        raise ShapeError(f"{len(dist)} steps vs {len(target)} target tokens")
    if max(target.ids) >= dist.vocab_size:
        raise ShapeError("target id outside vocabulary")
    picked = dist.steps[np.arange(len(target)), list(target.ids)]
    return float(-np.mean(np.log(np.clip(picked, EPS, None))))


def sequence_kl(teacher: DistributionSequence, student: DistributionSequence) -> float:
    """Token-averaged KL divergence from teacher to student distributions."""
    if len(teacher) != len(student) or teacher.vocab_size != student.vocab_size:
        raise ShapeError(
            f"teacher {teacher.steps.shape} vs student {student.steps.shape}"
        )
    p = teacher.steps
    q = np.clip(student.steps, EPS, None)
    terms = np.where(p > 0, p * (np.log(np.clip(p, EPS, None)) - np.log(q)), 0.0)
    return float(np.mean(terms.sum(axis=1)))


def rd_objective(ce: float, kl: float, alpha: float) -> float:
    """Combined discoverer loss: ce + alpha * kl."""
    if alpha < 0:
        raise ParamError(f"alpha must be >= 0, got {alpha}")
    return float(ce + alpha * kl)


def temperature_soften(logits: Sequence[Sequence[float]], tau: float) -> DistributionSequence:
    """Per-step softmax of logits / tau."""
    if tau <= 0:
        raise ParamError(f"tau must be > 0, got {tau}")
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D logit array, got shape {arr.shape}")
    scaled = arr / tau
    scaled -= scaled.max(axis=1, keepdims=True)
    exp = np.exp(scaled)
    return DistributionSequence(exp / exp.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class DistributionDump:
    """One teacher/student pair exported by a trainer for cross-checking.

    ``teacher`` and ``student`` are probability rows (already softened if the
    trainer used a temperature). ``logged`` optionally carries the loss values
    the training loop computed, for reconciliation.
    """

    example_id: str
    teacher: DistributionSequence
    student: DistributionSequence
    target: TargetTokens
    tau: float = 1.0
    alpha: float = 0.0
    logged: dict | None = None

    def recompute(self) -> dict[str, float]:
        ce = sequence_ce(self.student, self.target)
        kl = sequence_kl(self.teacher, self.student)
        return {"ce": ce, "kl": kl, "total": rd_objective(ce, kl, self.alpha)}


def _rows(spec: dict, key: str) -> DistributionSequence:
    kind = spec.get("kind", "probs")
    rows = spec["rows"]
    if kind == "logits":
        return temperature_soften(rows, spec.get("tau", 1.0))
    if kind != "probs":
        raise ParseError(f"{key}: unknown row kind {kind!r}")
    return DistributionSequence(np.asarray(rows, dtype=np.float64))


def read_distribution_dump(path: str | Path) -> list[DistributionDump]:
    """Read a line-delimited dump file; one teacher/student pair per line."""
    out: list[DistributionDump] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                dump = DistributionDump(
                    example_id=str(rec.get("example_id", lineno)),
                    teacher=_rows(rec["teacher"], "teacher"),
                    student=_rows(rec["student"], "student"),
                    target=TargetTokens(tuple(rec["target_ids"])),
                    tau=float(rec.get("tau", 1.0)),
                    alpha=float(rec.get("alpha", 0.0)),
                    logged=rec.get("logged"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed dump record: {exc}") from exc
            out.append(dump)
    return out


def write_distribution_dump(dumps: Iterable[DistributionDump], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for dump in dumps:
            rec = {
                "example_id": dump.example_id,
                "teacher": {"kind": "probs", "rows": dump.teacher.steps.tolist()},
                "student": {"kind": "probs", "rows": dump.student.steps.tolist()},
                "target_ids": list(dump.target.ids),
                "tau": dump.tau,
                "alpha": dump.alpha,
            }
            if dump.logged is not None:
                rec["logged"] = dump.logged
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
