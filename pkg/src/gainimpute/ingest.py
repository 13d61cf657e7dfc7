"""Interaction-log parsing, tensor construction, and cross-validation folds."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .tensors import PerformanceTensor

REQUIRED_COLUMNS = ("learner_id", "question_id", "attempt", "correct")


@dataclass(frozen=True)
class InteractionRecord:
    learner_id: str
    question_id: str
    attempt: int  # 1-based
    correct: bool

    def __post_init__(self):
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")


@dataclass
class BuildResult:
    """Tensor plus the bookkeeping needed to trace indices back to ids."""

    tensor: PerformanceTensor
    learners: list[str]
    questions: list[str]
    duplicates: int = 0
    overflow: int = 0

    def index_mapping_json(self) -> str:
        return json.dumps(
            {"learners": self.learners, "questions": self.questions}, indent=2
        )


@dataclass
class FoldAssignment:
    """Partition of observed cells into k folds, balanced within one cell."""

    k: int
    seed: int
    assignment: dict[tuple[int, int, int], int] = field(default_factory=dict)

    def fold_coords(self, fold: int) -> list[tuple[int, int, int]]:
        return [c for c, f in self.assignment.items() if f == fold]


def parse_log(stream) -> list[InteractionRecord]:
    """Parse a CSV interaction log.

    Expects a header with columns learner_id,question_id,attempt,correct
    (extra columns are ignored).  Errors carry the 1-based line number.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        raise DataError("empty input: missing CSV header")
    missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise DataError(f"missing column(s) {missing} in header")

    records = []
    for row in reader:
        line = reader.line_num
        learner = (row["learner_id"] or "").strip()
        question = (row["question_id"] or "").strip()
        if not learner or not question:
            raise DataError(f"line {line}: empty learner_id or question_id")
        try:
            attempt = int((row["attempt"] or "").strip())
        except ValueError:
            raise DataError(f"line {line}: non-integer attempt {row['attempt']!r}")
        if attempt < 1:
            raise DataError(f"line {line}: attempt must be >= 1, got {attempt}")
        correct_raw = (row["correct"] or "").strip()
        if correct_raw not in ("0", "1"):
            raise DataError(f"line {line}: correct must be 0 or 1, got {correct_raw!r}")
        records.append(InteractionRecord(learner, question, attempt, correct_raw == "1"))
    return records


def serialize_log(records: list[InteractionRecord]) -> str:
    """Inverse of parse_log; round-trips record lists exactly."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REQUIRED_COLUMNS)
    for r in records:
        writer.writerow([r.learner_id, r.question_id, r.attempt, int(r.correct)])
    return out.getvalue()


def build_tensor(records: list[InteractionRecord], max_attempt: int) -> BuildResult:
    """Index learners/questions by first appearance and fill the outcome grid.

    The first record for a (learner, question, attempt) triple wins;
    later conflicting records and attempts beyond max_attempt are counted,
    not fatal.
    """
    if max_attempt < 1:
        raise ValueError("max_attempt must be >= 1")
    if not records:
        raise DataError("empty dataset")

    learners: dict[str, int] = {}
    questions: dict[str, int] = {}
    kept: dict[tuple[int, int, int], bool] = {}
    duplicates = 0
    overflow = 0
    for r in records:
        u = learners.setdefault(r.learner_id, len(learners))
        j = questions.setdefault(r.question_id, len(questions))
        if r.attempt > max_attempt:
            overflow += 1
            continue
        key = (u, j, r.attempt - 1)
        if key in kept:
            duplicates += 1
            continue
        kept[key] = r.correct

    correct = np.zeros((len(learners), len(questions), max_attempt), dtype=bool)
    observed = np.zeros_like(correct)
    for (u, j, i), is_correct in kept.items():
        observed[u, j, i] = True
        correct[u, j, i] = is_correct
    return BuildResult(
        tensor=PerformanceTensor(correct=correct, observed=observed),
        learners=list(learners),
        questions=list(questions),
        duplicates=duplicates,
        overflow=overflow,
    )


def make_folds(t: PerformanceTensor, k: int, seed: int) -> FoldAssignment:
    """Uniform random partition of observed cells, fold sizes within one."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    coords = t.observed_coords()
    if len(coords) < k:
        raise DataError(f"too few observed cells ({len(coords)}) for {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(coords))
    assignment = {
        tuple(int(x) for x in coords[idx]): pos % k
        for pos, idx in enumerate(order)
    }
    return FoldAssignment(k=k, seed=seed, assignment=assignment)


def hold_out(
    t: PerformanceTensor, fa: FoldAssignment, fold: int
) -> tuple[PerformanceTensor, list[tuple[tuple[int, int, int], float]]]:
    """Split into a train tensor (test cells blanked) and ground-truth test list."""
    if not 0 <= fold < fa.k:
        raise ValueError(f"fold id {fold} out of range [0, {fa.k})")
    observed = t.observed.copy()
    test = []
    for coord in sorted(fa.fold_coords(fold)):
        u, j, i = coord
        observed[u, j, i] = False
        test.append((coord, float(t.correct[u, j, i])))
    return PerformanceTensor(correct=t.correct.copy(), observed=observed), test
