"""3D learner-performance tensors: outcomes, masks, slicing, sparsity.

The central object is a (learners x questions x attempts) grid in which
every cell is exactly one of correct / incorrect / missing.  Missing is a
structural state (a separate boolean plane), never a sentinel value, so no
arithmetic can silently consume an unobserved cell.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Outcome(enum.Enum):
    INCORRECT = 0
    CORRECT = 1
    MISSING = 2


@dataclass(frozen=True)
class PerformanceTensor:
    """Sparse binary outcome grid.

    ``correct`` and ``observed`` are boolean arrays of shape (U, N, M).
    A cell is Correct iff observed & correct, Incorrect iff observed &
    ~correct, and Missing iff ~observed.
    """

    correct: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        correct = np.asarray(self.correct, dtype=bool)
        observed = np.asarray(self.observed, dtype=bool)
        if correct.ndim != 3:
            raise ValueError(f"expected 3D cell grid, got shape {correct.shape}")
        if correct.shape != observed.shape:
            raise ValueError(
                f"correct/observed shape mismatch: {correct.shape} vs {observed.shape}"
            )
        if min(correct.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {correct.shape}")
        correct.setflags(write=False)
        observed.setflags(write=False)
        object.__setattr__(self, "correct", correct)
        object.__setattr__(self, "observed", observed)

    @property
    def num_learners(self) -> int:
        return self.correct.shape[0]

    @property
    def num_questions(self) -> int:
        return self.correct.shape[1]

    @property
    def max_attempts(self) -> int:
        return self.correct.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.correct.shape

    def cell(self, u: int, j: int, i: int) -> Outcome:
        if not self.observed[u, j, i]:
            return Outcome.MISSING
        return Outcome.CORRECT if self.correct[u, j, i] else Outcome.INCORRECT

    def observed_count(self) -> int:
        return int(self.observed.sum())

    def observed_coords(self) -> np.ndarray:
        """(n_obs, 3) integer coordinates of observed cells, row-major order."""
        return np.argwhere(self.observed)

    @staticmethod
    def from_cells(cells) -> "PerformanceTensor":
        """Build from a nested structure of Outcome values (or None for missing)."""
        arr = np.asarray(
            [[[c.value if isinstance(c, Outcome) else Outcome.MISSING.value if c is None else c
               for c in row] for row in plane] for plane in cells],
            dtype=int,
        )
        return PerformanceTensor(
            correct=arr == Outcome.CORRECT.value,
            observed=arr != Outcome.MISSING.value,
        )


@dataclass(frozen=True)
class DenseTensor:
    """Fully observed probability grid: every value in [0, 1], no missing cells."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"expected 3D value grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("dense tensor contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("dense tensor values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class LearnerSlice:
    """One learner's N x M outcome matrix; unobserved cells hold NaN."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected 2D slice, got shape {values.shape}")
        obs = values[np.isfinite(values)]
        if obs.size and not np.all((obs == 0.0) | (obs == 1.0)):
            raise ValueError("observed slice values must be 0 or 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class MaskMatrix:
    """Observed-cell indicator for a learner slice: 1.0 observed, 0.0 missing."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected 2D mask, got shape {values.shape}")
        if not np.all((values == 0.0) | (values == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class SparsityProfile:
    """Sparsity level per max-attempt setting, settings strictly increasing."""

    entries: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        settings = [m for m, _ in self.entries]
        if any(b <= a for a, b in zip(settings, settings[1:])):
            raise ValueError("max-attempt settings must be strictly increasing")
        for _, level in self.entries:
            if not 0.0 <= level <= 1.0:
                raise ValueError(f"sparsity level {level} outside [0, 1]")

    @property
    def settings(self) -> list[int]:
        return [m for m, _ in self.entries]

    @property
    def levels(self) -> list[float]:
        return [lvl for _, lvl in self.entries]


def sparsity_level(t: PerformanceTensor) -> float:
    """Fraction of missing cells."""
    return float((~t.observed).sum()) / t.observed.size


def truncate_attempts(t: PerformanceTensor, m: int) -> PerformanceTensor:
    """Keep attempts 1..m; cells are otherwise unchanged."""
    if not 1 <= m <= t.max_attempts:
        raise ValueError(f"max attempt {m} out of range [1, {t.max_attempts}]")
    return PerformanceTensor(
        correct=t.correct[:, :, :m].copy(), observed=t.observed[:, :, :m].copy()
    )


def learner_slice(t: PerformanceTensor, u: int) -> tuple[LearnerSlice, MaskMatrix]:
    """Extract learner u's N x M value matrix and its observed mask."""
    if not 0 <= u < t.num_learners:
        raise IndexError(f"learner index {u} out of range [0, {t.num_learners})")
    mask = t.observed[u].astype(np.float64)
    values = np.where(t.observed[u], t.correct[u].astype(np.float64), np.nan)
    return LearnerSlice(values), MaskMatrix(mask)


def sparsity_increase_rate(profile: SparsityProfile) -> list[float]:
    """Per-step slope of the sparsity curve between consecutive settings."""
    if len(profile.entries) < 2:
        raise ValueError("profile needs at least 2 entries to compute rates")
    levels = profile.levels
    return [levels[i + 1] - levels[i] for i in range(len(levels) - 1)]


def assemble(slices: list[np.ndarray]) -> DenseTensor:
    """Stack imputed learner matrices into a dense tensor, clamping to [0, 1].

    Accepts raw arrays or LearnerSlice-like objects; any residual missing
    marker (NaN) is an error.
    """
    if not slices:
        raise ValueError("no slices to assemble")
    arrays = []
    for s in slices:
        arr = np.asarray(getattr(s, "values", s), dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"slice must be 2D, got shape {arr.shape}")
        if arrays and arr.shape != arrays[0].shape:
            raise ValueError(
                f"slice shape {arr.shape} does not match {arrays[0].shape}"
            )
        if np.isnan(arr).any():
            raise ValueError("residual missing marker in imputed slice")
        arrays.append(arr)
    stacked = np.stack(arrays, axis=0)
    return DenseTensor(np.clip(stacked, 0.0, 1.0))
