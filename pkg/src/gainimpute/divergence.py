"""KDE-smoothed parameter distributions and KL divergence between them.

Knowledge-tracing fits give one parameter point per question; to compare
original against imputed data as distributions, each question's parameters
are bootstrapped over learners (paired draws on both sides via a shared
seed).  Densities are Gaussian KDEs on a fixed grid, and KL is computed by
trapezoid quadrature on the union grid with a density floor.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import bkt
from .errors import DataError
from .tensors import PerformanceTensor

PARAM_NAMES = ("L0", "T", "G", "S")
DENSITY_FLOOR = 1e-12
BANDWIDTH_FLOOR = 1e-3
GRID_POINTS = 512


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    densities: np.ndarray
    bandwidth: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        dens = np.asarray(self.densities, dtype=np.float64)
        if grid.ndim != 1 or grid.shape != dens.shape:
            raise ValueError("grid and densities must be matching 1D arrays")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly ascending")
        if dens.min() < 0:
            raise ValueError("densities must be non-negative")
        mass = float(np.trapezoid(dens, grid))
        if abs(mass - 1.0) > 1e-3:
            raise ValueError(f"density mass {mass} deviates from 1 by more than 1e-3")
        grid.setflags(write=False)
        dens.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "densities", dens)


@dataclass
class KlReport:
    entries: list[tuple[int, str, float]] = field(default_factory=list)
    skipped_questions: list[int] = field(default_factory=list)

    def values_for(self, parameter: str) -> list[float]:
        return [v for _, p, v in self.entries if p == parameter]

    def summary(self, lo: float = 0.0, hi: float = 1.0) -> dict[str, float]:
        out = {}
        for name in PARAM_NAMES:
            values = self.values_for(name)
            if values:
                out[name] = percent_within(values, lo, hi)
        return out

    def to_csv(self, question_ids=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["question_id", "parameter", "kl"])
        for j, name, value in self.entries:
            qid = question_ids[j] if question_ids else str(j)
            writer.writerow([qid, name, repr(value)])
        return buf.getvalue()

    def summary_json(self, lo: float = 0.0, hi: float = 1.0) -> str:
        return json.dumps(
            {
                "percent_within": self.summary(lo, hi),
                "range": [lo, hi],
                "skipped_questions": self.skipped_questions,
            },
            indent=2,
            sort_keys=True,
        )


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    sd = float(samples.std(ddof=1))
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = float(q75 - q25)
    h = 0.9 * min(sd, iqr / 1.34) * n ** (-1.0 / 5.0)
    return max(h, BANDWIDTH_FLOOR)


def kde(samples, bandwidth: float | None = None) -> DensityEstimate:
    """Gaussian kernel density on a 512-point grid spanning the data +-3h."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size < 2:
        raise DataError("kde needs at least 2 samples")
    h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(samples)
    h = max(h, BANDWIDTH_FLOOR)
    grid = np.linspace(samples.min() - 3 * h, samples.max() + 3 * h, GRID_POINTS)
    dens = np.zeros(GRID_POINTS)
    norm = 1.0 / (samples.size * h * np.sqrt(2.0 * np.pi))
    for start in range(0, samples.size, 4096):
        chunk = samples[start : start + 4096]
        z = (grid[:, None] - chunk[None, :]) / h
        dens += norm * np.exp(-0.5 * z * z).sum(axis=1)
    dens /= np.trapezoid(dens, grid)
    return DensityEstimate(grid=grid, densities=dens, bandwidth=h)


def kl(p: DensityEstimate, q: DensityEstimate) -> float:
    """Trapezoid integral of p log(p/q) on the union grid, densities floored."""
    union = np.union1d(p.grid, q.grid)
    pd = np.interp(union, p.grid, p.densities, left=0.0, right=0.0)
    qd = np.interp(union, q.grid, q.densities, left=0.0, right=0.0)
    pd = np.maximum(pd, DENSITY_FLOOR)
    qd = np.maximum(qd, DENSITY_FLOOR)
    return float(np.trapezoid(pd * np.log(pd / qd), union))


def percent_within(values, lo: float, hi: float) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("percent_within needs a non-empty list")
    return float(100.0 * ((values >= lo) & (values <= hi)).mean())


def parameter_distributions(
    t: PerformanceTensor,
    fit_config: bkt.BktFitConfig | None = None,
    bootstrap: int = 100,
    seed: int = 0,
) -> tuple[dict[int, dict[str, np.ndarray]], list[int]]:
    """Bootstrap learners per question and refit, yielding parameter samples.

    The learner draws depend only on (seed, question, replicate), so running
    with the same seed on an imputed tensor pairs the resamples exactly.
    Questions with no observed sequences are skipped and reported.
    """
    if bootstrap < 2:
        raise ValueError("bootstrap count must be >= 2")
    cfg = fit_config or bkt.BktFitConfig()
    u_count = t.num_learners
    values = t.correct.astype(np.float64)

    samples: dict[int, dict[str, np.ndarray]] = {}
    skipped: list[int] = []
    for j in range(t.num_questions):
        per_learner = []
        for u in range(u_count):
            observed = t.observed[u, j]
            per_learner.append(values[u, j][observed] if observed.any() else None)
        if all(seq is None for seq in per_learner):
            skipped.append(j)
            continue
        collected = {name: [] for name in PARAM_NAMES}
        for b in range(bootstrap):
            draw_rng = np.random.default_rng([seed, j, b])
            drawn = draw_rng.integers(0, u_count, u_count)
            seqs = [per_learner[u] for u in drawn if per_learner[u] is not None]
            if not seqs:
                continue
            fit = bkt.fit_question(
                seqs,
                bkt.BktFitConfig(
                    restarts=cfg.restarts,
                    max_iterations=cfg.max_iterations,
                    tol=cfg.tol,
                    seed=int(np.random.default_rng([seed, j, b, 1]).integers(2**31)),
                    floor=cfg.floor,
                    guess_cap=cfg.guess_cap,
                    slip_cap=cfg.slip_cap,
                ),
            )
            p = fit.params
            for name, value in zip(PARAM_NAMES, (p.l0, p.t, p.g, p.s)):
                collected[name].append(value)
        samples[j] = {name: np.asarray(vals) for name, vals in collected.items()}
    return samples, skipped


def kl_report(
    original_samples: dict[int, dict[str, np.ndarray]],
    imputed_samples: dict[int, dict[str, np.ndarray]],
    skipped: list[int] | None = None,
) -> KlReport:
    """Per-question, per-parameter KL between original and imputed fits."""
    report = KlReport(skipped_questions=sorted(skipped or []))
    for j in sorted(original_samples):
        if j not in imputed_samples:
            continue
        for name in PARAM_NAMES:
            p_samples = original_samples[j][name]
            q_samples = imputed_samples[j][name]
            if p_samples.size < 2 or q_samples.size < 2:
                continue
            value = kl(kde(p_samples), kde(q_samples))
            report.entries.append((j, name, value))
    return report
