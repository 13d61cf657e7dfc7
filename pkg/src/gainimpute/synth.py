"""Synthetic learner cohorts with controlled missingness.

Outcomes are simulated from per-question knowledge-tracing parameters;
missingness comes from two mechanisms layered on top: a per-attempt
dropout hazard that truncates each learner-question series at the first
event (producing sparsity that grows with the attempt index), and MCAR
deletion of individual records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bkt import BktParams
from .ingest import InteractionRecord


@dataclass(frozen=True)
class SynthSpec:
    num_learners: int
    num_questions: int
    max_attempts: int
    mcar_rate: float = 0.0
    dropout_hazard: float = 0.0
    seed: int = 0
    question_params: tuple[BktParams, ...] | None = None

    def __post_init__(self):
        if min(self.num_learners, self.num_questions, self.max_attempts) < 1:
            raise ValueError("dimensions must be >= 1")
        if not 0.0 <= self.mcar_rate < 1.0:
            raise ValueError(f"mcar_rate must be in [0, 1), got {self.mcar_rate}")
        if not 0.0 <= self.dropout_hazard < 1.0:
            raise ValueError(
                f"dropout_hazard must be in [0, 1), got {self.dropout_hazard}"
            )
        if self.question_params is not None:
            params = tuple(self.question_params)
            if len(params) != self.num_questions:
                raise ValueError("need one parameter set per question")
            object.__setattr__(self, "question_params", params)

    def resolved_params(self) -> tuple[BktParams, ...]:
        if self.question_params is not None:
            return self.question_params
        rng = np.random.default_rng([self.seed, 0xBEEF])
        return tuple(
            BktParams(
                l0=float(rng.uniform(0.1, 0.6)),
                t=float(rng.uniform(0.05, 0.4)),
                g=float(rng.uniform(0.05, 0.35)),
                s=float(rng.uniform(0.02, 0.25)),
            )
            for _ in range(self.num_questions)
        )


def _learner_id(u: int, width: int) -> str:
    return f"l{u:0{width}d}"


def _question_id(j: int, width: int) -> str:
    return f"q{j:0{width}d}"


def simulate_cohort(spec: SynthSpec) -> list[InteractionRecord]:
    """Complete (no missingness) simulated records for every cell."""
    rng = np.random.default_rng([spec.seed, 1])
    params = spec.resolved_params()
    uw = len(str(max(spec.num_learners - 1, 1)))
    qw = len(str(max(spec.num_questions - 1, 1)))
    records = []
    for u in range(spec.num_learners):
        for j, p in enumerate(params):
            mastered = rng.random() < p.l0
            for i in range(spec.max_attempts):
                p_correct = (1.0 - p.s) if mastered else p.g
                correct = bool(rng.random() < p_correct)
                records.append(
                    InteractionRecord(
                        _learner_id(u, uw), _question_id(j, qw), i + 1, correct
                    )
                )
                if not mastered and rng.random() < p.t:
                    mastered = True
    return records


def synth_generate(spec: SynthSpec) -> list[InteractionRecord]:
    """Simulated records after dropout truncation and MCAR deletion."""
    complete = simulate_cohort(spec)
    rng = np.random.default_rng([spec.seed, 2])
    kept: list[InteractionRecord] = []
    dropped_key = None
    for record in complete:
        key = (record.learner_id, record.question_id)
        if key == dropped_key:
            continue
        if spec.dropout_hazard > 0 and rng.random() < spec.dropout_hazard:
            dropped_key = key
            continue
        kept.append(record)
    if spec.mcar_rate > 0:
        kept = [r for r in kept if rng.random() >= spec.mcar_rate]
    return kept


def spec_to_json(spec: SynthSpec) -> str:
    payload = {
        "num_learners": spec.num_learners,
        "num_questions": spec.num_questions,
        "max_attempts": spec.max_attempts,
        "mcar_rate": spec.mcar_rate,
        "dropout_hazard": spec.dropout_hazard,
        "seed": spec.seed,
        "question_params": [
            {"L0": p.l0, "T": p.t, "G": p.g, "S": p.s} for p in spec.resolved_params()
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def spec_from_dict(raw: dict) -> SynthSpec:
    params = raw.get("question_params")
    if params is not None:
        params = tuple(
            BktParams(l0=p["L0"], t=p["T"], g=p["G"], s=p["S"]) for p in params
        )
    return SynthSpec(
        num_learners=raw["num_learners"],
        num_questions=raw["num_questions"],
        max_attempts=raw["max_attempts"],
        mcar_rate=raw.get("mcar_rate", 0.0),
        dropout_hazard=raw.get("dropout_hazard", 0.0),
        seed=raw.get("seed", 0),
        question_params=params,
    )
