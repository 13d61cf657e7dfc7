"""Imputation of sparse learner-performance tensors.

Builds (learners x questions x attempts) outcome tensors from interaction
logs, fills the missing cells with an adversarial imputer or one of several
factorization/GAN baselines, and quantifies the downstream effect on
knowledge-tracing parameters via RMSE comparisons and KL divergence.
"""

__version__ = "0.1.0"

from .tensors import (  # noqa: F401
    DenseTensor,
    LearnerSlice,
    MaskMatrix,
    Outcome,
    PerformanceTensor,
    SparsityProfile,
    assemble,
    learner_slice,
    sparsity_increase_rate,
    sparsity_level,
    truncate_attempts,
)
