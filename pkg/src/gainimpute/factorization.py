"""Tensor-factorization imputation baselines.

Three flavors over the same trilinear model  pred(u,j,i) = sum_r A[u,r] B[j,r] C[i,r]:

- gradient-descent factorization with an attempt-monotonicity penalty
  (squared hinge on prediction drops between consecutive attempts),
- masked alternating least squares (CPD) with ridge regularization and an
  optional isotonic projection of the attempt factors after each sweep,
- a Gibbs sampler with Normal-Wishart hyperpriors on the factor rows and a
  Gamma-sampled observation precision (BPTF), predicting with the
  posterior mean over kept samples.

Predictions are clamped to [0, 1] only at imputation time so the
least-squares structure stays intact during fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import stats
from scipy.optimize import isotonic_regression

from .errors import DataError
from .tensors import DenseTensor, PerformanceTensor


@dataclass
class FactorModel:
    learner_factors: np.ndarray  # U x r
    question_factors: np.ndarray  # N x r
    attempt_factors: np.ndarray  # M x r
    rank: int
    reg_weight: float
    rank_weight: float


@dataclass
class CpdModel:
    learner_factors: np.ndarray
    question_factors: np.ndarray
    attempt_factors: np.ndarray
    rank: int


@dataclass
class BptfModel:
    learner_samples: list[np.ndarray]
    question_samples: list[np.ndarray]
    attempt_samples: list[np.ndarray]
    precision_samples: list[float]
    rank: int
    burn_in: int
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learner_samples:
            raise ValueError("need at least one kept sample")


def _predictions(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.einsum("ur,jr,ir->uji", a, b, c)


def predict_cell(model, u: int, j: int, i: int) -> float:
    """Clamped trilinear prediction (posterior mean for BPTF)."""
    if isinstance(model, BptfModel):
        vals = [
            float(a[u] @ (b[j] * c[i]))
            for a, b, c in zip(
                model.learner_samples, model.question_samples, model.attempt_samples
            )
        ]
        raw = float(np.mean(vals))
    else:
        a, b, c = model.learner_factors, model.question_factors, model.attempt_factors
        raw = float(a[u] @ (b[j] * c[i]))
    return float(np.clip(raw, 0.0, 1.0))


def _prediction_tensor(model) -> np.ndarray:
    if isinstance(model, BptfModel):
        acc = np.zeros(
            (
                model.learner_samples[0].shape[0],
                model.question_samples[0].shape[0],
                model.attempt_samples[0].shape[0],
            )
        )
        for a, b, c in zip(
            model.learner_samples, model.question_samples, model.attempt_samples
        ):
            acc += _predictions(a, b, c)
        return acc / len(model.learner_samples)
    return _predictions(
        model.learner_factors, model.question_factors, model.attempt_factors
    )


def _observed_values(t: PerformanceTensor) -> np.ndarray:
    return np.where(t.observed, t.correct.astype(np.float64), 0.0)


def _init_factors(rng, dims, rank):
    # positive start so trilinear products begin in the outcome range
    scale = (0.5 / rank) ** (1.0 / 3.0)
    return [rng.uniform(0.2, 1.0, (d, rank)) * scale for d in dims]


def tf_train(
    t: PerformanceTensor,
    rank: int = 3,
    reg_weight: float = 0.01,
    rank_weight: float = 0.1,
    learning_rate: float = 1.0,
    epochs: int = 500,
    seed: int = 0,
) -> FactorModel:
    """Full-batch gradient descent on observed squared error plus penalties.

    The rank penalty is a squared hinge on drops between consecutive
    attempts, discouraging predicted performance from decreasing as a
    learner retries a question.  The step size is the learning rate divided
    by the observed-cell count, so the default transfers across tensor sizes.
    """
    if t.observed_count() == 0:
        raise DataError("cannot fit factors on an all-missing tensor")
    rng = np.random.default_rng(seed)
    a, b, c = _init_factors(rng, t.shape, rank)
    y = _observed_values(t)
    w = t.observed.astype(np.float64)
    n_pairs = t.num_learners * t.num_questions * max(t.max_attempts - 1, 0)
    step = learning_rate / (float(w.sum()) + rank_weight * n_pairs)
    for _ in range(epochs):
        pred = _predictions(a, b, c)
        g_pred = 2.0 * w * (pred - y)
        if rank_weight > 0 and t.max_attempts > 1:
            drops = np.maximum(0.0, pred[:, :, :-1] - pred[:, :, 1:])
            g_pred[:, :, :-1] += 2.0 * rank_weight * drops
            g_pred[:, :, 1:] -= 2.0 * rank_weight * drops
        ga = np.einsum("uji,jr,ir->ur", g_pred, b, c) + 2.0 * reg_weight * a
        gb = np.einsum("uji,ur,ir->jr", g_pred, a, c) + 2.0 * reg_weight * b
        gc = np.einsum("uji,ur,jr->ir", g_pred, a, b) + 2.0 * reg_weight * c
        a -= step * ga
        b -= step * gb
        c -= step * gc
    return FactorModel(a, b, c, rank, reg_weight, rank_weight)


def rank_penalty(model) -> float:
    """Current value of the squared-hinge drop penalty (unweighted)."""
    pred = _prediction_tensor(model)
    drops = np.maximum(0.0, pred[:, :, :-1] - pred[:, :, 1:])
    return float((drops**2).sum())


def _solve_rows(target_axis, y, w, left, right, rank, reg):
    """Ridge least squares for every row of one factor, others held fixed."""
    rows = y.shape[target_axis]
    out = np.empty((rows, rank))
    y_rows = np.moveaxis(y, target_axis, 0).reshape(rows, -1)
    w_rows = np.moveaxis(w, target_axis, 0).reshape(rows, -1)
    design = np.einsum("jr,ir->jir", left, right).reshape(-1, rank)
    for idx in range(rows):
        obs = w_rows[idx] == 1.0
        if not obs.any():
            out[idx] = 0.0
            continue
        z = design[obs]
        rhs = z.T @ y_rows[idx][obs]
        gram = z.T @ z
        try:
            sol = np.linalg.solve(gram + reg * np.eye(rank), rhs)
            if not np.all(np.isfinite(sol)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            sol = np.linalg.solve(gram + (reg + 1e-6) * np.eye(rank), rhs)
        out[idx] = sol
    return out


def cpd_train(
    t: PerformanceTensor,
    rank: int = 3,
    reg_weight: float = 0.01,
    iterations: int = 30,
    seed: int = 0,
    monotone_attempts: bool = True,
) -> CpdModel:
    """Masked alternating least squares over the three factor matrices.

    With monotone_attempts, each sweep ends by projecting every attempt
    factor column to a non-decreasing sequence (isotonic regression),
    encoding the same positive-learning-trend constraint as tf_train.
    """
    if t.observed_count() == 0:
        raise DataError("cannot fit factors on an all-missing tensor")
    rng = np.random.default_rng(seed)
    a, b, c = _init_factors(rng, t.shape, rank)
    y = _observed_values(t)
    w = t.observed.astype(np.float64)
    for _ in range(iterations):
        a = _solve_rows(0, y, w, b, c, rank, reg_weight)
        b = _solve_rows(1, y, w, a, c, rank, reg_weight)
        c = _solve_rows(2, y, w, a, b, rank, reg_weight)
        if monotone_attempts and t.max_attempts > 1:
            for r in range(rank):
                c[:, r] = isotonic_regression(c[:, r]).x
    return CpdModel(a, b, c, rank)


def observed_sq_error(model, t: PerformanceTensor) -> float:
    pred = _prediction_tensor(model)
    err = np.where(t.observed, pred - _observed_values(t), 0.0)
    return float((err * err).sum())


def _sample_normal_wishart(rows, rng, beta0=1.0, nu0=None, w0=None, mu0=None):
    n, r = rows.shape
    nu0 = r if nu0 is None else nu0
    w0 = np.eye(r) if w0 is None else w0
    mu0 = np.zeros(r) if mu0 is None else mu0
    mean = rows.mean(axis=0)
    centered = rows - mean
    s = centered.T @ centered
    beta_n = beta0 + n
    nu_n = nu0 + n
    mu_n = (beta0 * mu0 + n * mean) / beta_n
    dev = (mean - mu0)[:, None]
    w_inv = np.linalg.inv(w0) + s + (beta0 * n / beta_n) * (dev @ dev.T)
    w_n = np.linalg.inv(w_inv)
    w_n = (w_n + w_n.T) / 2.0
    lam = stats.wishart.rvs(df=nu_n, scale=w_n, random_state=rng)
    lam = np.atleast_2d(lam)
    cov = np.linalg.inv(beta_n * lam)
    mu = rng.multivariate_normal(mu_n, (cov + cov.T) / 2.0, method="cholesky")
    return mu, lam


def _sample_factor_rows(y, w, left, right, mu, lam, alpha, rng):
    """Draw each row of one factor from its Gaussian conditional."""
    rows = y.shape[0]
    rank = left.shape[1]
    out = np.empty((rows, rank))
    design = np.einsum("jr,ir->jir", left, right).reshape(-1, rank)
    y_flat = y.reshape(rows, -1)
    w_flat = w.reshape(rows, -1)
    noise = rng.standard_normal((rows, rank))
    for idx in range(rows):
        obs = w_flat[idx] == 1.0
        if obs.any():
            z = design[obs]
            prec = lam + alpha * (z.T @ z)
            lin = lam @ mu + alpha * (z.T @ y_flat[idx][obs])
        else:
            prec = lam
            lin = lam @ mu
        prec = (prec + prec.T) / 2.0
        chol = np.linalg.cholesky(prec)
        mean = sla.cho_solve((chol, True), lin)
        out[idx] = mean + sla.solve_triangular(chol.T, noise[idx], lower=False)
    return out


def bptf_train(
    t: PerformanceTensor,
    rank: int = 3,
    gibbs_steps: int = 60,
    burn_in: int = 20,
    seed: int = 0,
    learner_keys=None,
) -> BptfModel:
    """Gibbs sampler for the Bayesian trilinear model.

    learner_keys gives stable identities to learner rows: the chain runs in
    key order, so relabeling learners permutes predictions without changing
    them (the draws follow the keys).
    """
    if gibbs_steps <= burn_in:
        raise ValueError("gibbs_steps must exceed burn_in")
    if t.observed_count() == 0:
        raise DataError("cannot fit factors on an all-missing tensor")
    u_count = t.num_learners
    if learner_keys is None:
        order = np.arange(u_count)
    else:
        learner_keys = np.asarray(learner_keys)
        if learner_keys.shape != (u_count,) or len(set(learner_keys.tolist())) != u_count:
            raise ValueError("learner_keys must be a permutation-like unique vector")
        order = np.argsort(learner_keys, kind="stable")
    inverse = np.argsort(order, kind="stable")

    y = _observed_values(t)[order]
    w = t.observed.astype(np.float64)[order]
    n_obs = float(w.sum())
    rng = np.random.default_rng(seed)
    a, b, c = _init_factors(rng, y.shape, rank)
    alpha = 1.0
    a0 = b0 = 1.0

    learner_samples, question_samples, attempt_samples, precision_samples = [], [], [], []
    for step in range(gibbs_steps):
        mu_a, lam_a = _sample_normal_wishart(a, rng)
        mu_b, lam_b = _sample_normal_wishart(b, rng)
        mu_c, lam_c = _sample_normal_wishart(c, rng)
        a = _sample_factor_rows(y, w, b, c, mu_a, lam_a, alpha, rng)
        b = _sample_factor_rows(
            np.moveaxis(y, 1, 0), np.moveaxis(w, 1, 0), a, c, mu_b, lam_b, alpha, rng
        )
        c = _sample_factor_rows(
            np.moveaxis(y, 2, 0), np.moveaxis(w, 2, 0), a, b, mu_c, lam_c, alpha, rng
        )
        sse = float((np.where(w == 1.0, _predictions(a, b, c) - y, 0.0) ** 2).sum())
        alpha = float(rng.gamma(a0 + n_obs / 2.0, 1.0 / (b0 + sse / 2.0)))
        if step >= burn_in:
            learner_samples.append(a[inverse].copy())
            question_samples.append(b.copy())
            attempt_samples.append(c.copy())
            precision_samples.append(alpha)

    return BptfModel(
        learner_samples,
        question_samples,
        attempt_samples,
        precision_samples,
        rank,
        burn_in,
        hyper={"beta0": 1.0, "nu0": rank, "a0": a0, "b0": b0},
    )


def factor_impute(model, t: PerformanceTensor) -> DenseTensor:
    """Predict every missing cell; observed cells pass through unchanged."""
    pred = np.clip(_prediction_tensor(model), 0.0, 1.0)
    values = np.where(t.observed, t.correct.astype(np.float64), pred)
    return DenseTensor(values)
