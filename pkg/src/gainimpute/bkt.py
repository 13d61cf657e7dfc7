"""Bayesian Knowledge Tracing: per-question parameter fitting and evaluation.

The learner model is the 2-state hidden Markov chain with an absorbing
mastered state: initial mastery L0, learning transition T, guess G, slip S.
Parameters are fitted per question by EM (Baum-Welch) over the learners'
response sequences, with identifiability caps G <= 0.5 and S <= 0.5.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError
from .tensors import DenseTensor, PerformanceTensor


@dataclass(frozen=True)
class BktParams:
    l0: float
    t: float
    g: float
    s: float

    def __post_init__(self):
        for name, value in vars(self).items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be a probability, got {value}")


@dataclass(frozen=True)
class BktFitConfig:
    restarts: int = 5
    max_iterations: int = 200
    tol: float = 1e-6
    seed: int = 0
    floor: float = 1e-4
    guess_cap: float = 0.5
    slip_cap: float = 0.5


@dataclass
class BktFit:
    params: BktParams
    log_likelihood: float
    rmse: float
    n_sequences: int
    loglik_history: list[float] = field(default_factory=list)


@dataclass
class BktPrediction:
    probs: np.ndarray
    degenerate: bool = False


def binarize(d: DenseTensor, threshold: float = 0.5, mode: str = "threshold",
             seed: int = 0) -> PerformanceTensor:
    """Turn imputed probabilities into outcomes; the result has no missing cells.

    threshold mode marks values >= threshold correct; bernoulli mode draws
    each cell with its imputed probability (seeded), for sensitivity runs.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if mode == "threshold":
        correct = d.values >= threshold
    elif mode == "bernoulli":
        rng = np.random.default_rng(seed)
        correct = rng.random(d.values.shape) < d.values
    else:
        raise ValueError(f"unknown binarize mode {mode!r}")
    return PerformanceTensor(correct=correct, observed=np.ones_like(correct))


def predict_sequence(p: BktParams, seq) -> BktPrediction:
    """Causal per-step correctness probabilities under the BKT recursion.

    A 0/0 posterior (impossible evidence under the parameters) is defined
    as 0 and flagged.
    """
    obs = np.asarray(getattr(seq, "outcomes", seq), dtype=np.float64)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("sequence must be a non-empty 1D array")
    level = p.l0
    degenerate = False
    probs = np.empty(obs.size)
    for step, outcome in enumerate(obs):
        probs[step] = level * (1.0 - p.s) + (1.0 - level) * p.g
        if outcome == 1.0:
            num = level * (1.0 - p.s)
            den = num + (1.0 - level) * p.g
        else:
            num = level * p.s
            den = num + (1.0 - level) * (1.0 - p.g)
        if den == 0.0:
            posterior = 0.0
            degenerate = True
        else:
            posterior = num / den
        level = posterior + (1.0 - posterior) * p.t
    return BktPrediction(probs=probs, degenerate=degenerate)


def _pad_sequences(sequences):
    arrays = [np.asarray(getattr(s, "outcomes", s), dtype=np.float64) for s in sequences]
    for a in arrays:
        if a.ndim != 1 or a.size == 0:
            raise ValueError("each sequence must be a non-empty 1D array")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("sequence outcomes must be 0 or 1")
    t_max = max(a.size for a in arrays)
    obs = np.zeros((len(arrays), t_max))
    valid = np.zeros((len(arrays), t_max), dtype=bool)
    for i, a in enumerate(arrays):
        obs[i, : a.size] = a
        valid[i, : a.size] = True
    return obs, valid


def _loglik_and_posteriors(obs, valid, l0, t, g, s):
    """Scaled forward-backward over all sequences at once.

    Returns (total loglik, gamma, xi_um) where gamma[s, t, state] are the
    smoothed state posteriors and xi_um[s, t] the expected unmastered ->
    mastered transitions between t and t+1.
    """
    n_seq, t_max = obs.shape
    # emission likelihood per state; identity beyond the sequence end
    e_u = np.where(valid, np.where(obs == 1.0, g, 1.0 - g), 1.0)
    e_m = np.where(valid, np.where(obs == 1.0, 1.0 - s, s), 1.0)
    emis = np.stack([e_u, e_m], axis=2)

    alpha = np.empty((n_seq, t_max, 2))
    scales = np.empty((n_seq, t_max))
    state = np.tile([1.0 - l0, l0], (n_seq, 1)) * emis[:, 0]
    scales[:, 0] = state.sum(axis=1)
    alpha[:, 0] = state / scales[:, 0][:, None]
    for step in range(1, t_max):
        prev = alpha[:, step - 1]
        pred_u = prev[:, 0] * (1.0 - t)
        pred_m = prev[:, 0] * t + prev[:, 1]
        state = np.stack([pred_u, pred_m], axis=1) * emis[:, step]
        scales[:, step] = state.sum(axis=1)
        alpha[:, step] = state / scales[:, step][:, None]

    beta = np.empty((n_seq, t_max, 2))
    beta[:, t_max - 1] = 1.0
    for step in range(t_max - 2, -1, -1):
        nxt = beta[:, step + 1] * emis[:, step + 1]
        beta[:, step, 0] = ((1.0 - t) * nxt[:, 0] + t * nxt[:, 1]) / scales[:, step + 1]
        beta[:, step, 1] = nxt[:, 1] / scales[:, step + 1]

    gamma = alpha * beta
    xi_um = (
        alpha[:, :-1, 0]
        * t
        * emis[:, 1:, 1]
        * beta[:, 1:, 1]
        / scales[:, 1:]
    )
    loglik = float(np.log(scales[valid]).sum())
    return loglik, gamma, xi_um


def _em_fit(obs, valid, init: BktParams, cfg: BktFitConfig):
    l0, t, g, s = init.l0, init.t, init.g, init.s
    lo = cfg.floor
    history = []
    prev_ll = -np.inf
    for _ in range(cfg.max_iterations):
        ll, gamma, xi_um = _loglik_and_posteriors(obs, valid, l0, t, g, s)
        if ll < prev_ll - 1e-6:
            raise RuntimeError(f"EM log-likelihood decreased: {prev_ll} -> {ll}")
        history.append(ll)
        if ll - prev_ll < cfg.tol and np.isfinite(prev_ll):
            break
        prev_ll = ll

        w = valid.astype(np.float64)
        w_trans = valid[:, 1:].astype(np.float64)
        g_u = gamma[:, :, 0] * w
        g_m = gamma[:, :, 1] * w

        l0 = float(np.clip(gamma[:, 0, 1].mean(), lo, 1.0 - lo))
        denom_t = float((gamma[:, :-1, 0] * w_trans).sum())
        if denom_t > 0:
            t = float(np.clip((xi_um * w_trans).sum() / denom_t, lo, 1.0 - lo))
        denom_g = float(g_u.sum())
        if denom_g > 0:
            g = float(np.clip((g_u * obs).sum() / denom_g, lo, cfg.guess_cap))
        denom_s = float(g_m.sum())
        if denom_s > 0:
            s = float(np.clip((g_m * (1.0 - obs)).sum() / denom_s, lo, cfg.slip_cap))

    final_ll, _, _ = _loglik_and_posteriors(obs, valid, l0, t, g, s)
    return BktParams(l0, t, g, s), final_ll, history


def _canonical_order(sequences):
    arrays = [np.asarray(getattr(s, "outcomes", s), dtype=np.float64) for s in sequences]
    return sorted(arrays, key=lambda a: (a.size, tuple(a.tolist())))


def fit_question(sequences, config: BktFitConfig | None = None) -> BktFit:
    """EM over the question's response sequences, best of several restarts.

    Sequences are canonically ordered first, so the fit is exactly
    invariant to the order they are supplied in.
    """
    if not sequences:
        raise DataError("fit_question needs at least one sequence")
    cfg = config or BktFitConfig()
    ordered = _canonical_order(sequences)
    obs, valid = _pad_sequences(ordered)
    rng = np.random.default_rng(cfg.seed)

    best = None
    for _ in range(cfg.restarts):
        init = BktParams(
            l0=float(rng.uniform(0.1, 0.9)),
            t=float(rng.uniform(0.1, 0.9)),
            g=float(rng.uniform(0.05, min(0.45, cfg.guess_cap))),
            s=float(rng.uniform(0.05, min(0.45, cfg.slip_cap))),
        )
        params, ll, history = _em_fit(obs, valid, init, cfg)
        if best is None or ll > best[1]:
            best = (params, ll, history)

    params, ll, history = best
    sq_sum = 0.0
    count = 0
    for seq in ordered:
        pred = predict_sequence(params, seq)
        sq_sum += float(((pred.probs - seq) ** 2).sum())
        count += seq.size
    rmse = float(np.sqrt(sq_sum / count))
    return BktFit(params=params, log_likelihood=ll, rmse=rmse,
                  n_sequences=len(ordered), loglik_history=history)


def sequences_from_tensor(t: PerformanceTensor) -> dict[int, list[np.ndarray]]:
    """Per question: one observed-outcome sequence per learner, attempt order."""
    out: dict[int, list[np.ndarray]] = {}
    values = t.correct.astype(np.float64)
    for j in range(t.num_questions):
        seqs = []
        for u in range(t.num_learners):
            observed = t.observed[u, j]
            if observed.any():
                seqs.append(values[u, j][observed])
        if seqs:
            out[j] = seqs
    return out


def fit_all_questions(t: PerformanceTensor, config: BktFitConfig | None = None
                      ) -> dict[int, BktFit]:
    return {
        j: fit_question(seqs, config)
        for j, seqs in sequences_from_tensor(t).items()
    }


def bkt_rmse(fits, t: PerformanceTensor) -> float:
    """RMSE of causal BKT predictions over every observed step of the tensor."""
    sq_sum = 0.0
    count = 0
    values = t.correct.astype(np.float64)
    for j in range(t.num_questions):
        fit = fits.get(j)
        if fit is None:
            continue
        params = fit.params if isinstance(fit, BktFit) else fit
        for u in range(t.num_learners):
            observed = t.observed[u, j]
            if not observed.any():
                continue
            seq = values[u, j][observed]
            pred = predict_sequence(params, seq)
            sq_sum += float(((pred.probs - seq) ** 2).sum())
            count += seq.size
    if count == 0:
        raise DataError("no observed steps to evaluate")
    return float(np.sqrt(sq_sum / count))


def paired_t_test_one_sided(original, imputed) -> tuple[float, float]:
    """One-sided paired t-test with alternative imputed < original.

    Returns (t statistic, p value) with n-1 degrees of freedom.
    """
    original = np.asarray(original, dtype=np.float64)
    imputed = np.asarray(imputed, dtype=np.float64)
    if original.shape != imputed.shape or original.ndim != 1:
        raise ValueError("inputs must be equal-length 1D sequences")
    n = original.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = imputed - original
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("zero variance in differences")
    t_stat = float(d.mean() / (sd / np.sqrt(n)))
    p = float(stats.t.cdf(t_stat, df=n - 1))
    return t_stat, p


def fit_report_csv(fits: dict[int, BktFit], question_ids=None) -> str:
    """CSV table of fitted parameters, one row per question."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["question_id", "L0", "T", "G", "S", "loglik", "rmse", "n_sequences"]
    )
    for j in sorted(fits):
        fit = fits[j]
        qid = question_ids[j] if question_ids else str(j)
        writer.writerow(
            [
                qid,
                repr(fit.params.l0),
                repr(fit.params.t),
                repr(fit.params.g),
                repr(fit.params.s),
                repr(fit.log_likelihood),
                repr(fit.rmse),
                fit.n_sequences,
            ]
        )
    return out.getvalue()
