import math

import numpy as np
import pytest

from gainimpute import bkt
from gainimpute.errors import DataError
from gainimpute.tensors import DenseTensor, PerformanceTensor


def simulate_sequences(params: bkt.BktParams, n_learners: int, n_attempts: int, seed: int):
    rng = np.random.default_rng(seed)
    seqs = []
    for _ in range(n_learners):
        mastered = rng.random() < params.l0
        seq = np.empty(n_attempts)
        for i in range(n_attempts):
            p_correct = (1.0 - params.s) if mastered else params.g
            seq[i] = 1.0 if rng.random() < p_correct else 0.0
            if not mastered and rng.random() < params.t:
                mastered = True
        seqs.append(seq)
    return seqs


def grid_search_loglik(seqs, grid_vals, guess_cap=0.5, slip_cap=0.5):
    """Independent exhaustive oracle: scaled forward over the full grid."""
    axes = np.meshgrid(*[grid_vals] * 4, indexing="ij")
    l0, t, g, s = [a.reshape(-1) for a in axes]
    feasible = (g <= guess_cap) & (s <= slip_cap)
    total = np.zeros(l0.size)
    for seq in seqs:
        a_u = (1 - l0) * np.where(seq[0] == 1, g, 1 - g)
        a_m = l0 * np.where(seq[0] == 1, 1 - s, s)
        c = a_u + a_m
        ll = np.log(c)
        a_u, a_m = a_u / c, a_m / c
        for o in seq[1:]:
            pu = a_u * (1 - t)
            pm = a_u * t + a_m
            a_u = pu * np.where(o == 1, g, 1 - g)
            a_m = pm * np.where(o == 1, 1 - s, s)
            c = a_u + a_m
            ll += np.log(c)
            a_u, a_m = a_u / c, a_m / c
        total += ll
    return float(total[feasible].max())


class TestBinarize:
    def test_threshold_boundary_is_correct(self):
        d = DenseTensor(np.full((1, 1, 2), 0.5))
        t = bkt.binarize(d, 0.5)
        assert np.all(t.correct)
        assert np.all(t.observed)

    def test_threshold_split(self):
        d = DenseTensor(np.array([[[0.49, 0.51]]]))
        t = bkt.binarize(d, 0.5)
        assert list(t.correct[0, 0]) == [False, True]

    def test_idempotent_on_binary_values(self):
        d = DenseTensor(np.array([[[0.0, 1.0, 1.0, 0.0]]]))
        t1 = bkt.binarize(d, 0.5)
        t2 = bkt.binarize(DenseTensor(t1.correct.astype(float)), 0.5)
        assert np.array_equal(t1.correct, t2.correct)

    def test_bernoulli_mode_seeded(self):
        d = DenseTensor(np.full((10, 10, 4), 0.3))
        a = bkt.binarize(d, 0.5, mode="bernoulli", seed=3)
        b = bkt.binarize(d, 0.5, mode="bernoulli", seed=3)
        assert np.array_equal(a.correct, b.correct)
        assert abs(a.correct.mean() - 0.3) < 0.1

    def test_threshold_range(self):
        d = DenseTensor(np.zeros((1, 1, 1)))
        with pytest.raises(ValueError):
            bkt.binarize(d, 0.0)


class TestPredictSequence:
    def test_mastered_never_slips(self):
        p = bkt.BktParams(1.0, 0.0, 0.3, 0.0)
        pred = bkt.predict_sequence(p, [1.0, 1.0, 1.0])
        assert np.all(pred.probs == 1.0)
        assert not pred.degenerate

    def test_frozen_unmastered_guesses(self):
        p = bkt.BktParams(0.0, 0.0, 0.3, 0.1)
        pred = bkt.predict_sequence(p, [0.0, 0.0, 0.0, 0.0])
        assert np.allclose(pred.probs, 0.3)

    def test_hand_posterior_update(self):
        p = bkt.BktParams(0.5, 0.2, 0.1, 0.1)
        pred = bkt.predict_sequence(p, [1.0, 1.0])
        # posterior after a correct: 0.45 / 0.50 = 0.9; next level 0.92
        assert pred.probs[0] == pytest.approx(0.5)
        assert pred.probs[1] == pytest.approx(0.92 * 0.9 + 0.08 * 0.1)
        assert not pred.degenerate

    def test_degenerate_evidence_flagged(self):
        p = bkt.BktParams(0.0, 0.0, 0.0, 0.0)
        pred = bkt.predict_sequence(p, [1.0])  # correct is impossible: L=0, G=0
        assert pred.degenerate
        assert pred.probs[0] == 0.0

    def test_outputs_in_unit_interval_and_monotone_when_no_slip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = bkt.BktParams(rng.random(), rng.random(), rng.random() / 2, 0.0)
            seq = np.ones(6)
            pred = bkt.predict_sequence(p, seq)
            assert np.all((pred.probs >= 0) & (pred.probs <= 1))
            assert np.all(np.diff(pred.probs) >= -1e-12)


class TestFitQuestion:
    def test_all_correct_saturates(self):
        fit = bkt.fit_question([np.ones(4)] * 10, bkt.BktFitConfig(seed=0))
        p = fit.params
        assert p.l0 * (1 - p.s) + (1 - p.l0) * p.g >= 0.99

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(21)
        seqs = [rng.integers(0, 2, 4).astype(float) for _ in range(20)]
        grid_best = grid_search_loglik(seqs, np.arange(0.05, 0.951, 0.05))
        fit = bkt.fit_question(seqs, bkt.BktFitConfig(seed=5))
        assert fit.log_likelihood >= grid_best - 1e-3

    def test_parameter_recovery(self):
        truth = bkt.BktParams(0.3, 0.2, 0.15, 0.1)
        seqs = simulate_sequences(truth, 200, 6, seed=11)
        fit = bkt.fit_question(seqs, bkt.BktFitConfig(seed=3))
        est = fit.params
        assert abs(est.l0 - truth.l0) < 0.1
        assert abs(est.t - truth.t) < 0.1
        assert abs(est.g - truth.g) < 0.1
        assert abs(est.s - truth.s) < 0.1

    def test_loglik_monotone_over_iterations(self):
        seqs = simulate_sequences(bkt.BktParams(0.4, 0.3, 0.2, 0.15), 40, 5, seed=2)
        fit = bkt.fit_question(seqs, bkt.BktFitConfig(seed=1))
        hist = fit.loglik_history
        assert len(hist) >= 2
        assert all(b >= a - 1e-9 for a, b in zip(hist, hist[1:]))

    def test_invariant_to_sequence_order(self):
        rng = np.random.default_rng(9)
        seqs = [rng.integers(0, 2, rng.integers(1, 6)).astype(float) for _ in range(25)]
        fit1 = bkt.fit_question(seqs, bkt.BktFitConfig(seed=4))
        shuffled = [seqs[i] for i in rng.permutation(len(seqs))]
        fit2 = bkt.fit_question(shuffled, bkt.BktFitConfig(seed=4))
        assert fit1.params == fit2.params
        assert fit1.log_likelihood == fit2.log_likelihood

    def test_caps_respected(self):
        rng = np.random.default_rng(10)
        seqs = [rng.integers(0, 2, 5).astype(float) for _ in range(30)]
        fit = bkt.fit_question(seqs, bkt.BktFitConfig(seed=0))
        assert fit.params.g <= 0.5
        assert fit.params.s <= 0.5

    def test_empty_input(self):
        with pytest.raises(DataError):
            bkt.fit_question([])


class TestBktRmse:
    def test_perfect_predictor(self):
        # mastered, no slip, no guess: predicts 1 on all-correct data
        t = PerformanceTensor(
            correct=np.ones((3, 1, 4), bool), observed=np.ones((3, 1, 4), bool)
        )
        fits = {0: bkt.BktParams(1.0, 0.0, 0.0, 0.0)}
        assert bkt.bkt_rmse(fits, t) == 0.0

    def test_constant_half_predictor(self):
        rng = np.random.default_rng(1)
        correct = rng.random((5, 2, 4)) < 0.5
        t = PerformanceTensor(correct=correct, observed=np.ones_like(correct))
        # L0=0.5, T=0, G=0.5, S=0.5 predicts 0.5 everywhere
        fits = {j: bkt.BktParams(0.5, 0.0, 0.5, 0.5) for j in range(2)}
        assert bkt.bkt_rmse(fits, t) == pytest.approx(0.5)

    def test_hand_arithmetic(self):
        preds = np.array([0.3, 0.9])
        outcomes = np.array([0.0, 1.0])
        expected = math.sqrt(((preds - outcomes) ** 2).mean())
        assert expected == pytest.approx(0.2236, abs=1e-4)
        # reproduce through the API: single question, params that yield those preds
        # use direct predict_sequence comparison instead
        p = bkt.BktParams(0.5, 0.2, 0.1, 0.1)
        pred = bkt.predict_sequence(p, outcomes)
        manual = math.sqrt(((pred.probs - outcomes) ** 2).mean())
        t = PerformanceTensor(
            correct=outcomes.astype(bool).reshape(1, 1, 2),
            observed=np.ones((1, 1, 2), bool),
        )
        assert bkt.bkt_rmse({0: p}, t) == pytest.approx(manual)

    def test_skips_missing_attempts(self):
        t = PerformanceTensor(
            correct=np.array([[[True, False, True]]]),
            observed=np.array([[[True, False, True]]]),
        )
        p = bkt.BktParams(0.5, 0.1, 0.2, 0.1)
        direct = bkt.predict_sequence(p, [1.0, 1.0])
        expected = math.sqrt(((direct.probs - np.array([1.0, 1.0])) ** 2).mean())
        assert bkt.bkt_rmse({0: p}, t) == pytest.approx(expected)

    def test_no_observed_steps(self):
        t = PerformanceTensor(
            correct=np.zeros((1, 1, 1), bool), observed=np.zeros((1, 1, 1), bool)
        )
        with pytest.raises(DataError):
            bkt.bkt_rmse({0: bkt.BktParams(0.5, 0.1, 0.1, 0.1)}, t)


class TestPairedTTest:
    def test_hand_case_df1_cauchy(self):
        t, p = bkt.paired_t_test_one_sided([0.5, 0.6], [0.4, 0.6])
        assert t == pytest.approx(-1.0)
        assert p == pytest.approx(0.25)

    def test_zero_mean_difference(self):
        t, p = bkt.paired_t_test_one_sided([0.4, 0.6, 0.5], [0.5, 0.5, 0.5])
        assert t == pytest.approx(0.0)
        assert p == pytest.approx(0.5)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            bkt.paired_t_test_one_sided([0.5, 0.6], [0.4, 0.5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bkt.paired_t_test_one_sided([0.5], [0.4, 0.5])


class TestFitReport:
    def test_csv_round_trip_fields(self):
        seqs = simulate_sequences(bkt.BktParams(0.4, 0.3, 0.2, 0.1), 20, 4, seed=5)
        fits = {0: bkt.fit_question(seqs, bkt.BktFitConfig(seed=0))}
        text = bkt.fit_report_csv(fits, question_ids=["q7"])
        lines = text.strip().split("\n")
        assert lines[0] == "question_id,L0,T,G,S,loglik,rmse,n_sequences"
        cells = lines[1].split(",")
        assert cells[0] == "q7"
        assert float(cells[1]) == fits[0].params.l0
        assert int(cells[7]) == 20
