import itertools
from functools import lru_cache

import numpy as np
import pytest

from fluentforge import corpus as cp
from fluentforge import metrics as mt
from fluentforge import stutterzero as sz
from fluentforge import training as tr


def brute_force_distance(ref, hyp):
    """Independent recursive minimal edit cost."""
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(go(i + 1, j + 1) + (ref[i] != hyp[j]),
                   go(i + 1, j) + 1,
                   go(i, j + 1) + 1)
    return go(0, 0)


class TestEditDistance:
    def test_identical_is_zero(self):
        ops = mt.edit_distance("abc", "abc")
        assert (ops.substitutions, ops.deletions, ops.insertions) == (0, 0, 0)

    def test_worked_example(self):
        ops = mt.edit_distance(["a", "b", "c"], ["a", "x", "c", "d"])
        assert (ops.substitutions, ops.insertions, ops.deletions) == (1, 1, 0)
        assert ops.total == 2

    def test_empty_reference(self):
        ops = mt.edit_distance([], ["x", "y", "z"])
        assert ops.insertions == 3 and ops.total == 3

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        alphabet = "abc"
        for _ in range(300):
            ref = "".join(rng.choice(list(alphabet), rng.integers(0, 8)))
            hyp = "".join(rng.choice(list(alphabet), rng.integers(0, 8)))
            assert mt.edit_distance(ref, hyp).total == brute_force_distance(ref, hyp)

    def test_cost_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = "".join(rng.choice(list("abcd"), 6))
            b = "".join(rng.choice(list("abcd"), 6))
            assert mt.edit_distance(a, b).total == mt.edit_distance(b, a).total

    def test_triangle_inequality(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b, c = ("".join(rng.choice(list("ab"), 5)) for _ in range(3))
            ab = mt.edit_distance(a, b).total
            bc = mt.edit_distance(b, c).total
            ac = mt.edit_distance(a, c).total
            assert ac <= ab + bc

    def test_tie_break_prefers_substitution(self):
        # "ab" -> "ba" is ambiguous (2 subs, or delete+insert); counts must
        # reflect the substitution-first preference
        ops = mt.edit_distance("ab", "ba")
        assert ops.total == 2
        assert ops.substitutions == 2


class TestErrorRates:
    def test_identical_zero(self):
        assert mt.wer("cat sun", "cat sun") == 0.0
        assert mt.cer("cat sun", "cat sun") == 0.0

    def test_worked_wer(self):
        assert abs(mt.wer("a b c", "a x c d") - 2 / 3) < 1e-12

    def test_worked_cer(self):
        assert mt.cer("ab", "ab") == 0.0
        assert mt.cer("ab", "ac") == 0.5

    def test_normalization_applied(self):
        assert mt.wer("Cat  Sun!", "cat sun") == 0.0
        assert mt.cer("A, B.", "a b") == 0.0

    def test_empty_reference_convention(self):
        assert mt.wer("", "x y") == 2.0

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(3)
        words = ["cat", "dog", "sun"]
        for _ in range(50):
            a = " ".join(rng.choice(words, rng.integers(0, 4)))
            b = " ".join(rng.choice(words, rng.integers(0, 4)))
            w = mt.wer(a, b)
            assert w >= 0.0
            if mt.normalize_text(a) == mt.normalize_text(b):
                assert w == 0.0


def brute_force_wilcoxon_p(diffs):
    diffs = np.asarray(diffs, dtype=float)
    diffs = diffs[diffs != 0]
    n = len(diffs)
    ranks = mt._signed_ranks(diffs)
    w_obs = min(ranks[diffs > 0].sum(), ranks[diffs < 0].sum())
    total = ranks.sum()
    hits = 0
    for signs in itertools.product([0, 1], repeat=n):
        wp = sum(r for r, s in zip(ranks, signs) if s)
        if min(wp, total - wp) <= w_obs + 1e-12:
            hits += 1
    return hits / 2 ** n


class TestWilcoxon:
    def test_all_positive_n6(self):
        r = mt.wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [0] * 6)
        assert r.method == "exact"
        assert abs(r.p_value - 2 / 64) < 1e-12

    def test_antisymmetric_p_one(self):
        r = mt.wilcoxon_signed_rank([1, -1, 2, -2, 3, -3], [0] * 6)
        assert r.p_value == 1.0

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(5, 11))
            d = rng.integers(-9, 10, n).astype(float)
            d[d == 0] = 1.0
            r = mt.wilcoxon_signed_rank(d, np.zeros(n))
            assert abs(r.p_value - brute_force_wilcoxon_p(d)) < 1e-12

    def test_two_sided_symmetry(self):
        a = np.array([3.0, -1.0, 4.0, 1.0, -5.0, 9.0])
        b = np.zeros(6)
        assert mt.wilcoxon_signed_rank(a, b).p_value == mt.wilcoxon_signed_rank(b, a).p_value

    def test_zeros_dropped_and_counted(self):
        r = mt.wilcoxon_signed_rank([1, 2, 3, 4, 5, 7, 7], [0, 0, 0, 0, 0, 7, 7])
        assert r.zeros_dropped == 2 and r.n == 5

    def test_degenerate_error(self):
        with pytest.raises(mt.MetricsError, match="n < 5"):
            mt.wilcoxon_signed_rank([1.0] * 6, [1.0] * 6)

    def test_large_n_uses_approximation(self):
        rng = np.random.default_rng(5)
        d = rng.standard_normal(30)
        r = mt.wilcoxon_signed_rank(d, np.zeros(30))
        assert r.method == "approx"
        assert 0.0 < r.p_value <= 1.0

    def test_non_finite_rejected(self):
        with pytest.raises(mt.MetricsError):
            mt.wilcoxon_signed_rank([1.0, np.nan, 2, 3, 4, 5], [0.0] * 6)


@pytest.fixture(scope="module")
def setup():
    samples = cp.generate_corpus(3, seed=21)
    model, _ = tr.train("stutterzero", samples, sz.mini_config(),
                        tr.TrainConfig(epochs=1, eval_interval=10 ** 9, seed=0))
    return model, samples


class TestEvaluate:
    def test_report_row_per_sample(self, setup):
        model, samples = setup
        report = mt.evaluate_model(model, samples)
        assert len(report.rows) + len(report.failures) == len(samples)

    def test_untrained_model_scores_badly(self, setup):
        model, samples = setup
        report = mt.evaluate_model(model, samples)
        assert all(r.wer_audio >= 0.8 for r in report.rows)

    def test_deterministic(self, setup):
        model, samples = setup
        a = mt.evaluate_model(model, samples)
        b = mt.evaluate_model(model, samples)
        assert [r.wer_audio for r in a.rows] == [r.wer_audio for r in b.rows]
        assert [r.wer_text for r in a.rows] == [r.wer_text for r in b.rows]

    def test_report_csv_summary_consistent(self, setup, tmp_path):
        model, samples = setup
        report = mt.evaluate_model(model, samples)
        path = tmp_path / "report.csv"
        mt.write_report(report, path)
        lines = [l for l in path.read_text().strip().split("\n") if l]
        data = [l for l in lines[1:] if not l.startswith(("summary", "significance"))]
        assert len(data) == len(report.rows)
        summary = {l.split(",")[1]: float(l.split(",")[2])
                   for l in lines if l.startswith("summary,") and "failures" not in l}
        recomputed = float(np.mean([r.wer_audio for r in report.rows]))
        assert abs(summary["wer_audio"] - recomputed) < 1e-6
