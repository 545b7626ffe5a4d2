import numpy as np
import pytest

from oracles import pairwise_auroc_oracle, threshold_sweep_oracle
from zsas.errors import MetricError
from zsas.metrics import (
    auroc,
    average_precision,
    evaluate,
    f1_max,
    write_eval_csv,
    write_eval_json,
)
from zsas.types import BinaryMask, ScoreGrid


def _pair(rng, h=16, w=16, pos_rate=0.3, quantize=None):
    truth = rng.random((h, w)) < pos_rate
    scores = rng.random((h, w))
    if quantize:
        scores = np.round(scores * quantize) / quantize
    return ScoreGrid(scores.astype(np.float32)), BinaryMask(truth)


class TestAuroc:
    def test_perfect(self):
        t = np.array([[True, False], [False, True]])
        s = ScoreGrid(t.astype(np.float32))
        assert auroc(s, BinaryMask(t)) == 1.0

    def test_constant_scores_half(self):
        t = np.array([[True, False]])
        s = ScoreGrid(np.zeros((1, 2), dtype=np.float32))
        assert auroc(s, BinaryMask(t)) == 0.5

    def test_single_class_undefined(self):
        s = ScoreGrid(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(MetricError):
            auroc(s, BinaryMask(np.ones((2, 2), dtype=bool)))

    def test_random_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            s, t = _pair(rng, quantize=8 if trial % 2 else None)
            if t.values.all() or not t.values.any():
                continue
            got = auroc(s, t)
            want = pairwise_auroc_oracle(
                s.values.reshape(-1).astype(np.float64), t.values.reshape(-1)
            )
            assert abs(got - want) < 1e-9

    def test_label_flip_symmetry_tie_free(self):
        # Complementing the labels (equivalently, negating the scores)
        # complements a tie-free AUROC.
        rng = np.random.default_rng(1)
        scores = rng.permutation(256).astype(np.float32).reshape(16, 16)
        truth = rng.random((16, 16)) < 0.4
        s = ScoreGrid(scores)
        a = auroc(s, BinaryMask(truth))
        assert abs(a + auroc(s, BinaryMask(~truth)) - 1.0) < 1e-12
        assert abs(a + auroc(ScoreGrid(-scores), BinaryMask(truth)) - 1.0) < 1e-12


class TestF1Max:
    def test_perfect(self):
        t = np.array([[True, False], [False, True]])
        assert f1_max(ScoreGrid(t.astype(np.float32)), BinaryMask(t)) == 1.0

    def test_all_zero_scores_single_operating_point(self):
        t = np.zeros((4, 4), dtype=bool)
        t[0, :2] = True
        p = t.mean()
        got = f1_max(ScoreGrid(np.zeros((4, 4), dtype=np.float32)), BinaryMask(t))
        assert abs(got - 2 * p / (p + 1)) < 1e-12

    def test_no_positives_undefined(self):
        s = ScoreGrid(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(MetricError):
            f1_max(s, BinaryMask(np.zeros((2, 2), dtype=bool)))

    def test_random_matches_sweep_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(30):
            s, t = _pair(rng, quantize=6 if trial % 2 else None)
            if not t.values.any():
                continue
            want_f1, _ = threshold_sweep_oracle(
                s.values.reshape(-1).astype(np.float64), t.values.reshape(-1)
            )
            assert abs(f1_max(s, t) - want_f1) < 1e-9


class TestAveragePrecision:
    def test_perfect(self):
        t = np.array([[True, False], [False, True]])
        assert average_precision(ScoreGrid(t.astype(np.float32)), BinaryMask(t)) == 1.0

    def test_one_positive_ranked_last(self):
        n = 16
        scores = np.arange(n, 0, -1, dtype=np.float32).reshape(4, 4)
        truth = np.zeros(n, dtype=bool)
        truth[-1] = True  # lowest score is the only positive
        got = average_precision(ScoreGrid(scores), BinaryMask(truth.reshape(4, 4)))
        assert abs(got - 1.0 / n) < 1e-12

    def test_random_matches_sweep_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            s, t = _pair(rng, quantize=5 if trial % 2 else None)
            if not t.values.any():
                continue
            _, want_ap = threshold_sweep_oracle(
                s.values.reshape(-1).astype(np.float64), t.values.reshape(-1)
            )
            assert abs(average_precision(s, t) - want_ap) < 1e-9


class TestInvariances:
    TRANSFORMS = [
        lambda x: 2.0 * x + 1.0,
        lambda x: x**3,
        lambda x: np.arctan(x),
        lambda x: x / 7.0 - 3.0,
        lambda x: np.exp(x / 50.0),
    ]

    def test_monotone_transform_leaves_metrics_unchanged(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            # Integer scores keep transforms collision-free in float64.
            scores = rng.integers(0, 60, size=(12, 12)).astype(np.float64)
            truth = rng.random((12, 12)) < 0.35
            if not truth.any() or truth.all():
                continue
            s = ScoreGrid(scores.astype(np.float32))
            t = BinaryMask(truth)
            base = (auroc(s, t), f1_max(s, t), average_precision(s, t))
            fn = self.TRANSFORMS[trial % len(self.TRANSFORMS)]
            s2 = ScoreGrid(fn(scores).astype(np.float32))
            after = (auroc(s2, t), f1_max(s2, t), average_precision(s2, t))
            for b, a in zip(base, after):
                assert abs(b - a) <= 1e-12

    def test_pooled_equals_concatenated(self):
        rng = np.random.default_rng(5)
        grids, masks = [], []
        for _ in range(4):
            s, t = _pair(rng, h=8, w=8)
            grids.append(s)
            masks.append(t)
        pooled = auroc(grids, masks)
        flat_s = np.concatenate([g.values.reshape(-1) for g in grids]).astype(np.float64)
        flat_t = np.concatenate([m.values.reshape(-1) for m in masks])
        assert abs(pooled - pairwise_auroc_oracle(flat_s, flat_t)) < 1e-9


class TestEvaluate:
    def test_per_image_none_for_undefined(self, tmp_path):
        good = BinaryMask(np.zeros((4, 4), dtype=bool))
        bad = BinaryMask(np.eye(4, dtype=bool))
        s = ScoreGrid(np.eye(4, dtype=np.float32))
        result = evaluate(["a", "b"], [s, s], [good, bad])
        assert result.per_image[0].auroc is None
        assert result.per_image[1].auroc == 1.0
        assert result.positive_pixels == 4
        assert result.negative_pixels == 28
        write_eval_json(result, tmp_path / "e.json")
        write_eval_csv(result, tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2 + 1  # header, two images, pooled

    def test_binary_maps_are_legal(self):
        # {0,1}-valued maps reduce to two operating points but evaluate fine.
        rng = np.random.default_rng(6)
        truth = rng.random((16, 16)) < 0.3
        pred = truth.copy()
        pred[0, :4] = ~pred[0, :4]
        s = ScoreGrid(pred.astype(np.float32), normalized=True)
        t = BinaryMask(truth)
        for metric in (auroc, f1_max, average_precision):
            v = metric(s, t)
            assert 0.0 <= v <= 1.0
