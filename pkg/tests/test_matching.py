import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgrounding import tensor as tn
from tgrounding.errors import ConfigError, ContractError, DataError
from tgrounding.matching import (
    LossConfig, Matcher, contrastive_loss, gt_iou_map, iou_loss, score_map, score_to_probability,
    span_seconds,
)

from conftest import check_gradients


def interval_iou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    return inter / (max(a[1], b[1]) - min(a[0], b[0]))


def bce_loop(scores, targets, eps=1e-6):
    total = 0.0
    for s, t in zip(scores, targets):
        y = min(max((s + 1) / 2, eps), 1 - eps)
        total += -(t * math.log(y) + (1 - t) * math.log(1 - y))
    return total / len(scores)


def nce_loop(moments, queries, tau):
    B = len(moments)
    unit = lambda v: v / math.sqrt(sum(x * x for x in v))
    m = [unit(v) for v in moments]
    q = [unit(v) for v in queries]
    cos = [[float(np.dot(q[a], m[b])) for b in range(B)] for a in range(B)]
    total = 0.0
    for k in range(B):
        total -= math.log(math.exp(cos[k][k] / tau) / sum(math.exp(cos[k][b] / tau) for b in range(B)))
        total -= math.log(math.exp(cos[k][k] / tau) / sum(math.exp(cos[a][k] / tau) for a in range(B)))
    return total


class TestScoreMap:
    def matcher(self, rng, width=3):
        m = Matcher(width, width, width, rng)
        m.moment_proj.weight.data = np.eye(width)[None, None]
        m.moment_proj.bias.data[:] = 0.0
        m.query_proj.weight.data = np.eye(width)
        m.query_proj.bias.data[:] = 0.0
        return m

    def test_same_vector_scores_one(self, rng):
        m = self.matcher(rng)
        fmap = np.zeros((2, 2, 3))
        fmap[0, 1] = [1.0, 2.0, 3.0]
        sm = score_map(m, tn.Tensor(fmap), np.array([[1.0, 2.0, 3.0]]))
        assert sm.scores[0, 1, 0] == pytest.approx(1.0)

    def test_orthogonal_scores_zero(self, rng):
        m = self.matcher(rng)
        fmap = np.zeros((2, 2, 3))
        fmap[0, 0] = [1.0, 0.0, 0.0]
        sm = score_map(m, tn.Tensor(fmap), np.array([[0.0, 5.0, 0.0]]))
        assert sm.scores[0, 0, 0] == 0.0

    def test_invalid_cells_sentinel(self, rng):
        m = Matcher(4, 5, 6, rng)
        sm = score_map(m, tn.Tensor(rng.normal(size=(4, 4, 4))), rng.normal(size=(2, 5)))
        assert sm.scores.shape == (4, 4, 2)
        assert np.all(sm.scores[np.tril_indices(4, -1)] == -np.inf)
        assert sm.num_valid == 10
        valid = sm.scores[np.triu_indices(4)]
        assert np.all(np.abs(valid) <= 1 + 1e-12)

    @given(st.floats(0.01, 100))
    @settings(max_examples=30, deadline=None)
    def test_rescaling_invariant(self, c):
        r = np.random.default_rng(5)
        m = Matcher(4, 3, 5, r)
        m.moment_proj.bias.data[:] = 0.0
        fmap, q = r.normal(size=(4, 4, 4)), r.normal(size=(2, 3))
        a = score_map(m, tn.Tensor(fmap), q).scores
        b = score_map(m, tn.Tensor(c * fmap), q).scores
        np.testing.assert_allclose(a, b, atol=1e-12)
        flat = lambda s: np.argmax(np.where(np.isfinite(s), s, -9).reshape(16, -1), axis=0)
        np.testing.assert_array_equal(flat(a), flat(b))


class TestIoUTargets:
    def test_exact_match(self):
        t = gt_iou_map([[2.0, 6.0]], T=10, duration=10.0)
        assert t.raw_iou[2, 5, 0] == 1.0 and t.targets[2, 5, 0] == 1.0

    def test_disjoint(self):
        t = gt_iou_map([[0.0, 2.0]], T=10, duration=10.0)
        assert t.raw_iou[5, 7, 0] == 0.0 and t.targets[5, 7, 0] == 0.0

    def test_partial_overlap_scaled_to_zero(self):
        t = gt_iou_map([[4.0, 8.0]], T=10, duration=10.0)
        assert t.raw_iou[2, 5, 0] == pytest.approx(1 / 3, abs=1e-15)
        assert t.targets[2, 5, 0] == 0.0

    def test_scaling(self):
        t = gt_iou_map([[0.0, 4.0]], T=8, duration=8.0)
        # cell (0, 2) covers [0, 3]: IoU 0.75 -> (0.75 - 0.5) / 0.5
        assert t.targets[0, 2, 0] == pytest.approx(0.5)

    def test_degenerate_target(self):
        with pytest.raises(DataError):
            gt_iou_map([[3.0, 3.0]], T=4, duration=10.0)

    def test_span_seconds(self):
        s, e = span_seconds(4, 20.0)
        assert (s[1, 2], e[1, 2]) == (5.0, 15.0)

    def test_brute_force_thousand_pairs(self):
        r = np.random.default_rng(0)
        T, duration = 12, 30.0
        starts, ends = span_seconds(T, duration)
        for _ in range(1000):
            a, b = np.sort(r.uniform(0, duration, size=2))
            i, j = sorted(r.integers(0, T, size=2))
            raw = gt_iou_map([[a, b]], T, duration).raw_iou[i, j, 0]
            assert abs(raw - interval_iou((starts[i, j], ends[i, j]), (a, b))) < 1e-12

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            LossConfig(t_min=0.8, t_max=0.6)
        with pytest.raises(ConfigError):
            LossConfig(temperature=0.0)


class TestIoULoss:
    def test_entropy_floor(self):
        loss = iou_loss(tn.Tensor(np.zeros((6, 1))), np.full((6, 1), 0.5))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_extremes(self):
        scores = tn.Tensor(np.array([[1.0], [-1.0]]))
        assert iou_loss(scores, np.array([[1.0], [0.0]])).item() < 1e-5

    def test_probability_mapping(self):
        y = score_to_probability(tn.Tensor(np.array([-1.0, 0.0, 1.0]))).data
        np.testing.assert_allclose(y, [1e-6, 0.5, 1 - 1e-6])

    @pytest.mark.parametrize("seed", range(3))
    def test_scalar_loop_oracle(self, seed):
        r = np.random.default_rng(seed)
        s, t = r.uniform(-1, 1, size=6), r.uniform(0, 1, size=6)
        got = iou_loss(tn.Tensor(s[:, None]), t[:, None]).item()
        assert abs(got - bce_loop(s, t)) < 1e-12

    def test_mask_selects_cells(self, rng):
        s, t = rng.uniform(-1, 1, size=(9, 2)), rng.uniform(0, 1, size=(9, 2))
        mask = np.triu(np.ones((3, 3), dtype=bool)).reshape(-1)
        got = iou_loss(tn.Tensor(s), t, mask).item()
        want = bce_loop(s[mask].ravel(), t[mask].ravel())
        assert abs(got - want) < 1e-12


class TestContrastive:
    def test_separated_limit(self):
        # two antipodal pairs: positive cosine 1, the negative -1
        m = np.array([[1.0, 0.0], [-1.0, 0.0]])
        loss = contrastive_loss(m, m, 0.1).item()
        assert loss == pytest.approx(4 * math.log(1 + math.exp(-20)), abs=1e-12)
        assert loss < 1e-7

    def test_uniform_cosines(self):
        B = 5
        v = np.ones((B, 3))
        assert contrastive_loss(v, v, 0.1).item() == pytest.approx(2 * B * math.log(B))
        assert contrastive_loss(v, v, 0.1, reduction="mean").item() == pytest.approx(2 * math.log(B))

    @pytest.mark.parametrize("seed", range(3))
    def test_softmax_oracle(self, seed):
        r = np.random.default_rng(seed)
        m, q = r.normal(size=(3, 4)), r.normal(size=(3, 4))
        assert abs(contrastive_loss(m, q, 0.1).item() - nce_loop(m, q, 0.1)) < 1e-12

    def test_needs_negatives(self):
        with pytest.raises(ContractError):
            contrastive_loss(np.ones((1, 3)), np.ones((1, 3)))

    def test_unknown_reduction(self):
        with pytest.raises(ConfigError):
            contrastive_loss(np.eye(2), np.eye(2), reduction="max")

    def test_monotone_in_positive_cosine(self):
        base = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]])
        queries = base.copy()
        losses = []
        for angle in (1.2, 0.6, 0.1):
            m = base.copy()
            m[0] = [math.sin(angle), math.cos(angle)]
            losses.append(contrastive_loss(m, queries, 0.1).item())
        assert losses[0] > losses[1] > losses[2]


def test_gradients_through_both_losses():
    r = np.random.default_rng(3)
    matcher = Matcher(3, 4, 5, r)
    fmap = tn.Tensor(r.normal(size=(3, 3, 3)), requires_grad=True)
    query = tn.Tensor(r.normal(size=(2, 4)), requires_grad=True)
    target = gt_iou_map([[0.0, 4.0], [3.0, 9.0]], 3, 9.0)
    mask = np.triu(np.ones((3, 3), dtype=bool)).reshape(-1)

    def total():
        scores, moments, queries = matcher(fmap, query)
        pos = tn.take(moments, target.raw_iou.reshape(9, -1).argmax(axis=0))
        return iou_loss(scores, target.targets.reshape(9, -1), mask) + contrastive_loss(pos, queries)

    assert np.isfinite(total().item())
    assert check_gradients(total, [fmap, query] + matcher.parameters()) < 1e-4
