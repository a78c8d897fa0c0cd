import math

import numpy as np
import pytest

from tripletkb.errors import DomainError
from tripletkb.losses import (
    BatchLossInput,
    LossInstance,
    LossToggles,
    consistency_loss,
    cosine_distance_rows,
    mine_negatives,
    semantic_loss,
    total_loss,
    transe_loss,
)
from tripletkb.numerics import Tensor, cosine_distance, grad_check


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _tail_at_distance(hr: np.ndarray, d: float) -> np.ndarray:
    """A unit vector at exact cosine distance d from hr (2-D only)."""
    base = math.atan2(hr[1], hr[0])
    return _unit(base + math.acos(1.0 - d))


def _batch(positives, entity_dim=4, vocab=5, seed=0) -> BatchLossInput:
    rng = np.random.default_rng(seed)
    instances = [LossInstance(head=Tensor(rng.standard_normal(entity_dim)),
                              relation=Tensor(rng.standard_normal(entity_dim)),
                              positive=p) for p in positives]
    table = Tensor(rng.standard_normal((vocab, entity_dim)))
    return BatchLossInput(instances=instances, tail_table=table, margin=1.0)


class TestMineNegatives:
    def test_duplicates_collapse(self):
        batch = _batch([0, 1, 0])  # cat, dog, cat
        assert mine_negatives(batch, 0) == [1]
        assert mine_negatives(batch, 1) == [0]

    def test_all_same_answer_is_empty(self):
        batch = _batch([2, 2, 2])
        assert mine_negatives(batch, 0) == []

    def test_distinct_answers(self):
        batch = _batch([0, 1, 2])
        assert mine_negatives(batch, 0) == [1, 2]


class TestTranseLoss:
    def test_hinge_arithmetic(self):
        hr = _unit(0.0)
        pos = _tail_at_distance(hr, 0.2)
        neg = _tail_at_distance(hr, 0.9)
        loss = transe_loss(Tensor(hr), Tensor(np.zeros(2)), [Tensor(pos)],
                           [Tensor(neg)], margin=1.0)
        assert float(loss) == pytest.approx(0.3, abs=1e-9)

    def test_margin_satisfied(self):
        hr = _unit(0.0)
        pos = _tail_at_distance(hr, 0.1)
        neg = _tail_at_distance(hr, 1.5)
        loss = transe_loss(Tensor(hr), Tensor(np.zeros(2)), [Tensor(pos)],
                           [Tensor(neg)], margin=1.0)
        assert float(loss) == pytest.approx(0.0, abs=1e-9)

    def test_sum_over_pairs(self):
        hr = _unit(0.0)
        pos = _tail_at_distance(hr, 0.2)
        negs = [_tail_at_distance(hr, 0.9), _tail_at_distance(hr, 1.5)]
        loss = transe_loss(Tensor(hr), Tensor(np.zeros(2)), [Tensor(pos)],
                           [Tensor(n) for n in negs], margin=1.0)
        assert float(loss) == pytest.approx(0.3 + 0.0, abs=1e-9)

    def test_nonnegative_and_zero_iff_margins_met(self):
        rng = np.random.default_rng(1)
        hr = rng.standard_normal(6)
        positives = [rng.standard_normal(6) for _ in range(2)]
        negatives = [rng.standard_normal(6) for _ in range(3)]
        loss = float(transe_loss(Tensor(hr), Tensor(np.zeros(6)),
                                 [Tensor(p) for p in positives],
                                 [Tensor(n) for n in negatives], margin=1.0))
        assert loss >= 0.0
        margins_met = all(
            float(cosine_distance(hr, p)) + 1.0 <= float(cosine_distance(hr, n))
            for p in positives for n in negatives)
        assert (loss == 0.0) == margins_met

    def test_margin_domain(self):
        with pytest.raises(DomainError):
            transe_loss(Tensor(_unit(0)), Tensor(np.zeros(2)), [], [], margin=0.0)


class TestConsistencyLoss:
    def test_exact_match_is_zero(self):
        rng = np.random.default_rng(2)
        h, r = rng.standard_normal(5), rng.standard_normal(5)
        assert float(consistency_loss(Tensor(h), Tensor(r), Tensor(h + r))) == 0.0

    def test_mean_of_squares(self):
        loss = consistency_loss(Tensor([1.0, 1.0]), Tensor([0.0, 0.0]),
                                Tensor([0.0, 0.0]))
        assert float(loss) == pytest.approx(1.0, abs=1e-12)

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(3)
        h, r = rng.standard_normal(4), rng.standard_normal(4)
        t = rng.standard_normal(4)
        base = float(consistency_loss(Tensor(h), Tensor(r), Tensor(t)))
        hr = h + r
        doubled_residual = hr - 2.0 * (hr - t)  # scales (hr - t) by 2
        scaled = float(consistency_loss(Tensor(h), Tensor(r),
                                        Tensor(doubled_residual)))
        assert scaled == pytest.approx(4.0 * base, rel=1e-9)


class TestSemanticLoss:
    def test_two_identical_rows_give_ln2(self):
        table = Tensor(np.array([[0.5, 0.25], [0.5, 0.25]]))
        loss = semantic_loss(Tensor([1.0, 0.0]), Tensor([0.0, 0.0]), table, 0)
        assert float(loss) == pytest.approx(math.log(2.0), abs=1e-9)

    def test_hand_evaluated_two_class(self):
        # rows e1, e2 and h+r = e1: logits [1, 0] -> loss = ln(1 + e^-1)
        table = Tensor(np.eye(2))
        loss = semantic_loss(Tensor([1.0, 0.0]), Tensor([0.0, 0.0]), table, 0)
        assert float(loss) == pytest.approx(math.log(1.0 + math.exp(-1.0)),
                                            abs=1e-9)

    def test_uniform_over_n_identical_rows(self):
        for n in (3, 7):
            table = Tensor(np.tile([[0.3, -0.2, 0.1]], (n, 1)))
            loss = semantic_loss(Tensor([1.0, 2.0, 3.0]), Tensor(np.zeros(3)),
                                 table, n - 1)
            assert float(loss) == pytest.approx(math.log(n), abs=1e-9)

    def test_descent_along_gradient(self):
        """Moving the positive row toward h + r lowers the loss."""
        rng = np.random.default_rng(4)
        table = rng.standard_normal((6, 5))
        h, r = rng.standard_normal(5), rng.standard_normal(5)
        leaf = Tensor(table, requires_grad=True)
        loss = semantic_loss(Tensor(h), Tensor(r), leaf, positive=2)
        loss.backward()
        stepped = table - 0.05 * leaf.grad
        new_loss = semantic_loss(Tensor(h), Tensor(r), Tensor(stepped), 2)
        assert float(new_loss) < float(loss)

    def test_positive_bounds(self):
        with pytest.raises(DomainError):
            semantic_loss(Tensor([1.0]), Tensor([0.0]),
                          Tensor(np.ones((2, 1))), positive=2)


class TestTotalLoss:
    def test_all_toggles_off(self):
        batch = _batch([0, 1, 2])
        off = LossToggles(transe=False, consistency=False, semantic=False)
        breakdown = total_loss(batch, off)
        assert breakdown.total == 0.0
        assert breakdown.transe == breakdown.consistency == breakdown.semantic == 0.0
        # the zero objective routes no gradients anywhere
        breakdown.objective.backward()
        assert batch.tail_table.grad is None

    def test_single_instance_without_negatives(self):
        batch = _batch([1])
        breakdown = total_loss(batch)
        assert breakdown.transe == 0.0
        assert breakdown.consistency > 0.0
        assert breakdown.semantic > 0.0
        assert breakdown.total == pytest.approx(
            breakdown.consistency + breakdown.semantic, abs=1e-12)

    def test_empty_batch(self):
        batch = _batch([0])
        batch.instances = []
        with pytest.raises(DomainError):
            total_loss(batch)

    def test_matches_per_instance_ops(self):
        """Vectorized batch objective == mean of per-instance terms."""
        batch = _batch([0, 1, 0, 3], entity_dim=6, vocab=5, seed=9)
        breakdown = total_loss(batch)
        table = batch.tail_table
        transe_vals, cons_vals, sem_vals = [], [], []
        for i, inst in enumerate(batch.instances):
            negatives = [Tensor(table.data[j]) for j in mine_negatives(batch, i)]
            positive_vec = Tensor(table.data[inst.positive])
            transe_vals.append(float(transe_loss(
                inst.head, inst.relation, [positive_vec], negatives,
                batch.margin)))
            cons_vals.append(float(consistency_loss(inst.head, inst.relation,
                                                    positive_vec)))
            sem_vals.append(float(semantic_loss(inst.head, inst.relation,
                                                table, inst.positive)))
        assert breakdown.transe == pytest.approx(np.mean(transe_vals), rel=1e-9)
        assert breakdown.consistency == pytest.approx(np.mean(cons_vals),
                                                      rel=1e-9)
        assert breakdown.semantic == pytest.approx(np.mean(sem_vals), rel=1e-9)
        assert breakdown.total == pytest.approx(
            breakdown.transe + breakdown.consistency + breakdown.semantic,
            abs=1e-12)

    def test_gradients_reach_tail_table(self):
        batch = _batch([0, 1, 2], seed=10)
        leaf = Tensor(batch.tail_table.data, requires_grad=True)
        batch.tail_table = leaf
        total_loss(batch).objective.backward()
        assert leaf.grad is not None
        assert np.any(leaf.grad != 0.0)

    def test_full_objective_gradcheck(self, rng_seeded):
        rng = np.random.default_rng(11)
        arrays = {
            "h0": rng.standard_normal(5), "r0": rng.standard_normal(5),
            "h1": rng.standard_normal(5), "r1": rng.standard_normal(5),
            "table": rng.standard_normal((4, 5)),
        }

        def loss(leaves):
            instances = [
                LossInstance(head=leaves["h0"], relation=leaves["r0"],
                             positive=0),
                LossInstance(head=leaves["h1"], relation=leaves["r1"],
                             positive=2),
            ]
            batch = BatchLossInput(instances=instances,
                                   tail_table=leaves["table"], margin=1.0)
            return total_loss(batch).objective

        reports = grad_check(loss, arrays, rng_seeded)
        assert max(r.max_rel_error for r in reports) < 1e-4

    def test_zero_norm_tail_rejected(self):
        batch = _batch([0, 1])
        batch.tail_table.data[0] = 0.0
        with pytest.raises(DomainError):
            total_loss(batch)


class TestCosineDistanceRows:
    def test_matches_scalar_op(self):
        rng = np.random.default_rng(12)
        q = rng.standard_normal((3, 4))
        t = rng.standard_normal((5, 4))
        matrix = cosine_distance_rows(Tensor(q), Tensor(t)).data
        for i in range(3):
            for j in range(5):
                assert matrix[i, j] == pytest.approx(
                    float(cosine_distance(q[i], t[j])), abs=1e-12)
