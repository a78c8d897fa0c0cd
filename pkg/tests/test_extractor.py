import numpy as np
import pytest

from tripletkb.errors import DomainError
from tripletkb.extractor import (
    AttendMode,
    ModelDims,
    affinity,
    attend,
    extract,
    extract_with_tensors,
    head_entity,
    object_relevance,
    relation,
)
from tripletkb.features import AnswerVocab, SampleFeatures, Split
from tripletkb.numerics import FfnWeights, Rng, Tensor, grad_check
from tripletkb.trainer import desk_dims, init_params

from conftest import tiny_spec


def _sample(rng, k=4, d=3, dv=24, split=Split.TRAIN) -> SampleFeatures:
    return SampleFeatures(
        sample_id="s0", image_id="img0",
        objects=rng.standard_normal((k, dv)),
        tokens=rng.standard_normal((d, dv)),
        cls=rng.standard_normal(dv),
        answers=(("x", 3),), split=split)


def _params(vocab_size=5, dv=24):
    vocab = AnswerVocab([f"a{i}" for i in range(vocab_size)])
    return init_params(vocab, desk_dims(dv), Rng(3))


class TestAffinity:
    def test_orthogonal_rows_give_zero(self):
        eye = np.eye(2)
        objects = np.array([[1.0, 0.0]])
        tokens = np.array([[0.0, 1.0], [0.0, 2.0]])
        out = affinity(tokens, objects, eye, eye)
        np.testing.assert_array_equal(out.data, np.zeros((1, 2)))

    def test_hand_inner_product(self):
        eye = np.eye(2)
        out = affinity(np.array([[2.0, 0.0]]), np.array([[1.0, 0.0]]), eye, eye)
        np.testing.assert_array_equal(out.data, [[2.0]])

    def test_bilinear_in_object_projection(self):
        rng = np.random.default_rng(0)
        tokens, objects = rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
        q_proj, v_proj = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
        once = affinity(tokens, objects, q_proj, v_proj).data
        twice = affinity(tokens, objects, q_proj, 2.0 * v_proj).data
        np.testing.assert_allclose(twice, 2.0 * once, atol=1e-12)

    def test_orientation_rows_objects_cols_tokens(self):
        out = affinity(np.zeros((5, 3)), np.zeros((2, 3)), np.eye(3), np.eye(3))
        assert out.shape == (2, 5)


class TestObjectRelevance:
    def test_row_max(self):
        out = object_relevance(Tensor([[1.0, 5.0], [3.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [5.0, 3.0])

    def test_single_column(self):
        out = object_relevance(Tensor([[2.0], [7.0]]))
        np.testing.assert_array_equal(out.data, [2.0, 7.0])

    def test_column_permutation_invariant(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 5))
        perm = rng.permutation(5)
        np.testing.assert_array_equal(object_relevance(Tensor(a)).data,
                                      object_relevance(Tensor(a[:, perm])).data)


class TestAttend:
    def test_frozen_zero_noise_uniform(self):
        out = attend([0.0, 0.0, 0.0], 1.0, AttendMode.TRAIN_SAMPLE,
                     noise=np.zeros(3))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-12)

    def test_eval_argmax_tie_to_lowest_index(self):
        out = attend([5.0, 3.0, 5.0], 1.0, AttendMode.EVAL_ARGMAX)
        np.testing.assert_array_equal(out.data, [1.0, 0.0, 0.0])

    def test_shift_invariance_with_same_noise(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal(6)
        noise = rng.gumbel(size=6)
        base = attend(logits, 0.7, AttendMode.TRAIN_SAMPLE, noise=noise).data
        shifted = attend(logits + 13.5, 0.7, AttendMode.TRAIN_SAMPLE,
                         noise=noise).data
        np.testing.assert_allclose(shifted, base, atol=1e-9)

    def test_eval_invariant_under_monotone_transform(self):
        logits = np.array([0.3, -1.0, 2.5, 2.4])
        base = attend(logits, 1.0, AttendMode.EVAL_ARGMAX).data
        for transform in (lambda x: 2 * x + 1, np.exp, lambda x: x ** 3):
            np.testing.assert_array_equal(
                attend(transform(logits), 1.0, AttendMode.EVAL_ARGMAX).data,
                base)

    def test_temperature_domain(self):
        with pytest.raises(DomainError):
            attend([1.0], 0.0, AttendMode.TRAIN_SAMPLE, noise=np.zeros(1))

    def test_train_mode_needs_noise_source(self):
        with pytest.raises(DomainError):
            attend([1.0, 2.0], 1.0, AttendMode.TRAIN_SAMPLE)

    def test_distribution_sums_to_one(self):
        out = attend(np.random.default_rng(3).standard_normal(8), 0.5,
                     AttendMode.TRAIN_SAMPLE, rng=Rng(4))
        assert abs(out.data.sum() - 1.0) <= 1e-6
        assert (out.data >= 0).all()


class TestHeadAndRelation:
    def _ffn(self, dv=6, hidden=5, out=4, seed=0):
        rng = np.random.default_rng(seed)
        return FfnWeights(Tensor(rng.standard_normal((hidden, dv))),
                          Tensor(rng.standard_normal(hidden)),
                          Tensor(rng.standard_normal((out, hidden))),
                          Tensor(rng.standard_normal(out)))

    def test_one_hot_alpha_selects_single_row(self):
        rng = np.random.default_rng(5)
        objects = rng.standard_normal((3, 6))
        ffn = self._ffn()
        alpha = np.array([0.0, 1.0, 0.0])
        from tripletkb.numerics import ffn_forward
        np.testing.assert_allclose(head_entity(objects, alpha, ffn).data,
                                   ffn_forward(objects[1], ffn).data,
                                   atol=1e-12)

    def test_uniform_alpha_equals_row_mean(self):
        rng = np.random.default_rng(6)
        objects = rng.standard_normal((4, 6))
        ffn = self._ffn()
        from tripletkb.numerics import ffn_forward
        mean_row = objects.mean(axis=0)  # independent composition
        np.testing.assert_allclose(
            head_entity(objects, np.full(4, 0.25), ffn).data,
            ffn_forward(mean_row, ffn).data, atol=1e-9)

    def test_zero_objects_hit_bias_path(self):
        ffn = self._ffn()
        expected = ffn.fc2_w.data @ np.maximum(ffn.fc1_b.data, 0.0) \
            + ffn.fc2_b.data
        np.testing.assert_allclose(
            head_entity(np.zeros((3, 6)), np.array([0.2, 0.3, 0.5]), ffn).data,
            expected, atol=1e-12)

    def test_relation_zero_weights(self):
        zero = FfnWeights(Tensor(np.zeros((5, 6))), Tensor(np.zeros(5)),
                          Tensor(np.zeros((4, 5))), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(relation(np.ones(6), zero).data,
                                      np.zeros(4))

    def test_relation_deterministic_and_matches_composition(self):
        rng = np.random.default_rng(7)
        ffn = self._ffn(seed=8)
        cls = rng.standard_normal(6)
        expected = ffn.fc2_w.data @ np.maximum(
            ffn.fc1_w.data @ cls + ffn.fc1_b.data, 0.0) + ffn.fc2_b.data
        first = relation(cls, ffn).data
        np.testing.assert_allclose(first, expected, atol=1e-12)
        np.testing.assert_array_equal(first, relation(cls, ffn).data)


class TestExtract:
    def test_eval_mode_deterministic(self):
        rng = np.random.default_rng(9)
        sample, params = _sample(rng), _params()
        a = extract(sample, params, mode=AttendMode.EVAL_ARGMAX)
        b = extract(sample, params, mode=AttendMode.EVAL_ARGMAX)
        np.testing.assert_array_equal(a.head.data, b.head.data)
        np.testing.assert_array_equal(a.relation.data, b.relation.data)
        np.testing.assert_array_equal(a.attention, b.attention)

    def test_selected_object_is_relevance_argmax_in_eval(self):
        rng = np.random.default_rng(10)
        sample, params = _sample(rng), _params()
        res = extract(sample, params, mode=AttendMode.EVAL_ARGMAX)
        assert res.selected_object == int(np.argmax(res.relevance))
        assert 0 <= res.selected_object < sample.objects.shape[0]
        assert abs(res.attention.sum() - 1.0) <= 1e-6

    def test_eval_head_equals_ffn_of_selected_row(self):
        rng = np.random.default_rng(11)
        sample, params = _sample(rng), _params()
        res = extract(sample, params, mode=AttendMode.EVAL_ARGMAX)
        from tripletkb.numerics import Tensor as T, ffn_forward, FfnWeights
        ffn = FfnWeights(T(params.head_ffn.fc1_w), T(params.head_ffn.fc1_b),
                         T(params.head_ffn.fc2_w), T(params.head_ffn.fc2_b))
        row = np.asarray(sample.objects[res.selected_object], dtype=np.float64)
        np.testing.assert_array_equal(res.head.data,
                                      ffn_forward(row, ffn).data)

    def test_default_dims_produce_width_300(self):
        dims = ModelDims()  # full-scale defaults
        vocab = AnswerVocab(["a", "b"])
        params = init_params(vocab, dims, Rng(0))
        rng = np.random.default_rng(12)
        sample = _sample(rng, k=3, d=2, dv=dims.feature_dim)
        res = extract(sample, params, mode=AttendMode.EVAL_ARGMAX)
        assert res.head.shape == (300,)
        assert res.relation.shape == (300,)

    def test_gradients_flow_through_extract(self, rng_seeded):
        """Loss composed through the train-mode forward passes gradcheck."""
        spec = tiny_spec(feature_dim=12, num_objects=3)
        rng = np.random.default_rng(13)
        sample = _sample(rng, k=3, d=2, dv=12)
        from tripletkb.extractor import ModelDims
        dims = ModelDims(feature_dim=12, affinity_dim=8, ffn_hidden=10,
                         entity_dim=6)
        params = init_params(AnswerVocab(["a", "b", "c"]), dims, Rng(1))
        frozen = Rng(55).gumbels(3)

        def loss(leaves):
            res = extract_with_tensors(sample, leaves, 0.9,
                                       AttendMode.TRAIN_SAMPLE, noise=frozen)
            return (res.head * res.head).sum() + (res.relation * res.head).sum()

        reports = grad_check(loss, params.named_arrays(), rng_seeded)
        worst = max(r.max_rel_error for r in reports)
        assert worst < 1e-4
