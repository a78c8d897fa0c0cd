import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripletkb.errors import DomainError, EvaluationError, ShapeError
from tripletkb.numerics import (
    FfnWeights,
    Rng,
    Tensor,
    cosine_distance,
    ffn_forward,
    grad_check,
    gumbel_from_uniform,
    gumbel_sample,
    index_rows,
    logsumexp,
    matmul,
    pick,
    softmax,
    stack,
    take_pairs,
)

finite_vectors = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=2,
    max_size=8)


class TestMatmul:
    def test_identity(self):
        out = matmul([[1.0, 0.0], [0.0, 1.0]], [[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_hand_product(self):
        out = matmul([[1.0, 2.0]], [[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_zero_annihilates(self):
        zero = np.zeros((3, 4))
        other = np.arange(8.0).reshape(4, 2)
        np.testing.assert_array_equal(matmul(zero, other).data, np.zeros((3, 2)))

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((4, 2)))

    @pytest.mark.parametrize("a_shape,b_shape", [((3,), (3, 2)), ((2, 3), (3,)),
                                                 ((3,), (3,))])
    def test_vector_cases_match_numpy(self, a_shape, b_shape):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(a_shape), rng.standard_normal(b_shape)
        np.testing.assert_allclose(matmul(a, b).data, a @ b, atol=1e-12)

    def test_tensor_invariant_shape_matches_size(self):
        out = matmul(np.ones((3, 4)), np.ones((4, 5)))
        assert math.prod(out.shape) == out.size


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0], 1.0).data,
                                   [1 / 3] * 3, atol=1e-12)

    def test_sharp_at_low_temperature(self):
        # closed form: exp(1000) dominates, the other term underflows
        out = softmax([10.0, 0.0], temperature=0.01).data
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-6)

    def test_temperature_domain(self):
        with pytest.raises(DomainError):
            softmax([1.0, 2.0], temperature=0.0)
        with pytest.raises(DomainError):
            softmax([1.0, 2.0], temperature=-1.0)

    @given(finite_vectors, st.floats(min_value=-30, max_value=30,
                                     allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, logits, shift):
        base = softmax(logits, 1.0).data
        assert abs(base.sum() - 1.0) <= 1e-6
        assert (base >= 0).all()
        shifted = softmax([x + shift for x in logits], 1.0).data
        np.testing.assert_allclose(shifted, base, atol=1e-9)


class TestCosineDistance:
    def test_orthogonal(self):
        assert float(cosine_distance([1.0, 0.0], [0.0, 1.0])) == pytest.approx(1.0)

    def test_positive_collinear(self):
        assert float(cosine_distance([1.0, 2.0], [2.0, 4.0])) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal(self):
        assert float(cosine_distance([1.0, 0.0], [-1.0, 0.0])) == pytest.approx(2.0)

    def test_zero_norm_rejected(self):
        with pytest.raises(DomainError):
            cosine_distance([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(DomainError):
            cosine_distance([1.0, 0.0], [0.0, 0.0])

    @given(st.lists(st.floats(min_value=-10, max_value=10), min_size=3,
                    max_size=3),
           st.lists(st.floats(min_value=-10, max_value=10), min_size=3,
                    max_size=3),
           st.floats(min_value=0.01, max_value=100))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_range_and_scale(self, x, y, c):
        x, y = np.asarray(x), np.asarray(y)
        if np.linalg.norm(x) == 0 or np.linalg.norm(y) == 0:
            return
        d_xy = float(cosine_distance(x, y))
        d_yx = float(cosine_distance(y, x))
        assert d_xy == pytest.approx(d_yx, abs=1e-12)
        assert -1e-12 <= d_xy <= 2 + 1e-12
        assert float(cosine_distance(x, c * x)) == pytest.approx(0.0, abs=1e-9)


class TestGumbel:
    def test_closed_forms(self):
        assert gumbel_from_uniform(math.exp(-1)) == pytest.approx(0.0, abs=1e-12)
        assert gumbel_from_uniform(math.exp(-math.e)) == pytest.approx(-1.0, abs=1e-12)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(DomainError):
                gumbel_from_uniform(bad)

    def test_seeded_stream_is_bit_reproducible(self):
        a = [gumbel_sample(Rng(99)) for _ in range(1)]
        first = [gumbel_sample(rng) for rng in [Rng(99)]]
        assert a == first
        r1, r2 = Rng(5), Rng(5)
        assert [r1.gumbel() for _ in range(100)] == [r2.gumbel() for _ in range(100)]
        np.testing.assert_array_equal(Rng(5).gumbels(50), Rng(5).gumbels(50))

    def test_uniform_open_interval(self):
        rng = Rng(0)
        draws = [rng.uniform_open() for _ in range(1000)]
        assert all(0.0 < u < 1.0 for u in draws)

    def test_state_roundtrip(self):
        rng = Rng(3)
        rng.gumbels(7)
        state = rng.get_state()
        expected = rng.gumbels(5)
        rng2 = Rng(0)
        rng2.set_state(state)
        np.testing.assert_array_equal(rng2.gumbels(5), expected)


def _random_ffn(rng: np.random.Generator, d_in=5, hidden=7, d_out=3) -> FfnWeights:
    return FfnWeights(
        fc1_w=Tensor(rng.standard_normal((hidden, d_in))),
        fc1_b=Tensor(rng.standard_normal(hidden)),
        fc2_w=Tensor(rng.standard_normal((d_out, hidden))),
        fc2_b=Tensor(rng.standard_normal(d_out)),
    )


class TestFfnForward:
    def test_zero_everything(self):
        zero = FfnWeights(Tensor(np.zeros((4, 3))), Tensor(np.zeros(4)),
                          Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))
        np.testing.assert_array_equal(ffn_forward([1.0, -2.0, 3.0], zero).data,
                                      np.zeros(2))

    def test_relu_gates_negative_input(self):
        layer = FfnWeights(Tensor(np.eye(3)), Tensor(np.zeros(3)),
                           Tensor(np.eye(3)), Tensor(np.zeros(3)))
        out = ffn_forward([-1.0, -2.0, -3.0], layer)
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_matches_independent_composition(self):
        rng = np.random.default_rng(42)
        layer = _random_ffn(rng)
        x = rng.standard_normal(5)
        expected = layer.fc2_w.data @ np.maximum(
            layer.fc1_w.data @ x + layer.fc1_b.data, 0.0) + layer.fc2_b.data
        np.testing.assert_allclose(ffn_forward(x, layer).data, expected,
                                   atol=1e-12)

    def test_dimension_mismatch(self):
        layer = _random_ffn(np.random.default_rng(0), d_in=5)
        with pytest.raises(ShapeError):
            ffn_forward(np.zeros(4), layer)


class TestGradCheck:
    def test_quadratic(self, rng_seeded):
        theta = np.array([1.0, 2.0])
        tracked = []

        def loss(params):
            if params["theta"].requires_grad:
                tracked.append(params["theta"])
            return (params["theta"] * params["theta"]).sum()

        reports = grad_check(loss, {"theta": theta}, rng_seeded)
        assert reports[0].max_rel_error < 1e-8
        np.testing.assert_allclose(tracked[0].grad, [2.0, 4.0], atol=1e-12)

    def test_unused_parameter_has_exactly_zero_gradient(self, rng_seeded):
        tracked = []

        def loss(params):
            if params["unused"].requires_grad:
                tracked.append(params["unused"])
            return (params["used"] * params["used"]).sum()

        reports = grad_check(loss, {"used": np.array([3.0]),
                                    "unused": np.array([1.0, 2.0])},
                             rng_seeded)
        by_name = {r.name: r for r in reports}
        assert by_name["unused"].max_rel_error == 0.0
        assert tracked[0].grad is None  # analytic gradient exactly absent

    def test_non_finite_loss_raises(self, rng_seeded):
        def loss(params):
            return params["x"].log().sum()  # log of negative -> nan

        with pytest.raises(EvaluationError):
            grad_check(loss, {"x": np.array([-1.0])}, rng_seeded)

    def test_composite_ops_against_finite_differences(self, rng_seeded):
        """Engine internals (gather/scatter/logsumexp/stack) vs. central diff."""
        base = np.random.default_rng(7).standard_normal((4, 5))

        def loss(params):
            m = params["m"]
            rows = index_rows(m, [0, 2, 2])
            pairs = take_pairs(m, [0, 1, 3], [4, 0, 2])
            lse = logsumexp(m, axis=1)
            stacked = stack([pick(lse, 0), pairs.sum(), (rows * rows).sum()])
            soft = softmax(m.max(axis=1), temperature=0.7)
            return (stacked * stacked).sum() + (soft * soft).sum() \
                + (m.relu() * 0.5).sum() + logsumexp(m.t().sum(axis=0), axis=0)

        reports = grad_check(loss, {"m": base}, rng_seeded)
        assert reports[0].max_rel_error < 1e-6

    def test_reports_carry_counts(self, rng_seeded):
        reports = grad_check(lambda p: (p["a"] * p["a"]).sum(),
                             {"a": np.ones(120)}, rng_seeded)
        assert reports[0].coords_checked == 50
        assert reports[0].max_rel_error >= 0.0


class TestTensorBasics:
    def test_backward_requires_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            t.backward()

    def test_item_requires_scalar(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(2)).item()

    def test_no_graph_without_requires_grad(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
        out = (a * b).sum()
        assert out._parents == ()
        assert not out.requires_grad

    @given(finite_vectors)
    @settings(max_examples=30, deadline=None)
    def test_public_ops_stay_finite(self, values):
        v = Tensor(values)
        for result in (softmax(v, 2.0), v.relu(), v.exp() if max(values) < 20
                       else v.relu(), logsumexp(v, axis=0)):
            assert np.isfinite(result.data).all()
