"""Tests unitaires : noyau tenseur (autodiff/tensor.py, functional.py, gradcheck.py)."""

import numpy as np
import pytest

from autodiff import functional as F
from autodiff.gradcheck import check_gradients, max_rel_error, numerical_grad
from autodiff.tensor import Graph, SliceGrad, Tensor, backward, no_grad
from utils.errors import ConfigError, NumericalError, ShapeError, UsageError

OP_TOL = 1e-5


def leaf(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def weighted(out: Tensor, seed: int = 1) -> Tensor:
    """Réduction scalaire à poids fixes : évite les gradients triviaux d'une somme."""
    w = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.shape)
    return F.sum(out * w)


# ═══════════════════════════════════════════════════════════════
# Tensor / backward
# ═══════════════════════════════════════════════════════════════

class TestTensor:

    def test_data_is_float64(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,)

    def test_operators_build_graph(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
        out = F.sum(a * b + a)
        graph = backward(out)
        assert len(graph) == 3
        np.testing.assert_allclose(a.grad, [4.0, 5.0])
        np.testing.assert_allclose(b.grad, [1.0, 2.0])

    def test_reverse_operators(self):
        a = leaf([2.0])
        out = F.sum(1.0 - a + 3.0 * a / 2.0)
        backward(out)
        np.testing.assert_allclose(a.grad, [0.5])

    def test_scalar_results_stay_zero_dim(self):
        a = leaf([[1.0, 2.0], [3.0, 4.0]])
        assert F.sum(a).shape == ()
        assert F.mean(a).shape == ()
        assert F.getitem(a, (1, 0)).shape == ()

    @pytest.mark.filterwarnings("error")
    def test_scalar_slice_backward_without_warning(self):
        a = leaf([1.0, 2.0, 3.0])
        out = F.getitem(a, 1) * 2.0 + F.getitem(a, 1)
        backward(out)
        np.testing.assert_array_equal(a.grad, [0.0, 3.0, 0.0])

    def test_backward_non_scalar_raises(self):
        a = leaf([1.0, 2.0])
        with pytest.raises(UsageError):
            backward(a * 2.0)

    def test_backward_without_graph_raises(self):
        with pytest.raises(UsageError):
            backward(Tensor(3.0))

    def test_grad_accumulates_across_calls(self):
        a = leaf([1.0])
        backward(F.sum(a * 2.0))
        backward(F.sum(a * 3.0))
        np.testing.assert_allclose(a.grad, [5.0])

    def test_zero_path_gives_zero_grad(self):
        a, b = leaf([1.0, 2.0]), leaf([5.0])
        out = F.sum(a * 0.0 + F.mul(b, 0.0) * 0.0)
        backward(out)
        np.testing.assert_array_equal(b.grad, [0.0])

    def test_shared_subexpression_visited_once(self):
        a = leaf([3.0])
        h = a * a
        out = F.sum(h + h)
        backward(out)
        np.testing.assert_allclose(a.grad, [12.0])

    def test_no_grad_records_nothing(self):
        a = leaf([1.0])
        with no_grad():
            out = a * 2.0
        assert out.is_leaf
        assert not out.requires_grad

    def test_non_finite_output_raises(self):
        with pytest.raises(NumericalError, match="exp"):
            F.exp(Tensor([1000.0]))

    def test_graph_from_long_chain_is_iterative(self):
        a = leaf([1.0])
        h = a
        for _ in range(5000):
            h = h + 0.0
        graph = Graph.from_output(F.sum(h))
        assert len(graph) == 5001
        assert graph.leaves() == [a]


class TestSliceGrad:

    def test_dense(self):
        g = SliceGrad(index=(slice(1, 3),), values=np.array([1.0, 2.0]), shape=(4,))
        np.testing.assert_array_equal(g.dense(), [0.0, 1.0, 2.0, 0.0])

    def test_repeated_slices_accumulate(self):
        x = leaf([1.0, 2.0, 3.0])
        out = F.sum(x[0] + x[0] + x[1])
        backward(out)
        np.testing.assert_array_equal(x.grad, [2.0, 1.0, 0.0])

    def test_slices_of_intermediate(self):
        x = leaf([[1.0, 2.0], [3.0, 4.0]])
        h = x * 2.0
        out = F.sum(h[0] * h[1])
        backward(out)
        np.testing.assert_allclose(x.grad, [[12.0, 16.0], [4.0, 8.0]])


# ═══════════════════════════════════════════════════════════════
# Exemples ponctuels
# ═══════════════════════════════════════════════════════════════

class TestOpExamples:

    def test_conv1d_same_padding(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(3, 1))
        w = Tensor(np.ones((3, 1, 1)))
        out = F.conv1d(x, w, Tensor(np.zeros(1)))
        np.testing.assert_allclose(out.data[:, 0], [3.0, 6.0, 5.0])

    def test_conv1d_even_kernel_raises(self):
        with pytest.raises(ConfigError):
            F.conv1d(Tensor(np.zeros((4, 1))), Tensor(np.zeros((2, 1, 1))), Tensor(np.zeros(1)))

    def test_conv1d_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            F.conv1d(Tensor(np.zeros((4, 2))), Tensor(np.zeros((3, 1, 1))), Tensor(np.zeros(1)))

    def test_maxpool(self):
        x = Tensor(np.array([1.0, 5.0, 2.0]).reshape(3, 1))
        np.testing.assert_allclose(F.maxpool1d(x, 3).data[:, 0], [5.0, 5.0, 5.0])

    def test_maxpool_tie_routes_to_first(self):
        x = leaf(np.array([2.0, 2.0, 2.0]).reshape(3, 1))
        backward(F.sum(F.maxpool1d(x, 3)))
        np.testing.assert_array_equal(x.grad[:, 0], [2.0, 1.0, 0.0])

    def test_softmax(self):
        out = F.softmax(Tensor([np.log(1.0), np.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75])

    def test_softmax_large_inputs_stable(self):
        out = F.softmax(Tensor([1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_layer_norm_zero_mean_unit_var(self):
        x = Tensor(np.random.default_rng(0).normal(0.0, 5.0, size=(4, 16)))
        out = F.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-4)

    def test_add_incompatible_shapes_raise(self):
        with pytest.raises(ShapeError):
            F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_matmul_inner_mismatch_raises(self):
        with pytest.raises(ShapeError):
            F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_split_inverse_of_concat(self):
        a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 1)))
        parts = F.split(F.concat([a, b], axis=-1), [3, 1], axis=-1)
        np.testing.assert_array_equal(parts[0].data, a.data)
        np.testing.assert_array_equal(parts[1].data, b.data)

    def test_place_rows(self):
        base = Tensor(np.zeros((1, 3, 2)))
        rows = Tensor(np.ones((1, 1, 2)))
        out = F.place_rows(base, rows, np.array([[1]]))
        np.testing.assert_array_equal(out.data[0], [[0, 0], [1, 1], [0, 0]])

    def test_linear_accepts_vector(self):
        out = F.linear(Tensor([1.0, 2.0]), Tensor(np.eye(2)), Tensor([1.0, 1.0]))
        np.testing.assert_allclose(out.data, [2.0, 3.0])


# ═══════════════════════════════════════════════════════════════
# Gradients vs différences finies
# ═══════════════════════════════════════════════════════════════

class TestGradcheck:

    def test_numerical_grad_of_square(self):
        x = leaf([3.0])
        g = numerical_grad(lambda: F.sum(x * x), x)
        assert g[0] == pytest.approx(6.0, rel=1e-8)

    def test_max_rel_error_floor(self):
        assert max_rel_error(np.array([0.0]), np.array([1e-9])) < 1e-2

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
    def test_binary_broadcast(self, rng, op):
        a = leaf(rng.normal(size=(2, 3, 4)))
        b = leaf(rng.uniform(1.0, 2.0, size=(3, 1)))
        fn = getattr(F, op)
        assert check_gradients(lambda: weighted(fn(a, b)), [a, b]) < OP_TOL

    @pytest.mark.parametrize("op", ["exp", "tanh", "sigmoid", "gelu", "neg"])
    def test_unary(self, rng, op):
        x = leaf(rng.normal(size=(3, 5)))
        fn = getattr(F, op)
        assert check_gradients(lambda: weighted(fn(x)), [x]) < OP_TOL

    def test_maximum(self, rng):
        a, b = leaf(rng.normal(size=(4, 3))), leaf(rng.normal(size=(4, 3)))
        assert check_gradients(lambda: weighted(F.maximum(a, b)), [a, b]) < OP_TOL

    @pytest.mark.parametrize("axis", [None, 0, -1])
    def test_reductions(self, rng, axis):
        x = leaf(rng.normal(size=(3, 4)))
        assert check_gradients(lambda: weighted(F.mean(x, axis=axis) * 2.0 + F.sum(x, axis=axis)), [x]) < OP_TOL

    def test_amax(self, rng):
        x = leaf(rng.normal(size=(3, 5)))
        assert check_gradients(lambda: weighted(F.amax(x, axis=-1, keepdims=True)), [x]) < OP_TOL

    def test_shapes(self, rng):
        x = leaf(rng.normal(size=(2, 3, 4)))

        def fn():
            h = F.transpose_last_two(F.reshape(x, (2, 4, 3)))
            h = F.broadcast_to(F.mean(h, axis=-2, keepdims=True), (2, 5, 4))
            return weighted(h)

        assert check_gradients(fn, [x]) < OP_TOL

    def test_getitem_basic_and_advanced(self, rng):
        x = leaf(rng.normal(size=(2, 5, 3)))
        bi = np.arange(2)[:, None]
        sel = np.array([[0, 3], [1, 1]])
        assert check_gradients(lambda: weighted(x[:, 1:4]) + weighted(x[bi, sel], seed=2), [x]) < OP_TOL

    def test_concat_split_stack(self, rng):
        a, b = leaf(rng.normal(size=(3, 2))), leaf(rng.normal(size=(3, 4)))

        def fn():
            c = F.concat([a, b], axis=-1)
            p, q = F.split(c, [1, 5], axis=-1)
            return weighted(F.stack([p * q[:, :1], q[:, 1:2]], axis=0))

        assert check_gradients(fn, [a, b]) < OP_TOL

    def test_place_rows(self, rng):
        base, rows = leaf(rng.normal(size=(2, 4, 3))), leaf(rng.normal(size=(2, 2, 3)))
        idx = np.array([[0, 2], [1, 3]])
        assert check_gradients(lambda: weighted(F.place_rows(base, rows, idx)), [base, rows]) < OP_TOL

    def test_matmul_batched(self, rng):
        a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5)))
        assert check_gradients(lambda: weighted(F.matmul(a, b)), [a, b]) < OP_TOL

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_conv1d(self, rng, k):
        x = leaf(rng.normal(size=(2, 7, 3)))
        w = leaf(rng.normal(size=(k, 3, 2)))
        b = leaf(rng.normal(size=(2,)))
        assert check_gradients(lambda: weighted(F.conv1d(x, w, b)), [x, w, b]) < OP_TOL

    def test_maxpool(self, rng):
        x = leaf(rng.normal(size=(2, 6, 3)))
        assert check_gradients(lambda: weighted(F.maxpool1d(x, 3)), [x]) < OP_TOL

    @pytest.mark.parametrize("axis", [-1, -2])
    def test_softmax(self, rng, axis):
        x = leaf(rng.normal(size=(3, 4)))
        assert check_gradients(lambda: weighted(F.softmax(x, axis=axis)), [x]) < OP_TOL

    def test_layer_norm(self, rng):
        x = leaf(rng.normal(0.0, 3.0, size=(2, 3, 6)))
        gain, offset = leaf(rng.normal(size=6)), leaf(rng.normal(size=6))
        assert check_gradients(lambda: weighted(F.layer_norm(x, gain, offset)), [x, gain, offset]) < OP_TOL
