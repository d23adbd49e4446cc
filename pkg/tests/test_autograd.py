"""Tensor engine tests: forward semantics, gradient oracles, record contract."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poseforge import autograd as ag
from poseforge.autograd import Tensor


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestForwardSemantics:
    def test_linear_identity(self):
        y = ag.linear(Tensor([1.0, 0.0]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(y.data, [1.0, 0.0])

    def test_linear_scalar_affine(self):
        y = ag.linear(Tensor([2.0]), Tensor([[3.0]]), Tensor([1.0]))
        np.testing.assert_array_equal(y.data, [7.0])

    def test_linear_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ag.ShapeError, match=r"\(5,\)"):
            ag.linear(Tensor(rand((4, 2))), Tensor(rand((2, 3))), Tensor(rand(5)))
        with pytest.raises(ag.ShapeError) as exc:
            ag.linear(Tensor(rand((4, 5))), Tensor(rand((2, 3))))
        assert "(4, 5)" in str(exc.value) and "(2, 3)" in str(exc.value)

    def test_layer_norm_constant_row_is_zero(self):
        out = ag.layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, [0.0, 0.0, 0.0], atol=1e-6)

    def test_layer_norm_symmetric_pair(self):
        out = ag.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-8)
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-3)

    def test_layer_norm_row_mean_zero(self):
        x = Tensor(rand((4, 8)))
        out = ag.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-6)

    def test_layer_norm_empty_axis_rejected(self):
        with pytest.raises(ag.ShapeError):
            ag.layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.ones(0)), Tensor(np.zeros(0)))

    def test_softmax_symmetry(self):
        np.testing.assert_allclose(ag.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_softmax_no_overflow(self):
        out = ag.softmax(Tensor([1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_softmax_closed_form(self):
        out = ag.softmax(Tensor([0.0, np.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_softmax_shift_invariance_bitwise(self):
        x = rand((3, 5), seed=2)
        a = ag.softmax(Tensor(x)).data
        b = ag.softmax(Tensor(x + 7.25)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_mlp_zero_weights_zero_output(self):
        layers = [(Tensor(np.zeros((3, 4))), Tensor(np.zeros(4))),
                  (Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))]
        out = ag.mlp(Tensor(rand((5, 3))), layers)
        np.testing.assert_array_equal(out.data, np.zeros((5, 2)))

    def test_mlp_single_identity_layer_passthrough(self):
        x = rand((2, 3), seed=1)
        out = ag.mlp(Tensor(x), [(Tensor(np.eye(3)), Tensor(np.zeros(3)))])
        np.testing.assert_array_equal(out.data, x)

    def test_mlp_width_mismatch(self):
        with pytest.raises(ag.ShapeError):
            ag.mlp(Tensor(rand((2, 3))), [(Tensor(rand((4, 2))), Tensor(rand(2)))])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(rand((3, 4)), requires_grad=True)
        ag.backward(ag.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square_scalar(self):
        x = Tensor(3.0, requires_grad=True)
        ag.backward(ag.mul(x, x))
        np.testing.assert_allclose(x.grad, 6.0)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(rand(3), requires_grad=True)
        with pytest.raises(ag.ContractError):
            ag.backward(ag.mul(x, 2.0))

    def test_double_backward_doubles_grads(self):
        x = Tensor(rand((2, 3)), requires_grad=True)
        loss = ag.tsum(ag.square(x))
        rec = ag.trace(loss)
        ag.backward(loss, rec)
        first = x.grad.copy()
        ag.backward(loss, rec)
        np.testing.assert_allclose(x.grad, 2.0 * first)

    def test_accumulation_over_paths(self):
        x = Tensor(2.0, requires_grad=True)
        y = ag.add(ag.mul(x, x), ag.mul(3.0, x))  # x^2 + 3x -> 2x + 3 = 7
        ag.backward(y)
        np.testing.assert_allclose(x.grad, 7.0)

    def test_no_grad_blocks_graph(self):
        x = Tensor(rand(3), requires_grad=True)
        with ag.no_grad():
            y = ag.tsum(ag.square(x))
        assert not y.requires_grad and y.parents == ()


class TestComputationRecord:
    def test_topological_order(self):
        x = Tensor(rand(3), requires_grad=True)
        loss = ag.tsum(ag.mul(ag.square(x), 2.0))
        rec = ag.trace(loss)
        seen = set()
        for entry in rec.entries:
            assert all(i in seen or not rec.nodes[i].parents for i in entry.inputs)
            for i in entry.inputs:
                seen.add(i)
            seen.add(entry.output)
        assert rec.nodes[-1] is loss

    def test_inputs_precede_outputs(self):
        x = Tensor(rand((2, 2)), requires_grad=True)
        loss = ag.tsum(ag.matmul(x, x))
        rec = ag.trace(loss)
        for entry in rec.entries:
            assert all(i < entry.output for i in entry.inputs)

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(1.0, requires_grad=True)
        y = x
        for _ in range(5000):
            y = ag.add(y, 1.0)
        ag.backward(y)
        np.testing.assert_allclose(x.grad, 1.0)


OPS_FOR_CHECK = [
    ("linear", lambda: (lambda x, W, b: ag.linear(x, W, b), [rand((3, 4), 1), rand((4, 2), 2), rand(2, 3)])),
    ("layer_norm", lambda: (lambda x, g, b: ag.layer_norm(x, g, b, eps=1e-5), [rand((2, 8), 4), rand(8, 5) + 1.5, rand(8, 6)])),
    ("softmax", lambda: (lambda x: ag.softmax(x, axis=-1), [rand((3, 5), 7)])),
    ("log_softmax", lambda: (lambda x: ag.log_softmax(x, axis=-1), [rand((3, 5), 8)])),
    ("matmul", lambda: (ag.matmul, [rand((2, 3, 4), 9), rand((2, 4, 5), 10)])),
    ("mul", lambda: (ag.mul, [rand((3, 4), 11), rand((3, 4), 12)])),
    ("div", lambda: (ag.div, [rand((3, 3), 13), np.abs(rand((3, 3), 14)) + 2.0])),
    ("exp", lambda: (ag.texp, [rand((2, 3), 15)])),
    ("sqrt", lambda: (ag.sqrt, [np.abs(rand((2, 3), 16)) + 0.5])),
    ("leaky_relu", lambda: (ag.leaky_relu, [rand((3, 4), 17) + 0.05])),
    ("smooth_l1", lambda: (ag.smooth_l1, [rand((4, 4), 18) * 2.0 + 0.02])),
    ("concat", lambda: (lambda a, b: ag.concat([a, b], axis=1), [rand((2, 3), 19), rand((2, 4), 20)])),
    ("embedding", lambda: (lambda t: ag.embedding(t, np.array([[0, 2], [1, 1]])), [rand((3, 5), 21)])),
    ("transpose", lambda: (lambda x: ag.transpose(x, (1, 0, 2)), [rand((2, 3, 4), 22)])),
    ("arccos", lambda: (ag.arccos, [np.tanh(rand((3, 3), 23)) * 0.9])),
    ("broadcast_sub", lambda: (lambda a, b: ag.sub(ag.reshape(a, (4, 1, 3)), ag.reshape(b, (1, 4, 3))), [rand((4, 3), 24), rand((4, 3), 25)])),
    ("broadcast_div", lambda: (lambda a, b: ag.div(a, ag.reshape(ag.maximum(b, 0.5), (3, 3, 1))), [rand((3, 3, 3), 26), np.abs(rand((3, 3), 27)) + 1.0])),
    ("gather_rows", lambda: (lambda a: ag.gather_rows(a, np.array([0, 2, 2, 1])), [rand((3, 4), 28)])),
    ("maximum", lambda: (lambda a: ag.maximum(a, 0.25), [np.abs(rand((3, 3), 29)) + 0.5])),
    ("tabs", lambda: (ag.tabs, [rand((3, 3), 30) + 2.0])),
]


@pytest.mark.parametrize("name,make", OPS_FOR_CHECK, ids=[n for n, _ in OPS_FOR_CHECK])
def test_gradcheck_registered_ops(name, make):
    op, inputs = make()
    report = ag.grad_check(op, inputs, h=1e-3, tol=1e-4)
    assert report.passed, f"{name}: max rel errors {report.max_rel_errors}"


def test_gradcheck_ten_random_points():
    # Engine-wide invariant: reverse mode matches central differences at
    # ten random points for a composite probe. Points whose pre-activations
    # sit within the finite-difference window of the LeakyReLU kink are
    # reseeded (the kink makes central differences themselves wrong there).
    checked, seed = 0, 0
    while checked < 10:
        x = rand((2, 5), seed=100 + seed)
        W = rand((5, 3), seed=200 + seed)
        seed += 1
        if np.min(np.abs(x @ W)) < 5e-3:
            continue

        def probe(xv, Wv):
            h = ag.leaky_relu(ag.matmul(xv, Wv))
            return ag.softmax(ag.layer_norm(h, ag.constant(np.ones(3)), ag.constant(np.zeros(3))))

        report = ag.grad_check(probe, [x, W], h=1e-5, tol=1e-4, seed=seed)
        assert report.passed, report.max_rel_errors
        checked += 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(values, shift):
    x = np.array(values)
    out = ag.softmax(Tensor(x)).data
    assert abs(out.sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(out, ag.softmax(Tensor(x + shift)).data, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_forward_ops_stay_finite(seed):
    x = rand((3, 4), seed=seed) * 50
    g, b = np.ones(4), np.zeros(4)
    for out in (
        ag.softmax(Tensor(x)),
        ag.layer_norm(Tensor(x), Tensor(g), Tensor(b)),
        ag.smooth_l1(Tensor(x)),
        ag.leaky_relu(Tensor(x)),
    ):
        assert np.isfinite(out.data).all()
