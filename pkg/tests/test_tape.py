"""Reverse-mode tape: forward values, adjoints, and failure modes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from driftopt import tape as tp


def numeric_grad(func, x, h=1e-6):
    """Central finite differences of a scalar function of a flat array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        bump = flat.copy()
        bump[i] += h
        hi = func(bump.reshape(x.shape))
        bump[i] -= 2 * h
        lo = func(bump.reshape(x.shape))
        grad[i] = (hi - lo) / (2 * h)
    return grad


class TestForwardValues:
    def test_square_of_three_is_nine(self):
        """square(x) evaluates x*x elementwise."""
        tape = tp.Tape()
        x = tape.leaf(np.array(3.0), trainable=True)
        y = tp.square(x)
        assert y.value == 9.0

    def test_dot_of_small_vectors(self):
        """dot([1,2],[3,4]) contracts the last axis to 11."""
        tape = tp.Tape()
        a = tape.leaf(np.array([1.0, 2.0]), trainable=True)
        b = tape.leaf(np.array([3.0, 4.0]), trainable=True)
        assert tp.dot(a, b).value == 11.0

    def test_ops_pass_plain_arrays_through(self):
        """Without any tape node involved the ops reduce to plain numpy."""
        out = tp.add(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        assert isinstance(out, np.ndarray)
        assert_allclose(out, [4.0, 6.0])

    def test_detach_forward_invariance(self):
        """detach changes nothing about the forward value."""
        tape = tp.Tape()
        x = tape.leaf(np.array([1.5, -2.0]), trainable=True)
        y = tp.detach(tp.exp(x))
        assert_allclose(y.value, np.exp([1.5, -2.0]), rtol=1e-15)

    def test_detach_of_plain_array_is_identity(self):
        arr = np.array([1.0, 2.0])
        assert_allclose(tp.detach(arr), arr)


class TestAdjoints:
    def test_square_adjoint_is_two_x(self):
        """d/dx x^2 = 2x, so the gradient at 3 is 6."""
        tape = tp.Tape()
        x = tape.leaf(np.array(3.0), trainable=True)
        grad = tape.backward(tp.square(x))
        assert_allclose(grad, [6.0], rtol=1e-15)

    def test_dot_adjoints_are_the_other_operand(self):
        """d(a.b)/da = b and d(a.b)/db = a."""
        tape = tp.Tape()
        a = tape.leaf(np.array([1.0, 2.0]), trainable=True)
        b = tape.leaf(np.array([3.0, 4.0]), trainable=True)
        grad = tape.backward(tp.dot(a, b))
        assert_allclose(grad, [3.0, 4.0, 1.0, 2.0], rtol=1e-15)

    def test_detach_blocks_gradient(self):
        """A detached branch contributes no adjoint to its ancestors."""
        tape = tp.Tape()
        x = tape.leaf(np.array(2.0), trainable=True)
        y = tp.add(tp.square(x), tp.detach(tp.square(x)))
        grad = tape.backward(y)
        assert_allclose(grad, [4.0], rtol=1e-15)

    def test_backward_is_linear(self):
        """grad(2*L1 + 3*L2) equals 2*grad(L1) + 3*grad(L2)."""
        x0 = np.array([0.7, -1.2, 0.3])

        def grad_of(combine):
            tape = tp.Tape()
            x = tape.leaf(x0, trainable=True)
            l1 = tp.asum(tp.square(x))
            l2 = tp.asum(tp.exp(x))
            return tape.backward(combine(l1, l2))

        combined = grad_of(lambda a, b: tp.add(tp.scale(a, 2.0), tp.scale(b, 3.0)))
        single_1 = grad_of(lambda a, b: a)
        single_2 = grad_of(lambda a, b: b)
        assert_allclose(combined, 2 * single_1 + 3 * single_2, rtol=1e-12)

    def test_matvec_adjoint_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        m = rng.standard_normal((3, 3))
        x0 = rng.standard_normal((5, 3))

        def loss(xflat):
            return float(np.sum(np.square(xflat.reshape(5, 3) @ m.T)))

        tape = tp.Tape()
        x = tape.leaf(x0, trainable=True)
        grad = tape.backward(tp.asum(tp.square(tp.matvec(m, x))))
        assert_allclose(grad, numeric_grad(loss, x0), rtol=1e-6, atol=1e-8)

    def test_affine_adjoint_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        w0 = rng.standard_normal((4, 3))
        b0 = rng.standard_normal(4)
        x0 = rng.standard_normal((6, 3))

        def loss(wflat):
            w = wflat.reshape(4, 3)
            return float(np.sum(np.tanh(x0 @ w.T + b0)))

        tape = tp.Tape()
        w = tape.leaf(w0, trainable=True)
        b = tape.leaf(b0, trainable=True)
        grad = tape.backward(tp.asum(tp.tanh(tp.affine(w, x0, b))))
        assert_allclose(grad[: w0.size], numeric_grad(loss, w0), rtol=1e-5, atol=1e-8)

    def test_mean_with_axis_spreads_adjoint(self):
        """amean over axis 0 pushes 1/N to each row."""
        tape = tp.Tape()
        x = tape.leaf(np.ones((4, 2)), trainable=True)
        grad = tape.backward(tp.asum(tp.amean(x, axis=0)))
        assert_allclose(grad, np.full(8, 0.25), rtol=1e-15)

    def test_broadcast_adjoint_sums_over_expanded_axes(self):
        """A (d,) leaf broadcast against (N, d) accumulates N adjoint rows."""
        tape = tp.Tape()
        c = tape.leaf(np.array([1.0, 2.0]), trainable=True)
        x = np.arange(6.0).reshape(3, 2)
        grad = tape.backward(tp.asum(tp.mul(c, x)))
        assert_allclose(grad, x.sum(axis=0), rtol=1e-15)


@st.composite
def leaf_arrays(draw):
    shape = draw(st.sampled_from([(2,), (3,), (2, 3)]))
    vals = draw(
        st.lists(
            st.floats(min_value=-2.0, max_value=2.0),
            min_size=int(np.prod(shape)),
            max_size=int(np.prod(shape)),
        )
    )
    return np.array(vals).reshape(shape)


class TestElementwiseProperties:
    @settings(max_examples=25, deadline=None)
    @given(leaf_arrays(), st.sampled_from(["add", "sub", "mul"]))
    def test_binary_adjoints_match_finite_differences(self, x0, op_tag):
        """Tape adjoints of the binary ops agree with central differences."""
        other = np.linspace(0.5, 1.5, x0.size).reshape(x0.shape)

        def loss(arr):
            ref = {"add": arr + other, "sub": arr - other, "mul": arr * other}
            return float(np.sum(ref[op_tag]))

        tape = tp.Tape()
        x = tape.leaf(x0, trainable=True)
        grad = tape.backward(tp.asum(tp.primitive(op_tag, x, other)))
        assert_allclose(grad, numeric_grad(loss, x0), rtol=1e-5, atol=1e-7)

    @settings(max_examples=25, deadline=None)
    @given(leaf_arrays(), st.sampled_from(["square", "exp", "tanh", "relu"]))
    def test_unary_adjoints_match_finite_differences(self, x0, op_tag):
        x0 = x0 + 0.25  # keep relu kinks off the sampled points
        fwd = {"square": np.square, "exp": np.exp, "tanh": np.tanh,
               "relu": lambda a: np.maximum(a, 0.0)}

        def loss(arr):
            return float(np.sum(fwd[op_tag](arr)))

        tape = tp.Tape()
        x = tape.leaf(x0, trainable=True)
        grad = tape.backward(tp.asum(tp.primitive(op_tag, x)))
        assert_allclose(grad, numeric_grad(loss, x0), rtol=1e-5, atol=1e-6)


class TestErrorPaths:
    def test_unknown_primitive_tag(self):
        with pytest.raises(ValueError, match="unknown op tag 'nosuch'"):
            tp.primitive("nosuch", np.ones(2))

    def test_unknown_activation(self):
        with pytest.raises(ValueError, match="unknown activation"):
            tp.activation("softplus")

    def test_concat_shape_mismatch_names_op_and_shapes(self):
        tape = tp.Tape()
        a = tape.leaf(np.ones((3, 2)), trainable=True)
        with pytest.raises(tp.ShapeError, match="concat"):
            tp.concat(a, np.ones((4, 2)))

    def test_matvec_rejects_vector_matrix(self):
        tape = tp.Tape()
        x = tape.leaf(np.ones((3, 2)), trainable=True)
        with pytest.raises(tp.ShapeError, match="matvec"):
            tp.matvec(np.ones(2), x)

    def test_backward_requires_scalar_root(self):
        tape = tp.Tape()
        x = tape.leaf(np.ones(3), trainable=True)
        with pytest.raises(tp.TapeError, match="scalar"):
            tape.backward(tp.square(x))

    def test_second_backward_sweep_rejected(self):
        tape = tp.Tape()
        x = tape.leaf(np.array(1.0), trainable=True)
        root = tp.square(x)
        tape.backward(root)
        with pytest.raises(tp.TapeError, match="fresh tape"):
            tape.backward(root)

    def test_mixed_tapes_rejected(self):
        t1, t2 = tp.Tape(), tp.Tape()
        a = t1.leaf(np.ones(2), trainable=True)
        b = t2.leaf(np.ones(2), trainable=True)
        with pytest.raises(tp.TapeError, match="different tapes"):
            tp.add(a, b)
