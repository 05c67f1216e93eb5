import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lsno import tensor as T
from lsno.errors import ContractError, DimensionError, DomainError
from lsno.gradcheck import check, numeric_grad, relative_error
from lsno.tensor import Tape, Tensor
from lsno.verify import primitive_cases


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


finite = st.floats(-3, 3, allow_nan=False)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_hand_arithmetic(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_gradient_against_central_differences(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        r = rng.normal(size=(3, 2))
        errors = check(lambda: T.reduce_sum(T.mul(T.matmul(a, b), Tensor(r))), [a, b])
        assert max(errors) < 1e-6

    def test_backward_formula(self):
        rng = np.random.default_rng(2)
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        T.reduce_sum(T.mul(T.matmul(a, b), Tensor(g))).backward()
        np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-14)
        np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-14)

    @pytest.mark.parametrize("sa, sb", [((2, 3), (2, 3)), ((2, 3), (3,)), ((2, 2, 3), (3, 3, 2))])
    def test_shape_mismatch(self, sa, sb):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones(sa)), Tensor(np.ones(sb)))

    def test_associative_on_well_conditioned_chain(self):
        rng = np.random.default_rng(3)
        a, b, c = (Tensor(np.eye(4) + 0.1 * rng.normal(size=(4, 4))) for _ in range(3))
        left = T.matmul(T.matmul(a, b), c).data
        right = T.matmul(a, T.matmul(b, c)).data
        assert np.max(np.abs(left - right)) < 1e-12


class TestConv1d:
    def test_identity_kernel(self):
        x = np.array([[0.5, -1.0, 2.0, 3.0]])
        out = T.conv1d(Tensor(x), Tensor(np.ones((1, 1, 1))), 1)
        np.testing.assert_array_equal(out.data, x)

    def test_hand_arithmetic(self):
        out = T.conv1d(Tensor([[1.0, 2.0, 3.0, 4.0]]), Tensor([[[1.0, 1.0]]]), 1)
        assert out.data.tolist() == [[3.0, 5.0, 7.0]]

    def test_output_length_with_stride(self):
        out = T.conv1d(Tensor(np.ones((2, 3, 11))), Tensor(np.ones((4, 3, 3))), 2)
        assert out.shape == (2, 4, (11 - 3) // 2 + 1)

    def test_naive_loop_oracle(self):
        rng = np.random.default_rng(4)
        x, k = rng.normal(size=(3, 10)), rng.normal(size=(2, 3, 4))
        out = T.conv1d(Tensor(x), Tensor(k), 3).data
        expected = np.zeros((2, (10 - 4) // 3 + 1))
        for o in range(2):
            for j in range(expected.shape[1]):
                for c in range(3):
                    for w in range(4):
                        expected[o, j] += k[o, c, w] * x[c, 3 * j + w]
        np.testing.assert_allclose(out, expected, rtol=1e-13)

    def test_gradient_random_instance(self):
        rng = np.random.default_rng(5)
        x, k = leaf(rng.normal(size=(2, 9))), leaf(rng.normal(size=(3, 2, 3)))
        r = rng.normal(size=(3, 7))
        assert max(check(lambda: T.reduce_sum(T.mul(T.conv1d(x, k, 1), Tensor(r))), [x, k])) < 1e-5

    def test_kernel_wider_than_input(self):
        with pytest.raises(DimensionError):
            T.conv1d(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 1, 4))), 1)

    def test_stacked_modes_match_per_copy_single_mode(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3, 12))
        k = rng.normal(size=(4, 5, 3, 3))
        shared = T.conv1d(Tensor(x), Tensor(k), 2).data
        xs = rng.normal(size=(2, 4, 3, 12))
        stacked = T.conv1d(Tensor(xs), Tensor(k), 2).data
        for i in range(4):
            np.testing.assert_allclose(shared[:, i], T.conv1d(Tensor(x), Tensor(k[i]), 2).data, rtol=1e-13)
            np.testing.assert_allclose(stacked[:, i], T.conv1d(Tensor(xs[:, i]), Tensor(k[i]), 2).data, rtol=1e-13)


class TestElementwise:
    def test_tanh_zero(self):
        assert T.tanh(Tensor(0.0)).item() == 0.0

    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    def test_softplus_gradient(self):
        x = leaf(np.random.default_rng(7).normal(size=5))
        fd = numeric_grad(lambda: T.reduce_sum(T.softplus(x)), x.data)
        T.reduce_sum(T.softplus(x)).backward()
        assert relative_error(x.grad, fd) < 1e-6
        np.testing.assert_allclose(x.grad, 1 / (1 + np.exp(-x.data)), rtol=1e-12)

    def test_pow_negative_base_fractional_exponent(self):
        with pytest.raises(DomainError):
            T.pow_p(Tensor([-1.0, 2.0]), 1.5)

    def test_pow_integer_exponent_on_negative_base(self):
        assert T.pow_p(Tensor([-2.0]), 3).data.tolist() == [-8.0]

    def test_shape_rules(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
        assert T.add(Tensor(np.ones((2, 3))), 2.0).data.tolist() == [[3.0] * 3] * 2

    def test_dispatch_table(self):
        x = Tensor([-1.0, 0.5])
        assert T.elementwise("relu", x).data.tolist() == [0.0, 0.5]
        assert T.elementwise("abs", x).data.tolist() == [1.0, 0.5]
        with pytest.raises(Exception):
            T.elementwise("nope", x)

    @given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (3, 2), elements=finite))
    @settings(max_examples=30, deadline=None)
    def test_add_commutes(self, a, b):
        np.testing.assert_array_equal(T.add(Tensor(a), Tensor(b)).data, T.add(Tensor(b), Tensor(a)).data)

    @given(arrays(np.float64, (4,), elements=st.floats(0.1, 3)), st.floats(1.0, 3.5))
    @settings(max_examples=30, deadline=None)
    def test_pow_gradient_property(self, base, p):
        x = leaf(base)
        assert max(check(lambda: T.reduce_sum(T.pow_p(x, p)), [x])) < 1e-4


class TestReduce:
    def test_sum(self):
        assert T.reduce_sum(Tensor([1.0, 2.0, 3.0])).item() == 6.0

    def test_mean_of_constant(self):
        assert T.reduce_mean(Tensor(np.full((3, 4), 2.5))).item() == 2.5

    def test_gradient_of_sum_is_ones(self):
        x = leaf(np.random.default_rng(8).normal(size=(2, 3)))
        T.reduce_sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            T.reduce("sum", Tensor(np.ones((2, 3))), axis=2)


class TestBackward:
    def test_square(self):
        x = leaf(3.0)
        T.mul(x, x).backward()
        assert x.grad == 6.0

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            T.mul(leaf([1.0, 2.0]), 2.0).backward()

    def test_empty_tape(self):
        with pytest.raises(ContractError):
            leaf(1.0).backward()

    def test_accumulation_doubles(self):
        x = leaf([1.0, -2.0])

        def f():
            return T.reduce_sum(T.tanh(T.mul(x, x)))

        f().backward()
        once = x.grad.copy()
        f().backward()
        np.testing.assert_array_equal(x.grad, 2 * once)

    def test_composite_mlp(self):
        rng = np.random.default_rng(9)
        w1, b1 = leaf(rng.normal(size=(3, 5))), leaf(rng.normal(size=(5,)))
        w2 = leaf(rng.normal(size=(5, 1)))
        x = Tensor(rng.normal(size=(4, 3)))

        def f():
            h = T.tanh(T.add_bias(T.matmul(x, w1), T.reshape(b1, (1, 5))))
            return T.reduce_mean(T.square(T.matmul(h, w2)))

        assert max(check(f, [w1, b1, w2], step=1e-5)) < 1e-4

    def test_no_grad_records_nothing(self):
        x = leaf(2.0)
        with T.no_grad():
            y = T.mul(x, x)
        assert y.is_leaf and not y.requires_grad

    def test_retain_grad_on_intermediate(self):
        x = leaf([1.0, 2.0])
        y = T.mul(x, 3.0).retain_grad()
        T.reduce_sum(T.square(y)).backward()
        np.testing.assert_array_equal(y.grad, 2 * y.data)

    def test_tape_order_is_topological(self):
        x = leaf([0.3])
        y = T.tanh(T.mul(x, 2.0))
        z = T.add(y, T.exp(y))
        tape = Tape.trace(T.reduce_sum(z))
        seqs = [t._node.seq for t in tape.entries]
        assert seqs == sorted(seqs) and len(set(map(id, tape.entries))) == len(tape.entries)
        assert tape.leaves == [x]

    def test_replay_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(10)
            a, b = leaf(rng.normal(size=(3, 3))), leaf(rng.normal(size=(3, 3)))
            T.reduce_sum(T.sigmoid(T.matmul(a, b))).backward()
            return a.grad.tobytes() + b.grad.tobytes()

        assert run() == run()


@pytest.mark.parametrize("name", sorted(primitive_cases(np.random.default_rng(0))))
def test_primitive_gradient(name):
    fn, inputs = primitive_cases(np.random.default_rng(11))[name]
    assert max(check(fn, inputs)) < 1e-4


def test_take_with_repeated_indices_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    T.reduce_sum(T.take(x, np.array([0, 0, 2]))).backward()
    assert x.grad.tolist() == [2.0, 0.0, 1.0]


def test_scalar_tensor_keeps_rank_zero():
    assert Tensor(1.5).shape == ()
