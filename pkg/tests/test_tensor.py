import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from horace import tensor as tn
from horace.tensor import Tensor

from conftest import max_grad_error


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestForward:
    def test_softmax_uniform(self):
        np.testing.assert_allclose(tn.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_relu(self):
        np.testing.assert_array_equal(tn.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_matmul_identity(self):
        m = np.array([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(tn.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)

    def test_leaky_relu_slope(self):
        np.testing.assert_allclose(tn.leaky_relu(Tensor([-2.0, 3.0]), 0.2).data, [-0.4, 3.0])

    def test_elu(self):
        np.testing.assert_allclose(tn.elu(Tensor([-1.0, 1.0])).data, [np.exp(-1) - 1, 1.0])

    def test_concat_last_dim(self):
        out = tn.concat([Tensor(np.ones((2, 1))), Tensor(np.zeros((2, 2)))])
        assert out.shape == (2, 3)

    def test_broadcast_leading_dims(self):
        a = Tensor(np.ones((3, 1, 4)))
        b = Tensor(np.arange(8.0).reshape(2, 4))
        assert (a * b).shape == (3, 2, 4)

    def test_logsumexp_matches_naive(self, rng):
        x = rng.normal(size=(3, 5))
        np.testing.assert_allclose(tn.logsumexp(Tensor(x)).data, np.log(np.exp(x).sum(-1)), rtol=1e-13)

    def test_logsumexp_mask(self, rng):
        x = rng.normal(size=(2, 4))
        mask = np.array([[1, 0, 1, 1], [0, 1, 1, 0]], bool)
        want = [np.log(np.exp(x[i][mask[i]]).sum()) for i in range(2)]
        np.testing.assert_allclose(tn.logsumexp(Tensor(x), mask=mask).data, want, rtol=1e-13)


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            tn.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))))
        with pytest.raises(ValueError, match="shape mismatch"):
            tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_non_finite_result(self):
        with pytest.raises(tn.NonFiniteError):
            tn.log(Tensor([0.0]))
        with pytest.raises(tn.NonFiniteError):
            tn.exp(Tensor([1000.0]))

    def test_non_finite_input(self):
        with pytest.raises(tn.NonFiniteError):
            Tensor([np.nan])

    def test_zero_row_normalize(self):
        with pytest.raises(ValueError, match="zero-norm"):
            tn.l2_normalize(Tensor([[0.0, 0.0], [1.0, 0.0]]))

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            tn.backward(x * 2.0)

    def test_empty_mask_row(self):
        with pytest.raises(ValueError, match="empty mask"):
            tn.masked_softmax(Tensor(np.zeros((2, 2))), np.array([[1, 0], [0, 0]], bool))


class TestBackward:
    def test_quadratic(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        tn.backward(tn.sum(w * w))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_accumulates_without_reset(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        tn.backward(tn.sum(w * w))
        tn.backward(tn.sum(w * w))
        np.testing.assert_array_equal(w.grad, [4.0, 8.0])

    def test_constant_gets_no_grad(self):
        c = Tensor([1.0, 2.0])
        w = Tensor([3.0, 4.0], requires_grad=True)
        tn.backward(tn.sum(c * w))
        assert c.grad is None
        np.testing.assert_array_equal(w.grad, [1.0, 2.0])

    def test_shared_subexpression_visited_once(self):
        w = Tensor([3.0], requires_grad=True)
        y = w * w
        tn.backward(tn.sum(y + y))  # d/dw 2w^2 = 4w
        np.testing.assert_allclose(w.grad, [12.0])

    def test_no_grad_records_nothing(self):
        w = Tensor([1.0], requires_grad=True)
        with tn.no_grad():
            y = w * 2.0
        assert not y.requires_grad

    def test_softmax_cross_term(self, rng):
        x = leaf(rng, 4, 5)
        t = Tensor(rng.normal(size=(4, 5)))
        assert max_grad_error(lambda: tn.sum(tn.softmax(x) * t), [x]) < 1e-4


# every differentiable primitive, each checked against finite differences over 10 seeds
PRIMITIVES = {
    "matmul": (lambda a, b: tn.matmul(a, b.T), [(3, 4), (2, 4)]),
    "matmul_vec": (lambda a, b: tn.matmul(a, b[0]), [(3, 4), (1, 4)]),
    "batched_matmul": (lambda a, b: tn.matmul(tn.reshape(a, (2, 3, 2)), b), [(6, 2), (2, 4)]),
    "add_bcast": (lambda a, b: a + b[0], [(3, 4), (1, 4)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 4)]),
    "mul_bcast": (lambda a, b: tn.reshape(a, (3, 1, 4)) * b, [(3, 4), (2, 4)]),
    "div": (lambda a, b: a / (tn.exp(b) + 1.0), [(3, 4), (3, 4)]),
    "concat": (lambda a, b: tn.concat([a, b], axis=-1), [(3, 2), (3, 4)]),
    "concat_rows": (lambda a, b: tn.concat([a, b], axis=0), [(3, 4), (2, 4)]),
    "softmax": (lambda a: tn.softmax(a), [(3, 5)]),
    "masked_softmax": (lambda a: tn.masked_softmax(a, np.tri(3, 5, 1, dtype=bool)), [(3, 5)]),
    "elu": (lambda a: tn.elu(a), [(3, 4)]),
    "relu": (lambda a: tn.relu(a), [(3, 4)]),
    "leaky_relu": (lambda a: tn.leaky_relu(a, 0.2), [(3, 4)]),
    "tanh": (lambda a: tn.tanh(a), [(3, 4)]),
    "exp": (lambda a: tn.exp(a), [(3, 4)]),
    "log": (lambda a: tn.log(a * a + 0.5), [(3, 4)]),
    "sum_axis": (lambda a: tn.sum(a, axis=0), [(3, 4)]),
    "mean": (lambda a: tn.mean(a, axis=1), [(3, 4)]),
    "l2_normalize": (lambda a: tn.l2_normalize(a), [(3, 4)]),
    "logsumexp": (lambda a: tn.logsumexp(a, mask=np.tri(3, 4, 1, dtype=bool)), [(3, 4)]),
    "take_rows": (lambda a: a[np.array([0, 2, 2, 1])], [(3, 4)]),
    "transpose": (lambda a: tn.transpose(a), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients(name, seed):
    fn, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(seed)
    params = [leaf(rng, *s) for s in shapes]
    weights = None

    def loss():
        nonlocal weights
        out = fn(*params)
        if weights is None:
            weights = Tensor(rng.normal(size=out.shape))
        return tn.sum(out * weights)

    assert max_grad_error(loss, params) < 1e-4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(tn.softmax(Tensor(x)).data.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (5, 5), elements=st.floats(-20, 20)),
    arrays(bool, (5, 5)),
)
def test_masked_softmax_support(x, mask):
    mask = mask | np.eye(5, dtype=bool)
    out = tn.masked_softmax(Tensor(x), mask).data
    assert np.all(out[~mask] == 0.0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(0.1, 100)))
def test_l2_normalize_unit_rows(x):
    out = tn.l2_normalize(Tensor(x)).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


class TestAdam:
    def test_zero_grad_leaves_params(self):
        p = [np.array([1.0, -2.0])]
        state = tn.AdamState(lr=0.1)
        out = tn.adam_step(p, [np.zeros(2)], state)
        np.testing.assert_array_equal(out[0], p[0])

    def test_first_step_is_lr_times_sign(self):
        # bias correction makes m_hat = g and v_hat = g^2 on step one
        g = np.array([0.3, -2.0, 1e-3])
        state = tn.AdamState(lr=0.01, eps=1e-8)
        out = tn.adam_step([np.zeros(3)], [g], state)[0]
        want = -0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(out, want, rtol=1e-12)
        np.testing.assert_allclose(out, -0.01 * np.sign(g), rtol=1e-4)

    def test_two_identical_steps(self):
        g = np.array([0.5, -1.0])
        b1, b2, lr, eps = 0.9, 0.999, 0.01, 1e-8
        state = tn.AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
        p = tn.adam_step([np.zeros(2)], [g], state)
        p = tn.adam_step(p, [g], state)
        # hand oracle: m2 = (1-b1)(1+b1) g, v2 = (1-b2)(1+b2) g^2
        m2 = (1 - b1) * g + b1 * (1 - b1) * g
        v2 = (1 - b2) * g**2 + b2 * (1 - b2) * g**2
        np.testing.assert_allclose(state.v[0], v2, rtol=1e-14)
        np.testing.assert_allclose(state.m[0], m2, rtol=1e-14)
        step2 = lr * (m2 / (1 - b1**2)) / (np.sqrt(v2 / (1 - b2**2)) + eps)
        step1 = lr * g / (np.abs(g) + eps)
        np.testing.assert_allclose(p[0], -step1 - step2, rtol=1e-12)
        assert state.step == 2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            tn.adam_step([np.zeros(2)], [np.zeros(3)], tn.AdamState())

    def test_optimizer_descends_quadratic(self):
        w = Tensor([3.0, -2.0], requires_grad=True)
        opt = tn.Adam([w], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            tn.backward(tn.sum(w * w))
            opt.step()
        assert np.abs(w.data).max() < 0.05
