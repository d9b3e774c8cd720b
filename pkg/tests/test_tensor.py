"""Autodiff engine: analytic oracles and finite-difference gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import boxcl.tensor as T
from boxcl.optim import Adam, inverse_sqrt_lr
from boxcl.params import ParamStore
from boxcl.rng import stream
from boxcl.tensor import ShapeError, Tensor, backward


def make_leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True)


def check_grad(build_loss, leaf: Tensor, fd, relerr, h=1e-5, tol=1e-4):
    """Compare autodiff gradient of build_loss(leaf) against central differences."""
    leaf.zero_grad()
    loss = build_loss(leaf)
    backward(loss)
    ad = leaf.grad.copy()

    def scalar(x):
        saved = leaf.data
        leaf.data = x
        with T.no_grad():
            value = float(build_loss(leaf).data)
        leaf.data = saved
        return value

    num = fd(scalar, leaf.data.copy(), h=h)
    assert relerr(ad, num) < tol


class TestForwardTrivials:
    def test_matmul_identity(self):
        rng = stream(0, "mmid")
        a = Tensor(rng.normal(size=(5, 4)))
        eye = Tensor(np.eye(4))
        out = T.matmul(a, eye)
        np.testing.assert_array_equal(out.data, a.data)

    def test_softmax_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], rtol=0, atol=0)

    def test_layer_norm_constant_row_is_zero(self):
        x = Tensor(np.full((3, 8), 2.5))
        out = T.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        np.testing.assert_array_equal(out.data, np.zeros((3, 8)))

    def test_forward_is_pure(self):
        rng = stream(1, "pure")
        a = Tensor(rng.normal(size=(6, 6)))
        b = Tensor(rng.normal(size=(6, 6)))
        r1 = T.matmul(T.softmax(a), b).data
        r2 = T.matmul(T.softmax(a), b).data
        np.testing.assert_array_equal(r1, r2)

    def test_shape_errors_name_the_primitive(self):
        with pytest.raises(ShapeError, match="matmul"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        with pytest.raises(ShapeError, match="add"):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        with pytest.raises(ShapeError, match="embedding"):
            T.embedding(Tensor(np.zeros((4, 2))), np.array([[0, 5]]))


class TestBackwardBasics:
    def test_sum_of_squares_gradient(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.pow_const(theta, 2))
        backward(loss)
        np.testing.assert_array_equal(theta.grad, [2.0, 4.0])

    def test_backward_twice_accumulates(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.pow_const(theta, 2))
        backward(loss)
        backward(loss)
        np.testing.assert_array_equal(theta.grad, [4.0, 8.0])

    def test_non_scalar_loss_rejected(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            backward(T.pow_const(theta, 2))

    def test_shared_subexpression(self):
        # y = x*x + x: dy/dx = 2x + 1
        x = Tensor([3.0], requires_grad=True)
        y = T.add(T.mul(x, x), x)
        backward(T.tsum(y))
        np.testing.assert_allclose(x.grad, [7.0])


class TestGradChecks:
    """Every primitive against central finite differences (f64, h=1e-5)."""

    def test_add_mul_broadcast(self, fd, relerr):
        rng = stream(2, "gc")
        a = make_leaf(rng, (3, 4))
        b = Tensor(rng.normal(size=(4,)))
        check_grad(lambda t: T.tsum(T.mul(T.add(t, b), T.add(t, 1.5))), a, fd, relerr)

    def test_matmul(self, fd, relerr):
        rng = stream(3, "gc")
        a = make_leaf(rng, (3, 4))
        b = Tensor(rng.normal(size=(4, 5)))
        check_grad(lambda t: T.tsum(T.pow_const(T.matmul(t, b), 2)), a, fd, relerr)

    def test_matmul_batched(self, fd, relerr):
        rng = stream(4, "gc")
        a = make_leaf(rng, (2, 3, 4, 5))
        b = Tensor(rng.normal(size=(2, 3, 5, 4)))
        check_grad(lambda t: T.tsum(T.mul(T.matmul(t, b), 0.5)), a, fd, relerr)

    def test_matmul_broadcast_batch(self, fd, relerr):
        rng = stream(5, "gc")
        a = make_leaf(rng, (4, 5))
        b = Tensor(rng.normal(size=(3, 5, 2)))
        check_grad(lambda t: T.tsum(T.matmul(t, b)), a, fd, relerr)

    def test_softmax(self, fd, relerr):
        rng = stream(6, "gc")
        a = make_leaf(rng, (4, 7))
        w = Tensor(rng.normal(size=(4, 7)))
        check_grad(lambda t: T.tsum(T.mul(T.softmax(t), w)), a, fd, relerr)

    def test_log_softmax(self, fd, relerr):
        rng = stream(7, "gc")
        a = make_leaf(rng, (4, 7))
        w = Tensor(rng.normal(size=(4, 7)))
        check_grad(lambda t: T.tsum(T.mul(T.log_softmax(t), w)), a, fd, relerr)

    def test_layer_norm_x(self, fd, relerr):
        rng = stream(8, "gc")
        a = make_leaf(rng, (3, 8))
        gain = Tensor(rng.normal(size=(8,)))
        bias = Tensor(rng.normal(size=(8,)))
        w = Tensor(rng.normal(size=(3, 8)))
        check_grad(lambda t: T.tsum(T.mul(T.layer_norm(t, gain, bias), w)), a, fd, relerr)

    def test_layer_norm_gain_bias(self, fd, relerr):
        rng = stream(9, "gc")
        x = Tensor(rng.normal(size=(3, 8)))
        gain = make_leaf(rng, (8,))
        w = Tensor(rng.normal(size=(3, 8)))
        check_grad(lambda t: T.tsum(T.mul(T.layer_norm(x, t, Tensor(np.zeros(8))), w)), gain, fd, relerr)
        bias = make_leaf(rng, (8,))
        check_grad(lambda t: T.tsum(T.mul(T.layer_norm(x, Tensor(np.ones(8)), t), w)), bias, fd, relerr)

    def test_relu(self, fd, relerr):
        rng = stream(10, "gc")
        a = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        # keep probe points away from the kink
        a.data[np.abs(a.data) < 0.05] += 0.1
        check_grad(lambda t: T.tsum(T.pow_const(T.relu(t), 2)), a, fd, relerr)

    def test_gelu(self, fd, relerr):
        rng = stream(11, "gc")
        a = make_leaf(rng, (5, 5))
        check_grad(lambda t: T.tsum(T.gelu(t)), a, fd, relerr)

    def test_exp_log_sigmoid(self, fd, relerr):
        rng = stream(12, "gc")
        a = make_leaf(rng, (4, 4), scale=0.5)
        check_grad(lambda t: T.tsum(T.exp(t)), a, fd, relerr)
        check_grad(lambda t: T.tsum(T.sigmoid(t)), a, fd, relerr)
        b = Tensor(np.abs(stream(13, "gc").normal(size=(4,))) + 0.5, requires_grad=True)
        check_grad(lambda t: T.tsum(T.log(t)), b, fd, relerr)

    def test_reshape_transpose_concat(self, fd, relerr):
        rng = stream(14, "gc")
        a = make_leaf(rng, (2, 3, 4))
        w = Tensor(stream(15, "gc").normal(size=(16, 2)))

        def build(t):
            r = T.reshape(T.transpose(t, (1, 0, 2)), (3, 8))
            c = T.concat([r, T.mul(r, 2.0)], axis=1)
            return T.tsum(T.matmul(c, w))

        check_grad(build, a, fd, relerr)

    def test_embedding(self, fd, relerr):
        rng = stream(16, "gc")
        w = make_leaf(rng, (6, 3))
        ids = np.array([[0, 2, 2], [5, 1, 0]])
        coef = Tensor(rng.normal(size=(2, 3, 3)))
        check_grad(lambda t: T.tsum(T.mul(T.embedding(t, ids), coef)), w, fd, relerr)

    def test_cross_entropy_gather(self, fd, relerr):
        rng = stream(17, "gc")
        a = make_leaf(rng, (2, 3, 5))
        ids = np.array([[0, 4, 2], [1, 1, 3]])
        check_grad(
            lambda t: T.tsum(T.cross_entropy_gather(T.log_softmax(t), ids)), a, fd, relerr
        )

    def test_mean_and_sum_axes(self, fd, relerr):
        rng = stream(18, "gc")
        a = make_leaf(rng, (3, 4, 5))
        check_grad(lambda t: T.tsum(T.pow_const(T.tmean(t, axis=1), 2)), a, fd, relerr)
        check_grad(lambda t: T.tsum(T.pow_const(T.tsum(t, axis=2), 2)), a, fd, relerr)

    def test_kl_from_logits(self, fd, relerr):
        rng = stream(19, "gc")
        z = make_leaf(rng, (2, 3, 6))
        with T.no_grad():
            lt = T.log_softmax(Tensor(stream(20, "gc").normal(size=(2, 3, 6)))).data
        check_grad(lambda t: T.tsum(T.kl_from_logits(t, lt)), z, fd, relerr)

    def test_kl_teacher_student(self, fd, relerr):
        rng = stream(21, "gc")
        z = make_leaf(rng, (2, 3, 6))
        with T.no_grad():
            lt = T.log_softmax(Tensor(stream(22, "gc").normal(size=(2, 3, 6)))).data
        check_grad(lambda t: T.tsum(T.kl_teacher_student(lt, t)), z, fd, relerr)


class TestKLStationarity:
    def test_kl_zero_and_zero_gradient_at_teacher(self):
        rng = stream(23, "kl")
        z = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        with T.no_grad():
            lt = T.log_softmax(Tensor(z.data.copy())).data
        kl = T.kl_from_logits(z, lt)
        np.testing.assert_array_equal(kl.data, np.zeros((3,)))
        backward(T.tsum(kl))
        np.testing.assert_array_equal(z.grad, np.zeros_like(z.data))

    def test_kd_gradient_zero_when_student_equals_teacher(self):
        rng = stream(24, "kl")
        z = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        with T.no_grad():
            lt = T.log_softmax(Tensor(z.data.copy())).data
        kl = T.kl_teacher_student(lt, z)
        np.testing.assert_array_equal(kl.data, np.zeros((3,)))
        backward(T.tsum(kl))
        np.testing.assert_array_equal(z.grad, np.zeros_like(z.data))


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = Tensor(np.arange(12.0).reshape(3, 4))
        out = T.dropout(x, 0.0, stream(0, "drop"))
        assert out is x

    def test_mask_reproducible_from_seed(self):
        x = Tensor(np.ones((50, 20)))
        a = T.dropout(x, 0.3, stream(7, "drop")).data
        b = T.dropout(x, 0.3, stream(7, "drop")).data
        np.testing.assert_array_equal(a, b)
        c = T.dropout(x, 0.3, stream(8, "drop")).data
        assert not np.array_equal(a, c)

    def test_scaling_preserves_expectation(self):
        x = Tensor(np.ones((200, 200)))
        out = T.dropout(x, 0.25, stream(9, "drop")).data
        assert abs(out.mean() - 1.0) < 0.01

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            T.dropout(Tensor([1.0]), 1.0, stream(0, "drop"))


class TestAdam:
    def _store(self, values):
        store = ParamStore()
        store.add("w", np.asarray(values, dtype=np.float64))
        return store

    def test_zero_gradient_leaves_params_unchanged(self):
        store = self._store([1.0, -2.0, 3.0])
        before = store["w"].data.copy()
        opt = Adam(store)
        store["w"].grad = np.zeros(3)
        opt.step(0.1)
        np.testing.assert_array_equal(store["w"].data, before)
        assert opt.t == 1

    def test_first_step_moves_by_lr(self):
        # bias-corrected first step: update = lr * g / (|g| + eps) = lr * sign(g)
        store = self._store([0.0])
        opt = Adam(store, beta1=0.9, beta2=0.98)
        store["w"].grad = np.array([1.0])
        opt.step(0.1)
        assert abs(store["w"].data[0] + 0.1) < 1e-8

    def test_deterministic_across_runs(self):
        def run():
            rng = stream(42, "adam")
            store = self._store(rng.normal(size=8))
            opt = Adam(store)
            for k in range(50):
                store["w"].grad = stream(42, "adam-grads", k).normal(size=8)
                opt.step(1e-3)
            return store["w"].data

        np.testing.assert_array_equal(run(), run())

    def test_frozen_and_masked_parameters(self):
        store = ParamStore()
        store.add("a", np.ones(4))
        store.add("b", np.ones(4))
        mask = np.array([True, False, True, False])
        opt = Adam(store, frozen={"a"}, update_masks={"b": mask})
        store["a"].grad = np.ones(4)
        store["b"].grad = np.ones(4)
        opt.step(0.5)
        np.testing.assert_array_equal(store["a"].data, np.ones(4))
        np.testing.assert_array_equal(store["b"].data[[1, 3]], [1.0, 1.0])
        assert (store["b"].data[[0, 2]] != 1.0).all()

    def test_rejects_nonpositive_lr(self):
        opt = Adam(self._store([1.0]))
        with pytest.raises(ValueError):
            opt.step(0.0)


class TestInverseSqrtSchedule:
    def test_at_warmup_equals_base(self):
        assert inverse_sqrt_lr(4000, 4000, 5e-4) == 5e-4

    def test_quarter_warmup_rule(self):
        assert inverse_sqrt_lr(16000, 4000, 5e-4) == pytest.approx(2.5e-4)

    def test_linear_warmup_half(self):
        assert inverse_sqrt_lr(2000, 4000, 5e-4) == pytest.approx(2.5e-4)

    def test_errors(self):
        with pytest.raises(ValueError):
            inverse_sqrt_lr(1, 0, 1e-3)
        with pytest.raises(ValueError):
            inverse_sqrt_lr(0, 100, 1e-3)


class TestParamStore:
    def test_lexicographic_iteration_and_total(self):
        store = ParamStore()
        store.add("b.x", np.zeros((2, 3)))
        store.add("a.y", np.zeros(5))
        assert store.names() == ["a.y", "b.x"]
        assert store.total_count == 11

    def test_duplicate_rejected(self):
        store = ParamStore()
        store.add("w", np.zeros(1))
        with pytest.raises(ValueError):
            store.add("w", np.zeros(1))

    def test_snapshot_is_independent(self):
        store = ParamStore()
        t = store.add("w", np.ones(3))
        snap = store.snapshot()
        t.data[0] = 99.0
        np.testing.assert_array_equal(snap["w"], np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_normalized(seed):
    x = Tensor(stream(seed, "hsoft").normal(0, 3, size=(4, 9)))
    rows = T.softmax(x).data.sum(axis=-1)
    np.testing.assert_allclose(rows, 1.0, atol=1e-12)
    assert (T.softmax(x).data >= 0).all()
