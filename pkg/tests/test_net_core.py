import numpy as np
import pytest

from ctalvae.errors import DataValidationError, GradientCheckError, SchemaMismatchError
from ctalvae.net_core import (
    LstmState,
    OptimizerState,
    ParameterStore,
    adam_step,
    affine,
    affine_backward,
    grad_check,
    init_affine,
    init_lstm,
    lstm_step,
    lstm_step_backward,
)


def zero_cell(input_size=2, hidden=1):
    store = ParameterStore()
    init_lstm(store, "cell", input_size, hidden, np.random.default_rng(0), "core")
    for param in store:
        param.value[...] = 0.0
    return store


class TestLstmStep:

    def test_zero_weights_zero_state(self):
        state, _ = lstm_step(zero_cell(), "cell", LstmState.zeros(1), np.array([0.3, -2.0]))
        np.testing.assert_array_equal(state.h, [0.0])
        np.testing.assert_array_equal(state.c, [0.0])

    def test_zero_weights_unit_cell(self):
        state, _ = lstm_step(zero_cell(), "cell", LstmState(np.zeros(1), np.ones(1)), np.array([1.0, 1.0]))
        np.testing.assert_allclose(state.c, [0.5])
        np.testing.assert_allclose(state.h, [0.5 * np.tanh(0.5)])
        assert state.h[0] == pytest.approx(0.2311, abs=1e-4)

    def test_input_size_checked(self):
        with pytest.raises(SchemaMismatchError):
            lstm_step(zero_cell(), "cell", LstmState.zeros(1), np.zeros(3))

    def test_backward_matches_finite_differences(self, rng):
        store = ParameterStore()
        init_lstm(store, "cell", 3, 4, rng, "core")
        store["cell.b"][...] = rng.normal(scale=0.5, size=16)
        x = rng.normal(size=(2, 3))
        prev = LstmState(rng.normal(size=(2, 4)), rng.normal(size=(2, 4)))
        w_h, w_c = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

        def loss(s):
            state, cache = lstm_step(s, "cell", prev, x)
            lstm_step_backward(s, "cell", cache, w_h, w_c)
            return float(np.sum(state.h * w_h) + np.sum(state.c * w_c))

        assert grad_check(loss, store, samples=40, seed=1) < 1e-6

    def test_backward_input_gradient(self, rng):
        store = ParameterStore()
        init_lstm(store, "cell", 3, 2, rng, "core")
        prev = LstmState.zeros(2)
        x = rng.normal(size=3)
        _, cache = lstm_step(store, "cell", prev, x)
        dx, _, _ = lstm_step_backward(store, "cell", cache, np.ones(2), np.zeros(2))

        h = 1e-6
        for k in range(3):
            step = np.zeros(3)
            step[k] = h
            plus = lstm_step(store, "cell", prev, x + step)[0].h.sum()
            minus = lstm_step(store, "cell", prev, x - step)[0].h.sum()
            assert dx[k] == pytest.approx((plus - minus) / (2 * h), rel=1e-6, abs=1e-10)


class TestAffine:

    def test_identity(self):
        store = ParameterStore()
        init_affine(store, "fc", 3, 3, np.random.default_rng(0), "core", identity=True)
        x = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(affine(store, "fc", x), x)

    def test_hand_example(self):
        store = ParameterStore()
        store.add("fc.W", [[1.0, 2.0]], "core")
        store.add("fc.b", [3.0], "core")
        np.testing.assert_array_equal(affine(store, "fc", np.array([1.0, 1.0])), [6.0])

    def test_dimension_mismatch(self):
        store = ParameterStore()
        init_affine(store, "fc", 2, 3, np.random.default_rng(0), "core")
        with pytest.raises(SchemaMismatchError):
            affine(store, "fc", np.zeros(4))

    def test_gradient_matches_finite_differences(self, rng):
        store = ParameterStore()
        init_affine(store, "fc", 4, 3, rng, "core")
        x = rng.normal(size=(5, 4))
        target = rng.normal(size=(5, 3))

        def loss(s):
            y = affine(s, "fc", x)
            affine_backward(s, "fc", x, 2.0 * (y - target))
            return float(np.sum((y - target) ** 2))

        assert grad_check(loss, store, samples=15) < 1e-6

    def test_identity_needs_square_map(self):
        with pytest.raises(DataValidationError):
            init_affine(ParameterStore(), "fc", 2, 3, np.random.default_rng(0), "core", identity=True)


class TestAdam:

    def test_frozen_group_untouched(self):
        store = ParameterStore()
        store.add("a", [1.0, 2.0], "core")
        store.add("b", [1.0], "adaptor:target")
        store.grad("a")[...] = 5.0
        store.grad("b")[...] = 5.0
        store.set_trainable("core", False)
        before = store["a"].tobytes()

        adam_step(OptimizerState(), store)

        assert store["a"].tobytes() == before
        assert store["b"][0] != 1.0
        assert not store.grad("a").any()

    def test_first_step_delta(self):
        store = ParameterStore()
        store.add("w", [0.0], "core")
        store.grad("w")[...] = 1.0

        opt = adam_step(OptimizerState(lr=0.001), store)

        assert opt.step == 1
        assert store["w"][0] == pytest.approx(-0.001, rel=1e-6)

    def test_identical_stores_identical_updates(self, rng):
        grads = rng.normal(size=4)
        stores = []
        for _ in range(2):
            store = ParameterStore()
            store.add("w", np.arange(4.0), "core")
            store.grad("w")[...] = grads
            adam_step(OptimizerState(), store)
            stores.append(store)
        assert stores[0]["w"].tobytes() == stores[1]["w"].tobytes()


class TestGradCheck:

    @staticmethod
    def square_store():
        store = ParameterStore()
        store.add("w", [3.0], "core")
        return store

    def test_square(self):
        def fn(s):
            s.grad("w")[...] += 2 * s["w"]
            return float(s["w"][0] ** 2)

        assert grad_check(fn, self.square_store(), samples=1) < 1e-8

    def test_corrupted_gradient_detected(self):
        def fn(s):
            s.grad("w")[...] += 4 * s["w"]
            return float(s["w"][0] ** 2)

        assert grad_check(fn, self.square_store(), samples=1) == pytest.approx(1.0, rel=1e-6)

    def test_non_finite_value(self):
        with pytest.raises(GradientCheckError):
            grad_check(lambda s: float("nan"), self.square_store())

    def test_store_restored(self):
        store = self.square_store()

        def fn(s):
            s.grad("w")[...] += 2 * s["w"]
            return float(s["w"][0] ** 2)

        grad_check(fn, store, samples=1)
        assert store["w"][0] == 3.0


class TestParameterStore:

    def test_duplicate_name(self):
        store = ParameterStore()
        store.add("w", [1.0], "core")
        with pytest.raises(DataValidationError):
            store.add("w", [2.0], "core")

    def test_group_bytes_float32_le(self):
        store = ParameterStore()
        store.add("a", [1.0, 2.0], "core")
        store.add("b", [7.0], "other")
        store.add("c", [3.0], "core")
        assert store.group_bytes("core") == np.array([1, 2, 3], dtype="<f4").tobytes()

    def test_copy_is_independent(self):
        store = ParameterStore()
        store.add("w", [1.0], "core")
        clone = store.copy()
        clone["w"][0] = 9.0
        clone.set_trainable("core", False)
        assert store["w"][0] == 1.0
        assert store.is_trainable("core")

    def test_unknown_group(self):
        with pytest.raises(DataValidationError):
            ParameterStore().set_trainable("nope", False)
