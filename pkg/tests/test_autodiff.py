"""Gradient, optimizer, and checkpoint checks for the autodiff core."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajrec import autodiff as ad
from trajrec.autodiff import Tensor
from trajrec.errors import ContractError, DomainError, ShapeMismatchError

RNG = np.random.default_rng(20240811)


def rand_tensor(*shape, scale=1.0):
    return Tensor(RNG.normal(0.0, scale, size=shape), requires_grad=True)


def check(f, x, tol=1e-6, h=1e-5):
    err = ad.grad_check(f, x, h=h)
    assert err < tol, f"relative gradient error {err}"


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        b = rand_tensor(4)
        a = rand_tensor(3, 4).detach()
        check(lambda x: ad.tsum((x + b) * (x + b)), rand_tensor(3, 4))
        check(lambda y: ad.tsum(ad.exp(a + y)), b)

    def test_sub_mul_div(self):
        a = rand_tensor(3, 3)
        check(lambda x: ad.tsum((x - a) * x), rand_tensor(3, 3))
        denom = Tensor(RNG.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
        check(lambda x: ad.tsum(a.detach() / x), denom)

    def test_matmul(self):
        w = rand_tensor(4, 2)
        a = rand_tensor(3, 4).detach()
        check(lambda x: ad.tsum((x @ w) * (x @ w)), rand_tensor(3, 4))
        check(lambda y: ad.tsum(a @ y), w)

    def test_matmul_batched(self):
        check(lambda x: ad.tsum(ad.tanh(x @ ad.transpose(x, (0, 2, 1)))),
              rand_tensor(2, 3, 4))

    def test_unary(self):
        probe = rand_tensor(3, 5).detach()
        for fn in (ad.exp, ad.tanh, ad.sigmoid, ad.relu,
                   lambda t: ad.leaky_relu(t, 0.2), lambda t: ad.softmax(t, -1)):
            check(lambda x, fn=fn: ad.tsum(fn(x) * probe), rand_tensor(3, 5))
        pos = Tensor(RNG.uniform(0.5, 3.0, size=(4,)), requires_grad=True)
        check(lambda x: ad.tsum(ad.log(x)), pos)
        check(lambda x: ad.tsum(ad.sqrt(x)), pos)

    def test_reductions_and_shapes(self):
        w22 = rand_tensor(2, 2).detach()
        probe43 = rand_tensor(4, 3).detach()
        probe54 = rand_tensor(5, 4).detach()
        check(lambda x: ad.tsum(ad.tmean(x, axis=0) * np.arange(4.0)), rand_tensor(3, 4))
        check(lambda x: ad.tsum(ad.tmean(x, axis=1, keepdims=True) * x), rand_tensor(3, 4))
        check(lambda x: ad.tsum(ad.reshape(x, (6, 2)) @ w22), rand_tensor(3, 4))
        check(lambda x: ad.tsum(ad.transpose(x, (1, 0)) * probe43), rand_tensor(3, 4))
        check(lambda x: ad.tsum(ad.expand(x, (5, 4)) * probe54), rand_tensor(1, 4))

    def test_concat(self):
        b = rand_tensor(2, 3)
        probe = rand_tensor(4, 3).detach()
        check(lambda x: ad.tsum(ad.concat([x, b], axis=0) * probe), rand_tensor(2, 3))

    def test_gather_scatter(self):
        idx = np.array([0, 2, 2, 1])
        probe = rand_tensor(4, 3).detach()
        check(lambda x: ad.tsum(ad.gather(x, idx) * probe), rand_tensor(3, 3))
        probe2 = rand_tensor(3, 2).detach()
        check(lambda x: ad.tsum(ad.scatter_add(x, idx, 3) * probe2), rand_tensor(4, 2))

    def test_masked_fill(self):
        mask = RNG.random((3, 4)) > 0.5
        probe = rand_tensor(3, 4).detach()
        check(lambda x: ad.tsum(ad.exp(ad.masked_fill(x, mask, -30.0)) * probe),
              rand_tensor(3, 4))


class TestOpSemantics:
    def test_softmax_uniform(self):
        out = ad.softmax(Tensor([0.0, 0.0, 0.0])).data
        assert np.allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_sigmoid_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)

    def test_matmul_identity(self):
        x = RNG.normal(size=(3, 5))
        assert np.array_equal((Tensor(np.eye(3)) @ Tensor(x)).data, x)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeMismatchError) as exc:
            Tensor(np.zeros((3, 4))) @ Tensor(np.zeros((3, 4)))
        assert "(3, 4)" in str(exc.value)

    def test_softmax_empty_axis(self):
        with pytest.raises(DomainError):
            ad.softmax(Tensor(np.zeros((3, 0))))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(-50, 50), min_size=4, max_size=4),
                    min_size=1, max_size=6))
    def test_softmax_rows_are_distributions(self, rows):
        out = ad.softmax(Tensor(np.asarray(rows)), axis=-1).data
        assert np.all(out >= 0)
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_no_grad_blocks_tape(self):
        x = rand_tensor(3)
        with ad.no_grad():
            y = ad.tsum(x * x)
        assert not y.requires_grad

    def test_determinism_bitwise(self):
        def run():
            rng = np.random.default_rng(7)
            a = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
            b = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
            out = ad.tsum(ad.softmax(ad.tanh(a @ b), axis=-1))
            out.backward()
            return out.data.copy(), a.grad.copy()

        (o1, g1), (o2, g2) = run(), run()
        assert np.array_equal(o1, o2) and np.array_equal(g1, g2)


class TestGradCheckContract:
    def test_polynomial_matches_analytic(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        err = ad.grad_check(lambda t: ad.tsum(t * t), x)
        assert err < 1e-6
        # the analytic gradient really is [2, 4, 6]
        x.grad = None
        out = ad.tsum(x * x)
        out.backward()
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(ContractError):
            ad.grad_check(lambda t: t * 2.0, rand_tensor(3))

    def test_step_domain(self):
        with pytest.raises(DomainError):
            ad.grad_check(lambda t: ad.tsum(t), rand_tensor(3), h=1e-2)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        state = ad.AdamState.for_params([p])
        before = p.data.copy()
        for _ in range(5):
            p.grad = np.zeros(2)
            ad.adam_step([p], state)
        assert np.array_equal(p.data, before)

    def test_single_step_hand_evaluated(self):
        # m_hat = g, v_hat = g**2 -> step = lr * g / (|g| + eps)
        p = Tensor([0.0], requires_grad=True)
        p.grad = np.array([1.0])
        state = ad.AdamState.for_params([p], lr=1e-3)
        ad.adam_step([p], state)
        expected = -1e-3 * 1.0 / (1.0 + 1e-8)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)

    def test_identical_params_stay_identical(self):
        rng = np.random.default_rng(3)
        a = Tensor([0.3, -0.7], requires_grad=True)
        b = Tensor([0.3, -0.7], requires_grad=True)
        state = ad.AdamState.for_params([a, b], lr=1e-2)
        for _ in range(20):
            g = rng.normal(size=2)
            a.grad, b.grad = g.copy(), g.copy()
            ad.adam_step([a, b], state)
        assert np.array_equal(a.data, b.data)

    def test_missing_grad_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        state = ad.AdamState.for_params([p])
        with pytest.raises(ContractError):
            ad.adam_step([p], state)

    def test_clip_grad_norm(self):
        p = Tensor([3.0, 4.0], requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        norm = ad.clip_grad_norm([p], 1.0)
        assert norm == pytest.approx(5.0)
        assert np.linalg.norm(p.grad) == pytest.approx(1.0)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        arrays = {
            "w": RNG.normal(size=(7, 3)),
            "b": RNG.normal(size=(3,)),
            "ids": np.arange(5, dtype=np.int64).astype(np.float64),
        }
        header = {"d": 16, "heads": 4, "seed": 42}
        path = tmp_path / "model.ckpt"
        ad.save_arrays(path, header, arrays)
        loaded_header, loaded = ad.load_arrays(path)
        assert loaded_header["d"] == 16 and loaded_header["seed"] == 42
        for name, arr in arrays.items():
            assert np.array_equal(loaded[name], arr)
            assert loaded[name].dtype == arr.dtype

    def test_identical_saves_are_byte_identical(self, tmp_path):
        arrays = {"w": RNG.normal(size=(4, 4))}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ad.save_arrays(p1, {"seed": 1}, arrays)
        ad.save_arrays(p2, {"seed": 1}, arrays)
        assert p1.read_bytes() == p2.read_bytes()
