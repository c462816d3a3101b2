import numpy as np
import pytest

from fluentforge import autodiff as ad
from fluentforge.autodiff import Tensor


def fd_grad(fn, x, eps=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


class TestBackward:
    def test_add_mul_chain(self):
        a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        b = Tensor(np.array([4.0, 5.0]), requires_grad=True)
        out = ad.sum_(a * b + a)
        out.backward()
        assert np.allclose(a.grad, [5.0, 6.0])
        assert np.allclose(b.grad, [2.0, 3.0])

    def test_broadcast_unreduces(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        ad.sum_(a + b).backward()
        assert b.grad.shape == (4,)
        assert np.allclose(b.grad, 3.0)

    def test_matmul(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        ad.sum_(a @ b).backward()
        assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))

    def test_getitem_scatter_adds(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        out = x[1] + x[1] + x[3]
        out.backward()
        assert np.allclose(x.grad, [0, 2, 0, 1, 0])

    def test_diamond_graph_accumulates_once(self):
        # x feeds two branches that rejoin; gradient must sum both paths
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * 2.0
        out = ad.sum_(y * x)  # 2x^2 -> d/dx = 4x
        out.backward()
        assert np.allclose(x.grad, [12.0])

    def test_elementwise_ops_match_fd(self):
        rng = np.random.default_rng(1)
        x0 = rng.uniform(0.5, 2.0, (3, 3))
        for name, fn in [
            ("exp", lambda t: ad.sum_(ad.exp(t))),
            ("log", lambda t: ad.sum_(ad.log(t))),
            ("tanh", lambda t: ad.sum_(ad.tanh(t))),
            ("sigmoid", lambda t: ad.sum_(ad.sigmoid(t))),
            ("sqrt", lambda t: ad.sum_(ad.sqrt(t))),
            ("power", lambda t: ad.sum_(ad.power(t, 3.0))),
            ("absolute", lambda t: ad.sum_(ad.absolute(t))),
        ]:
            x = Tensor(x0.copy(), requires_grad=True)
            fn(x).backward()
            num = fd_grad(lambda arr: float(fn(Tensor(arr)).data), x0.copy())
            assert np.allclose(x.grad, num, atol=1e-5), name

    def test_reshape_transpose_concat(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        y = ad.transpose(ad.reshape(x, (3, 2)))
        z = ad.concat([y, y], axis=0)
        ad.sum_(z * z).backward()
        num = fd_grad(
            lambda arr: float(np.sum(
                np.concatenate([arr.reshape(3, 2).T] * 2, axis=0) ** 2)),
            np.arange(6.0).reshape(2, 3))
        assert np.allclose(x.grad, num, atol=1e-5)

    def test_mean_and_pad(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        padded = ad.pad(x, ((1, 1), (0, 0)))
        ad.mean(padded).backward()
        assert np.allclose(x.grad, 1.0 / 8.0)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_no_grad_tensors_stay_clean(self):
        x = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.ones(3))
        ad.sum_(x * c).backward()
        assert c.grad is None

    def test_dropout_inverted_scaling(self):
        x = Tensor(np.ones((100, 100)), requires_grad=True)
        out = ad.dropout(x, 0.5, np.random.default_rng(0))
        kept = out.data[out.data != 0]
        assert np.allclose(kept, 2.0)
        assert abs(out.data.mean() - 1.0) < 0.05
        # p = 0 is the identity
        same = ad.dropout(x, 0.0, np.random.default_rng(0))
        assert np.array_equal(same.data, x.data)

    def test_maximum_scalar(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        ad.sum_(ad.maximum_scalar(x, 0.0)).backward()
        assert np.allclose(x.grad, [0.0, 1.0])
