import numpy as np
import pytest

from deskbot import tensor as T
from deskbot.errors import ConfigurationError, ContractError, DimensionError


def fd_directional(f, xs, grads, h=1e-5, rtol=1e-4, rng=None):
    """Jacobian-vector check: autodiff grad . v vs central finite difference.

    f maps the list of numpy arrays xs to a scalar float. grads are the
    autodiff gradients w.r.t. each x. A random direction v is used per input.
    """
    rng = rng or np.random.default_rng(0)
    for x, g in zip(xs, grads):
        v = rng.standard_normal(x.shape)
        fp = f([xi + h * v if xi is x else xi for xi in xs])
        fm = f([xi - h * v if xi is x else xi for xi in xs])
        fd = (fp - fm) / (2 * h)
        ad = float(np.sum(g * v))
        denom = max(abs(fd), abs(ad), 1e-8)
        assert abs(fd - ad) / denom < rtol, f"fd={fd} ad={ad}"


def autodiff_scalar(op, arrs, u):
    """Run op on Tensors built from arrs, reduce with cotangent u, backprop."""
    ts = [T.Tensor(a, requires_grad=True) for a in arrs]
    out = op(*ts)
    loss = T.tsum(T.mul(out, T.Tensor(u)))
    T.backward(loss)
    return float(loss.data), [t.grad for t in ts]


class TestForwardValues:
    def test_add_elementwise(self):
        out = T.add(T.Tensor([1.0, 2.0]), T.Tensor([3.0, 4.0]))
        assert np.array_equal(out.data, [4.0, 6.0])

    def test_matmul_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 5))
        out = T.matmul(T.Tensor(np.eye(3)), T.Tensor(x))
        assert np.allclose(out.data, x)

    def test_conv2d_ones_against_direct_summation(self):
        x = np.ones((1, 4, 4))
        w = np.ones((1, 1, 3, 3))
        out = T.conv2d(T.Tensor(x), T.Tensor(w)).data[0]

        # independent oracle: direct summation over the 3x3 window
        expect = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                s = 0.0
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        if 0 <= i + di < 4 and 0 <= j + dj < 4:
                            s += x[0, i + di, j + dj]
                expect[i, j] = s
        assert np.allclose(out, expect)
        assert out[0, 0] == 4.0 and out[0, 1] == 6.0 and out[1, 1] == 9.0

    def test_conv2d_random_against_direct_summation(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 5, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        out = T.conv2d(T.Tensor(x), T.Tensor(w)).data

        expect = np.zeros((3, 5, 6))
        for o in range(3):
            for i in range(5):
                for j in range(6):
                    s = 0.0
                    for c in range(2):
                        for di in (-1, 0, 1):
                            for dj in (-1, 0, 1):
                                ii, jj = i + di, j + dj
                                if 0 <= ii < 5 and 0 <= jj < 6:
                                    s += x[c, ii, jj] * w[o, c, di + 1, dj + 1]
                    expect[o, i, j] = s
        assert np.allclose(out, expect)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        out = T.softmax(T.Tensor(rng.standard_normal((4, 7))), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0)

    def test_avg_pool2d(self):
        x = np.arange(16, dtype=float).reshape(1, 4, 4)
        out = T.avg_pool2d(T.Tensor(x)).data
        assert out.shape == (1, 2, 2)
        assert out[0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)

    def test_sinusoidal_embed_shapes(self):
        assert T.sinusoidal_embed(3, 8).shape == (8,)
        assert T.sinusoidal_embed(np.arange(5), 8).shape == (5, 8)
        e1 = T.sinusoidal_embed(3, 8).data
        e2 = T.sinusoidal_embed(4, 8).data
        assert not np.allclose(e1, e2)


class TestErrors:
    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as ei:
            T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 5))))
        assert "(2, 3)" in str(ei.value) and "(4, 5)" in str(ei.value)

    def test_group_norm_groups_must_divide(self):
        x = T.Tensor(np.ones((1, 6, 2, 2)))
        g = T.Tensor(np.ones(6))
        b = T.Tensor(np.zeros(6))
        with pytest.raises(ConfigurationError):
            T.group_norm(x, g, b, groups=4)

    def test_backward_requires_scalar(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(T.mul(x, 2.0))


class TestBackward:
    def test_sum_of_squares(self):
        x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        loss = T.tsum(T.mul(x, x))
        T.backward(loss)
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    def test_mse_zero_residual(self):
        x = T.Tensor([1.0, -2.0, 0.5], requires_grad=True)
        loss = T.mse(x, x)
        T.backward(loss)
        assert np.allclose(x.grad, 0.0)

    def test_grad_accumulates_until_zeroed(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        for _ in range(2):
            T.backward(T.tsum(T.mul(x, x)))
        assert np.allclose(x.grad, [4.0, 8.0])
        x.zero_grad()
        T.backward(T.tsum(T.mul(x, x)))
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_two_layer_net_matches_finite_difference(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((4, 5))
        w1 = rng.standard_normal((5, 6)) * 0.5
        b1 = rng.standard_normal(6) * 0.1
        w2 = rng.standard_normal((6, 3)) * 0.5
        y = rng.standard_normal((4, 3))

        def run(arrs):
            xx, ww1, bb1, ww2 = arrs
            h = np.maximum(xx @ ww1 + bb1, 0.0)
            out = h @ ww2
            d = out - y
            return float((d * d).mean())

        tx = T.Tensor(x, requires_grad=True)
        tw1 = T.Tensor(w1, requires_grad=True)
        tb1 = T.Tensor(b1, requires_grad=True)
        tw2 = T.Tensor(w2, requires_grad=True)
        out = T.linear(T.relu(T.linear(tx, tw1, tb1)), tw2)
        T.backward(T.mse(out, T.Tensor(y)))
        fd_directional(run, [x, w1, b1, w2],
                       [tx.grad, tw1.grad, tb1.grad, tw2.grad], rng=rng)


# every operator in the suite gets a random-input JVP check (rel err < 1e-4)
OP_CASES = [
    ("add", lambda a, b: T.add(a, b), [(3, 4), (3, 4)]),
    ("add_broadcast", lambda a, b: T.add(a, b), [(3, 4), (4,)]),
    ("sub", lambda a, b: T.sub(a, b), [(3, 4), (3, 4)]),
    ("mul", lambda a, b: T.mul(a, b), [(3, 4), (3, 4)]),
    ("mul_broadcast", lambda a, b: T.mul(a, b), [(2, 3, 4), (3, 1)]),
    ("matmul", lambda a, b: T.matmul(a, b), [(3, 4), (4, 5)]),
    ("matmul_batched", lambda a, b: T.matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
    ("linear", lambda x, w, b: T.linear(x, w, b), [(3, 4), (4, 5), (5,)]),
    ("conv2d", lambda x, w, b: T.conv2d(x, w, b), [(2, 3, 4, 4), (5, 3, 3, 3), (5,)]),
    ("conv2d_sym", lambda x, w, b: T.conv2d(x, w, b, pad_mode="symmetric"),
     [(2, 3, 4, 4), (5, 3, 3, 3), (5,)]),
    ("conv1d", lambda x, w, b: T.conv1d(x, w, b), [(2, 3, 8), (4, 3, 3), (4,)]),
    ("relu", lambda x: T.relu(x), [(3, 4)]),
    ("silu", lambda x: T.silu(x), [(3, 4)]),
    ("sigmoid", lambda x: T.sigmoid(x), [(3, 4)]),
    ("softmax", lambda x: T.softmax(x, axis=-1), [(3, 4)]),
    ("group_norm", lambda x, g, b: T.group_norm(x, g, b, groups=2), [(2, 4, 3, 3), (4,), (4,)]),
    ("mean", lambda x: T.tmean(x), [(3, 4)]),
    ("mean_axis", lambda x: T.tmean(x, axis=1), [(3, 4)]),
    ("sum", lambda x: T.tsum(x, axis=(0, 1), keepdims=True), [(3, 4)]),
    ("mse", lambda a, b: T.mse(a, b), [(3, 4), (3, 4)]),
    ("concat", lambda a, b: T.concat([a, b], axis=1), [(3, 2), (3, 5)]),
    ("reshape", lambda x: T.reshape(x, (4, 3)), [(3, 4)]),
    ("avg_pool2d", lambda x: T.avg_pool2d(x), [(2, 3, 4, 4)]),
    ("swapaxes", lambda x: T.swapaxes(x, 1, 2), [(2, 3, 4)]),
]


@pytest.mark.parametrize("name,op,shapes", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_operator_gradient_matches_finite_difference(name, op, shapes):
    rng = np.random.default_rng(hash(name) % 2**32)
    arrs = [rng.standard_normal(s) for s in shapes]
    if name == "relu":  # keep inputs away from the kink
        arrs = [a + 0.5 * np.sign(a) for a in arrs]
    probe = op(*[T.Tensor(a) for a in arrs])
    u = rng.standard_normal(probe.data.shape)

    _, grads = autodiff_scalar(op, arrs, u)

    def run(xs):
        out = op(*[T.Tensor(x) for x in xs])
        return float(np.sum(out.data * u))

    fd_directional(run, arrs, grads, rng=rng)


class TestDeterminismAndBroadcast:
    def test_bit_identical_forward_and_grad(self):
        def once():
            rng = np.random.default_rng(42)
            x = T.Tensor(rng.standard_normal((4, 6)), requires_grad=True)
            w = T.Tensor(rng.standard_normal((6, 3)), requires_grad=True)
            out = T.silu(T.linear(x, w))
            T.backward(T.tsum(out))
            return out.data.copy(), x.grad.copy(), w.grad.copy()

        o1, g1, h1 = once()
        o2, g2, h2 = once()
        assert np.array_equal(o1, o2) and np.array_equal(g1, g2) and np.array_equal(h1, h2)

    def test_broadcast_equals_tiled(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((3, 1, 4))
        b = rng.standard_normal((1, 5, 4))
        out = T.mul(T.Tensor(a), T.Tensor(b)).data
        tiled = np.tile(a, (1, 5, 1)) * np.tile(b, (3, 1, 1))
        assert np.array_equal(out, tiled)


class TestAdam:
    def test_first_step_descends(self):
        store = T.ParamStore()
        w = store.add("w", T.Tensor(np.array([1.0])))
        w.grad = np.array([1.0])
        T.adam_step(store, lr=0.1)
        assert w.data[0] < 1.0
        assert store.step_count == 1

    def test_zero_grad_leaves_params_unchanged(self):
        store = T.ParamStore()
        w = store.add("w", T.Tensor(np.array([2.0, -1.0])))
        w.grad = np.zeros(2)
        T.adam_step(store, lr=0.1)
        assert np.array_equal(w.data, [2.0, -1.0])

    def test_missing_grad_raises(self):
        store = T.ParamStore()
        store.add("w", T.Tensor(np.array([1.0])))
        with pytest.raises(ContractError):
            T.adam_step(store, lr=0.1)

    def test_quadratic_convergence(self):
        store = T.ParamStore()
        w = store.add("w", T.Tensor(np.array([0.0])))
        target = T.Tensor(np.array([3.0]))
        for _ in range(200):
            store.zero_grads()
            T.backward(T.mse(w, target))
            T.adam_step(store, lr=0.05)
        assert abs(w.data[0] - 3.0) < 1e-2


class TestParamStore:
    def test_sorted_iteration_and_unique_names(self):
        store = T.ParamStore()
        store.add("b", T.Tensor([1.0]))
        store.add("a", T.Tensor([2.0]))
        assert store.names() == ["a", "b"]
        with pytest.raises(ConfigurationError):
            store.add("a", T.Tensor([3.0]))

    def test_checkpoint_roundtrip_byte_stable(self, tmp_path):
        rng = np.random.default_rng(11)
        store = T.ParamStore()
        store.add("enc.w", T.Tensor(rng.standard_normal((3, 2, 3, 3))))
        store.add("enc.b", T.Tensor(rng.standard_normal(3)))
        blob = store.save_bytes()
        loaded = T.ParamStore.load_bytes(blob)
        assert loaded.names() == store.names()
        for (n1, p1), (n2, p2) in zip(store.items(), loaded.items()):
            assert n1 == n2 and np.array_equal(p1.data, p2.data)
        assert loaded.save_bytes() == blob

        path = tmp_path / "params.bin"
        store.save(path)
        assert T.ParamStore.load(path).save_bytes() == blob

    def test_truncated_blob_rejected(self):
        from deskbot.errors import IntegrityError
        store = T.ParamStore()
        store.add("w", T.Tensor(np.ones((4, 4))))
        blob = store.save_bytes()
        with pytest.raises(IntegrityError):
            T.ParamStore.load_bytes(blob[:-9])


class TestNoGrad:
    def test_no_graph_recorded(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.no_grad():
            y = T.mul(x, x)
        assert not y.requires_grad and y._backward is None
