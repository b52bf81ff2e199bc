import math

import numpy as np
import pytest

from namegen import nncore as nn
from namegen.errors import DimensionError, TrainingError


def check(f, store, tol=1e-4):
    err = nn.grad_check(f, store.params)
    assert err < tol, f"grad check failed: {err}"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_elementwise_ops_grad(seed):
    store = nn.ParamStore(np.random.default_rng(seed))
    a = store.add("a", (3, 4))
    b = store.add("b", (1, 4))  # broadcast
    check(lambda: nn.tmean(a * b + a - b), store)
    check(lambda: nn.tmean(nn.sigmoid(a) * nn.tanh(a * 2.0)), store)
    check(lambda: nn.tmean(a / (nn.sigmoid(b) + 1.0)), store)


@pytest.mark.parametrize("seed", [0, 1])
def test_matmul_softmax_concat_grad(seed):
    store = nn.ParamStore(np.random.default_rng(seed))
    a = store.add("a", (3, 4))
    w = store.add("w", (4, 2))
    check(lambda: nn.tmean(nn.softmax(a @ w, axis=1) * nn.tanh(a @ w)), store)
    check(lambda: nn.tmean(
        nn.concat([a @ w, nn.transpose(nn.transpose(w) @ nn.transpose(a))], axis=0)
        * nn.concat([a @ w, a @ w], axis=0)), store)


def test_gather_scatter_cols_grad():
    store = nn.ParamStore(np.random.default_rng(3))
    a = store.add("a", (5, 4))

    def f():
        g = nn.gather_rows(a, [0, 2, 2, 4])
        s = nn.scatter_add_rows(g, [1, 0, 1, 2], 3)
        return nn.tmean(nn.cols(s, 1, 3) * 0.5) + nn.tmean(nn.tanh(s))

    check(f, store)


def test_log_clamp_grad():
    store = nn.ParamStore(np.random.default_rng(4))
    a = store.add("a", (3, 3))
    check(lambda: -nn.tmean(nn.log(nn.clamp(nn.sigmoid(a), 1e-12, 1 - 1e-12))), store)


def test_softmax_values_and_bounds(rng):
    assert np.allclose(nn.softmax(nn.Tensor([[0.0, 0.0]]), axis=1).data, [[0.5, 0.5]])
    x = nn.Tensor(rng.normal(scale=50, size=(6, 9)))
    p = nn.softmax(x, axis=1).data
    assert np.all(p > 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert nn.sigmoid(nn.Tensor([[0.0]])).item() == 0.5


def test_scatter_sum_hand_example():
    msgs = nn.Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = nn.scatter_add_rows(msgs, [3, 3], 5)
    assert np.allclose(out.data[3], [4.0, 6.0])
    assert np.allclose(out.data[[0, 1, 2, 4]], 0.0)


def test_matmul_shape_error():
    with pytest.raises(DimensionError, match=r"\(2, 3\) @ \(2, 3\)"):
        nn.matmul(nn.Tensor(np.ones((2, 3))), nn.Tensor(np.ones((2, 3))))


# ---------------------------------------------------------------------------
# recurrent cells


def _gru_scalar_oracle(cell, x, h):
    """Independent scalar-by-scalar recomputation with python floats."""
    def mm(a, w, b=None):
        rows, cols = len(a), w.shape[1]
        out = [[0.0] * cols for _ in range(rows)]
        for i in range(rows):
            for j in range(cols):
                s = sum(a[i][k] * w[k][j] for k in range(len(a[i])))
                out[i][j] = s + (b[0][j] if b is not None else 0.0)
        return out

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    xw = [list(r) for r in x]
    hw = [list(r) for r in h]
    z = mm(xw, cell.W_z.data)
    zr = mm(hw, cell.U_z.data, cell.b_z.data)
    r = mm(xw, cell.W_r.data)
    rr = mm(hw, cell.U_r.data, cell.b_r.data)
    out = []
    for i in range(len(xw)):
        row = []
        for j in range(len(z[0])):
            zv = sig(z[i][j] + zr[i][j])
            rv = sig(r[i][j] + rr[i][j])
            rh = [rvv * hv for rvv, hv in zip(
                [sig(r[i][k] + rr[i][k]) for k in range(len(z[0]))], hw[i])]
            nv = math.tanh(
                sum(xw[i][k] * cell.W_h.data[k][j] for k in range(len(xw[i])))
                + sum(rh[k] * cell.U_h.data[k][j] for k in range(len(rh)))
                + cell.b_h.data[0][j])
            row.append((1 - zv) * hw[i][j] + zv * nv)
        out.append(row)
    return np.array(out)


def test_gru_matches_scalar_oracle(rng):
    store = nn.ParamStore(rng)
    cell = nn.GRUCell(store, "gru", 3, 2)
    x = rng.normal(size=(2, 3))
    h = rng.normal(size=(2, 2))
    got = cell(nn.Tensor(x), nn.Tensor(h)).data
    assert np.allclose(got, _gru_scalar_oracle(cell, x, h), atol=1e-12)


def test_gru_update_gate_saturation(rng):
    store = nn.ParamStore(rng)
    cell = nn.GRUCell(store, "gru", 3, 2)
    cell.b_z.data[:] = 50.0  # update gate pinned to 1: output = candidate state
    x = nn.Tensor(rng.normal(size=(2, 3)))
    h = nn.Tensor(rng.normal(size=(2, 2)))
    r = nn.sigmoid(x @ cell.W_r + h @ cell.U_r + cell.b_r)
    cand = nn.tanh(x @ cell.W_h + (r * h) @ cell.U_h + cell.b_h)
    assert np.allclose(cell(x, h).data, cand.data, atol=1e-12)


def test_gru_grad_finite_differences(rng):
    store = nn.ParamStore(rng)
    cell = nn.GRUCell(store, "gru", 2, 2)
    x = nn.Tensor(rng.normal(size=(3, 2)))
    h = nn.Tensor(rng.normal(size=(3, 2)))
    check(lambda: nn.tmean(cell(x, h) * cell(x, h)), store)


def test_lstm_matches_scalar_oracle(rng):
    store = nn.ParamStore(rng)
    cell = nn.LSTMCell(store, "lstm", 2, 2)
    x = rng.normal(size=(1, 2))
    h = rng.normal(size=(1, 2))
    c = rng.normal(size=(1, 2))
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    pre = x @ cell.W.data + h @ cell.U.data + cell.b.data
    expect_h, expect_c = [], []
    for j in range(2):
        i_g = sig(pre[0, j])
        f_g = sig(pre[0, 2 + j])
        o_g = sig(pre[0, 4 + j])
        g_g = math.tanh(pre[0, 6 + j])
        cc = f_g * c[0, j] + i_g * g_g
        expect_c.append(cc)
        expect_h.append(o_g * math.tanh(cc))
    got_h, got_c = cell(nn.Tensor(x), nn.Tensor(h), nn.Tensor(c))
    assert np.allclose(got_h.data[0], expect_h, atol=1e-12)
    assert np.allclose(got_c.data[0], expect_c, atol=1e-12)


def test_lstm_forget_gate_saturation(rng):
    store = nn.ParamStore(rng)
    cell = nn.LSTMCell(store, "lstm", 2, 2)
    d = cell.dim
    cell.b.data[0, d:2 * d] = 50.0   # forget gate -> 1
    cell.b.data[0, 0:d] = -50.0      # input gate -> 0
    x = nn.Tensor(rng.normal(size=(2, 2)))
    h = nn.Tensor(rng.normal(size=(2, 2)))
    c = nn.Tensor(rng.normal(size=(2, 2)))
    _, c_new = cell(x, h, c)
    assert np.allclose(c_new.data, c.data, atol=1e-10)


def test_lstm_grad_finite_differences(rng):
    store = nn.ParamStore(rng)
    cell = nn.LSTMCell(store, "lstm", 2, 2)
    x = nn.Tensor(rng.normal(size=(3, 2)))
    h = nn.Tensor(rng.normal(size=(3, 2)))
    c = nn.Tensor(rng.normal(size=(3, 2)))

    def f():
        h2, c2 = cell(x, h, c)
        return nn.tmean(h2 * c2)

    check(f, store)


# ---------------------------------------------------------------------------
# optimizer


def test_adam_zero_gradients_leave_params_unchanged(rng):
    store = nn.ParamStore(rng)
    w = store.add("w", (2, 2))
    before = w.data.copy()
    w.grad = np.zeros((2, 2))
    store.adam_step()
    assert np.array_equal(w.data, before)


def test_adam_lr_decay_schedule(rng):
    store = nn.ParamStore(rng)
    store.add("w", (1, 1))
    store.step = 2999
    store.params["w"].grad = np.ones((1, 1))
    assert store.adam_step(lr=5e-4) == pytest.approx(5e-4 * 0.95)
    store.step = 2998
    assert store.adam_step(lr=5e-4) == pytest.approx(5e-4)


def test_adam_hand_computed_first_step():
    store = nn.ParamStore(np.random.default_rng(0))
    w = store.add("w", (1, 1), init="zeros")
    w.data[:] = 3.0
    w.grad = np.array([[6.0]])  # gradient of x^2 at x=3
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    m_hat = (1 - b1) * 6.0 / (1 - b1)
    v_hat = (1 - b2) * 36.0 / (1 - b2)
    expect = 3.0 - lr * m_hat / (math.sqrt(v_hat) + eps)
    store.adam_step(lr=lr)
    assert w.data[0, 0] == pytest.approx(expect, rel=1e-12)


def test_adam_bitwise_determinism():
    results = []
    for _ in range(2):
        store = nn.ParamStore(np.random.default_rng(42))
        w = store.add("w", (4, 4))
        for step in range(5):
            w.grad = np.sin(np.arange(16, dtype=float)).reshape(4, 4) * (step + 1)
            store.adam_step()
        results.append(w.data.copy())
    assert np.array_equal(results[0], results[1])


def test_adam_rejects_non_finite_gradient(rng):
    store = nn.ParamStore(rng)
    w = store.add("bad_param", (1, 2))
    w.grad = np.array([[1.0, np.nan]])
    with pytest.raises(TrainingError, match="bad_param"):
        store.adam_step()


def test_clip_gradients(rng):
    store = nn.ParamStore(rng)
    w = store.add("w", (1, 2))
    w.grad = np.array([[30.0, 40.0]])
    norm = store.clip_gradients(5.0)
    assert norm == pytest.approx(50.0)
    assert np.allclose(np.sqrt((w.grad ** 2).sum()), 5.0)


# ---------------------------------------------------------------------------
# grad_check itself


def test_grad_check_constant_and_linear(rng):
    store = nn.ParamStore(rng)
    w = store.add("w", (2, 2))
    assert nn.grad_check(lambda: nn.tsum(w * 0.0), store.params) == 0.0
    assert nn.grad_check(lambda: nn.tsum(w * 3.0), store.params) < 1e-7


def test_checkpoint_roundtrip_and_mismatch(tmp_path, rng):
    store = nn.ParamStore(rng)
    w = store.add("w", (2, 3))
    store.step = 7
    path = tmp_path / "ckpt.npz"
    store.save(path, {"hidden_dim": 3})
    other = nn.ParamStore(np.random.default_rng(9))
    other.add("w", (2, 3))
    config = other.load(path)
    assert config == {"hidden_dim": 3}
    assert other.step == 7
    assert np.array_equal(other.params["w"].data, w.data)
    wrong = nn.ParamStore(np.random.default_rng(9))
    wrong.add("w", (3, 2))
    with pytest.raises(DimensionError):
        wrong.load(path)
    extra = nn.ParamStore(np.random.default_rng(9))
    extra.add("w", (2, 3))
    extra.add("v", (1, 1))
    with pytest.raises(DimensionError):
        extra.load(path)
