"""Dense float64 tensors with reverse-mode autodiff, GRU/LSTM cells, Adam.

Everything is tape-based: each op records its parents and a backward
closure; Tensor.backward() walks the tape in reverse topological order.
Shapes are kept 2-D throughout the models (vectors travel as (1, d) or
(n, 1)); gradients always match the shape of their tensor.
"""
from __future__ import annotations

import contextlib
import json
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, TrainingError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple = parents
        self._backward: Callable | None = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward) -> Tensor:
    if not _grad_enabled:
        return Tensor(data)
    return Tensor(data, parents=tuple(parents), backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accum(-g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def backward(g):
        a._accum(_unbroadcast(g / b.data, a.data.shape))
        b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return _make(out_data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: a._accum(g.T))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            p._accum(g[tuple(idx)])

    return _make(out_data, parts, backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out_data, (a,), lambda g: a._accum(g * out_data * (1.0 - out_data)))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: a._accum(g * (1.0 - out_data * out_data)))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: a._accum(g * out_data))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(out_data, (a,), lambda g: a._accum(g * mask))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accum(out_data * (g - dot))

    return _make(out_data, (a,), backward)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accum(np.full_like(a.data, float(g)))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis) * (1.0 / n)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Index along axis 0 with an int array; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data[idx]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _make(out_data, (a,), backward)


def scatter_add_rows(a: Tensor, idx, num_rows: int) -> Tensor:
    """Accumulate row i of `a` into output row idx[i] (indexed summation)."""
    idx = np.asarray(idx, dtype=np.intp)
    out_shape = (num_rows,) + a.data.shape[1:]
    out_data = np.zeros(out_shape, dtype=np.float64)
    np.add.at(out_data, idx, a.data)

    return _make(out_data, (a,), lambda g: a._accum(g[idx]))


# ---------------------------------------------------------------------------
# parameter store / optimizer


def glorot(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Named learnable tensors plus Adam state and the step counter."""

    def __init__(self, rng: np.random.Generator | None = None):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, shape: tuple, init: str = "glorot") -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if init == "glorot":
            data = glorot(self.rng, shape)
        elif init == "uniform":
            data = self.rng.uniform(-0.1, 0.1, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data)
        self.params[name] = t
        self._m[name] = np.zeros(shape)
        self._v[name] = np.zeros(shape)
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def clip_gradients(self, max_norm: float = 5.0) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
        norm = float(np.sqrt(total))
        if norm > max_norm and norm > 0:
            scale = max_norm / norm
            for t in self.params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm

    def adam_step(
        self,
        lr: float = 5e-4,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        decay_factor: float = 0.95,
        decay_interval: int = 3000,
    ) -> float:
        """One Adam update over all parameters; returns the effective lr."""
        b1, b2 = betas
        self.step += 1
        eff_lr = lr * decay_factor ** (self.step // decay_interval)
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.step)
            v_hat = v / (1 - b2**self.step)
            t.data -= eff_lr * m_hat / (np.sqrt(v_hat) + eps)
        return eff_lr

    # checkpoint I/O ------------------------------------------------------

    def save(self, path, config: dict) -> None:
        arrays = {name: t.data for name, t in self.params.items()}
        arrays["__step__"] = np.array([self.step], dtype=np.int64)
        for name in self.params:
            arrays[f"__m__{name}"] = self._m[name]
            arrays[f"__v__{name}"] = self._v[name]
        blob = np.frombuffer(json.dumps(config, sort_keys=True).encode(), dtype=np.uint8)
        arrays["__config__"] = blob
        np.savez(path, **arrays)

    @staticmethod
    def read_config(path) -> dict:
        with np.load(path) as z:
            return json.loads(bytes(z["__config__"]).decode())

    def load(self, path) -> dict:
        """Load parameters in place; names and shapes must match exactly."""
        with np.load(path) as z:
            config = json.loads(bytes(z["__config__"]).decode())
            saved = {k for k in z.files if not k.startswith("__")}
            have = set(self.params)
            if saved != have:
                missing = sorted(have - saved)
                extra = sorted(saved - have)
                raise DimensionError(
                    f"checkpoint mismatch: missing={missing} unexpected={extra}"
                )
            for name, t in self.params.items():
                arr = z[name]
                if arr.shape != t.data.shape:
                    raise DimensionError(
                        f"parameter {name!r}: checkpoint shape {arr.shape} "
                        f"vs model shape {t.data.shape}"
                    )
                t.data = arr.astype(np.float64)
                self._m[name] = z[f"__m__{name}"].astype(np.float64)
                self._v[name] = z[f"__v__{name}"].astype(np.float64)
            self.step = int(z["__step__"][0])
        return config


# ---------------------------------------------------------------------------
# recurrent cells


class GRUCell:
    """Standard GRU; input (N, in_dim), state (N, dim) -> new state (N, dim)."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, dim: int):
        self.W_z = store.add(f"{prefix}.W_z", (in_dim, dim))
        self.U_z = store.add(f"{prefix}.U_z", (dim, dim))
        self.b_z = store.add(f"{prefix}.b_z", (1, dim), init="zeros")
        self.W_r = store.add(f"{prefix}.W_r", (in_dim, dim))
        self.U_r = store.add(f"{prefix}.U_r", (dim, dim))
        self.b_r = store.add(f"{prefix}.b_r", (1, dim), init="zeros")
        self.W_h = store.add(f"{prefix}.W_h", (in_dim, dim))
        self.U_h = store.add(f"{prefix}.U_h", (dim, dim))
        self.b_h = store.add(f"{prefix}.b_h", (1, dim), init="zeros")

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(x @ self.W_z + h @ self.U_z + self.b_z)
        r = sigmoid(x @ self.W_r + h @ self.U_r + self.b_r)
        n = tanh(x @ self.W_h + (r * h) @ self.U_h + self.b_h)
        return (1.0 - z) * h + z * n


class LSTMCell:
    """Standard LSTM; returns (hidden', cell')."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, dim: int):
        self.W = store.add(f"{prefix}.W", (in_dim, 4 * dim))
        self.U = store.add(f"{prefix}.U", (dim, 4 * dim))
        self.b = store.add(f"{prefix}.b", (1, 4 * dim), init="zeros")
        self.dim = dim

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        d = self.dim
        pre = x @ self.W + h @ self.U + self.b
        pre_np = pre  # split via gather on columns: use slicing through concat inverse
        i = sigmoid(_cols(pre_np, 0, d))
        f = sigmoid(_cols(pre_np, d, 2 * d))
        o = sigmoid(_cols(pre_np, 2 * d, 3 * d))
        g = tanh(_cols(pre_np, 3 * d, 4 * d))
        c_new = f * c + i * g
        h_new = o * tanh(c_new)
        return h_new, c_new


def cols(a: Tensor, lo: int, hi: int) -> Tensor:
    """Column slice a[:, lo:hi] with gradient."""
    return _cols(a, lo, hi)


def _cols(a: Tensor, lo: int, hi: int) -> Tensor:
    out_data = a.data[:, lo:hi]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[:, lo:hi] += g

    return _make(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences."""
    for t in params.values():
        t.grad = None
    loss = f()
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            with no_grad():
                flat[j] = orig + eps
                up = f().item()
                flat[j] = orig - eps
                down = f().item()
                flat[j] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)[j]
            # the 1e-6 floor keeps central-difference roundoff on near-zero
            # gradients from dominating the relative error
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-6)
            if err > worst:
                worst = err
    return worst
