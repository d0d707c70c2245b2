"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A Tape records backward closures for every op executed while it is active;
with no active tape ops run eagerly and produce constants. All kernels the
model needs (dense, GRU cell, masked multi-head attention, time encoders,
BCE) live here together with Adam and a central-difference gradient checker.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Records (output, vjp) pairs; backward replays them newest-first."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, vjp in reversed(self._nodes):
            if out.grad is not None:
                vjp(out.grad)
        self._nodes.clear()


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    tape = _active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        tape._nodes.append((out, vjp(out)))
    return out


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(out):
        def back(g):
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)
        return back
    return _make(a.data @ b.data, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(out):
        def back(g):
            _accumulate(a, _unbroadcast(g, a.data.shape))
            _accumulate(b, _unbroadcast(g, b.data.shape))
        return back
    return _make(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(out):
        def back(g):
            _accumulate(a, _unbroadcast(g, a.data.shape))
            _accumulate(b, -_unbroadcast(g, b.data.shape))
        return back
    return _make(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(out):
        def back(g):
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))
        return back
    return _make(a.data * b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(out):
        return lambda g: _accumulate(a, -g)
    return _make(-a.data, (a,), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    def vjp(out):
        return lambda g: _accumulate(a, c * g)
    return _make(c * a.data, (a,), vjp)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(out):
        def back(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])
        return back
    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape

    def vjp(out):
        return lambda g: _accumulate(a, g.reshape(orig))
    return _make(a.data.reshape(shape), (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def vjp(out):
        return lambda g: _accumulate(a, g.transpose(inv))
    return _make(a.data.transpose(axes), (a,), vjp)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(out):
        def back(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                np.add.at(buf, idx, g)
                _accumulate(a, buf)
        return back
    return _make(a.data[idx], (a,), vjp)


def scatter_rows(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """Copy of `base` with rows at `idx` replaced by `rows`. idx must be unique."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("scatter_rows requires unique row indices")
    data = base.data.copy()
    data[idx] = rows.data

    def vjp(out):
        def back(g):
            _accumulate(rows, g[idx])
            if base.requires_grad:
                gb = g.copy()
                gb[idx] = 0.0
                _accumulate(base, gb)
        return back
    return _make(data, (base, rows), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def vjp(out):
        def back(g):
            buf = np.zeros_like(a.data)
            buf[..., start:stop] = g
            _accumulate(a, buf)
        return back
    return _make(a.data[..., start:stop], (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)

    def vjp(out):
        return lambda g: _accumulate(a, g * s * (1.0 - s))
    return _make(s, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def vjp(out):
        return lambda g: _accumulate(a, g * (1.0 - t * t))
    return _make(t, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def vjp(out):
        return lambda g: _accumulate(a, g * mask)
    return _make(a.data * mask, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def vjp(out):
        return lambda g: _accumulate(a, g * e)
    return _make(e, (a,), vjp)


def log(a: Tensor) -> Tensor:
    def vjp(out):
        return lambda g: _accumulate(a, g / a.data)
    return _make(np.log(a.data), (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(out):
        def back(g):
            dot = (g * p).sum(axis=axis, keepdims=True)
            _accumulate(a, p * (g - dot))
        return back
    return _make(p, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    def vjp(out):
        return lambda g: _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
    return _make(a.data.sum(), (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def vjp(out):
        return lambda g: _accumulate(
            a, np.broadcast_to(g / n, a.data.shape).copy())
    return _make(a.data.mean(), (a,), vjp)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]

    def vjp(out):
        def back(g):
            _accumulate(a, np.broadcast_to(
                np.expand_dims(g / n, axis), a.data.shape).copy())
        return back
    return _make(a.data.mean(axis=axis), (a,), vjp)


def dropout(a: Tensor, rate: float, rng: np.random.Generator,
            train: bool = True) -> Tensor:
    if not train or rate <= 0.0:
        return a
    keep = rng.random(a.data.shape) >= rate
    scl = 1.0 / (1.0 - rate)

    def vjp(out):
        return lambda g: _accumulate(a, g * keep * scl)
    return _make(a.data * keep * scl, (a,), vjp)


# ---------------------------------------------------------------------------
# fused kernels


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x of shape [n, d_in]."""
    def vjp(out):
        def back(g):
            _accumulate(x, g @ w.data.T)
            _accumulate(w, x.data.T @ g)
            _accumulate(b, g.sum(axis=0))
        return back
    return _make(x.data @ w.data + b.data, (x, w, b), vjp)


@dataclass
class GruParams:
    w_z: Tensor
    b_z: Tensor
    w_r: Tensor
    b_r: Tensor
    w_c: Tensor
    b_c: Tensor

    def tensors(self):
        return (self.w_z, self.b_z, self.w_r, self.b_r, self.w_c, self.b_c)


def gru_cell(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """h' = (1 - z) * h + z * c with z/r gates on [x || h], candidate on
    [x || r * h]. All-zero weights give h' = 0.5 * h."""
    d_x = x.data.shape[1]
    xh = np.concatenate([x.data, h.data], axis=1)
    z = _sig(xh @ p.w_z.data + p.b_z.data)
    r = _sig(xh @ p.w_r.data + p.b_r.data)
    xrh = np.concatenate([x.data, r * h.data], axis=1)
    c = np.tanh(xrh @ p.w_c.data + p.b_c.data)
    new_h = (1.0 - z) * h.data + z * c

    def vjp(out):
        def back(g):
            dz = g * (c - h.data)
            dc = g * z
            dh = g * (1.0 - z)
            dc_pre = dc * (1.0 - c * c)
            _accumulate(p.w_c, xrh.T @ dc_pre)
            _accumulate(p.b_c, dc_pre.sum(axis=0))
            dxrh = dc_pre @ p.w_c.data.T
            dx = dxrh[:, :d_x].copy()
            drh = dxrh[:, d_x:]
            dr = drh * h.data
            dh = dh + drh * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            _accumulate(p.w_z, xh.T @ dz_pre)
            _accumulate(p.b_z, dz_pre.sum(axis=0))
            _accumulate(p.w_r, xh.T @ dr_pre)
            _accumulate(p.b_r, dr_pre.sum(axis=0))
            dxh = dz_pre @ p.w_z.data.T + dr_pre @ p.w_r.data.T
            dx += dxh[:, :d_x]
            dh = dh + dxh[:, d_x:]
            _accumulate(x, dx)
            _accumulate(h, dh)
        return back
    return _make(new_h, (x, h) + p.tensors(), vjp)


def _sig(x: np.ndarray) -> np.ndarray:
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return s


def attention_core(q: Tensor, k: Tensor, v: Tensor,
                   mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention. q [N,H,D], k/v [N,H,S,D], mask [N,S]
    (True = valid). Rows with no valid key yield exactly zero."""
    n, heads, d = q.data.shape
    s = k.data.shape[2]
    if s == 0:
        def vjp0(out):
            def back(g):
                _accumulate(q, np.zeros_like(q.data))
                _accumulate(k, np.zeros_like(k.data))
                _accumulate(v, np.zeros_like(v.data))
            return back
        return _make(np.zeros((n, heads, d)), (q, k, v), vjp0)

    inv_sqrt = 1.0 / math.sqrt(d)
    scores = (k.data @ q.data[..., None])[..., 0] * inv_sqrt  # [N,H,S]
    if mask is None:
        valid = np.ones((n, 1, s), dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)[:, None, :]
    masked_scores = np.where(valid, scores, -np.inf)
    m = masked_scores.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(masked_scores - m)
    e = np.where(valid, e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    p = e / np.where(denom == 0.0, 1.0, denom)
    out_data = (p[:, :, None, :] @ v.data)[:, :, 0, :]  # [N,H,D]

    def vjp(out):
        def back(g):
            _accumulate(v, p[..., None] * g[:, :, None, :])
            dp = (v.data @ g[..., None])[..., 0]  # [N,H,S]
            ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
            _accumulate(q, (ds[:, :, None, :] @ k.data)[:, :, 0, :] * inv_sqrt)
            _accumulate(k, ds[..., None] * q.data[:, :, None, :] * inv_sqrt)
        return back
    return _make(out_data, (q, k, v), vjp)


@dataclass
class AttnParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor


def multi_head_attention_batch(q: Tensor, k: Tensor, v: Tensor, heads: int,
                               params: AttnParams,
                               mask: np.ndarray | None = None) -> Tensor:
    """q [N,d_q], k [N,S,d_k], v [N,S,d_v] -> [N,d_out]; heads are the
    column blocks of the projections, concatenated then output-projected."""
    n, s = k.data.shape[0], k.data.shape[1]
    d_out = params.w_q.data.shape[1]
    if d_out % heads != 0:
        raise ValueError(f"d_out={d_out} not divisible by heads={heads}")
    d_head = d_out // heads
    d_k, d_v = k.data.shape[2], v.data.shape[2]
    qp = matmul(q, params.w_q)                               # [N, d_out]
    kp = reshape(matmul(reshape(k, (n * s, d_k)), params.w_k), (n, s, d_out))
    vp = reshape(matmul(reshape(v, (n * s, d_v)), params.w_v), (n, s, d_out))
    q3 = reshape(qp, (n, heads, d_head))
    k4 = transpose(reshape(kp, (n, s, heads, d_head)), (0, 2, 1, 3))
    v4 = transpose(reshape(vp, (n, s, heads, d_head)), (0, 2, 1, 3))
    core = attention_core(q3, k4, v4, mask)                  # [N,H,Dh]
    return matmul(reshape(core, (n, d_out)), params.w_o)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         params: AttnParams) -> Tensor:
    """Single-query convenience form: q [d_q], k [n,d_k], v [n,d_v]."""
    n, d_k = k.data.shape
    d_v = v.data.shape[1]
    q2 = reshape(q, (1, q.data.shape[0]))
    k3 = reshape(k, (1, n, d_k))
    v3 = reshape(v, (1, n, d_v))
    out = multi_head_attention_batch(q2, k3, v3, heads, params)
    return reshape(out, (out.data.shape[1],))


def time_encode_learnable(dt: np.ndarray, omega: Tensor, bias: Tensor) -> Tensor:
    """phi1(dt)_i = cos(omega_i * dt + b_i); dt is a constant [n] array."""
    dt = np.asarray(dt, dtype=np.float64).reshape(-1)
    theta = np.outer(dt, omega.data) + bias.data
    sin_theta = np.sin(theta)

    def vjp(out):
        def back(g):
            s = -sin_theta * g
            _accumulate(omega, s.T @ dt)
            _accumulate(bias, s.sum(axis=0))
        return back
    return _make(np.cos(theta), (omega, bias), vjp)


def fixed_time_ladder(d: int) -> np.ndarray:
    """omega_i = 10^(-9 (i-1) / (d-1)), a geometric frequency ladder."""
    if d == 1:
        return np.ones(1)
    return 10.0 ** (-9.0 * np.arange(d) / (d - 1.0))


def time_encode_fixed(dt: np.ndarray, d: int) -> Tensor:
    """phi2(dt)_i = cos(dt * omega_i) on the fixed ladder; never trainable."""
    dt = np.asarray(dt, dtype=np.float64).reshape(-1)
    return Tensor(np.cos(np.outer(dt, fixed_time_ladder(d))))


_BCE_CLAMP = 1e-7


def bce_loss(p: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on probabilities clamped to
    [1e-7, 1 - 1e-7]; gradient is zero where the clamp is active."""
    y = np.asarray(y, dtype=np.float64)
    ph = np.clip(p.data, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    n = ph.size
    loss = float(np.mean(-y * np.log(ph) - (1.0 - y) * np.log1p(-ph)))
    inside = (p.data > _BCE_CLAMP) & (p.data < 1.0 - _BCE_CLAMP)

    def vjp(out):
        def back(g):
            dp = (-y / ph + (1.0 - y) / (1.0 - ph)) / n
            _accumulate(p, g * dp * inside)
        return back
    return _make(loss, (p,), vjp)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpointing


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    frozen: bool = False


class ParamGroup:
    def __init__(self):
        self.params: dict[str, Parameter] = {}

    def add(self, name: str, array, frozen: bool = False) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        p = Parameter(name, Tensor(np.array(array, dtype=np.float64),
                                   requires_grad=not frozen), frozen)
        self.params[name] = p
        return p

    def zero_grads(self):
        for p in self.params.values():
            p.tensor.grad = None

    def trainable(self):
        return [p for p in self.params.values() if not p.frozen]

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.tensor.data.copy() for n, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for n, arr in arrays.items():
            self.params[n].tensor.data = arr.copy()


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(group: ParamGroup, state: AdamState):
    """One Adam update; consumes (and clears) gradients."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in group.params.items():
        if p.frozen or p.tensor.grad is None:
            continue
        g = p.tensor.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.tensor.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.tensor.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.tensor.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.tensor.grad = None


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def grad_check(fn, params: ParamGroup, eps: float = 1e-5) -> float:
    """Max relative error |a - n| / max(1e-8, |a| + |n|) between tape
    gradients and central differences over every trainable coordinate.
    fn must rebuild the forward pass and return a scalar Tensor."""
    params.zero_grads()
    with Tape() as tape:
        out = fn()
        tape.backward(out)
    analytic = {}
    for p in params.trainable():
        g = p.tensor.grad
        analytic[p.name] = (np.zeros_like(p.tensor.data) if g is None
                            else g.copy())
    params.zero_grads()

    worst = 0.0
    for p in params.trainable():
        arr = p.tensor.data
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = float(fn().data)
            arr[idx] = orig - eps
            dn = float(fn().data)
            arr[idx] = orig
            num = (up - dn) / (2.0 * eps)
            a = float(analytic[p.name][idx])
            rel = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, rel)
    return worst


def _array_to_hex(arr: np.ndarray) -> str:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes().hex()


def _hex_to_array(hx: str, shape) -> np.ndarray:
    arr = np.frombuffer(bytes.fromhex(hx), dtype="<f8").astype(np.float64)
    return arr.reshape(shape)


def save_checkpoint(path, group: ParamGroup, extras: dict | None = None):
    """JSON-of-float64-hex checkpoint; round-trips bit-exactly."""
    blob = {"format": "float64-hex", "params": {}, "extras": {}}
    for name, p in group.params.items():
        blob["params"][name] = {
            "shape": list(p.tensor.data.shape),
            "frozen": p.frozen,
            "hex": _array_to_hex(p.tensor.data),
        }
    for name, arr in (extras or {}).items():
        arr = np.asarray(arr, dtype=np.float64)
        blob["extras"][name] = {"shape": list(arr.shape),
                                "hex": _array_to_hex(arr)}
    with open(path, "w") as f:
        json.dump(blob, f)


def load_checkpoint(path, group: ParamGroup) -> dict[str, np.ndarray]:
    """Load parameters into `group` (names and shapes must match);
    returns the extra arrays."""
    with open(path) as f:
        blob = json.load(f)
    saved = blob["params"]
    missing = set(group.params) - set(saved)
    unexpected = set(saved) - set(group.params)
    if missing or unexpected:
        raise ValueError(
            f"checkpoint mismatch: missing={sorted(missing)} "
            f"unexpected={sorted(unexpected)}")
    for name, entry in saved.items():
        arr = _hex_to_array(entry["hex"], entry["shape"])
        target = group.params[name].tensor
        if tuple(arr.shape) != tuple(target.data.shape):
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {arr.shape} "
                f"vs model {target.data.shape}")
        target.data = arr
    return {name: _hex_to_array(e["hex"], e["shape"])
            for name, e in blob.get("extras", {}).items()}
