"""Minimal tape-based reverse-mode autodiff over float64 numpy arrays.

Just enough machinery to train the font VAE deterministically: dense and
3x3 convolutional layers, nearest-neighbor upsampling, elementwise math,
and the two loss primitives (pixel BCE, KL against the standard normal).
Tensors are immutable values once created; each forward pass records nodes
on an explicit Tape and backward() replays it in exact reverse, so a fixed
input order yields bit-identical gradients.

No broadcasting, no GPU, no graph rewriting. Everything is float64: the
corpus is tiny and 64 bits keep finite-difference checks and cross-run
determinism clean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GraphError, ShapeError
from .rng import Rng


class Tensor:
    """Immutable float64 array value; identity is the tape-graph key."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ShapeError("tensor values must be finite")
        self.values = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape})"


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._outputs: set[int] = set()

    def _record(self, values: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.values = np.asarray(values, dtype=np.float64)
        self.nodes.append(_Node(out, inputs, backward_fn))
        self._outputs.add(id(out))
        return out


def conv2d(tape: Tape, x: Tensor, kernels: Tensor, bias: Tensor, stride: int) -> Tensor:
    """3x3 cross-correlation with zero padding 1; H' = ceil(H/stride)."""
    xv, kv, bv = x.values, kernels.values, bias.values
    if xv.ndim != 3 or kv.ndim != 4 or kv.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects [C,H,W] input and [Co,Ci,3,3] kernels, "
                         f"got {xv.shape} and {kv.shape}")
    if kv.shape[1] != xv.shape[0] or bv.shape != (kv.shape[0],):
        raise ShapeError(f"conv2d channel mismatch: input {xv.shape}, "
                         f"kernels {kv.shape}, bias {bv.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")

    cin, h, w = xv.shape
    cout = kv.shape[0]
    hp = -(-h // stride)
    wp = -(-w // stride)

    padded = np.pad(xv, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]              # [Ci, H', W', 3, 3]
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(cin * 9, hp * wp)
    k2 = kv.reshape(cout, cin * 9)
    out = (k2 @ cols + bv[:, None]).reshape(cout, hp, wp)

    def backward(g: np.ndarray):
        g2 = g.reshape(cout, hp * wp)
        dk = (g2 @ cols.T).reshape(kv.shape)
        db = g2.sum(axis=1)
        dcols = (k2.T @ g2).reshape(cin, 3, 3, hp, wp)
        dpad = np.zeros((cin, h + 2, w + 2))
        for di in range(3):
            for dj in range(3):
                dpad[:, di:di + stride * (hp - 1) + 1:stride,
                     dj:dj + stride * (wp - 1) + 1:stride] += dcols[:, di, dj]
        return dpad[:, 1:1 + h, 1:1 + w], dk, db

    return tape._record(out, (x, kernels, bias), backward)


def dense(tape: Tape, x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """w @ x + b for a vector input."""
    xv, wv, bv = x.values, weights.values, bias.values
    if xv.ndim != 1 or wv.ndim != 2 or wv.shape[1] != xv.shape[0] or bv.shape != (wv.shape[0],):
        raise ShapeError(f"dense shape mismatch: x {xv.shape}, w {wv.shape}, b {bv.shape}")
    out = wv @ xv + bv

    def backward(g: np.ndarray):
        return wv.T @ g, np.outer(g, xv), g.copy()

    return tape._record(out, (x, weights, bias), backward)


def relu(tape: Tape, x: Tensor) -> Tensor:
    xv = x.values
    out = np.maximum(xv, 0.0)

    def backward(g: np.ndarray):
        return (g * (xv > 0.0),)

    return tape._record(out, (x,), backward)


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    """Logistic function, computed in the stable branch for negative inputs."""
    xv = x.values
    out = np.empty_like(xv, dtype=np.float64)
    pos = xv >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return tape._record(out, (x,), backward)


def activation(tape: Tape, x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(tape, x)
    if kind == "sigmoid":
        return sigmoid(tape, x)
    raise ShapeError(f"unknown activation kind {kind!r}")


def upsample2x(tape: Tape, x: Tensor) -> Tensor:
    """Nearest-neighbor duplication of each pixel into a 2x2 block."""
    xv = x.values
    if xv.ndim != 3:
        raise ShapeError(f"upsample2x expects [C,H,W], got {xv.shape}")
    c, h, w = xv.shape
    out = xv.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g: np.ndarray):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return tape._record(out, (x,), backward)


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op} shape mismatch: {a.values.shape} vs {b.values.shape}")


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return tape._record(a.values + b.values, (a, b),
                        lambda g: (g.copy(), g.copy()))


def sub(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return tape._record(a.values - b.values, (a, b),
                        lambda g: (g.copy(), -g))


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return tape._record(av * bv, (a, b),
                        lambda g: (g * bv, g * av))


def scale(tape: Tape, x: Tensor, c: float) -> Tensor:
    return tape._record(x.values * c, (x,), lambda g: (g * c,))


def texp(tape: Tape, x: Tensor) -> Tensor:
    out = np.exp(x.values)
    return tape._record(out, (x,), lambda g: (g * out,))


def tsum(tape: Tape, x: Tensor) -> Tensor:
    xv = x.values
    return tape._record(np.asarray(xv.sum()), (x,),
                        lambda g: (np.full(xv.shape, float(g)),))


def reshape(tape: Tape, x: Tensor, shape: Sequence[int]) -> Tensor:
    xv = x.values
    shape = tuple(shape)
    if int(np.prod(shape)) != xv.size:
        raise ShapeError(f"cannot reshape {xv.shape} to {shape}")
    return tape._record(xv.reshape(shape), (x,),
                        lambda g: (g.reshape(xv.shape),))


_BCE_EPS = 1e-7


def bce_sum(tape: Tape, p: Tensor, t: Tensor) -> Tensor:
    """Pixel-summed binary cross-entropy with p clamped to [1e-7, 1-1e-7]."""
    _require_same_shape(p, t, "bce_sum")
    pv, tv = p.values, t.values
    pc = np.clip(pv, _BCE_EPS, 1.0 - _BCE_EPS)
    out = -(tv * np.log(pc) + (1.0 - tv) * np.log(1.0 - pc)).sum()

    def backward(g: np.ndarray):
        inside = (pv > _BCE_EPS) & (pv < 1.0 - _BCE_EPS)
        dp = float(g) * (pc - tv) / (pc * (1.0 - pc)) * inside
        dt = float(g) * np.log((1.0 - pc) / pc)
        return dp, dt

    return tape._record(np.asarray(out), (p, t), backward)


def kl_std_normal(tape: Tape, mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, e^logvar) || N(0, 1)), summed over dimensions."""
    _require_same_shape(mu, logvar, "kl_std_normal")
    mv, lv = mu.values, logvar.values
    out = -0.5 * (1.0 + lv - mv * mv - np.exp(lv)).sum()

    def backward(g: np.ndarray):
        return float(g) * mv, float(g) * 0.5 * (np.exp(lv) - 1.0)

    return tape._record(np.asarray(out), (mu, logvar), backward)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradients of a scalar loss for every tensor on the tape.

    The returned map is keyed by tensor identity and covers every input
    (parameters included) reachable from the loss.
    """
    if id(loss) not in tape._outputs:
        raise GraphError("loss tensor was not produced through this tape")
    if loss.values.size != 1:
        raise GraphError(f"loss must be a scalar, got shape {loss.values.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None:
                continue
            key = id(inp)
            tensors[key] = inp
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = np.asarray(ig, dtype=np.float64)
    return {tensors[key]: grad for key, grad in grads.items()}


# --- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam_state(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(step=0,
                     m={k: np.zeros_like(v) for k, v in params.items()},
                     v={k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray],
              state: AdamState,
              lr: float = 1e-3,
              beta1: float = 0.9,
              beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in sorted parameter order."""
    t = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


def gaussian_sample(rng: Rng, n: int) -> np.ndarray:
    """n standard-normal draws from the deterministic generator."""
    return np.array(rng.normals(n), dtype=np.float64)
