"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small closure-tape design: every operation returns a Tensor holding the value,
its parents, and a backward closure. Calling ``backward`` on a result walks the
recorded graph once and accumulates gradients into ``.grad`` of every leaf.
Only the handful of operations used by the encoder and losses is provided.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "DivergenceError",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "sigmoid",
    "logsigmoid",
    "clamped_sqrt",
    "mean_axis0",
    "mean_all",
    "sum_axis1",
    "gather_rows",
    "concat_rows",
    "AdamState",
    "adam_step",
    "zero_grads",
]


class DivergenceError(RuntimeError):
    """Raised when training produces non-finite losses or gradients."""


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, _parents=(), _bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the value with no tape history (blocks gradient flow)."""
        return Tensor(self.data)

    def backward(self, upstream: np.ndarray | float | None = None) -> None:
        """Accumulate gradients of this value into every reachable leaf.

        ``upstream`` defaults to 1 and is only optional for scalars.
        """
        if upstream is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar needs an explicit upstream gradient")
            upstream = np.ones_like(self.data)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != self.data.shape:
            raise ValueError(f"upstream gradient shape {upstream.shape} != value shape {self.data.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        _acc(self, upstream)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)


def _acc(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor | np.ndarray, b: Tensor | np.ndarray) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data @ b.data, (a, b))

    def bwd(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    out._bwd = bwd
    return out


def add(a: Tensor | np.ndarray, b: Tensor | np.ndarray | float) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, (a, b))

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    out._bwd = bwd
    return out


def sub(a: Tensor | np.ndarray, b: Tensor | np.ndarray) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data - b.data, (a, b))

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    out._bwd = bwd
    return out


def mul(a: Tensor | np.ndarray | float, b: Tensor | np.ndarray | float) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data, (a, b))

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    out._bwd = bwd
    return out


def div(a: Tensor | np.ndarray, b: Tensor | np.ndarray) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data / b.data, (a, b))

    def bwd(g):
        _acc(a, _unbroadcast(g / b.data, a.data.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._bwd = bwd
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), (x,))

    def bwd(g):
        _acc(x, g * mask)

    out._bwd = bwd
    return out


def sigmoid(x: Tensor) -> Tensor:
    # split by sign for overflow-free evaluation
    s = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))), np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = Tensor(s, (x,))

    def bwd(g):
        _acc(x, g * s * (1.0 - s))

    out._bwd = bwd
    return out


def logsigmoid(x: Tensor) -> Tensor:
    # log sigmoid(x) = -softplus(-x), evaluated stably
    out = Tensor(np.minimum(x.data, 0.0) - np.log1p(np.exp(-np.abs(x.data))), (x,))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))

    def bwd(g):
        _acc(x, g * (1.0 - sig))

    out._bwd = bwd
    return out


def clamped_sqrt(x: Tensor, floor: float) -> Tensor:
    """sqrt(max(x, floor)): a numerically safe normalizer denominator.

    Below the floor the gradient is zero; at or above it the usual 1/(2 sqrt).
    """
    clamped = np.maximum(x.data, floor)
    root = np.sqrt(clamped)
    active = x.data >= floor
    out = Tensor(root, (x,))

    def bwd(g):
        _acc(x, g * active * 0.5 / root)

    out._bwd = bwd
    return out


def mean_axis0(x: Tensor) -> Tensor:
    n = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True), (x,))

    def bwd(g):
        _acc(x, np.broadcast_to(g / n, x.data.shape).copy())

    out._bwd = bwd
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.array(x.data.mean()), (x,))

    def bwd(g):
        _acc(x, np.broadcast_to(g / n, x.data.shape).copy())

    out._bwd = bwd
    return out


def sum_axis1(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(axis=1, keepdims=True), (x,))

    def bwd(g):
        _acc(x, np.broadcast_to(g, x.data.shape).copy())

    out._bwd = bwd
    return out


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(x.data[idx], (x,))

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _acc(x, full)

    out._bwd = bwd
    return out


def concat_rows(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), tuple(parts))
    sizes = [p.data.shape[0] for p in parts]

    def bwd(g):
        offset = 0
        for p, size in zip(parts, sizes):
            _acc(p, g[offset : offset + size])
            offset += size

    out._bwd = bwd
    return out


class AdamState:
    """First/second moment estimates for a named parameter set."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def to_json(self) -> dict:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AdamState":
        state = cls(doc["beta1"], doc["beta2"], doc["eps"])
        state.step = doc["step"]
        state.m = {k: np.asarray(v, dtype=np.float64) for k, v in doc["m"].items()}
        state.v = {k: np.asarray(v, dtype=np.float64) for k, v in doc["v"].items()}
        return state


def adam_step(named_params: list[tuple[str, Tensor]], state: AdamState, lr: float) -> None:
    """One adaptive moment-estimation update, in place, over named parameters.

    Parameters with no accumulated gradient are treated as zero-gradient.
    Non-finite gradients abort: they signal divergence, not a recoverable state.
    """
    state.step += 1
    t = state.step
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def zero_grads(named_params: list[tuple[str, Tensor]]) -> None:
    for _, p in named_params:
        p.grad = None
