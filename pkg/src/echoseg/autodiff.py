"""Minimal dense-tensor math with reverse-mode automatic differentiation.

Just enough for MLP encoder/decoders: float64 tensors, a Tape recording
primitive ops in execution order, reverse traversal populating gradients,
and the Adam optimizer. A Tape and its tensors belong to one thread for
the duration of a step.
"""

from dataclasses import dataclass, field

import numpy as np


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Ordered record of primitive ops; reverse walk computes adjoints.

    Ops are appended in execution order, so every op's inputs precede it
    and reversed iteration is a valid backward schedule.
    """

    def __init__(self):
        self._ops = []

    def _record(self, out, inputs, backward):
        self._ops.append((out, inputs, backward))
        return out

    # -- primitives ---------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
        out = Tensor(a.data @ b.data)
        return self._record(out, (a, b),
                            lambda g: (g @ b.data.T, a.data.T @ g))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data + b.data)
        return self._record(out, (a, b),
                            lambda g: (_unbroadcast(g, a.data.shape),
                                       _unbroadcast(g, b.data.shape)))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data * b.data)
        return self._record(out, (a, b),
                            lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                       _unbroadcast(g * a.data, b.data.shape)))

    def neg(self, a: Tensor) -> Tensor:
        return self._record(Tensor(-a.data), (a,), lambda g: (-g,))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        return self.add(a, self.neg(b))

    def exp(self, a: Tensor) -> Tensor:
        out = Tensor(np.exp(a.data))
        return self._record(out, (a,), lambda g: (g * out.data,))

    def log(self, a: Tensor) -> Tensor:
        out = Tensor(np.log(a.data))
        return self._record(out, (a,), lambda g: (g / a.data,))

    def sum(self, a: Tensor) -> Tensor:
        out = Tensor(a.data.sum())
        return self._record(out, (a,),
                            lambda g: (np.broadcast_to(g, a.data.shape).copy(),))

    def sigmoid(self, a: Tensor) -> Tensor:
        # split by sign for overflow-free evaluation
        x = a.data
        out_vals = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(out_vals)
        return self._record(out, (a,), lambda g: (g * out.data * (1.0 - out.data),))

    def relu(self, a: Tensor) -> Tensor:
        out = Tensor(np.maximum(a.data, 0.0))
        return self._record(out, (a,), lambda g: (g * (a.data > 0),))

    def clip(self, a: Tensor, lo, hi) -> Tensor:
        out = Tensor(np.clip(a.data, lo, hi))
        inside = (a.data > lo) & (a.data < hi)
        return self._record(out, (a,), lambda g: (g * inside,))

    def scale(self, a: Tensor, factor: float) -> Tensor:
        return self.mul(a, Tensor(float(factor)))

    # -- reverse pass ---------------------------------------------------

    def backward(self, loss: Tensor):
        """Populate grad of every requires_grad tensor with d loss / d tensor.

        Repeated calls without zero_grad accumulate.
        """
        if loss.data.size != 1:
            raise ValueError("loss must be scalar")
        adjoint = {id(loss): np.ones_like(loss.data)}
        seen = {id(loss): loss}
        for out, inputs, backward in reversed(self._ops):
            g_out = adjoint.get(id(out))
            if g_out is None:
                continue
            for tensor, g_in in zip(inputs, backward(g_out)):
                key = id(tensor)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + g_in
                else:
                    adjoint[key] = g_in
                    seen[key] = tensor
        for key, tensor in seen.items():
            if tensor.requires_grad:
                tensor.grad += adjoint[key].reshape(tensor.data.shape)


@dataclass
class AdamState:
    """First/second moment accumulators and step counter per parameter."""
    m: dict
    v: dict
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()},
                   t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter {name} {p.data.shape}")
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** state.t)
        v_hat = state.v[name] / (1 - b2 ** state.t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
