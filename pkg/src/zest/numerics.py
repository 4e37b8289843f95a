"""Dense numeric core: tensors with hand-written backward rules, Adam, and
finite-difference gradient checking.

This is intentionally *not* a general autodiff system. It supports exactly the
primitives the models in this package need, each with an explicit backward
rule that is validated against central finite differences in the test suite.
Model computation runs in float32; gradient checks run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5

# python floats: weak scalars that do not promote float32 arrays
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class NumericsError(RuntimeError):
    """Shape mismatch or non-finite value in a numeric primitive."""


def _require_finite(op: str, data: np.ndarray) -> None:
    # min/max propagate NaN and expose Inf without allocating a bool mask
    if data.size and not (np.isfinite(data.min()) and np.isfinite(data.max())):
        raise NumericsError(f"non-finite output in op '{op}'")


class Tensor:
    """N-d array plus an optional gradient buffer and a backward closure.

    Tensors form a DAG as ops are applied; calling ``backward()`` on a scalar
    result accumulates gradients into every tensor that contributed to it.
    Treat `.data` as immutable once the tensor has been fed into an op.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, name: str = "", _parents: tuple = (), _backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray, own: bool = False) -> None:
        """Add g to the gradient buffer. `own=True` promises g is freshly
        allocated and handed to this tensor only, so it can be adopted
        without a copy."""
        if self.grad is None:
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output. Gradient buffers of
        intermediate nodes are released as soon as they have been consumed;
        only leaf tensors keep their gradients."""
        if self.data.size != 1:
            raise NumericsError("backward() requires a scalar tensor")
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node)
                if node._parents:
                    node.grad = None

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def param(data, name: str = "") -> Tensor:
    """A leaf tensor (trainable parameter or constant input)."""
    return Tensor(np.asarray(data), name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data
    _require_finite("add", out_data)
    out = Tensor(out_data, name="add", _parents=(a, b))

    def bw(o: Tensor) -> None:
        ga = _unbroadcast(o.grad, a.shape)
        a._accumulate(ga, own=ga is not o.grad)
        gb = _unbroadcast(o.grad, b.shape)
        b._accumulate(gb, own=gb is not o.grad)

    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data
    _require_finite("mul", out_data)
    out = Tensor(out_data, name="mul", _parents=(a, b))

    def bw(o: Tensor) -> None:
        a._accumulate(_unbroadcast(o.grad * b.data, a.shape), own=True)
        b._accumulate(_unbroadcast(o.grad * a.data, b.shape), own=True)

    out._backward = bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c
    _require_finite("scale", out_data)
    out = Tensor(out_data, name="scale", _parents=(a,))

    def bw(o: Tensor) -> None:
        a._accumulate(o.grad * c, own=True)

    out._backward = bw
    return out


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    _require_finite("exp", out_data)
    out = Tensor(out_data, name="exp", _parents=(a,))

    def bw(o: Tensor) -> None:
        a._accumulate(o.grad * o.data, own=True)

    out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batched over leading axes via numpy matmul semantics."""
    if a.data.shape[-1] != b.data.shape[-2]:
        raise NumericsError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data
    _require_finite("matmul", out_data)
    out = Tensor(out_data, name="matmul", _parents=(a, b))

    def bw(o: Tensor) -> None:
        ga = o.grad @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ o.grad
        a._accumulate(_unbroadcast(ga, a.shape), own=True)
        b._accumulate(_unbroadcast(gb, b.shape), own=True)

    out._backward = bw
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b over the last axis of x."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise NumericsError(
            f"linear shape mismatch: input {x.data.shape}, weight {w.data.shape}")
    out_data = x.data @ w.data + b.data
    _require_finite("linear", out_data)
    out = Tensor(out_data, name="linear", _parents=(x, w, b))

    def bw(o: Tensor) -> None:
        x._accumulate(o.grad @ w.data.T, own=True)
        g2 = o.grad.reshape(-1, o.grad.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        w._accumulate(x2.T @ g2, own=True)
        b._accumulate(g2.sum(axis=0), own=True)

    out._backward = bw
    return out


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    out_data = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(out_data, out=out_data)
    out_data /= out_data.sum(axis=-1, keepdims=True)
    _require_finite("softmax", out_data)
    out = Tensor(out_data, name="softmax", _parents=(x,))

    def bw(o: Tensor) -> None:
        dot = (o.grad * o.data).sum(axis=-1, keepdims=True)
        g = o.grad - dot
        g *= o.data
        x._accumulate(g, own=True)

    out._backward = bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Row-wise normalization over the last axis with learnable gain/bias."""
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = gain.data * xhat + bias.data
    _require_finite("layer_norm", out_data)
    out = Tensor(out_data, name="layer_norm", _parents=(x, gain, bias))

    def bw(o: Tensor) -> None:
        d = x.data.shape[-1]
        gxhat = o.grad * gain.data
        # d xhat / d x folded analytically
        term = gxhat - gxhat.mean(axis=-1, keepdims=True) \
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        x._accumulate(term * inv_std, own=True)
        flat = (o.grad * xhat).reshape(-1, d)
        gain._accumulate(flat.sum(axis=0).reshape(gain.shape), own=True)
        bias._accumulate(o.grad.reshape(-1, d).sum(axis=0).reshape(bias.shape),
                         own=True)

    out._backward = bw
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf
    _require_finite("gelu", out_data)
    out = Tensor(out_data, name="gelu", _parents=(x,))

    def bw(o: Tensor) -> None:
        pdf = np.exp(-0.5 * x.data ** 2) * _INV_SQRT2PI
        x._accumulate(o.grad * (cdf + x.data * pdf), own=True)

    out._backward = bw
    return out


def mean_pool(x: Tensor) -> Tensor:
    """Mean over the row axis (second-to-last)."""
    if x.data.ndim < 2:
        raise NumericsError("mean_pool needs at least 2 dims")
    n = x.data.shape[-2]
    out_data = x.data.mean(axis=-2)
    _require_finite("mean_pool", out_data)
    out = Tensor(out_data, name="mean_pool", _parents=(x,))

    def bw(o: Tensor) -> None:
        x._accumulate(np.repeat(np.expand_dims(o.grad / n, -2), n, axis=-2),
                      own=True)

    out._backward = bw
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    _require_finite("concat", out_data)
    out = Tensor(out_data, name="concat", _parents=tuple(tensors))

    def bw(o: Tensor) -> None:
        offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
        for t, piece in zip(tensors, np.split(o.grad, offsets, axis=axis)):
            t._accumulate(piece, own=True)

    out._backward = bw
    return out


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the row axis (second-to-last)."""
    return concat(tensors, axis=-2)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(x.data.reshape(shape), name="reshape", _parents=(x,))

    def bw(o: Tensor) -> None:
        x._accumulate(o.grad.reshape(x.shape), own=True)

    out._backward = bw
    return out


def transpose(x: Tensor, axes: tuple) -> Tensor:
    out = Tensor(x.data.transpose(axes), name="transpose", _parents=(x,))
    inverse = tuple(np.argsort(axes))

    def bw(o: Tensor) -> None:
        x._accumulate(o.grad.transpose(inverse), own=True)

    out._backward = bw
    return out


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(np.broadcast_to(x.data, shape).copy(), name="broadcast",
                 _parents=(x,))

    def bw(o: Tensor) -> None:
        g = _unbroadcast(o.grad, x.shape)
        x._accumulate(g, own=g is not o.grad)

    out._backward = bw
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise NumericsError(
            f"cross_entropy expects (B,C) logits and (B,) labels, got "
            f"{logits.data.shape} and {labels.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    batch = logits.data.shape[0]
    nll = -log_probs[np.arange(batch), labels].mean()
    _require_finite("cross_entropy", np.asarray(nll))
    out = Tensor(np.asarray(nll, dtype=logits.dtype), name="cross_entropy",
                 _parents=(logits,))

    def bw(o: Tensor) -> None:
        probs = np.exp(log_probs)
        probs[np.arange(batch), labels] -= 1.0
        logits._accumulate(o.grad * probs / batch, own=True)

    out._backward = bw
    return out


def l1_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Sum of absolute errors over the last axis, averaged over the batch."""
    target = np.asarray(target)
    if pred.data.shape != target.shape:
        raise NumericsError(
            f"l1_loss shape mismatch: {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    batch = pred.data.shape[0] if pred.data.ndim > 1 else 1
    val = np.abs(diff).sum() / batch
    _require_finite("l1_loss", np.asarray(val))
    out = Tensor(np.asarray(val, dtype=pred.dtype), name="l1_loss",
                 _parents=(pred,))

    def bw(o: Tensor) -> None:
        pred._accumulate(o.grad * np.sign(diff) / batch, own=True)

    out._backward = bw
    return out


def l2_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Sum of squared errors over the last axis, averaged over the batch."""
    target = np.asarray(target)
    if pred.data.shape != target.shape:
        raise NumericsError(
            f"l2_loss shape mismatch: {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    batch = pred.data.shape[0] if pred.data.ndim > 1 else 1
    val = (diff ** 2).sum() / batch
    _require_finite("l2_loss", np.asarray(val))
    out = Tensor(np.asarray(val, dtype=pred.dtype), name="l2_loss",
                 _parents=(pred,))

    def bw(o: Tensor) -> None:
        pred._accumulate(o.grad * 2.0 * diff / batch, own=True)

    out._backward = bw
    return out


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, sigma) || N(0, 1)) summed over dims, averaged over the batch.

    Analytic form: 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
    """
    if mu.data.shape != logvar.data.shape:
        raise NumericsError("gaussian_kl shape mismatch")
    var = np.exp(logvar.data)
    batch = mu.data.shape[0] if mu.data.ndim > 1 else 1
    val = 0.5 * (mu.data ** 2 + var - 1.0 - logvar.data).sum() / batch
    _require_finite("gaussian_kl", np.asarray(val))
    out = Tensor(np.asarray(val, dtype=mu.dtype), name="gaussian_kl",
                 _parents=(mu, logvar))

    def bw(o: Tensor) -> None:
        mu._accumulate(o.grad * mu.data / batch, own=True)
        logvar._accumulate(o.grad * 0.5 * (var - 1.0) / batch, own=True)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference grads.

    `f` must be a deterministic closure over `params` returning a scalar
    Tensor. Relative error per element is
    |g_a - g_fd| / max(1, |g_a|, |g_fd|). Run params in float64.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-3]")
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().data.item()
            flat[i] = orig - eps
            f_minus = f().data.item()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1.0, abs(ga_flat[i]), abs(g_fd))
            worst = max(worst, abs(ga_flat[i] - g_fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam accumulators shared across steps."""

    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: OptimizerState) -> Sequence[Tensor]:
    """One bias-corrected Adam update; mutates params in place."""
    if state.learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for idx, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise NumericsError(
                f"adam_step grad shape {g.shape} != param shape {p.data.shape}")
        m = state.m.setdefault(idx, np.zeros_like(p.data))
        v = state.v.setdefault(idx, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g ** 2
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


class Adam:
    """Convenience wrapper applying adam_step to a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(learning_rate=learning_rate, beta1=beta1,
                                    beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        adam_step(self.params, grads, self.state)
