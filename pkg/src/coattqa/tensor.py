"""Dense float64 tensors with hand-written backward passes.

Every primitive below computes its forward value with numpy and registers a
closure that maps the upstream gradient onto its inputs.  ``Tensor.backward``
walks the recorded graph in reverse topological order and accumulates
gradients.  Leading dimensions are treated as batch dimensions throughout, so
the same ops serve single examples (``[L, d]``) and mini-batches (``[B, L, d]``).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64
NEG_INF = -1e9  # surrogate for -inf on padded logit positions

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording backward closures."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        ``grad`` defaults to ones for a scalar output and is required
        otherwise.
        """
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() on a non-scalar tensor needs an explicit grad")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.shape:
            raise ShapeError(f"grad shape {grad.shape} does not match tensor shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    __array_priority__ = 100.0

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor that always requires grad."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if not _grad_enabled:
        return out
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a} and {b} are not broadcast-compatible") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: a._accum(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _node(np.where(on, x.data, 0.0), (x,), lambda g: x._accum(g * on))


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return _node(x.data * cdf, (x,), lambda g: x._accum(g * (cdf + x.data * pdf)))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _node(s, (x,), lambda g: x._accum(g * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _node(t, (x,), lambda g: x._accum(g * (1.0 - t * t)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def masked_fill(x: Tensor, mask, value: float = NEG_INF) -> Tensor:
    """Keep ``x`` where ``mask`` is true, write the constant ``value`` elsewhere."""
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    return _node(np.where(keep, x.data, value), (x,), lambda g: x._accum(np.where(keep, g, 0.0)))


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: x._accum(g.reshape(x.shape)))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: x._accum(g.transpose(inverse)))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: need at least one tensor")
    ndim = xs[0].ndim
    ax = axis % ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {[t.shape for t in xs]}")
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def backward(g):
        for x, piece in zip(xs, np.split(g, bounds, axis=ax)):
            if x.requires_grad:
                x._accum(piece)

    return _node(np.concatenate([x.data for x in xs], axis=ax), xs, backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _node(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul batch")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` laid out as ``[out, in]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    n_out, n_in = weight.shape
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (n_out,):
            raise ShapeError(f"linear: bias {bias.shape} should be ({n_out},)")
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, n_out)
        if x.requires_grad:
            x._accum(g @ weight.data)
        if weight.requires_grad:
            weight._accum(g2.T @ x.data.reshape(-1, n_in))
        if bias is not None and bias.requires_grad:
            bias._accum(g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward)


def embedding(ids, table: Tensor) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding: ids must lie in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accum(full)

    return _node(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def masked_softmax(x: Tensor, mask, temperature_divisor: float = 1.0) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is 1.

    Masked positions get exactly zero probability.  Raises if any row has no
    permitted position.
    """
    if temperature_divisor <= 0:
        raise ValueError("temperature_divisor must be positive")
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not keep.any(axis=-1).all():
        raise ValueError("masked_softmax: a row has an all-zero mask; the distribution is undefined")
    z = np.where(keep, x.data / temperature_divisor, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accum(p * (g - (g * p).sum(axis=-1, keepdims=True)) / temperature_divisor)

    return _node(p, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    return masked_softmax(x, np.ones(x.shape[-1], dtype=bool))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    rstd = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * rstd

    def backward(g):
        if x.requires_grad:
            dxhat = g * gamma.data
            x._accum(rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                             - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)))
        g2 = g.reshape(-1, d)
        if gamma.requires_grad:
            gamma._accum((g2 * xhat.reshape(-1, d)).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g2.sum(axis=0))

    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolution and recurrence
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-length 1D cross-correlation over the sequence axis.

    ``x`` is ``[..., L, c_in]``, ``kernels`` is ``[c_out, c_in, k]`` with odd
    ``k``; the sequence is zero padded by ``(k - 1) // 2`` on both sides.
    """
    if kernels.ndim != 3:
        raise ShapeError(f"conv1d: kernels must be [c_out, c_in, k], got {kernels.shape}")
    c_out, c_in, k = kernels.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d: kernel size must be odd for same padding, got {k}")
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv1d: input has {x.shape[-1]} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias {bias.shape} should be ({c_out},)")
    L = x.shape[-2]
    pad = (k - 1) // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    # cols[..., t, i, j] = xp[..., t + j, i]
    cols = np.stack([xp[..., j:j + L, :] for j in range(k)], axis=-1)
    flat_w = kernels.data.reshape(c_out, c_in * k)
    out = cols.reshape(*cols.shape[:-2], c_in * k) @ flat_w.T + bias.data

    def backward(g):
        g2 = g.reshape(-1, c_out)
        if kernels.requires_grad:
            kernels._accum((g2.T @ cols.reshape(-1, c_in * k)).reshape(c_out, c_in, k))
        if bias.requires_grad:
            bias._accum(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g @ flat_w).reshape(*g.shape[:-1], c_in, k)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[..., j:j + L, :] += dcols[..., j]
            x._accum(dxp[..., pad:pad + L, :])

    return _node(out, (x, kernels, bias), backward)


def lstm_sequence(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor,
                  h0: Tensor | None = None, c0: Tensor | None = None) -> Tensor:
    """Left-to-right LSTM over ``x[..., L, d_in]`` returning every hidden state.

    Gate rows of ``w_ih``/``w_hh``/``bias`` are ordered input, forget, cell
    candidate, output.  Initial states default to zeros.
    """
    four_h, d_in = w_ih.shape
    h = four_h // 4
    if four_h != 4 * h or w_hh.shape != (four_h, h) or bias.shape != (four_h,):
        raise ShapeError(f"lstm: inconsistent gate shapes {w_ih.shape}, {w_hh.shape}, {bias.shape}")
    if x.shape[-1] != d_in:
        raise ShapeError(f"lstm: input width {x.shape[-1]} != {d_in}")
    lead = x.shape[:-2]
    L = x.shape[-2]
    if L < 1:
        raise ShapeError("lstm: sequence must have at least one step")
    xs = x.data.reshape(-1, L, d_in)
    n = xs.shape[0]
    h_prev = np.zeros((n, h)) if h0 is None else np.broadcast_to(h0.data, lead + (h,)).reshape(n, h)
    c_prev = np.zeros((n, h)) if c0 is None else np.broadcast_to(c0.data, lead + (h,)).reshape(n, h)
    pre_x = xs @ w_ih.data.T + bias.data
    hs = np.empty((n, L + 1, h))
    cs = np.empty((n, L + 1, h))
    gates = np.empty((n, L, four_h))
    hs[:, 0], cs[:, 0] = h_prev, c_prev
    for t in range(L):
        a = pre_x[:, t] + hs[:, t] @ w_hh.data.T
        i, f, o = _sigmoid(a[:, :h]), _sigmoid(a[:, h:2 * h]), _sigmoid(a[:, 3 * h:])
        cand = np.tanh(a[:, 2 * h:3 * h])
        gates[:, t] = np.concatenate([i, f, cand, o], axis=1)
        cs[:, t + 1] = f * cs[:, t] + i * cand
        hs[:, t + 1] = o * np.tanh(cs[:, t + 1])

    def backward(g):
        g = g.reshape(n, L, h)
        dh_next = np.zeros((n, h))
        dc_next = np.zeros((n, h))
        da_all = np.empty((n, L, four_h))
        for t in reversed(range(L)):
            i, f = gates[:, t, :h], gates[:, t, h:2 * h]
            cand, o = gates[:, t, 2 * h:3 * h], gates[:, t, 3 * h:]
            tc = np.tanh(cs[:, t + 1])
            dh = g[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc * cand * i * (1.0 - i),
                dc * cs[:, t] * f * (1.0 - f),
                dc * i * (1.0 - cand * cand),
                dh * tc * o * (1.0 - o),
            ], axis=1)
            da_all[:, t] = da
            dh_next = da @ w_hh.data
            dc_next = dc * f
        flat_da = da_all.reshape(-1, four_h)
        if x.requires_grad:
            x._accum((da_all @ w_ih.data).reshape(x.shape))
        if w_ih.requires_grad:
            w_ih._accum(flat_da.T @ xs.reshape(-1, d_in))
        if w_hh.requires_grad:
            w_hh._accum(flat_da.T @ hs[:, :L].reshape(-1, h))
        if bias.requires_grad:
            bias._accum(flat_da.sum(axis=0))
        if h0 is not None and h0.requires_grad:
            h0._accum(_unbroadcast(dh_next.reshape(lead + (h,)), h0.shape))
        if c0 is not None and c0.requires_grad:
            c0._accum(_unbroadcast(dc_next.reshape(lead + (h,)), c0.shape))

    parents = [x, w_ih, w_hh, bias] + [s for s in (h0, c0) if s is not None]
    return _node(hs[:, 1:].reshape(lead + (L, h)), parents, backward)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, target, mask=None) -> Tensor:
    """Per-row ``-log softmax(logits)[target]`` over the last axis.

    Returns a tensor with the leading shape of ``logits``.  With ``mask`` the
    softmax only ranges over permitted positions and targets must be
    permitted.
    """
    target = np.asarray(target, dtype=np.int64)
    n = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: target shape {target.shape} != logits leading shape {logits.shape[:-1]}")
    if target.size and (target.min() < 0 or target.max() >= n):
        raise IndexError(f"cross_entropy: target index out of range [0, {n})")
    keep = np.ones(logits.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not np.take_along_axis(keep, target[..., None], axis=-1).all():
        raise ValueError("cross_entropy: target points at a masked position")
    z = np.where(keep, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(z), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    p = e / total
    log_p_target = np.take_along_axis(z, target[..., None], axis=-1)[..., 0] - np.log(total[..., 0])
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, target[..., None], 1.0, axis=-1)

    def backward(g):
        logits._accum(g[..., None] * (p - onehot))

    return _node(-log_p_target, (logits,), backward)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(fn: Callable[[], Tensor], inputs: Iterable[Tensor], epsilon: float = 1e-5,
               seed: int = 0, floor: float = 1e-6) -> float:
    """Worst relative error between backprop and central finite differences.

    ``fn`` recomputes the graph from the current values of ``inputs`` (which
    are perturbed in place).  Non-scalar outputs are contracted with a fixed
    random weighting so that every output element contributes.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    inputs = list(inputs)
    out = fn()
    weights = np.random.default_rng(seed).standard_normal(out.shape)

    def objective() -> float:
        with no_grad():
            return float((fn().data * weights).sum())

    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    fn().backward(weights)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        numeric = np.empty(t.shape)
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = objective()
            flat[idx] = orig - epsilon
            down = objective()
            flat[idx] = orig
            numeric.reshape(-1)[idx] = (up - down) / (2.0 * epsilon)
        if t.size:
            worst = max(worst, float(relative_error(analytic, numeric, floor).max()))
    return worst
