"""Reverse-mode automatic differentiation over float64 numpy arrays.

The operator set is exactly what the transformer encoder, the task heads,
and the losses in this package need. Each op computes its forward value
eagerly and, when gradients are enabled and any input requires them,
records a backward rule on the active tape (a Wengert list). ``backward``
replays the tape in reverse, visiting each recorded op once and
accumulating gradients additively into ``Tensor.grad``.

Everything is 64-bit: the package verifies its own gradients against
central finite differences, which needs the precision. Forward/backward
over one tape is strictly serial; concurrent evaluation must use
read-only parameters.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DataError, DimensionError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Entry:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of ops; inputs always precede their consumers."""

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list[_Entry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def reset(self) -> None:
        self.entries.clear()


_ACTIVE_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _ACTIVE_TAPE


def reset_tape() -> None:
    """Drop all recorded ops. Call between optimizer steps."""
    _ACTIVE_TAPE.reset()


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _result(out_data, inputs, backward) -> Tensor:
    req = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req)
    if req:
        _ACTIVE_TAPE.entries.append(_Entry(out, inputs, backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad ancestor of a scalar loss.

    Gradients accumulate: calling backward twice without resetting grads
    doubles them. The tape must still contain the ops that produced the loss.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(_ACTIVE_TAPE.entries):
        g = grads.get(id(entry.out))
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                holders[key] = t
    for key, t in holders.items():
        if t.requires_grad:
            g = grads[key]
            # g is either freshly allocated by accumulation or a view produced
            # by a backward rule; nothing mutates grads in place, so aliasing
            # is safe and avoids a copy per ancestor.
            t.grad = g if t.grad is None else t.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(
            f"{opname}: cannot broadcast shapes {a.data.shape} and {b.data.shape}"
        ) from None


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    na, nb = a.requires_grad, b.requires_grad
    sa, sb = a.data.shape, b.data.shape

    def bwd(g):
        return (
            _unbroadcast(g, sa) if na else None,
            _unbroadcast(g, sb) if nb else None,
        )

    return _result(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    na, nb = a.requires_grad, b.requires_grad
    sa, sb = a.data.shape, b.data.shape

    def bwd(g):
        return (
            _unbroadcast(g, sa) if na else None,
            _unbroadcast(-g, sb) if nb else None,
        )

    return _result(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def bwd(g):
        return (
            _unbroadcast(g * bd, ad.shape) if na else None,
            _unbroadcast(g * ad, bd.shape) if nb else None,
        )

    return _result(ad * bd, (a, b), bwd)


def scale(x, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _result(x.data * s, (x,), bwd)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return _result(out, (x,), bwd)


def absolute(x) -> Tensor:
    """Elementwise |x|; the backward rule uses sign(x) (subgradient 0 at 0)."""
    x = as_tensor(x)
    sign = np.sign(x.data)

    def bwd(g):
        return (g * sign,)

    return _result(np.abs(x.data), (x,), bwd)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid_stable(x.data)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), bwd)


def _sigmoid_stable(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def gelu(x) -> Tensor:
    """GELU, tanh approximation (the same function the gradient checks probe)."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = x2 * _GELU_A
    t *= xd
    t += xd
    t *= _GELU_C
    np.tanh(t, out=t)
    out = 1.0 + t
    out *= xd
    out *= 0.5

    def bwd(g):
        du = x2 * (3.0 * _GELU_A)
        du += 1.0
        du *= _GELU_C
        d = t * t
        np.subtract(1.0, d, out=d)
        d *= du
        d *= xd
        d += 1.0 + t
        d *= 0.5
        d *= g
        return (d,)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.data.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {orig} as {tuple(shape)}") from None

    def bwd(g):
        return (g.reshape(orig),)

    return _result(out, (x,), bwd)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: empty input list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    needs = [t.requires_grad for t in tensors]

    def bwd(g):
        pieces = []
        for i, need in enumerate(needs):
            if not need:
                pieces.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _result(out, tuple(tensors), bwd)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    x = as_tensor(x)
    if not 0 <= start <= start + length <= x.data.shape[axis]:
        raise DimensionError(
            f"narrow: [{start}:{start + length}) outside axis {axis} of shape {x.data.shape}"
        )
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    xshape = x.data.shape

    def bwd(g):
        full = np.zeros(xshape)
        full[sl] = g
        return (full,)

    return _result(np.ascontiguousarray(x.data[sl]), (x,), bwd)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    orig = x.data.shape
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {orig} to {shape}") from None

    def bwd(g):
        return (_unbroadcast(g, orig),)

    return _result(np.ascontiguousarray(out), (x,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    xshape = x.data.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, xshape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, xshape),)

    return _result(out, (x,), bwd)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    xshape = x.data.shape
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod(
        [xshape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    inv = 1.0 / float(count)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g * inv, xshape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg * inv, xshape),)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul: operands must have rank >= 2, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree between {a.data.shape} and {b.data.shape}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(
            f"matmul: batch dimensions of {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def bwd(g):
        ga = gb = None
        if na:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if nb:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return (ga, gb)

    return _result(out, (a, b), bwd)


def linear(x, w, b) -> Tensor:
    """Fused affine map ``x @ w + b`` over the last axis.

    Equivalent to ``add(matmul(x, w), b)`` with one tape entry instead of two.
    ``x`` is [..., K], ``w`` is [K, D], ``b`` is [D].
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim < 2:
        raise DimensionError(f"linear: input must have rank >= 2, got {x.data.shape}")
    k, d = w.data.shape[-2], w.data.shape[-1]
    if w.data.ndim != 2 or x.data.shape[-1] != k or b.data.shape != (d,):
        raise DimensionError(
            f"linear: incompatible shapes x={x.data.shape}, w={w.data.shape}, b={b.data.shape}"
        )
    xd, wd = x.data, w.data
    nx, nw, nb = x.requires_grad, w.requires_grad, b.requires_grad

    def bwd(g):
        gx = gw = gb = None
        g2 = g.reshape(-1, d)
        if nx:
            gx = np.matmul(g, wd.T)
        if nw:
            gw = np.matmul(xd.reshape(-1, k).T, g2)
        if nb:
            gb = g2.sum(axis=0)
        return (gx, gw, gb)

    out = np.matmul(xd, wd)
    out += b.data
    return _result(out, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# normalization and activations over rows
# ---------------------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``; rows sum to one."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (x,), bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError(f"layer_norm: eps must be positive, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma/beta must have shape ({d},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    nx, ng, nb = x.requires_grad, gamma.requires_grad, beta.requires_grad
    lead = tuple(range(x.data.ndim - 1))

    def bwd(g):
        gx = gg = gb = None
        if ng:
            gg = (g * xhat).sum(axis=lead)
        if nb:
            gb = g.sum(axis=lead)
        if nx:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return (gx, gg, gb)

    return _result(out, (x, gamma, beta), bwd)


def mha_core(q, k, v, num_heads: int) -> Tensor:
    """Fused multi-head attention core over projected [B, T, D] inputs.

    Splits heads, forms softmax(q @ k^T / sqrt(dh)) per head, applies it to v,
    and merges heads back to [B, T, D]. One tape entry; the saved attention
    maps are reused by the backward rule. Attention rows sum to one.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape:
        raise DimensionError(
            f"mha_core: q/k/v shapes differ: {q.data.shape}, {k.data.shape}, {v.data.shape}"
        )
    b, t, d = q.data.shape
    if d % num_heads != 0:
        raise DimensionError(f"mha_core: width {d} not divisible by {num_heads} heads")
    dh = d // num_heads
    inv = 1.0 / np.sqrt(dh)

    def split(x):  # [B, T, D] -> [B, H, T, dh]
        return np.ascontiguousarray(x.reshape(b, t, num_heads, dh).transpose(0, 2, 1, 3))

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = np.matmul(qh, kh.swapaxes(-1, -2))
    scores *= inv
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    probs = scores  # [B, H, T, T], rows sum to 1
    ctx = np.matmul(probs, vh)
    out = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(b, t, d)
    nq, nk, nv = q.requires_grad, k.requires_grad, v.requires_grad

    def merge(xh):  # [B, H, T, dh] -> [B, T, D]
        return np.ascontiguousarray(xh.transpose(0, 2, 1, 3)).reshape(b, t, d)

    def bwd(g):
        gh = np.ascontiguousarray(g.reshape(b, t, num_heads, dh).transpose(0, 2, 1, 3))
        gq = gk = gv = None
        if nv:
            gv = merge(np.matmul(probs.swapaxes(-1, -2), gh))
        if nq or nk:
            dprobs = np.matmul(gh, vh.swapaxes(-1, -2))
            dot = np.einsum("bhij,bhij->bhi", dprobs, probs)[..., None]
            dprobs -= dot
            dprobs *= probs  # now dscores
            if nq:
                gq = merge(np.matmul(dprobs, kh) * inv)
            if nk:
                gk = merge(np.matmul(dprobs.swapaxes(-1, -2), qh) * inv)
        return (gq, gk, gv)

    return _result(out, (q, k, v), bwd)


def normalize_rows(x) -> Tensor:
    """L2-normalize the last axis. Rows must be nonzero."""
    x = as_tensor(x)
    norm = np.sqrt((x.data**2).sum(axis=-1, keepdims=True))
    out = x.data / norm

    def bwd(g):
        dot = (x.data * g).sum(axis=-1, keepdims=True)
        return (g / norm - x.data * (dot / norm**3),)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# indexing
# ---------------------------------------------------------------------------


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of ``table`` ([V, D]) by an integer id array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    v = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise DataError(f"embedding_lookup: id out of range for table with {v} rows")
    tshape = table.data.shape

    def bwd(g):
        gt = np.zeros(tshape)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, tshape[-1]))
        return (gt,)

    return _result(table.data[ids], (table,), bwd)


def take_rows(x, indices) -> Tensor:
    """Select rows of a [M, ...] tensor by index; duplicates accumulate on backward."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    m = x.data.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= m):
        raise DataError(f"take_rows: index out of range for axis of size {m}")
    xshape = x.data.shape

    def bwd(g):
        gx = np.zeros(xshape)
        np.add.at(gx, indices, g)
        return (gx,)

    return _result(x.data[indices], (x,), bwd)


def select_token(x, position) -> Tensor:
    """Pick one token per row from a [B, N, D] tensor.

    ``position`` is a single index (same token for the whole batch, e.g. the
    cls token) or an array of per-row indices (e.g. each row's eos position).
    """
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"select_token: expected [B, N, D], got {x.data.shape}")
    b, n, _ = x.data.shape
    xshape = x.data.shape
    if np.isscalar(position) or isinstance(position, (int, np.integer)):
        pos = int(position)
        if not 0 <= pos < n:
            raise DataError(f"select_token: position {pos} outside [0, {n})")

        def bwd(g):
            gx = np.zeros(xshape)
            gx[:, pos, :] = g
            return (gx,)

        return _result(np.ascontiguousarray(x.data[:, pos, :]), (x,), bwd)

    pos = np.asarray(position, dtype=np.intp)
    if pos.shape != (b,):
        raise DimensionError(f"select_token: positions shape {pos.shape} != ({b},)")
    if pos.size and (pos.min() < 0 or pos.max() >= n):
        raise DataError(f"select_token: position outside [0, {n})")
    rows = np.arange(b)

    def bwd(g):
        gx = np.zeros(xshape)
        gx[rows, pos, :] = g
        return (gx,)

    return _result(np.ascontiguousarray(x.data[rows, pos, :]), (x,), bwd)


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x spatial upsample of a [B, H, W, C] tensor."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"upsample2x: expected [B, H, W, C], got {x.data.shape}")
    b, h, w, c = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g):
        return (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy(logits, targets) -> Tensor:
    """Mean cross-entropy of [M, C] logits against integer class targets."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy: expected [M, C] logits, got {logits.data.shape}")
    targets = np.asarray(targets, dtype=np.intp)
    m, c = logits.data.shape
    if targets.shape != (m,):
        raise DimensionError(f"cross_entropy: targets shape {targets.shape} != ({m},)")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise DataError(f"cross_entropy: label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(m), targets]
    out = losses.mean()

    def bwd(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(m), targets] -= 1.0
        return (p * (float(g) / m),)

    return _result(out, (logits,), bwd)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy of logits against float targets in [0, 1]."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.data.shape:
        raise DimensionError(
            f"bce_with_logits: targets shape {y.shape} != logits shape {logits.data.shape}"
        )
    z = logits.data
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)
    out = losses.mean() if z.size else np.float64(0.0)

    def bwd(g):
        return ((_sigmoid_stable(z) - y) * (float(g) / n),)

    return _result(out, (logits,), bwd)
