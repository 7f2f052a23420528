"""Dense-array math with reverse-mode automatic differentiation.

Small row-major tensors on numpy, float32 by default (build everything in
float64 instead when running gradient checks). Operations executed while a
Tape is active append an adjoint closure to it; Tape.backward replays the
record once, in reverse execution order, which is a valid topological order
by construction. Tapes are single-use: a second backward raises.

Outside a Tape nothing is recorded, so evaluation-only code pays no
bookkeeping cost. Broadcasting in binary ops is limited to row/column
expansion of rank-1/rank-2 operands.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class OutOfVocabularyError(ValueError):
    """A token id falls outside the embedding/logit table."""


class DegenerateInputError(ValueError):
    """An input is empty along a dimension the operation must reduce."""


class TapeError(RuntimeError):
    """Tape misuse: nested tapes, reused tapes, or backward without one."""


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def active_tape():
    """The Tape currently recording on this thread, or None."""
    stack = getattr(_LOCAL, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations for one forward pass.

    Usage::

        with Tape() as tape:
            loss = model_loss(...)
            tape.backward(loss)

    Each recorded entry is (output tensor, adjoint closure). backward seeds
    the scalar loss with gradient 1 and replays entries in reverse; every
    entry is visited exactly once. The tape is rebuilt for every forward
    pass; there is no graph reuse.
    """

    def __init__(self):
        self._ops: list = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        if stack:
            raise TapeError("a tape is already active on this thread")
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().remove(self)
        return False

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into .grad of every recorded tensor."""
        if self._consumed:
            raise TapeError("backward was already run on this tape; rebuild the graph")
        if loss.data.size != 1:
            raise TapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, adjoint in reversed(self._ops):
            g = out.grad
            if g is not None:
                adjoint(g)

    def clear(self) -> None:
        """Drop all recorded entries, freeing intermediate buffers."""
        self._ops.clear()


class Tensor:
    """A dense numpy array plus an optional gradient buffer.

    ``requires_grad`` marks leaves (parameters) whose gradients callers will
    read; outputs of recorded ops inherit it so the adjoint sweep can flow
    through intermediates. ``grad`` is allocated lazily on first
    accumulation and always matches ``data`` in shape and dtype.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, np.ndarray):
            if dtype is not None and data.dtype != dtype:
                data = data.astype(dtype)
            self.data = data
        else:
            arr = np.asarray(data, dtype=dtype)
            if dtype is None and not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float32)
            self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, dtype=np.float32) -> Tensor:
    """A leaf tensor whose gradient the optimizer will consume."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _record(out: Tensor, adjoint, *inputs: Tensor) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._ops.append((out, adjoint))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# core operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd)

    def adjoint(g, a=a, b=b, ad=ad, bd=bd):
        if a.requires_grad:
            _accumulate(a, g @ bd.T)
        if b.requires_grad:
            _accumulate(b, ad.T @ g)

    return _record(out, adjoint, a, b)


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T.copy())

    def adjoint(g, x=x):
        _accumulate(x, g.T)

    return _record(out, adjoint, x)


def _binary(name, fwd, d_a, d_b):
    def op(a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        try:
            np.broadcast_shapes(ad.shape, bd.shape)
        except ValueError:
            raise ShapeMismatchError(f"{name}: incompatible shapes {ad.shape} and {bd.shape}") from None
        out = Tensor(fwd(ad, bd))

        def adjoint(g, a=a, b=b, ad=ad, bd=bd):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(d_a(g, ad, bd), ad.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(d_b(g, ad, bd), bd.shape))

        return _record(out, adjoint, a, b)

    op.__name__ = name
    return op


add = _binary("add", lambda a, b: a + b, lambda g, a, b: g, lambda g, a, b: g)
sub = _binary("sub", lambda a, b: a - b, lambda g, a, b: g, lambda g, a, b: -g)
mul = _binary("mul", lambda a, b: a * b, lambda g, a, b: g * b, lambda g, a, b: g * a)


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)

    def adjoint(g, x=x, c=c):
        _accumulate(x, g * c)

    return _record(out, adjoint, x)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def adjoint(g, x=x, y=y):
        _accumulate(x, g * (1.0 - y * y))

    return _record(out, adjoint, x)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)

    def adjoint(g, x=x, y=y):
        _accumulate(x, g * y * (1.0 - y))

    return _record(out, adjoint, x)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def adjoint(g, x=x):
        _accumulate(x, g * (x.data > 0))

    return _record(out, adjoint, x)


def concat(xs: list, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (0 or the last). Leading dims must agree."""
    if not xs:
        raise DegenerateInputError("concat of an empty list")
    if len(xs) == 1:
        x = xs[0]
        out = Tensor(x.data.copy())

        def single(g, x=x):
            _accumulate(x, g)

        return _record(out, single, x)
    datas = [x.data for x in xs]
    ref = datas[0].shape
    ax = axis if axis >= 0 else datas[0].ndim + axis
    for d in datas[1:]:
        if len(d.shape) != len(ref) or any(d.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeMismatchError(f"concat: shapes {[d.shape for d in datas]} disagree off axis {axis}")
    out = Tensor(np.concatenate(datas, axis=ax))
    sizes = [d.shape[ax] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def adjoint(g, xs=tuple(xs), offsets=offsets, ax=ax):
        for i, x in enumerate(xs):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(offsets[i], offsets[i + 1])
                _accumulate(x, g[tuple(sl)])

    return _record(out, adjoint, *xs)


def concat_last(xs: list) -> Tensor:
    return concat(xs, axis=-1)


def mean_axis(x: Tensor, axis: int = 0, keepdims: bool = True) -> Tensor:
    n = x.data.shape[axis]
    if n == 0:
        raise DegenerateInputError(f"mean over empty axis {axis} of shape {x.data.shape}")
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))

    def adjoint(g, x=x, axis=axis, n=n, keepdims=keepdims):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g / n, x.data.shape))

    return _record(out, adjoint, x)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))

    def adjoint(g, x=x):
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _record(out, adjoint, x)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[start:stop].copy())

    def adjoint(g, x=x, start=start, stop=stop):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        _accumulate(x, full)

    return _record(out, adjoint, x)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[:, start:stop].copy())

    def adjoint(g, x=x, start=start, stop=stop):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    return _record(out, adjoint, x)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; the adjoint scatter-adds back into them."""
    idx = np.asarray(ids, dtype=np.intp)
    vocab = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        bad = int(idx[(idx < 0) | (idx >= vocab)][0])
        raise OutOfVocabularyError(f"id {bad} outside table of {vocab} rows")
    out = Tensor(table.data[idx]) if idx.size else Tensor(
        np.zeros((0, table.data.shape[1]), dtype=table.data.dtype))

    def adjoint(g, table=table, idx=idx):
        if table.requires_grad and idx.size:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            _accumulate(table, full)

    return _record(out, adjoint, table)


def softmax(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``.

    ``mask`` is a boolean array broadcastable to x.shape; True entries stay,
    masked entries are exactly zero in the output. A fully masked row comes
    out all-zero rather than NaN, so attention over an empty or absent set
    degrades to a zero vector.
    """
    d = x.data
    if mask is not None:
        maskb = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        z = np.where(maskb, d, -np.inf)
    else:
        z = d
    if d.shape[axis] == 0:
        return _record(Tensor(d.copy()), lambda g, x=x: _accumulate(x, g), x)
    mx = z.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(z - mx)
    s = e.sum(axis=axis, keepdims=True)
    y = e / np.where(s == 0.0, 1.0, s)
    out = Tensor(y)

    def adjoint(g, x=x, y=y, axis=axis):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - inner))

    return _record(out, adjoint, x)


def attend_heads(q_proj: Tensor, k_proj: Tensor, v_proj: Tensor, heads: int, mask=None) -> Tensor:
    """Fused multi-head scaled-dot-product attention core.

    Inputs are already projected: q_proj [S x d], k_proj/v_proj [M x d] with
    d divisible by ``heads``. Scores are scaled by 1/sqrt(d/heads) per head;
    head outputs are re-concatenated to [S x d] (callers add the merge
    projection). ``mask`` is [M] or [S x M] booleans over keys; fully masked
    rows (and M == 0) yield zero output rows.
    """
    qd, kd, vd = q_proj.data, k_proj.data, v_proj.data
    S, d = qd.shape
    M = kd.shape[0]
    if d % heads != 0:
        raise ShapeMismatchError(f"attend_heads: width {d} not divisible by {heads} heads")
    if kd.shape != vd.shape or kd.shape[1] != d:
        raise ShapeMismatchError(f"attend_heads: key/value shapes {kd.shape}/{vd.shape} vs query {qd.shape}")
    if M == 0:
        return Tensor(np.zeros((S, d), dtype=qd.dtype))
    dh = d // heads
    scale_c = 1.0 / np.sqrt(dh)
    qh = qd.reshape(S, heads, dh)
    kh = kd.reshape(M, heads, dh)
    vh = vd.reshape(M, heads, dh)
    scores = np.einsum("shd,mhd->hsm", qh, kh) * scale_c
    if mask is not None:
        maskb = np.broadcast_to(np.asarray(mask, dtype=bool), (S, M))
        scores = np.where(maskb[None, :, :], scores, -np.inf)
    mx = scores.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(scores - mx)
    ssum = e.sum(axis=-1, keepdims=True)
    w = e / np.where(ssum == 0.0, 1.0, ssum)
    out = Tensor(np.einsum("hsm,mhd->shd", w, vh).reshape(S, d))

    def adjoint(g, q_proj=q_proj, k_proj=k_proj, v_proj=v_proj, qh=qh, kh=kh, vh=vh, w=w,
                S=S, M=M, heads=heads, dh=dh, scale_c=scale_c):
        gh = g.reshape(S, heads, dh)
        if v_proj.requires_grad:
            gv = np.einsum("hsm,shd->mhd", w, gh)
            _accumulate(v_proj, gv.reshape(M, heads * dh))
        gw = np.einsum("shd,mhd->hsm", gh, vh)
        t = w * gw
        gscores = (t - w * t.sum(axis=-1, keepdims=True)) * scale_c
        if q_proj.requires_grad:
            gq = np.einsum("hsm,mhd->shd", gscores, kh)
            _accumulate(q_proj, gq.reshape(S, heads * dh))
        if k_proj.requires_grad:
            gk = np.einsum("hsm,shd->mhd", gscores, qh)
            _accumulate(k_proj, gk.reshape(M, heads * dh))

    return _record(out, adjoint, q_proj, k_proj, v_proj)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over positions of -log softmax(logits)[target]."""
    idx = np.asarray(targets, dtype=np.intp)
    L, V = logits.data.shape
    if idx.shape != (L,):
        raise ShapeMismatchError(f"cross_entropy: {L} logit rows vs {idx.shape} targets")
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        bad = int(idx[(idx < 0) | (idx >= V)][0])
        raise OutOfVocabularyError(f"target id {bad} outside vocabulary of {V}")
    z = logits.data
    mx = z.max(axis=-1, keepdims=True)
    e = np.exp(z - mx)
    lse = np.log(e.sum(axis=-1, keepdims=True)) + mx
    nll = lse[:, 0] - z[np.arange(L), idx]
    out = Tensor(np.asarray(nll.mean(), dtype=z.dtype))

    def adjoint(g, logits=logits, e=e, idx=idx, L=L):
        p = e / e.sum(axis=-1, keepdims=True)
        p[np.arange(L), idx] -= 1.0
        _accumulate(logits, p * (g / L))

    return _record(out, adjoint, logits)


def nll_probs(probs: Tensor, targets) -> Tensor:
    """Mean over positions of -log probs[i, target_i], for mixed distributions."""
    idx = np.asarray(targets, dtype=np.intp)
    L, V = probs.data.shape
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        bad = int(idx[(idx < 0) | (idx >= V)][0])
        raise OutOfVocabularyError(f"target id {bad} outside vocabulary of {V}")
    picked = np.maximum(probs.data[np.arange(L), idx], 1e-30)
    out = Tensor(np.asarray(-np.log(picked).mean(), dtype=probs.data.dtype))

    def adjoint(g, probs=probs, idx=idx, picked=picked, L=L):
        full = np.zeros_like(probs.data)
        full[np.arange(L), idx] = -g / (L * picked)
        _accumulate(probs, full)

    return _record(out, adjoint, probs)


def scatter_probs(weights: Tensor, ids, vocab_size: int) -> Tensor:
    """Accumulate per-position weights [L x S] onto vocabulary ids of length S.

    Repeated ids pool their mass, which is what a copy distribution over a
    token sequence needs.
    """
    idx = np.asarray(ids, dtype=np.intp)
    L, S = weights.data.shape
    if idx.shape != (S,):
        raise ShapeMismatchError(f"scatter_probs: {S} weight columns vs ids {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= vocab_size):
        bad = int(idx[(idx < 0) | (idx >= vocab_size)][0])
        raise OutOfVocabularyError(f"id {bad} outside vocabulary of {vocab_size}")
    outd = np.zeros((L, vocab_size), dtype=weights.data.dtype)
    np.add.at(outd, (slice(None), idx), weights.data)
    out = Tensor(outd)

    def adjoint(g, weights=weights, idx=idx):
        _accumulate(weights, g[:, idx])

    return _record(out, adjoint, weights)


def smul(s: Tensor, x: Tensor) -> Tensor:
    """Multiply by a learnable scalar tensor (shape [1] or [1 x 1])."""
    if s.data.size != 1:
        raise ShapeMismatchError(f"smul: scalar factor has shape {s.data.shape}")
    out = Tensor(x.data * s.data.reshape(-1)[0])

    def adjoint(g, s=s, x=x):
        if x.requires_grad:
            _accumulate(x, g * s.data.reshape(-1)[0])
        if s.requires_grad:
            _accumulate(s, np.asarray((g * x.data).sum(), dtype=s.data.dtype).reshape(s.data.shape))

    return _record(out, adjoint, s, x)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction over a named parameter dict.

    First and second moments live in float matching each parameter; the
    (m, v, step) triple round-trips through checkpoints via state_dict.
    """

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeMismatchError(f"adam: grad {g.shape} vs param {p.data.shape} for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for k in self.params:
            self.m[k] = np.array(state["m"][k], dtype=self.params[k].data.dtype)
            self.v[k] = np.array(state["v"][k], dtype=self.params[k].data.dtype)


def clip_global_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm
