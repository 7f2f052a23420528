"""Parametric building blocks: linear maps, multi-head attention, GRU cell.

Blocks are immutable after construction as far as forward/backward is
concerned; all state changes go through the optimizer touching parameter
data directly. Weights are Xavier-uniform from a caller-provided seeded
generator, biases start at zero.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


def xavier_uniform(rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float32) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (d_in + d_out)))
    return rng.uniform(-limit, limit, size=(d_in, d_out)).astype(dtype)


class Linear:
    """Affine map on the last dimension: x[.., d_in] -> x[.., d_out]."""

    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, dtype=np.float32):
        self.d_in, self.d_out = d_in, d_out
        self.w = T.param(xavier_uniform(rng, d_in, d_out, dtype), dtype=dtype)
        self.b = T.param(np.zeros((1, d_out)), dtype=dtype) if bias else None

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if x.data.shape[-1] != self.d_in:
            raise T.ShapeMismatchError(f"linear: input {x.data.shape} vs weight {self.w.data.shape}")
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y

    def params(self, prefix: str) -> dict:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class Attention:
    """Multi-head scaled dot-product attention over a key/value set.

    Query rows are independent: q may be [S x d] and each row attends the
    same M keys. Per-head width is d/heads and scores are scaled by its
    inverse square root; head outputs are concatenated and merged back to d
    by a square projection. A boolean mask ([M] or [S x M], True = usable)
    hides keys entirely: masked positions get exactly zero weight, and a row
    with no usable key (or M == 0) yields a zero output vector.
    """

    def __init__(self, rng, d: int, heads: int = 4, dtype=np.float32):
        if d % heads != 0:
            raise T.ShapeMismatchError(f"attention width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.wq = T.param(xavier_uniform(rng, d, d, dtype), dtype=dtype)
        self.wk = T.param(xavier_uniform(rng, d, d, dtype), dtype=dtype)
        self.wv = T.param(xavier_uniform(rng, d, d, dtype), dtype=dtype)
        self.wo = T.param(xavier_uniform(rng, d, d, dtype), dtype=dtype)

    def __call__(self, q: T.Tensor, keys: T.Tensor, values: T.Tensor, mask=None) -> T.Tensor:
        if keys.data.shape[0] != values.data.shape[0]:
            raise T.ShapeMismatchError(
                f"attention: {keys.data.shape[0]} keys vs {values.data.shape[0]} values")
        if keys.data.shape[0] == 0:
            return T.Tensor(np.zeros((q.data.shape[0], self.d), dtype=q.data.dtype))
        qp = T.matmul(q, self.wq)
        kp = T.matmul(keys, self.wk)
        vp = T.matmul(values, self.wv)
        merged = T.attend_heads(qp, kp, vp, self.heads, mask=mask)
        return T.matmul(merged, self.wo)

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo}


class AttentionStack:
    """A stack of identical attention layers with residual connections.

    q(0) = q, q(l) = attend_l(q(l-1), K, V) + q(l-1). Residuals make a fully
    masked key set an identity map and keep depth-0 testable; they can be
    switched off for single-layer equivalence tests.
    """

    def __init__(self, rng, d: int, heads: int = 4, layers: int = 3, residual: bool = True,
                 dtype=np.float32):
        self.layers = [Attention(rng, d, heads, dtype=dtype) for _ in range(layers)]
        self.residual = residual

    def __call__(self, q: T.Tensor, keys: T.Tensor, values: T.Tensor, mask=None) -> T.Tensor:
        for layer in self.layers:
            a = layer(q, keys, values, mask=mask)
            q = T.add(q, a) if self.residual else a
        return q

    def params(self, prefix: str) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{i}"))
        return out


class GRUCell:
    """Standard gated recurrent unit applied row-wise.

    h and u may hold one row per independent sequence; parameters are shared
    across rows. Update rule: z = sig(...), r = sig(...), hh = tanh(...),
    h_new = (1 - z) * h + z * hh.
    """

    def __init__(self, rng, d_in: int, d: int, dtype=np.float32):
        self.d_in, self.d = d_in, d
        def w(a, b):
            return T.param(xavier_uniform(rng, a, b, dtype), dtype=dtype)
        self.wz, self.uz = w(d_in, d), w(d, d)
        self.wr, self.ur = w(d_in, d), w(d, d)
        self.wh, self.uh = w(d_in, d), w(d, d)
        self.bz = T.param(np.zeros((1, d)), dtype=dtype)
        self.br = T.param(np.zeros((1, d)), dtype=dtype)
        self.bh = T.param(np.zeros((1, d)), dtype=dtype)

    def __call__(self, h: T.Tensor, u: T.Tensor) -> T.Tensor:
        if u.data.shape[-1] != self.d_in or h.data.shape[-1] != self.d:
            raise T.ShapeMismatchError(
                f"gru: input {u.data.shape}/state {h.data.shape} vs cell ({self.d_in}, {self.d})")
        z = T.sigmoid(T.add(T.add(T.matmul(u, self.wz), T.matmul(h, self.uz)), self.bz))
        r = T.sigmoid(T.add(T.add(T.matmul(u, self.wr), T.matmul(h, self.ur)), self.br))
        hh = T.tanh(T.add(T.add(T.matmul(u, self.wh), T.matmul(T.mul(r, h), self.uh)), self.bh))
        # (1 - z) * h + z * hh, written as h + z * (hh - h)
        return T.add(h, T.mul(z, T.sub(hh, h)))

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.wz": self.wz, f"{prefix}.uz": self.uz, f"{prefix}.bz": self.bz,
                f"{prefix}.wr": self.wr, f"{prefix}.ur": self.ur, f"{prefix}.br": self.br,
                f"{prefix}.wh": self.wh, f"{prefix}.uh": self.uh, f"{prefix}.bh": self.bh}


def sinusoid_encoding(index: int, d: int, base: float = 10000.0, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position code of one integer index, shape [1 x d]."""
    out = np.zeros((1, d), dtype=np.float64)
    half = d // 2
    freqs = np.exp(-np.log(base) * (np.arange(half) / max(half, 1)))
    out[0, 0:2 * half:2] = np.sin(index * freqs)
    out[0, 1:2 * half:2] = np.cos(index * freqs)
    return out.astype(dtype)
