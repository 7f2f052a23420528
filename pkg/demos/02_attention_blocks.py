"""What the building blocks do: masked multi-head attention, residual
stacks, and the per-object GRU.

Run:  python3 demos/02_attention_blocks.py
"""

import numpy as np

from objdialog import nn
from objdialog import tensor as T

rng = np.random.default_rng(0)
d = 8

print("== attention reads out values whose keys match the query ==")
attn = nn.Attention(rng, d=d, heads=4)
keys = T.Tensor(rng.normal(size=(5, d)).astype(np.float32))
values = T.Tensor(rng.normal(size=(5, d)).astype(np.float32))
query = T.Tensor(rng.normal(size=(1, d)).astype(np.float32))
print("output shape:", attn(query, keys, values).data.shape)

print("\n== masking removes keys entirely ==")
mask = np.array([True, False, True, True, False])
out1 = attn(query, keys, values, mask=mask)
poisoned = values.data.copy()
poisoned[1] = 1e6                     # huge value on a masked row
out2 = attn(query, keys, T.Tensor(poisoned), mask=mask)
print("max |difference| after poisoning masked rows:", np.abs(out1.data - out2.data).max())
allmasked = attn(query, keys, values, mask=np.zeros(5, dtype=bool))
print("fully masked output:", allmasked.data.ravel(), "(zero vector)")

print("\n== residual stacks keep the query when there is nothing to read ==")
stack = nn.AttentionStack(rng, d=d, heads=4, layers=3)
empty = T.Tensor(np.zeros((0, d), dtype=np.float32))
echo = stack(query, empty, empty)
print("stack over an empty key set returns the query:", np.array_equal(echo.data, query.data))

print("\n== the GRU halves its state under zero weights ==")
cell = nn.GRUCell(rng, d_in=3 * d, d=d)
for p in cell.params("c").values():
    p.data[:] = 0.0
h = T.Tensor(np.full((2, d), 2.0, dtype=np.float32))
u = T.Tensor(rng.normal(size=(2, 3 * d)).astype(np.float32))
print("h after zero-weight step:", cell(h, u).data[0, :4], "(expect 1.0s)")

print("\n== turn position codes are fixed and distinct ==")
codes = np.vstack([nn.sinusoid_encoding(j, d) for j in range(4)])
print(np.round(codes[:, :4], 3))
