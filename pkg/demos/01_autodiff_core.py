"""Tour of the tensor core: tapes, adjoints, gradient checking, Adam.

Run:  python3 demos/01_autodiff_core.py
"""

import numpy as np

from objdialog import tensor as T
from objdialog.gradcheck import max_relative_error

print("== forward math ==")
a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
b = T.Tensor([[5.0], [6.0]])
print("matmul:", T.matmul(a, b).data.ravel(), "(expect 17, 39)")
print("softmax[1,2]:", T.softmax(T.Tensor([[1.0, 2.0]])).data.ravel())
masked = T.softmax(T.Tensor([[5.0, 1.0, 2.0]]), mask=np.array([False, True, True]))
print("masked softmax:", masked.data.ravel(), "(first entry exactly 0)")

print("\n== reverse mode ==")
x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
with T.Tape() as tape:
    loss = T.sum_all(T.mul(x, x))
    tape.backward(loss)
print("d(sum x^2)/dx:", x.grad, "(expect 2, 4)")

try:
    tape.backward(loss)
except T.TapeError as err:
    print("second backward is refused:", err)

print("\n== gradient check of a small composite ==")
w1 = T.Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
w2 = T.Tensor(np.random.default_rng(1).normal(size=(4, 2)), requires_grad=True, dtype=np.float64)
inp = T.Tensor(np.random.default_rng(2).normal(size=(2, 3)), dtype=np.float64)


def forward():
    h = T.tanh(T.matmul(inp, w1))
    return T.cross_entropy(T.matmul(h, w2), [0, 1])


err = max_relative_error(forward, {"w1": w1, "w2": w2}, step=1e-4)
print(f"max relative error vs central differences: {err:.2e} (threshold 1e-5)")

print("\n== Adam on a toy quadratic ==")
p = T.Tensor(np.array([[4.0]]), requires_grad=True)
opt = T.Adam({"p": p})
for step in range(200):
    with T.Tape() as tape:
        tape.backward(T.sum_all(T.mul(p, p)))
    opt.step(lr=0.1)
    opt.zero_grad()
print("argmin of p^2 after 200 steps:", float(p.data[0, 0]))
