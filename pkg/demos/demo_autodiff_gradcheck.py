"""Tour of the tensor engine: ops, gradient checking, and the ADAM update.

Builds a toy conv-BN-ReLU stack, verifies every gradient against central
finite differences, then fits a small regression with ADAM.
"""

import numpy as np

from epsbench.autodiff import (
    AdamState, BatchNormState, Tensor, adam_step, batchnorm, conv2d,
    grad_check, param, relu,
)
from epsbench.losses import batch_loss

rng = np.random.default_rng(0)

print("== forward pass ==")
x = Tensor(rng.uniform(0, 1, (2, 3, 8, 8)))
kernel = param(rng.normal(0, 0.2, (4, 3, 3, 3)), name="k")
bias = param(np.zeros(4), name="b")
state = BatchNormState.for_channels(4)
gamma, beta = param(np.ones(4), name="g"), param(np.zeros(4), name="be")
out = relu(batchnorm(conv2d(x, kernel, bias), gamma, beta, state, training=True))
print(f"conv-BN-ReLU output shape: {out.shape}, range "
      f"[{out.data.min():.3f}, {out.data.max():.3f}]")

print("\n== gradient check against central differences ==")
target = rng.uniform(0, 1, (1, 2, 1, 3, 8, 8))[0]
weights = np.array([[1.0], [1.0]]).T


def loss_of_input(t):
    y = relu(batchnorm(conv2d(t, kernel, bias), gamma, beta,
                       BatchNormState.for_channels(4), training=True))
    tgt = rng2.uniform(0, 1, (1,) + y.shape)
    return batch_loss(y, tgt, np.ones((y.shape[0], 1)), kind="l2")


rng2 = np.random.default_rng(1)
err = grad_check(loss_of_input, Tensor(rng.uniform(0, 1, (1, 3, 6, 6))))
print(f"max relative gradient error: {err:.2e} (tolerance 1e-4)")

print("\n== ADAM on a tiny fitting problem ==")
w = param(rng.normal(0, 0.5, (1, 1, 3, 3)), name="w")
b = param(np.zeros(1), name="bias")
inp = Tensor(rng.standard_normal((4, 1, 8, 8)))
ideal = np.zeros((1, 1, 3, 3)); ideal[0, 0, 1, 1] = 0.5  # halve the input
want = 0.5 * inp.data
opt = AdamState(lr=2e-2)
for step in range(1, 1001):
    if step in (500, 800):
        opt.lr /= 10
    w.zero_grad(); b.zero_grad()
    pred = conv2d(inp, w, b)
    loss = batch_loss(pred, want[None], np.ones((4, 1)), kind="l2", normalize=True)
    loss.backward()
    adam_step([w, b], [w.grad, b.grad], opt)
    if step % 250 == 0:
        print(f"step {step}: loss {loss.item():.2e}  lr {opt.lr:g}")
print(f"fitted center tap: {w.data[0, 0, 1, 1]:.4f} (ideal 0.5)")
print(f"kernel distance to ideal: {np.abs(w.data - ideal).max():.2e}")
