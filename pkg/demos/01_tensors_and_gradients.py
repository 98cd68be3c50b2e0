"""Tensors, kernels, and reverse-mode gradients.

Walks through the numerical core: stable softmax, layer norm, exact GELU,
and a gradient computed by replaying the tape in reverse, checked against
central finite differences.
"""

import numpy as np

from vitforge import Tape, Tensor, backward, gelu, layer_norm, matmul, softmax, use_dtype
from vitforge.tensor import mul, tensor_sum

rng = np.random.default_rng(0)

print("== kernels ==")
a = Tensor([[1.0, 2.0], [3.0, 4.0]])
b = Tensor([[5.0, 6.0], [7.0, 8.0]])
print("matmul:\n", matmul(a, b).data)

x = Tensor([[2.0, 0.0, -1.0]])
s = softmax(x, axis=1)
print("softmax:", s.data, " row sum:", s.data.sum())

ln = layer_norm(Tensor([[1.0, -1.0, 3.0, 5.0]]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
print("layer_norm: mean ~ %.2e, var ~ %.4f" % (ln.data.mean(), ln.data.var()))

print("gelu(1) =", gelu(Tensor(1.0)).item(), " (x times the normal CDF at 1)")

print("\n== reverse-mode gradients ==")
with use_dtype(np.float64):
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    v = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    data = Tensor(rng.normal(size=(5, 4)))
    targets = Tensor(rng.normal(size=(5, 2)))

    def loss_fn():
        h = gelu(matmul(data, w))
        return tensor_sum(mul(softmax(matmul(h, v), axis=1), targets))

    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss, params=[w, v])
    print("loss:", loss.item())

    # spot-check one component against central finite differences
    h = 1e-6
    orig = w.data[0, 0]
    w.data[0, 0] = orig + h
    up = loss_fn().item()
    w.data[0, 0] = orig - h
    down = loss_fn().item()
    w.data[0, 0] = orig
    fd = (up - down) / (2 * h)
    print(f"dloss/dw[0,0]: tape={w.grad[0, 0]:.10f}  finite-diff={fd:.10f}")
