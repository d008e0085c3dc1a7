"""
The autodiff core in five minutes
=================================

Tensors wrap numpy arrays; ops recorded on a Tape get replayed backwards.
"""

import numpy as np

from crmn.tensor import (Tape, Tensor, count_ops, matmul, mul, relu,
                         sigmoid, sum_all)

# A tensor is data plus an optional gradient slot.
w = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
x = Tensor(np.array([[1.0, 3.0]]))
print("w:", w.shape, w.dtype, "x:", x.shape)

# Record a computation on a tape, then walk it backwards.
with Tape() as tape:
    h = relu(matmul(x, w))
    loss = sum_all(mul(h, h))  # sum of squares
    tape.backward(loss)
print("loss =", loss.item())
print("dL/dw =\n", w.grad)

# Central differences agree; this is what the gradcheck module automates.
eps = 1e-6
probe = w.data.copy()
w.data[0, 0] += eps
with Tape():
    f_plus = sum_all(mul(relu(matmul(x, w)), relu(matmul(x, w)))).item()
w.data[0, 0] = probe[0, 0] - eps
with Tape():
    f_minus = sum_all(mul(relu(matmul(x, w)), relu(matmul(x, w)))).item()
w.data[0, 0] = probe[0, 0]
print("numeric dL/dw[0,0] =", (f_plus - f_minus) / (2 * eps))

# Gradients accumulate until cleared, so one tensor can serve many losses.
w.zero_grad()

# The same recorder can count work instead: one multiply, one add, and one
# activation-function application each count as a single operation.
a = Tensor(np.ones((8, 16), dtype=np.float32))
b = Tensor(np.ones((16, 4), dtype=np.float32))
with count_ops() as ops:
    sigmoid(matmul(a, b))
print("matmul+sigmoid ops:", ops.mults, "mults,", ops.adds, "adds,",
      ops.activations, "activations =>", ops.total, "total")
