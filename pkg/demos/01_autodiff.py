"""
Reverse-mode autodiff on numpy arrays
=====================================

Operations on Tensors are recorded on a Tape while one is active; calling
backward walks the tape in reverse and fills .grad on every leaf.
"""
import numpy as np

from plugs import tensor as T
from plugs.gradcheck import gradient_check
from plugs.tensor import Tape, Tensor

# a scalar: d(x^2)/dx at 3 is 6
x = Tensor(3.0, requires_grad=True, dtype=np.float64)
with Tape() as tape:
    y = x * x
tape.backward(y)
print("grad of x^2 at 3:", x.grad)

# softmax stays finite on large logits
print("softmax([1000, 0]):", T.softmax(Tensor([1000.0, 0.0], dtype=np.float64)).data)

# a two-layer classifier with layer norm, checked against central differences
rng = np.random.default_rng(0)
inputs = Tensor(rng.standard_normal((8, 5)), dtype=np.float64)
w1 = Tensor(rng.standard_normal((5, 16)) * 0.4, dtype=np.float64)
w2 = Tensor(rng.standard_normal((16, 3)) * 0.4, dtype=np.float64)
gain, bias = Tensor(np.ones(16), dtype=np.float64), Tensor(np.zeros(16), dtype=np.float64)
labels = rng.integers(0, 3, size=8)


def loss():
    h = T.relu(T.layer_norm(T.matmul(inputs, w1), gain, bias))
    return T.cross_entropy(T.matmul(h, w2), labels)


rep = gradient_check(loss, {"w1": w1, "w2": w2, "gain": gain, "bias": bias})
print(f"max relative error {rep.max_rel_error:.2e} over {rep.n_checked} coordinates "
      f"({rep.n_shrunk} re-probed near a ReLU kink)")
