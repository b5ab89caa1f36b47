"""Tour of the reverse-mode autodiff core.

Builds a few expressions on the tape, pulls gradients out with
``backward``, cross-checks them against central finite differences, and
finishes by fitting a tiny least-squares problem with Adam.
"""

import numpy as np

from pineq.autodiff import Adam, Tensor, grad_check, matmul, softmax

# --- expressions record onto a tape; backward() walks it in reverse.
# Leaves opt in to gradients, exactly like model parameters do. --------
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
y = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
z = ((x * y).relu() + (x @ y)).sum()
z.backward()
print("z =", z.item())
print("dz/dx =\n", x.grad)
print("dz/dy =\n", y.grad)

# --- grad_check compares every backward gradient against central
# finite differences and returns the worst relative error ----------------
err = grad_check(lambda a, b: ((a * b).exp() + softmax(a, axis=-1)).sum(),
                 [Tensor(np.random.default_rng(0).normal(size=(3, 4))),
                  Tensor(np.random.default_rng(1).normal(size=(3, 4)))])
print(f"worst relative gradient error: {err:.2e}")

# --- Adam on a linear regression ----------------------------------------
rng = np.random.default_rng(7)
a_true = np.array([[2.0], [-3.0]])
inputs = rng.normal(size=(64, 2))
targets = inputs @ a_true + 0.01 * rng.normal(size=(64, 1))

weights = Tensor(np.zeros((2, 1)), requires_grad=True)
opt = Adam([weights], lr=0.05)
for step in range(400):
    pred = matmul(Tensor(inputs), weights)
    loss = ((pred - Tensor(targets)) ** 2.0).mean()
    loss.backward()
    opt.step()
    if step % 100 == 0:
        print(f"step {step:3d}  mse {loss.item():.5f}")
print("fitted coefficients:", weights.data.ravel(), "(true: 2, -3)")
