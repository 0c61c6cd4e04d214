import numpy as np

from genrelyrics import numeric as nm

"""
Tensors and the tape
"""
# Tensors wrap float64 arrays. Parameters are named tensors that the tape
# differentiates with respect to.
ps = nm.ModelParams()
w = ps.create("w", np.array([[1.0, 2.0], [3.0, 4.0]]))
b = ps.create("b", np.array([0.5, -0.5]))
x = nm.Tensor(np.array([[1.0, -1.0]]))

y = nm.linear(x, ps["w"], ps["b"])
print("y =", y.data)          # [[-1.5, -2.5]]

"""
Reverse mode
"""
loss = nm.sum(nm.mul(y, y))
grads = nm.compute_gradients(loss, ps)
print("dL/dw =\n", grads["w"])
print("dL/db =", grads["b"])

# the same numbers by hand: dL/dy = 2y, dL/dw = x^T (2y), dL/db = 2y
print(np.allclose(grads["w"], x.data.T @ (2 * y.data)), np.allclose(grads["b"], 2 * y.data[0]))

"""
Finite differences agree
"""
h = 1e-6
w0 = w.value.data.copy()
fd = np.zeros_like(w0)
for ix in np.ndindex(w0.shape):
    for sign in (1, -1):
        trial = w0.copy()
        trial[ix] += sign * h
        w.assign(trial)
        with nm.no_grad():
            fd[ix] += sign * nm.sum(nm.mul(nm.linear(x, ps["w"], ps["b"]),
                                           nm.linear(x, ps["w"], ps["b"]))).item() / (2 * h)
w.assign(w0)
print("max |analytic - numeric| =", np.abs(fd - grads["w"]).max())

"""
Frozen parameters
"""
# A frozen parameter simply drops out of the gradient dictionary.
b.set_trainable(False)
print(sorted(nm.compute_gradients(nm.sum(nm.linear(x, ps["w"], ps["b"])), ps)))

"""
Broadcasting is deliberately narrow
"""
# Only leading dimensions broadcast, so a (2,) bias adds to (3, 2) rows but a
# (3,) column vector does not silently stretch across (3, 2).
print(nm.add(nm.Tensor(np.ones((3, 2))), nm.Tensor(np.array([1.0, 2.0]))).data)
try:
    nm.add(nm.Tensor(np.ones((3, 2))), nm.Tensor(np.ones(3)))
except nm.ShapeError as exc:
    print("ShapeError:", exc)
