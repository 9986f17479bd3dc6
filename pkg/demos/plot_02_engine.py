"""
The numpy layer engine and its gradient checks
===============================================

Every layer returns its output plus a cache for the backward pass. Central
finite differences confirm the analytic gradients.
"""
import numpy as np

from segqc.nn import AdamState, LayerSpec, adam_step, gradient_check, he_normal_init, make_layer
from segqc.nn import functional as F

rng = np.random.default_rng(0)

# a strided convolution halves the grid, the transposed one restores it
down = make_layer(LayerSpec("conv", 4, 8, kernel=4, stride=2, padding=1), np.float64)
up = make_layer(LayerSpec("conv_transpose", 8, 4, kernel=4, stride=2, padding=1), np.float64)
he_normal_init([down, up], rng)
x = rng.standard_normal((2, 4, 16, 16))
h, _ = down.forward(x)
y, _ = up.forward(h)
print("conv:", x.shape, "->", h.shape, "transposed:", h.shape, "->", y.shape)

# the transposed convolution is the adjoint of the convolution: <Cx, z> = <x, C^T z>
z = rng.standard_normal(h.shape)
cx, _ = F.conv2d_forward(x, down.params["weight"], None, 2, 1)
ctz, _ = F.conv_transpose2d_forward(z, down.params["weight"], None, 2, 1)
print("adjoint gap:", abs(np.sum(cx * z) - np.sum(x * ctz)))

# finite-difference checks. A convolution bias feeding a training-mode batch
# norm has an exactly zero gradient, which no relative error can confirm, so
# the normalization is checked on its own.
block = [down, make_layer(LayerSpec("leaky_relu")), make_layer(LayerSpec("dropout", drop_prob=0.1))]
print(gradient_check(block, x, tolerance=1e-4))
print(gradient_check(make_layer(LayerSpec("batchnorm", 4, 4), np.float64), x, tolerance=1e-4))

# one Adam step moves each weight by about lr against the sign of its gradient
params = {"w": np.array([0.5, -0.5])}
adam_step(params, {"w": np.array([3.0, -0.01])}, AdamState(lr=2e-4, weight_decay=0.0))
print("after one Adam step:", params["w"])
