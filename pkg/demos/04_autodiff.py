"""The tape-based autodiff engine: gradients, a finite-difference check and Adam."""
# %%
import numpy as np

from relcontrast import autodiff as ad
from relcontrast.autodiff import AdamState, Parameter

rng = np.random.default_rng(0)
x = rng.normal(size=(50, 3))
y = x @ np.array([1.5, -2.0, 0.5]) + 0.3
w = Parameter("w", np.zeros((3, 1)))
b = Parameter("b", np.zeros(1))


def loss():
    return ad.mse(ad.reshape(ad.add(ad.matmul(x, w), b), (50,)), y)


# %% analytic gradients agree with central differences
print("grad check:", ad.grad_check(loss, [w, b]))

# %% Adam recovers the linear model
state = AdamState(lr=0.05)
for step in range(500):
    ad.adam_step([w, b], ad.backward(loss(), [w, b]), state)
print("weights:", w.data.ravel().round(3), "bias:", b.data.round(3), "loss:", loss().item())
