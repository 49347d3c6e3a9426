"""Check backprop of a whole (shrunken) classifier against finite differences.

    python3 demos/gradient_check.py
"""
import numpy as np

from digitnet.layers import LayerSpec as L
from digitnet.layers import Network
from digitnet.losses import categorical_crossentropy

arch = [L.conv2d(3, 3), L.relu(), L.conv2d(3, 2), L.relu(), L.maxpool2d(2), L.flatten(),
        L.dense(6), L.relu(), L.dense(10), L.softmax()]
net = Network(arch, input_shape=(10, 10, 1), seed=1)
rng = np.random.default_rng(0)
x = rng.random((3, 10, 10, 1))
y = np.eye(10)[[1, 4, 7]]

probs, cache = net.forward(x, mode="eval")
net.zero_grads()
net.backward(cache, (probs - y) / len(x), skip_last=True)

h = 1e-5
for i, (p, g) in enumerate(net.parameters()):
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        fp = categorical_crossentropy(net.forward(x, mode="eval")[0], y)
        p[idx] = old - h
        fm = categorical_crossentropy(net.forward(x, mode="eval")[0], y)
        p[idx] = old
        num[idx] = (fp - fm) / (2 * h)
    err = np.linalg.norm(g - num) / max(np.linalg.norm(g), np.linalg.norm(num))
    print(f"param {i} {p.shape}: relative error {err:.2e}")
