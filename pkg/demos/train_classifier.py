"""Train the digit classifier for a few epochs on the bundled real digits.

Run from the repository root:

    python3 demos/train_classifier.py [out_dir]

The bundled set is 4000 training and 1000 test images.  Full MNIST gives the
real numbers; point the CLI at it with ``digitnet train --data DIR``.
"""
import os
import sys

from digitnet.layers import Network, default_architecture
from digitnet.mnist import load_split
from digitnet.trainer import TrainingConfig, export_metrics, plot_metrics, summarize, train

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/classifier"
os.makedirs(out, exist_ok=True)
data = os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k")
train_set, test_set = load_split(data, "train"), load_split(data, "test")
print(f"{len(train_set)} training / {len(test_set)} test images")

# the default network: 28x28x1 -> conv3x3(32) -> conv5x5(16) -> pool -> 1936 -> 128 -> 50 -> 10
print(Network(default_architecture(), seed=0).summary())

config = TrainingConfig(epochs=3, seed=0)
net, metrics = train(config, train_set, test_set,
                     on_epoch=lambda m: print(f"epoch {m.epoch}: loss {m.train_loss:.4f} "
                                              f"val_acc {m.val_acc:.4f}"))
export_metrics(metrics, os.path.join(out, "metrics.csv"))
plot_metrics(metrics, out)
print(summarize(metrics))
print("wrote", sorted(os.listdir(out)))
