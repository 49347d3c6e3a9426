"""Find near-duplicate conv filters by cosine similarity.

    python3 demos/filter_similarity.py [out_dir]

A short training run gives the filters some structure first.  Then for both
conv layers, count filter pairs whose cosine similarity clears 0.5 and 0.6,
and draw the most similar pair next to its activation maps.
"""
import os
import sys

import numpy as np

from digitnet.filters import (
    activation_maps,
    analyze_network,
    conv_layers,
    cosine_similarity,
    export_filter_grid,
    export_pair_visual,
    similarity_matrix,
)
from digitnet.mnist import load_split
from digitnet.trainer import TrainingConfig, train

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/filters"
os.makedirs(out, exist_ok=True)

# the measure itself
print("cos((1,2,2), (2,1,2)) =", cosine_similarity([1, 2, 2], [2, 1, 2]))

data = os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k")
train_set, test_set = load_split(data, "train"), load_split(data, "test")
net, _ = train(TrainingConfig(epochs=1, seed=3, limit_train=1000, limit_eval=200), train_set, test_set)

for r in analyze_network(net, [0.5, 0.6]):
    print(f"conv {r.layer_index} ({r.kernel_size}x{r.kernel_size}, {r.n} filters) "
          f"theta {r.threshold}: {len(r.pairs)}/{r.total_pairs} pairs, ratio {r.ratio:.4f}")

image = test_set.images[0]
for ordinal, idx in conv_layers(net):
    w = net.params[idx]["W"]
    m = similarity_matrix(w, ordinal)
    off = m.values.copy()
    np.fill_diagonal(off, -np.inf)
    i, j = np.unravel_index(np.argmax(off), off.shape)
    print(f"conv {ordinal}: most similar pair ({i}, {j}) cos {m.values[i, j]:.4f}")
    export_filter_grid(w, os.path.join(out, f"filters_layer{ordinal}.pgm"))
    export_pair_visual(net, idx, (i, j), image, os.path.join(out, f"pair_layer{ordinal}.pgm"))
    maps = activation_maps(net, image, idx)
    print(f"  {len(maps)} activation maps of {maps[0].map.shape}")
print("wrote", sorted(os.listdir(out)))
