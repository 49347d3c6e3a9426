"""A 784-32-784 autoencoder and a small VAE on the bundled digits.

    python3 demos/autoencoders.py [out_dir]

Writes reconstruction grids (originals on top) and a grid of VAE samples.
"""
import os
import sys

from digitnet.autoencoders import (
    AeConfig,
    VaeConfig,
    ae_train,
    export_reconstructions,
    export_samples,
    kl_divergence,
    vae_train,
)
from digitnet.mnist import load_split
from digitnet.tensor import SeededRng

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/autoencoders"
os.makedirs(out, exist_ok=True)
data = os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k")
train_set = load_split(data, "train")

print("kl(mu=1, logvar=0) =", kl_divergence([1.0], [0.0]))

ae, curve = ae_train(AeConfig(epochs=5, seed=0), train_set)
for epoch, loss in curve:
    print(f"ae epoch {epoch}: mse {loss:.5f}")
export_reconstructions(ae, train_set.images[:8], os.path.join(out, "ae_grid.pgm"))

vae, curve = vae_train(VaeConfig(epochs=5, seed=0), train_set)
for epoch, recon, kl, total in curve:
    print(f"vae epoch {epoch}: recon {recon:.2f} kl {kl:.2f} total {total:.2f}")
export_reconstructions(vae, train_set.images[:8], os.path.join(out, "vae_recon.pgm"))
export_samples(vae, 32, SeededRng(1), os.path.join(out, "vae_grid.pgm"))
print("wrote", sorted(os.listdir(out)))
