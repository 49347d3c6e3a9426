"""Training loop, evaluation, checkpoints and metric export.

Checkpoint byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"DGNCKPT\\0"
    8       4     format version (uint32, currently 1)
    12      4     header length H (uint32)
    16      H     UTF-8 JSON header: architecture, epoch, optimizer iteration,
                  RNG state, training config, metric history and the list of
                  tensors as [name, shape] pairs
    16+H    ...   tensor payloads, float64 little-endian, in header order
"""

from __future__ import annotations

import csv
import json
import logging
import os
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, FormatError, ShapeError, UserError, VersionError
from .images import line_chart, write_gray
from .layers import LayerSpec, Network, default_architecture
from .losses import categorical_crossentropy
from .mnist import BatchPlan, Dataset, batches
from .optim import OptimizerState, SgdConfig, sgd_step
from .tensor import SeededRng, derive_seed

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DGNCKPT\x00"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_seconds"]


@dataclass
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    sgd: SgdConfig = field(default_factory=SgdConfig)
    architecture: list = field(default_factory=default_architecture)
    weight_init: str = "he"
    limit_train: int | None = None
    limit_eval: int | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")

    def to_dict(self):
        d = asdict(self)
        d["architecture"] = [s.to_dict() for s in self.architecture]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["sgd"] = SgdConfig(**d["sgd"])
        d["architecture"] = [LayerSpec.from_dict(s) for s in d["architecture"]]
        return cls(**d)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_seconds: float = 0.0


@dataclass
class Checkpoint:
    architecture: dict
    params: list  # per layer: {"W": array, "b": array} or {}
    velocity: list
    iteration: int
    rng_state: tuple
    epoch: int  # number of completed epochs
    config: dict | None = None
    metrics: list = field(default_factory=list)
    format_version: int = CHECKPOINT_VERSION


# ---------------------------------------------------------------------------
# evaluation and training
# ---------------------------------------------------------------------------


def evaluate(net: Network, dataset: Dataset, batch_size=500):
    """Eval-mode ``(mean cross-entropy, accuracy)`` over ``dataset``."""
    if len(dataset) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    if tuple(net.output_shape) != (dataset.onehot.shape[1],):
        raise ShapeError(f"network output {net.output_shape} does not match {dataset.onehot.shape[1]} classes")
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start:start + batch_size]
        y = dataset.onehot[start:start + batch_size]
        probs, _ = net.forward(x, mode="eval")
        loss_sum += categorical_crossentropy(probs, y) * len(x)
        correct += int(np.sum(np.argmax(probs, axis=1) == dataset.labels[start:start + batch_size]))
    return loss_sum / len(dataset), correct / len(dataset)


def check_compatible(architecture, weight_init, dataset: Dataset):
    """Build the network once on the data's shape; fail fast on mismatch."""
    try:
        net = Network(architecture, dataset.images.shape[1:], init=False, weight_init=weight_init)
    except ShapeError as e:
        raise ConfigError(f"architecture does not fit {dataset.images.shape[1:]} inputs: {e}") from None
    if tuple(net.output_shape) != (dataset.onehot.shape[1],):
        raise ConfigError(f"architecture emits {net.output_shape}, data has {dataset.onehot.shape[1]} classes")
    if not architecture or architecture[-1].kind != "softmax":
        raise ConfigError("classifier architecture must end in a softmax layer")


def _capped(dataset, cap, name):
    if cap is None:
        return dataset
    if cap < 1 or cap > len(dataset):
        raise ConfigError(f"{name}={cap} outside 1..{len(dataset)}")
    return dataset.subset(cap)


def train_epoch(net: Network, data: Dataset, state: OptimizerState, config: TrainingConfig, epoch: int):
    """One pass over ``data``; returns (mean train loss, running train accuracy)."""
    # every epoch draws from its own sub-seeds so a resumed run matches
    plan = BatchPlan(config.batch_size, seed=derive_seed(config.seed, "shuffle", epoch))
    net.rng = SeededRng(derive_seed(config.seed, "dropout", epoch))
    params = [p for p, _ in net.parameters()]
    grads = [g for _, g in net.parameters()]
    loss_sum, correct = 0.0, 0
    for x, y, labels in batches(data, plan):
        probs, cache = net.forward(x, mode="train")
        loss_sum += categorical_crossentropy(probs, y) * len(x)
        correct += int(np.sum(np.argmax(probs, axis=1) == labels))
        # fused softmax + cross-entropy gradient w.r.t. the logits
        net.backward(cache, (probs - y) / len(x), skip_last=True)
        sgd_step(params, grads, state, config.sgd)
    return loss_sum / len(data), correct / len(data)


def train(config: TrainingConfig, train_set: Dataset, eval_set: Dataset,
          resume: Checkpoint | None = None, checkpoint_path=None, on_epoch=None):
    """Train the classifier described by ``config``.

    Returns ``(network, metrics)``.  With ``resume`` the run continues after
    the checkpoint's last completed epoch; earlier metrics are carried over.
    When ``checkpoint_path`` is set a checkpoint is written after every epoch.
    """
    train_data = _capped(train_set, config.limit_train, "limit_train")
    eval_data = _capped(eval_set, config.limit_eval, "limit_eval")
    check_compatible(config.architecture, config.weight_init, train_data)

    if resume is None:
        net = Network(config.architecture, train_data.images.shape[1:],
                      seed=derive_seed(config.seed, "init"), weight_init=config.weight_init)
        state = OptimizerState.for_params([p for p, _ in net.parameters()])
        metrics, start = [], 0
    else:
        net = network_from_checkpoint(resume)
        state = OptimizerState([v.copy() for v in resume.velocity], resume.iteration)
        metrics = [EpochMetrics(**m) for m in resume.metrics]
        start = resume.epoch

    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        train_loss, train_acc = train_epoch(net, train_data, state, config, epoch)
        val_loss, val_acc = evaluate(net, eval_data)
        elapsed = time.perf_counter() - t0
        m = EpochMetrics(epoch + 1, train_loss, train_acc, val_loss, val_acc,
                         0.0 if config.deterministic else elapsed)
        metrics.append(m)
        log.info("epoch %d/%d loss %.4f acc %.4f val_loss %.4f val_acc %.4f (%.1fs)",
                 epoch + 1, config.epochs, train_loss, train_acc, val_loss, val_acc, elapsed)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, make_checkpoint(net, state, epoch + 1, config, metrics))
        if on_epoch is not None:
            on_epoch(m)
    net.mode = "eval"
    return net, metrics


def summarize(metrics):
    """Final-epoch and best-epoch accuracies side by side."""
    if not metrics:
        raise DomainError("no metrics to summarize")
    last = metrics[-1]
    return {
        "epochs": len(metrics),
        "final_train_acc": last.train_acc,
        "final_val_acc": last.val_acc,
        "max_train_acc": max(m.train_acc for m in metrics),
        "max_val_acc": max(m.val_acc for m in metrics),
    }


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def make_checkpoint(net: Network, state: OptimizerState, epoch: int, config: TrainingConfig | None = None,
                    metrics=()) -> Checkpoint:
    return Checkpoint(
        architecture=net.describe(),
        params=[{k: v.copy() for k, v in p.items()} for p in net.params],
        velocity=[v.copy() for v in state.velocity],
        iteration=state.iteration,
        rng_state=net.rng.get_state(),
        epoch=epoch,
        config=config.to_dict() if config is not None else None,
        metrics=[asdict(m) for m in metrics],
    )


def network_from_checkpoint(ckpt: Checkpoint) -> Network:
    net = Network.from_description(ckpt.architecture, init=False)
    for i, p in enumerate(ckpt.params):
        if not p:
            continue
        net.params[i] = {k: v.copy() for k, v in p.items()}
        net.grads[i] = {k: np.zeros_like(v) for k, v in p.items()}
    net.rng.set_state(ckpt.rng_state)
    return net


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = []
    for i, p in enumerate(ckpt.params):
        for k in sorted(p):
            tensors.append((f"param/{i}/{k}", p[k]))
    for i, v in enumerate(ckpt.velocity):
        tensors.append((f"velocity/{i}", v))
    header = {
        "architecture": ckpt.architecture,
        "epoch": ckpt.epoch,
        "iteration": ckpt.iteration,
        "rng_state": [int(x) for x in ckpt.rng_state],
        "config": ckpt.config,
        "metrics": ckpt.metrics,
        "tensors": [[name, list(a.shape)] for name, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            for _, a in tensors:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except OSError as e:
        raise UserError(f"cannot write checkpoint {path}: {e.strerror}") from None


def load_checkpoint(path) -> Checkpoint:
    if not os.path.exists(path):
        raise UserError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_checkpoint(data, path)


def decode_checkpoint(data: bytes, path="<bytes>") -> Checkpoint:
    if len(data) < 16:
        raise FormatError(f"{path}: truncated checkpoint header at offset {len(data)}")
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic at offset 0: {data[:8]!r}")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    if len(data) < 16 + hlen:
        raise FormatError(f"{path}: header truncated at offset {len(data)} (needs {16 + hlen} bytes)")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt header at offset 16: {e}") from None
    offset = 16 + hlen
    params = [{} for _ in header["architecture"]["layers"]]
    velocity = []
    for name, shape in header["tensors"]:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: tensor {name} truncated at offset {len(data)} "
                              f"(needs {offset + nbytes} bytes)")
        a = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).astype(np.float64).reshape(shape)
        offset += nbytes
        parts = name.split("/")
        if parts[0] == "param":
            params[int(parts[1])][parts[2]] = a
        else:
            velocity.append(a)
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes at offset {offset}")
    return Checkpoint(
        architecture=header["architecture"],
        params=params,
        velocity=velocity,
        iteration=header["iteration"],
        rng_state=tuple(header["rng_state"]),
        epoch=header["epoch"],
        config=header["config"],
        metrics=header["metrics"],
        format_version=version,
    )


# ---------------------------------------------------------------------------
# metric export
# ---------------------------------------------------------------------------


def export_metrics(metrics, path) -> None:
    if not metrics:
        raise DomainError("no metrics to export")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for m in metrics:
                w.writerow([m.epoch] + [f"{getattr(m, k):.9g}" for k in METRICS_HEADER[1:]])
    except OSError as e:
        raise UserError(f"cannot write metrics {path}: {e.strerror}") from None


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochMetrics(int(r["epoch"]), *(float(r[k]) for k in METRICS_HEADER[1:])) for r in rows]


def plot_metrics(metrics, out_dir, ext="pgm"):
    """Write ``loss.<ext>`` and ``accuracy.<ext>`` charts; return the plotted series."""
    if not metrics:
        raise DomainError("no metrics to plot")
    series = {
        "loss": {"train": [m.train_loss for m in metrics], "val": [m.val_loss for m in metrics]},
        "accuracy": {"train": [m.train_acc for m in metrics], "val": [m.val_acc for m in metrics]},
    }
    for name, s in series.items():
        write_gray(line_chart(s, name), os.path.join(out_dir, f"{name}.{ext}"))
    return series
