"""Redundant-filter detection by cosine similarity, plus filter/activation images.

Each filter of a conv layer (all input channels, bias excluded) is flattened
into one vector.  Dot products use ``math.fsum``, which is correctly rounded,
so every similarity is a fixed function of its two filters and does not
depend on summation order, vectorization or BLAS threading.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError, UndefinedSimilarityError, UserError
from .images import export_gray_image, tile
from .layers import Network, relu_forward

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
REPORT_HEADER = ["layer", "kernel", "filters", "threshold", "pair_count", "total_pairs", "ratio"]


def _exact_dot(a: np.ndarray, b: np.ndarray) -> float:
    return math.fsum((a * b).tolist())


def _cosine(dot, sq_a, sq_b):
    # one sqrt of the product: identical vectors give exactly 1.0
    return min(1.0, max(-1.0, dot / math.sqrt(sq_a * sq_b)))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeError(f"cosine_similarity: {a.size} vs {b.size} elements")
    sq_a = _exact_dot(a, a)
    sq_b = _exact_dot(b, b)
    if math.sqrt(sq_a) <= NORM_EPS or math.sqrt(sq_b) <= NORM_EPS:
        raise UndefinedSimilarityError("cosine similarity undefined for a zero-norm vector")
    return _cosine(_exact_dot(a, b), sq_a, sq_b)


@dataclass
class SimilarityMatrix:
    layer_index: int | None
    n: int
    values: np.ndarray
    kernel_size: int | None = None
    zero_norm: list = field(default_factory=list)  # filters skipped for zero norm


def filter_vectors(weights) -> np.ndarray:
    """``[k, k, C, F]`` weights -> ``[F, k*k*C]`` rows, one per filter."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4:
        raise ShapeError(f"expected conv weights [k, k, C, F], got shape {w.shape}")
    return np.ascontiguousarray(w.reshape(-1, w.shape[-1]).T)


def similarity_matrix(weights, layer_index=None) -> SimilarityMatrix:
    """Pairwise cosine similarity between the filters of one conv layer.

    Entries involving a zero-norm filter are NaN and that filter is listed in
    ``zero_norm``.
    """
    vecs = filter_vectors(weights)
    n = len(vecs)
    if n < 2:
        raise DomainError(f"need at least 2 filters, got {n}")
    sq = [_exact_dot(v, v) for v in vecs]
    zero = [i for i, v in enumerate(sq) if math.sqrt(v) <= NORM_EPS]
    values = np.full((n, n), np.nan)
    for i in range(n):
        if i in zero:
            continue
        rows = (vecs[i] * vecs[i:]).tolist()
        for off, row in enumerate(rows):
            j = i + off
            if j in zero:
                continue
            values[i, j] = values[j, i] = _cosine(math.fsum(row), sq[i], sq[j])
    if zero:
        log.warning("layer %s: %d zero-norm filter(s) skipped", layer_index, len(zero))
    return SimilarityMatrix(layer_index, n, values, kernel_size=np.shape(weights)[0], zero_norm=zero)


@dataclass
class SimilarPairReport:
    layer_index: int | None
    kernel_size: int | None
    n: int
    threshold: float
    pairs: list  # (i, j, similarity), i < j, most similar first
    total_pairs: int
    skipped_pairs: int = 0

    @property
    def ratio(self) -> float:
        return len(self.pairs) / self.total_pairs if self.total_pairs else 0.0

    def row(self):
        return {
            "layer": self.layer_index,
            "kernel": self.kernel_size,
            "filters": self.n,
            "threshold": self.threshold,
            "pair_count": len(self.pairs),
            "total_pairs": self.total_pairs,
            "ratio": self.ratio,
        }


def similar_pairs(matrix: SimilarityMatrix, threshold: float, use_abs=False) -> SimilarPairReport:
    """Filter pairs whose similarity is at least ``threshold``.

    The signed cosine is compared unless ``use_abs`` is set, in which case
    anti-parallel filters count as similar too.
    """
    if not -1.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must lie in (-1, 1], got {threshold}")
    n = matrix.n
    iu, ju = np.triu_indices(n, k=1)
    sims = matrix.values[iu, ju]
    defined = ~np.isnan(sims)
    score = np.abs(sims) if use_abs else sims
    hit = defined & (score >= threshold)
    pairs = [(int(i), int(j), float(s)) for i, j, s in zip(iu[hit], ju[hit], sims[hit])]
    key_sims = [abs(s) if use_abs else s for _, _, s in pairs]
    order = sorted(range(len(pairs)), key=lambda k: (-key_sims[k], pairs[k][0], pairs[k][1]))
    return SimilarPairReport(
        layer_index=matrix.layer_index,
        kernel_size=matrix.kernel_size,
        n=n,
        threshold=float(threshold),
        pairs=[pairs[k] for k in order],
        total_pairs=n * (n - 1) // 2,
        skipped_pairs=int((~defined).sum()),
    )


def conv_layers(net: Network):
    """``[(ordinal, layer_index), ...]`` for conv layers; ordinals start at 1."""
    return [(k + 1, i) for k, i in enumerate(net.conv_layer_indices())]


def analyze_network(net: Network, thresholds, use_abs=False):
    reports = []
    for ordinal, idx in conv_layers(net):
        m = similarity_matrix(net.params[idx]["W"], layer_index=ordinal)
        for t in thresholds:
            reports.append(similar_pairs(m, t, use_abs=use_abs))
    return reports


def format_threshold(t) -> str:
    return f"{t:g}"


def write_report_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in reports:
            d = r.row()
            w.writerow([d["layer"], d["kernel"], d["filters"], format_threshold(d["threshold"]),
                        d["pair_count"], d["total_pairs"], f"{d['ratio']:.9g}"])


def read_report_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_pairs_csv(report: SimilarPairReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "similarity"])
        for i, j, s in report.pairs:
            w.writerow([i, j, repr(s)])


# ---------------------------------------------------------------------------
# activation maps and pictures
# ---------------------------------------------------------------------------


@dataclass
class ActivationMap:
    layer_index: int
    filter_index: int
    map: np.ndarray


def activation_maps(net: Network, image, layer_index: int):
    """Post-ReLU responses of every filter of conv layer ``layer_index``.

    ``layer_index`` indexes ``net.layers`` (0-based) and must name a conv
    layer.  Dropout is off.
    """
    if not 0 <= layer_index < len(net.layers) or net.layers[layer_index].kind != "conv2d":
        raise DomainError(f"layer {layer_index} is not a conv2d layer")
    x = np.asarray(image, dtype=np.float64)
    if x.shape == net.input_shape[:2] and net.input_shape[2] == 1:
        x = x[..., None]
    out, _ = net.forward(x[None], mode="eval", upto=layer_index)
    act, _ = relu_forward(out[0])
    return [ActivationMap(layer_index, f, act[:, :, f]) for f in range(act.shape[-1])]


def filter_images(weights):
    """One 2-D picture per filter: the kernel averaged over input channels."""
    w = np.asarray(weights, dtype=np.float64)
    return [w[:, :, :, f].mean(axis=2) for f in range(w.shape[-1])]


def upscale(img, factor):
    return np.kron(img, np.ones((factor, factor)))


def export_filter_grid(weights, path, cols=16, zoom=4):
    pics = [upscale(p, zoom) for p in filter_images(weights)]
    return export_gray_image(tile(pics, min(cols, len(pics)), sep=zoom, fill=0.0), path)


def export_pair_visual(net: Network, layer_index: int, pair, image, path, zoom=4):
    """Picture for one similar pair: filter i, filter j, input, map i, map j.

    Each panel is min-max scaled on its own and bordered by gutters.
    """
    i, j = pair[0], pair[1]
    w = net.params[layer_index]["W"]
    pics = filter_images(w)
    maps = activation_maps(net, image, layer_index)
    img = np.asarray(image, dtype=np.float64).reshape(net.input_shape[:2])
    panels = [pics[i], pics[j], img, maps[i].map, maps[j].map]
    side = max(p.shape[0] for p in panels) * 2
    normed = []
    for p in panels:
        p = upscale(p, max(1, side // p.shape[0]))
        lo, hi = p.min(), p.max()
        p = (p - lo) / (hi - lo) if hi > lo else np.full_like(p, 0.5)
        canvas = np.zeros((side, side))
        canvas[: p.shape[0], : p.shape[1]] = p[:side, :side]
        normed.append(canvas)
    return export_gray_image(tile(normed, len(normed), sep=zoom, fill=1.0), path, vmin=0.0, vmax=1.0)


# ---------------------------------------------------------------------------
# sweep over filter counts
# ---------------------------------------------------------------------------


def sweep(filter_counts, thresholds, checkpoint_dir, train_fn=None, use_abs=False):
    """Similar-pair reports for networks whose conv layers have each filter count.

    For every count, ``checkpoint_dir/sweep_f{count}.bin`` is loaded; when it
    is missing, ``train_fn(count)`` must return a trained ``Network`` (it is
    then saved there).  Returns reports ordered by (layer, count, threshold).
    """
    from .trainer import load_checkpoint, network_from_checkpoint  # avoid import cycle

    by_count = {}
    for count in filter_counts:
        path = os.path.join(checkpoint_dir, f"sweep_f{count}.bin")
        if os.path.exists(path):
            net = network_from_checkpoint(load_checkpoint(path))
        elif train_fn is not None:
            net = train_fn(count, path)
        else:
            raise UserError(f"missing checkpoint {path} and training was not allowed")
        by_count[count] = analyze_network(net, thresholds, use_abs=use_abs)
    reports = [r for rs in by_count.values() for r in rs]
    reports.sort(key=lambda r: (r.layer_index, r.n, r.threshold))
    return reports
