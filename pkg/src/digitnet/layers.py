"""Layer kernels (forward and backward) and the sequential ``Network``.

All kernels work on batches with the sample axis first.  Images are stored
channels-last, ``[N, H, W, C]``; convolution weights are ``[k, k, C, F]`` and
dense weights are ``[out, in]``.  The unbatched forms accepted by
``conv2d_forward``/``maxpool2d_forward``/``dense_forward`` are conveniences
for single images.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .tensor import DTYPE, SeededRng

KINDS = ("conv2d", "maxpool2d", "flatten", "dense", "relu", "dropout", "softmax", "sigmoid")
PARAM_KINDS = ("conv2d", "dense")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def conv2d_forward(x, w, b):
    """Valid, stride-1 cross-correlation.

    out[n, y, x, f] = b[f] + sum_{dy, dx, c} x[n, y+dy, x+dx, c] * w[dy, dx, c, f]

    Returns ``(out, cache)``.
    """
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected [N,H,W,C] input and [k,k,C,F] weights, got {x.shape}, {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, wc, f = w.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {wc}")
    if kh > h or kw > wd:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{wd}")
    if b.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {f} filters")
    ho, wo = h - kh + 1, wd - kw + 1
    out = np.zeros((n, ho, wo, f), dtype=DTYPE)
    # one small matmul per kernel offset; avoids materializing im2col columns
    for dy in range(kh):
        for dx in range(kw):
            out += x[:, dy:dy + ho, dx:dx + wo, :] @ w[dy, dx]
    out += b
    cache = (x, w, single)
    return (out[0] if single else out), cache


def conv2d_backward(cache, grad_out):
    x, w, single = cache
    g = np.asarray(grad_out, dtype=DTYPE)
    if single:
        g = g[None]
    kh, kw, c, f = w.shape
    ho, wo = x.shape[1] - kh + 1, x.shape[2] - kw + 1
    if g.shape != (x.shape[0], ho, wo, f):
        raise ShapeError(f"conv2d backward: grad shape {g.shape} != forward output {(x.shape[0], ho, wo, f)}")
    gx = np.zeros_like(x)
    gw = np.empty_like(w)
    g_flat = g.reshape(-1, f)
    for dy in range(kh):
        for dx in range(kw):
            xs = x[:, dy:dy + ho, dx:dx + wo, :]
            gw[dy, dx] = xs.reshape(-1, c).T @ g_flat
            gx[:, dy:dy + ho, dx:dx + wo, :] += g @ w[dy, dx].T
    gb = g_flat.sum(axis=0)
    return (gx[0] if single else gx), gw, gb


def maxpool2d_forward(x, pool=2):
    """Non-overlapping ``pool x pool`` max pooling (stride = pool).

    Trailing rows/columns that do not fill a window are dropped.  Ties go to
    the first cell of the window in row-major order.
    """
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x[None]
    n, h, w, f = x.shape
    if h < pool or w < pool:
        raise ShapeError(f"maxpool2d: input {h}x{w} smaller than pool {pool}")
    ho, wo = h // pool, w // pool
    win = (
        x[:, : ho * pool, : wo * pool, :]
        .reshape(n, ho, pool, wo, pool, f)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, ho, wo, f, pool * pool)
    )
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    cache = (x.shape, idx, pool, single)
    return (out[0] if single else out), cache


def maxpool2d_backward(cache, grad_out):
    shape, idx, pool, single = cache
    g = np.asarray(grad_out, dtype=DTYPE)
    if single:
        g = g[None]
    n, h, w, f = shape
    ho, wo = h // pool, w // pool
    if g.shape != (n, ho, wo, f):
        raise ShapeError(f"maxpool2d backward: grad shape {g.shape} != {(n, ho, wo, f)}")
    routed = (np.arange(pool * pool) == idx[..., None]) * g[..., None]
    routed = (
        routed.reshape(n, ho, wo, f, pool, pool)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, ho * pool, wo * pool, f)
    )
    gx = np.zeros(shape, dtype=DTYPE)
    gx[:, : ho * pool, : wo * pool, :] = routed
    return gx[0] if single else gx


def dense_forward(x, w, b):
    """y = W x + b for each row of ``x``; returns ``(y, cache)``."""
    x = np.asarray(x, dtype=DTYPE)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense: input width {x.shape[-1]} does not match weights {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"dense: bias shape {b.shape} does not match weights {w.shape}")
    return x @ w.T + b, (x, w)


def dense_backward(cache, grad_out):
    x, w = cache
    g = np.asarray(grad_out, dtype=DTYPE)
    if g.shape[:-1] != x.shape[:-1] or g.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense backward: grad shape {g.shape} incompatible with input {x.shape}")
    gx = g @ w
    if x.ndim == 1:
        gw = np.outer(g, x)
        gb = g.copy()
    else:
        gw = g.T @ x
        gb = g.sum(axis=0)
    return gx, gw, gb


def relu_forward(x):
    x = np.asarray(x, dtype=DTYPE)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(mask, grad_out):
    return np.where(mask, grad_out, 0.0)


def dropout_forward(x, p, train, rng=None):
    """Inverted dropout.  Returns ``(out, mask)``; ``mask`` is None when inactive."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    x = np.asarray(x, dtype=DTYPE)
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    keep = rng.uniform(x.shape) >= p
    mask = keep / (1.0 - p)
    return x * mask, mask


def dropout_backward(mask, grad_out):
    return grad_out if mask is None else grad_out * mask


def softmax(z):
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(s, grad_out):
    return s * (grad_out - np.sum(grad_out * s, axis=-1, keepdims=True))


def sigmoid(z):
    z = np.asarray(z, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_backward(s, grad_out):
    return grad_out * s * (1.0 - s)


# ---------------------------------------------------------------------------
# layer descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int | None = None
    filters: int | None = None
    units: int | None = None
    pool: int | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and not (self.kernel and self.kernel >= 1 and self.filters and self.filters >= 1):
            raise ConfigError("conv2d needs kernel >= 1 and filters >= 1")
        if self.kind == "dense" and not (self.units and self.units >= 1):
            raise ConfigError("dense needs units >= 1")
        if self.kind == "maxpool2d" and not (self.pool and self.pool >= 1):
            raise ConfigError("maxpool2d needs pool >= 1")
        if self.kind == "dropout" and (self.rate is None or not 0.0 <= self.rate < 1.0):
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.rate}")

    @classmethod
    def conv2d(cls, kernel, filters):
        return cls("conv2d", kernel=kernel, filters=filters)

    @classmethod
    def maxpool2d(cls, pool=2):
        return cls("maxpool2d", pool=pool)

    @classmethod
    def dense(cls, units):
        return cls("dense", units=units)

    @classmethod
    def dropout(cls, rate):
        return cls("dropout", rate=rate)

    @classmethod
    def flatten(cls):
        return cls("flatten")

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def softmax(cls):
        return cls("softmax")

    @classmethod
    def sigmoid(cls):
        return cls("sigmoid")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_architecture(conv1_filters=32, conv2_filters=16, conv1_kernel=3, conv2_kernel=5,
                       conv_dropout=0.25, dense_dropout=0.5):
    """The two-conv, one-pool classifier: 28x28x1 -> ... -> 1936 -> 128 -> 50 -> 10."""
    L = LayerSpec
    return [
        L.conv2d(conv1_kernel, conv1_filters),
        L.relu(),
        L.conv2d(conv2_kernel, conv2_filters),
        L.relu(),
        L.maxpool2d(2),
        L.dropout(conv_dropout),
        L.flatten(),
        L.dense(128),
        L.relu(),
        L.dropout(dense_dropout),
        L.dense(50),
        L.relu(),
        L.dropout(dense_dropout),
        L.dense(10),
        L.softmax(),
    ]


def output_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    """Per-sample output shape of ``spec`` applied to ``in_shape``."""
    k = spec.kind
    if k == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs an HxWxC input, got {in_shape}")
        h, w, _ = in_shape
        if spec.kernel > h or spec.kernel > w:
            raise ShapeError(f"conv2d kernel {spec.kernel} larger than input {h}x{w}")
        return (h - spec.kernel + 1, w - spec.kernel + 1, spec.filters)
    if k == "maxpool2d":
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d needs an HxWxC input, got {in_shape}")
        h, w, c = in_shape
        if h < spec.pool or w < spec.pool:
            raise ShapeError(f"maxpool2d pool {spec.pool} larger than input {h}x{w}")
        return (h // spec.pool, w // spec.pool, c)
    if k == "flatten":
        return (int(np.prod(in_shape)),)
    if k == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense needs a flat input, got {in_shape}; add a flatten layer")
        return (spec.units,)
    return tuple(in_shape)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class ForwardCache:
    """Per-layer values saved by one forward call for one backward call."""

    def __init__(self, entries, mode):
        self.entries = entries
        self.mode = mode
        self.consumed = False


class Network:
    """A strict sequence of layers with parameters and like-shaped gradients.

    ``params[i]`` and ``grads[i]`` are dicts (``{"W": ..., "b": ...}`` for conv
    and dense layers, empty otherwise).  ``rng`` drives dropout in train mode.
    """

    def __init__(self, layers, input_shape=(28, 28, 1), seed=0, init=True, weight_init="he"):
        if weight_init not in ("he", "glorot"):
            raise ConfigError(f"weight_init must be 'he' or 'glorot', got {weight_init!r}")
        self.layers = list(layers)
        self.weight_init = weight_init
        self.input_shape = tuple(input_shape)
        self.mode = "train"
        self.rng = SeededRng(seed)
        self.shapes = []
        shape = self.input_shape
        for i, spec in enumerate(self.layers):
            try:
                shape = output_shape(spec, shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({spec.kind}): {e}") from None
            self.shapes.append(shape)
        self.params = [{} for _ in self.layers]
        self.grads = [{} for _ in self.layers]
        if init:
            self.initialize(SeededRng(seed))

    @property
    def output_shape(self):
        return self.shapes[-1] if self.shapes else self.input_shape

    def layer_input_shape(self, i):
        return self.input_shape if i == 0 else self.shapes[i - 1]

    def initialize(self, rng):
        """Draw weights from ``rng``; biases start at zero.

        ``he``: normal with std sqrt(2 / fan_in).  ``glorot``: uniform on
        +-sqrt(6 / (fan_in + fan_out)).
        """
        for i, spec in enumerate(self.layers):
            in_shape = self.layer_input_shape(i)
            if spec.kind == "conv2d":
                c = in_shape[2]
                shape = (spec.kernel, spec.kernel, c, spec.filters)
                fan_in = spec.kernel * spec.kernel * c
                fan_out = spec.kernel * spec.kernel * spec.filters
            elif spec.kind == "dense":
                shape = (spec.units, in_shape[0])
                fan_in, fan_out = in_shape[0], spec.units
            else:
                continue
            if self.weight_init == "he":
                w = rng.normal(shape) * np.sqrt(2.0 / fan_in)
            else:
                w = (2.0 * rng.uniform(shape) - 1.0) * np.sqrt(6.0 / (fan_in + fan_out))
            b = np.zeros(shape[-1] if spec.kind == "conv2d" else shape[0], dtype=DTYPE)
            self.params[i] = {"W": w, "b": b}
            self.grads[i] = {"W": np.zeros_like(w), "b": np.zeros_like(b)}

    def parameters(self):
        """Flat list of (param, grad) array pairs in a stable order."""
        out = []
        for p, g in zip(self.params, self.grads):
            for key in ("W", "b"):
                if key in p:
                    out.append((p[key], g[key]))
        return out

    def param_counts(self):
        return [sum(a.size for a in p.values()) for p in self.params]

    def zero_grads(self):
        for g in self.grads:
            for a in g.values():
                a.fill(0.0)

    def forward(self, x, mode=None, upto=None):
        """Run layers ``0..upto`` (inclusive; all by default).

        Returns ``(output, cache)``.  ``mode`` defaults to ``self.mode``.
        """
        mode = mode or self.mode
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=DTYPE)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"network input must be [N, {', '.join(map(str, self.input_shape))}], got {x.shape}")
        last = len(self.layers) - 1 if upto is None else upto
        train = mode == "train"
        entries = []
        for i in range(last + 1):
            spec = self.layers[i]
            p = self.params[i]
            try:
                if spec.kind == "conv2d":
                    x, c = conv2d_forward(x, p["W"], p["b"])
                elif spec.kind == "dense":
                    x, c = dense_forward(x, p["W"], p["b"])
                elif spec.kind == "maxpool2d":
                    x, c = maxpool2d_forward(x, spec.pool)
                elif spec.kind == "flatten":
                    c = x.shape
                    x = x.reshape(x.shape[0], -1)
                elif spec.kind == "relu":
                    x, c = relu_forward(x)
                elif spec.kind == "dropout":
                    x, c = dropout_forward(x, spec.rate, train, self.rng)
                elif spec.kind == "softmax":
                    x = softmax(x)
                    c = x
                elif spec.kind == "sigmoid":
                    x = sigmoid(x)
                    c = x
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({spec.kind}): {e}") from None
            entries.append(c)
        return x, ForwardCache(entries, mode)

    def backward(self, cache, grad, skip_last=False):
        """Back-propagate ``grad`` and store parameter gradients in ``self.grads``.

        With ``skip_last`` the final layer is treated as already differentiated,
        i.e. ``grad`` is taken w.r.t. its input; used for the fused
        softmax/cross-entropy and sigmoid/binary-cross-entropy gradients.
        Returns the gradient w.r.t. the network input.
        """
        if cache.consumed:
            raise ConfigError("forward cache was already used by a backward pass")
        cache.consumed = True
        g = np.asarray(grad, dtype=DTYPE)
        top = len(cache.entries) - 1
        if skip_last:
            top -= 1
        for i in range(top, -1, -1):
            spec = self.layers[i]
            c = cache.entries[i]
            try:
                if spec.kind == "conv2d":
                    g, gw, gb = conv2d_backward(c, g)
                    self.grads[i]["W"][...] = gw
                    self.grads[i]["b"][...] = gb
                elif spec.kind == "dense":
                    g, gw, gb = dense_backward(c, g)
                    self.grads[i]["W"][...] = gw
                    self.grads[i]["b"][...] = gb
                elif spec.kind == "maxpool2d":
                    g = maxpool2d_backward(c, g)
                elif spec.kind == "flatten":
                    g = g.reshape(c)
                elif spec.kind == "relu":
                    g = relu_backward(c, g)
                elif spec.kind == "dropout":
                    g = dropout_backward(c, g)
                elif spec.kind == "softmax":
                    g = softmax_backward(c, g)
                elif spec.kind == "sigmoid":
                    g = sigmoid_backward(c, g)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({spec.kind}) backward: {e}") from None
        return g

    def predict(self, x, batch_size=512):
        """Eval-mode outputs for ``x`` computed in chunks."""
        outs = [self.forward(x[i:i + batch_size], mode="eval")[0] for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0,) + tuple(self.output_shape), dtype=DTYPE)
        return np.concatenate(outs)

    def conv_layer_indices(self):
        return [i for i, s in enumerate(self.layers) if s.kind == "conv2d"]

    def describe(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [s.to_dict() for s in self.layers],
            "weight_init": self.weight_init,
        }

    @classmethod
    def from_description(cls, desc, seed=0, init=True):
        layers = [LayerSpec.from_dict(d) for d in desc["layers"]]
        return cls(layers, tuple(desc["input_shape"]), seed=seed, init=init,
                   weight_init=desc.get("weight_init", "he"))

    def summary(self):
        lines = []
        counts = self.param_counts()
        for i, (spec, shape, n) in enumerate(zip(self.layers, self.shapes, counts)):
            args = ", ".join(f"{k}={v}" for k, v in spec.to_dict().items() if k != "kind")
            label = f"{spec.kind}({args})" if args else spec.kind
            lines.append(f"{i:>3}  {label:<28} -> {'x'.join(map(str, shape)):<12} params={n}")
        lines.append(f"total parameters: {sum(counts)}")
        return "\n".join(lines)


def network_forward(net: Network, x, mode=None):
    return net.forward(x, mode=mode)


def network_backward(net: Network, cache: ForwardCache, grad, skip_last=False):
    return net.backward(cache, grad, skip_last=skip_last)


def flatten_width(net: Network) -> int:
    for spec, shape in zip(net.layers, net.shapes):
        if spec.kind == "flatten":
            return shape[0]
    raise DomainError("network has no flatten layer")
