"""Grayscale image output: PGM/PNG writers, image grids and tiny line charts.

Everything is rasterized with numpy so no plotting library is needed.  Output
files are byte-for-byte reproducible for equal inputs.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DomainError, FormatError, UserError


def to_gray(t, vmin=None, vmax=None) -> np.ndarray:
    """Min-max scale a rank-2 tensor to uint8; a constant tensor maps to 128."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.size == 0:
        raise DomainError(f"expected a nonempty rank-2 tensor, got shape {t.shape}")
    lo = float(t.min()) if vmin is None else vmin
    hi = float(t.max()) if vmax is None else vmax
    if hi <= lo:
        return np.full(t.shape, 128, dtype=np.uint8)
    scaled = (np.clip(t, lo, hi) - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse a binary (P5, maxval 255) PGM; comments are allowed in the header."""
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5" or fields[3] != b"255":
        raise FormatError(f"unsupported PGM variant {fields[0]!r} maxval {fields[3]!r}")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise FormatError(f"PGM payload truncated: expected {w * h} bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def encode_png(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape

    def chunk(tag, body):
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + row.tobytes() for row in np.ascontiguousarray(pixels, dtype=np.uint8))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def write_gray(pixels: np.ndarray, path) -> None:
    data = encode_png(pixels) if str(path).lower().endswith(".png") else encode_pgm(pixels)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as e:
        raise UserError(f"cannot write image {path}: {e.strerror}") from None


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def export_gray_image(t, path, vmin=None, vmax=None) -> np.ndarray:
    """Write a rank-2 tensor as an 8-bit grayscale PGM (or PNG, by extension)."""
    pixels = to_gray(t, vmin, vmax)
    write_gray(pixels, path)
    return pixels


def tile(images, cols, sep=2, fill=0.5):
    """Arrange equally sized rank-2 images into a grid with ``sep``-pixel gutters."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise DomainError("nothing to tile")
    h, w = images[0].shape
    rows = -(-len(images) // cols)
    grid = np.full((rows * h + (rows - 1) * sep, cols * w + (cols - 1) * sep), fill)
    for k, im in enumerate(images):
        r, c = divmod(k, cols)
        grid[r * (h + sep): r * (h + sep) + h, c * (w + sep): c * (w + sep) + w] = im
    return grid


# ---------------------------------------------------------------------------
# line charts
# ---------------------------------------------------------------------------

# 3x5 bitmap glyphs, one string of 15 bits per character (row-major)
_GLYPHS = {
    "0": "111101101101111", "1": "010110010010111", "2": "111001111100111",
    "3": "111001111001111", "4": "101101111001001", "5": "111100111001111",
    "6": "111100111101111", "7": "111001001010010", "8": "111101111101111",
    "9": "111101111001111", ".": "000000000000010", "-": "000000111000000",
    " ": "000000000000000", ":": "000010000010000", "A": "010101111101101",
    "C": "111100100100111", "E": "111100111100111", "H": "101101111101101",
    "I": "111010010010111", "L": "100100100100111", "N": "110101101101101",
    "O": "111101101101111", "P": "111101111100100", "R": "110101110101101",
    "S": "111100111001111", "T": "111010010010010", "U": "101101101101111",
    "V": "101101101101010", "Y": "101101010010010", "/": "001001010100100",
}


def draw_text(canvas, text, x, y, value=0, scale=2):
    for ch in text.upper():
        bits = _GLYPHS.get(ch, _GLYPHS[" "])
        glyph = np.array([int(b) for b in bits], dtype=bool).reshape(5, 3)
        glyph = np.kron(glyph, np.ones((scale, scale), dtype=bool))
        gh, gw = glyph.shape
        region = canvas[y:y + gh, x:x + gw]
        region[glyph[: region.shape[0], : region.shape[1]]] = value
        x += gw + scale


def draw_line(canvas, x0, y0, x1, y1, value=0):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.rint(np.linspace(x0, x1, n)).astype(int)
    ys = np.rint(np.linspace(y0, y1, n)).astype(int)
    ok = (xs >= 0) & (xs < canvas.shape[1]) & (ys >= 0) & (ys < canvas.shape[0])
    canvas[ys[ok], xs[ok]] = value


def line_chart(series: dict, title: str, width=480, height=320) -> np.ndarray:
    """Render ``{label: values}`` as polylines over a shared epoch axis.

    Series are drawn in black, dark gray, mid gray... in insertion order.
    Returns uint8 pixels (white background).
    """
    canvas = np.full((height, width), 255, dtype=np.uint8)
    left, right, top, bottom = 60, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom
    values = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    n = max(len(v) for v in series.values())

    def px(i, v):
        x = left + (i / (n - 1) if n > 1 else 0.5) * pw
        y = top + (1.0 - (v - lo) / (hi - lo)) * ph
        return x, y

    draw_line(canvas, left, top, left, top + ph)
    draw_line(canvas, left, top + ph, left + pw, top + ph)
    draw_text(canvas, title, left, 8)
    draw_text(canvas, f"{hi:.3g}", 4, top)
    draw_text(canvas, f"{lo:.3g}", 4, top + ph - 10)
    draw_text(canvas, "1", left, top + ph + 6)
    draw_text(canvas, str(n), left + pw - 8 * len(str(n)), top + ph + 6)
    draw_text(canvas, "EPOCH", left + pw // 2 - 20, top + ph + 20)
    shades = [0, 96, 160, 200]
    legend_y = top + 4
    for k, (label, vals) in enumerate(series.items()):
        shade = shades[k % len(shades)]
        pts = [px(i, v) for i, v in enumerate(vals)]
        for (xa, ya), (xb, yb) in zip(pts, pts[1:]):
            draw_line(canvas, xa, ya, xb, yb, shade)
        if len(pts) == 1:
            x, y = pts[0]
            canvas[int(y) - 1:int(y) + 2, int(x) - 1:int(x) + 2] = shade
        draw_line(canvas, left + pw - 110, legend_y + 5, left + pw - 90, legend_y + 5, shade)
        draw_text(canvas, label, left + pw - 84, legend_y, shade)
        legend_y += 14
    return canvas
