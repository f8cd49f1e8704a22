"""Binary netpbm rasters: P6 PPM for RGB mosaics and patches, P5 PGM
(16-bit) for confidence maps. Unit-interval floats on the Python side."""

import numpy as np


def _write_header(fh, magic, w, h, maxval):
    fh.write(f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii"))


def write_ppm(path, img):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM wants (H, W, 3), got {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        _write_header(fh, "P6", img.shape[1], img.shape[0], 255)
        fh.write(img.tobytes())


def write_pgm16(path, cmap):
    cmap = np.asarray(cmap, dtype=np.float64)  # quantize in float64, like quantize16
    if cmap.ndim != 2:
        raise ValueError(f"PGM wants (H, W), got {cmap.shape}")
    q = np.clip(np.round(cmap * 65535.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        _write_header(fh, "P5", cmap.shape[1], cmap.shape[0], 65535)
        fh.write(q.tobytes())


def quantize16(cmap):
    """The value grid write_pgm16 + read_pgm round-trips to.

    Arithmetic is pinned to float64 so an in-memory map and the same map
    written to PGM and read back are bitwise identical."""
    x = np.asarray(cmap, dtype=np.float64)
    return np.clip(np.round(x * 65535.0), 0, 65535) / 65535.0


def _read_tokens(data, n):
    """First n whitespace-separated header tokens, honoring # comments.
    Returns (tokens, offset past the single whitespace after the last)."""
    tokens = []
    i = 0
    while len(tokens) < n:
        if i >= len(data):
            raise ValueError("netpbm header truncated")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # skip exactly one whitespace byte after maxval


def _read_netpbm(path, magic):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, off = _read_tokens(data, 4)
    if tokens[0] != magic.encode("ascii"):
        raise ValueError(f"{path}: expected {magic}, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    channels = 3 if magic == "P6" else 1
    if maxval < 256:
        count = w * h * channels
        body = np.frombuffer(data, dtype=np.uint8, count=-1, offset=off)
        scale = float(maxval)
    else:
        count = w * h * channels
        body = np.frombuffer(data, dtype=">u2", count=-1, offset=off)
        scale = float(maxval)
    if body.size < count:
        raise ValueError(f"{path}: raster body truncated ({body.size} of {count} samples)")
    body = body[:count]
    return body, w, h, channels, scale


def read_ppm(path):
    body, w, h, c, scale = _read_netpbm(path, "P6")
    return (body.reshape(h, w, 3).astype(np.float32)) / np.float32(scale)


def read_pgm(path):
    body, w, h, c, scale = _read_netpbm(path, "P5")
    return body.reshape(h, w).astype(np.float64) / scale
