"""Netpbm (PGM/PPM) reading and writing; PNG through Pillow when installed.

Images are float arrays in [0, 1], shaped (H, W) for gray or (H, W, 3) for color.
"""

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(data, count, pos):
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated netpbm header")
        out.append(data[start:pos])
    return out, pos


def read_netpbm(path):
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a PGM/PPM file")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    chans = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * chans
    if magic in (b"P5", b"P6"):
        pos += 1
        dtype = ">u2" if maxval > 255 else "u1"
        if len(data) - pos < count * np.dtype(dtype).itemsize:
            raise ImageFormatError(f"{path}: truncated pixel data")
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        raw = np.array(data[pos:].split()[:count], dtype=np.int64)
        if raw.size < count:
            raise ImageFormatError(f"{path}: truncated pixel data")
    img = raw.astype(np.float64).reshape(h, w, chans) / maxval
    return img[:, :, 0] if chans == 1 else img


def write_netpbm(path, img):
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    pix = np.round(arr * 255).astype(np.uint8)
    if pix.ndim == 2:
        magic = b"P5"
    elif pix.ndim == 3 and pix.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot write image of shape {arr.shape}")
    h, w = pix.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + pix.tobytes())


def read_image(path):
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        return read_netpbm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ImageFormatError(f"{path}: only PGM/PPM supported without Pillow") from exc
    with Image.open(path) as im:
        im = im.convert("RGB") if im.mode not in ("L", "RGB") else im
        return np.asarray(im, dtype=np.float64) / 255.0


def write_image(path, img):
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        return write_netpbm(path, img)
    from PIL import Image

    pix = np.round(np.clip(np.asarray(img), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(pix).save(path)
