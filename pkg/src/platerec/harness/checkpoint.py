"""Binary weight checkpoints.

Layout (all integers little-endian)::

    b"LPRW"                      magic
    u32 version                  (1)
    u32 n, n bytes               UTF-8 metadata, one key=value per line
    u32 tensor count
    per tensor:
        u16 name length, name bytes (UTF-8)
        u32 rank, rank x u32 dims
        prod(dims) x f32 payload

Payloads are 32-bit floats, so a float64 model survives a roundtrip exactly
only if its values are already float32-representable (see ``quantize``).
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..blocks import CornerModel, Recognizer
from ..ctc import Alphabet

MAGIC = b"LPRW"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    def __init__(self, tensor, detail=""):
        self.tensor = tensor
        super().__init__(f"checkpoint truncated while reading {tensor!r}{': ' + detail if detail else ''}")


def model_metadata(model):
    if isinstance(model, Recognizer):
        return {
            "kind": "recognizer",
            "alphabet": model.alphabet.symbols,
            "width": repr(model.width),
            "hidden": str(model.lstm.hidden_size),
            "input_shape": "128,32,2",
        }
    if isinstance(model, CornerModel):
        chans = ",".join(str(st.conv.weight.shape[0]) for st in model.stages)
        return {"kind": "corner", "channels": chans, "input_shape": "128,32,2"}
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def quantize(model):
    """Round every tensor to the nearest float32 value (kept in the model's dtype)."""
    for t in model.named_tensors().values():
        t.data = t.data.astype(np.float32).astype(t.data.dtype)
    return model


def save_weights(model, path, metadata=None):
    meta = model_metadata(model)
    meta.update(metadata or {})
    meta_blob = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_blob)), meta_blob]
    tensors = model.named_tensors()
    chunks.append(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedError(what, f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def read_checkpoint(path):
    """Parse a checkpoint into ``(metadata dict, {name: float64 array})``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.pos = 4
    version = r.u32("<header>")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    blob = r.take(r.u32("<metadata>"), "<metadata>").decode("utf-8")
    meta = dict(line.split("=", 1) for line in blob.splitlines() if line)
    count = r.u32("<tensor table>")
    tensors = {}
    for i in range(count):
        what = f"<tensor #{i}>"
        name = r.take(r.u16(what), what).decode("utf-8")
        rank = r.u32(name)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, name))
        size = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * size, name)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    return meta, tensors


def build_model(meta):
    kind = meta.get("kind")
    if kind == "recognizer":
        return Recognizer(Alphabet(meta["alphabet"]), width=float(meta["width"]), hidden=int(meta["hidden"]))
    if kind == "corner":
        return CornerModel(channels=tuple(int(c) for c in meta["channels"].split(",")))
    raise CheckpointError(f"unknown model kind {kind!r}")


def load_into(model, tensors):
    own = model.named_tensors()
    missing = set(own) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
    for name, t in own.items():
        arr = tensors[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
        t.data = arr.astype(t.data.dtype)
    return model


def load_weights(path):
    meta, tensors = read_checkpoint(path)
    return load_into(build_model(meta), tensors).eval()
