"""Model serialization.

One self-describing binary file per fitted model: a JSON header carrying
the model config and block manifest, every learned parameter as raw
little-endian float32 in manifest order, the per-frame capture arrays at
their native precision, and a trailing 64-bit digest over everything
before it.  The digest is verified before the header is even parsed, so
any flipped byte anywhere in the file is caught the same way.

Optimizer state is deliberately not stored; a checkpoint is a render
artifact, not a resume point, and the tables dominate its size.
"""

import hashlib
import json
import struct

import numpy as np

from .model import LightSphereModel, ModelConfig

MAGIC = b"NLSP"
VERSION = 1
_DIGEST_BYTES = 8

# capture arrays that ride along with the learned blocks
_AUX = ("gyro", "intrinsics", "distortion")


class CheckpointError(RuntimeError):
    """File is not a readable checkpoint."""


def _digest(payload):
    return hashlib.blake2b(payload, digest_size=_DIGEST_BYTES).digest()


def save_checkpoint(path, model, meta=None):
    """Write the model to path.  Returns the byte count on disk."""
    params = [[name, list(model.store.values[name].shape)]
              for name in model.store.values]
    aux = [[name, str(getattr(model, name).dtype),
            list(getattr(model, name).shape)] for name in _AUX]
    header = {
        "model": model.cfg.to_dict(),
        "params": params,
        "aux": aux,
        "active_levels": [model.active_g1, model.active_g2],
        "meta": dict(meta) if meta else {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(hbytes)), hbytes]
    for name, _ in params:
        parts.append(model.store.values[name].astype("<f4",
                                                     copy=False).tobytes())
    for name, dtype, _ in aux:
        arr = getattr(model, name)
        parts.append(arr.astype(np.dtype(dtype).newbyteorder("<"),
                                copy=False).tobytes())
    payload = b"".join(parts)
    blob = payload + _digest(payload)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_checkpoint(path, rng=None):
    """Read a checkpoint back into a model.  Returns (model, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12 + _DIGEST_BYTES:
        raise CheckpointError("file too short to be a checkpoint")
    payload, stored = blob[:-_DIGEST_BYTES], blob[-_DIGEST_BYTES:]
    if _digest(payload) != stored:
        raise CheckpointError("checksum mismatch, file corrupt")
    if payload[:4] != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint")
    version, hlen = struct.unpack_from("<IQ", payload, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 4 + 12
    try:
        header = json.loads(payload[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable header: {e}") from e
    off += hlen

    cfg = ModelConfig.from_dict(header["model"])
    aux_arrays = {}
    # blocks first, then aux, in manifest order
    blocks = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = off + 4 * n
        if end > len(payload):
            raise CheckpointError(f"truncated block {name}")
        blocks[name] = np.frombuffer(payload, dtype="<f4", count=n,
                                     offset=off).reshape(shape)
        off = end
    for name, dtype, shape in header["aux"]:
        dt = np.dtype(dtype).newbyteorder("<")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = off + dt.itemsize * n
        if end > len(payload):
            raise CheckpointError(f"truncated block {name}")
        aux_arrays[name] = np.frombuffer(payload, dtype=dt, count=n,
                                         offset=off).reshape(shape)
        off = end
    if off != len(payload):
        raise CheckpointError("trailing bytes after declared blocks")

    model = LightSphereModel(
        cfg,
        gyro=aux_arrays["gyro"].astype(np.float64),
        intrinsics=aux_arrays["intrinsics"].astype(np.float64),
        distortion=aux_arrays["distortion"].astype(np.float64),
        rng=rng if rng is not None else np.random.default_rng(0))
    for name, value in blocks.items():
        if name not in model.store.values:
            raise CheckpointError(f"unknown parameter block {name}")
        dst = model.store.values[name]
        if list(dst.shape) != list(value.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: "
                f"file {list(value.shape)}, model {list(dst.shape)}")
        # copy in place: the hash grids alias these arrays
        dst[...] = value
    g1, g2 = header["active_levels"]
    model.active_g1 = g1
    model.active_g2 = g2
    return model, header["meta"]


