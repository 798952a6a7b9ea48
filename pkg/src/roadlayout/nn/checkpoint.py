"""Weight checkpoints: magic "LNWT", version, then name/shape/float64 records.

Layout (little-endian):
  "LNWT" | u32 version | u32 record count
  per record: u16 name length | utf-8 name | u8 ndim | u32 dims... | f64 data

Records preserve insertion order, so a load/save cycle is byte-exact.
Optimizer state rides along as extra records named "adam.m.<p>", "adam.v.<p>"
and "adam.step.<p>" so a resumed run continues deterministically.
"""

import struct

import numpy as np

from .optim import Parameter

CHECKPOINT_MAGIC = b"LNWT"
CHECKPOINT_VERSION = 1


def _pack_record(name: str, array: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.asarray(array, dtype=np.float64)
    parts = [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
    for dim in arr.shape:
        parts.append(struct.pack("<I", dim))
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_records(path, records) -> None:
    """records: iterable of (name, array) in the order they should persist."""
    records = list(records)
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(records))]
    for name, array in records:
        out.append(_pack_record(name, array))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_records(path):
    """Returns the (name, array) list in file order."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic %r in %s" % (buf[:4], path))
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version %d" % version)
    offset = 12
    records = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            shape.append(dim)
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        records.append((name, data.astype(np.float64)))
    if offset != len(buf):
        raise ValueError("trailing bytes in checkpoint %s" % path)
    return records


def save_checkpoint(path, params, meta: dict = None, include_optim: bool = True) -> None:
    """params: iterable of Parameter; meta: extra name -> array records."""
    records = []
    for key in sorted(meta) if meta else ():
        records.append(("meta." + key, np.asarray(meta[key], dtype=np.float64)))
    params = list(params)
    for p in params:
        records.append((p.name, p.tensor.data))
    if include_optim:
        for p in params:
            records.append(("adam.m." + p.name, p.m))
            records.append(("adam.v." + p.name, p.v))
            records.append(("adam.step." + p.name, np.array([float(p.step)])))
    save_records(path, records)


def load_checkpoint(path):
    """Returns (params dict name -> Parameter with restored ADAM state, meta dict)."""
    records = dict(load_records(path))
    meta = {}
    params = {}
    for name, array in records.items():
        if name.startswith("meta."):
            meta[name[5:]] = array
        elif not name.startswith("adam."):
            params[name] = Parameter(name, array.copy())
    for name, p in params.items():
        if "adam.m." + name in records:
            p.m = records["adam.m." + name].copy()
            p.v = records["adam.v." + name].copy()
            p.step = int(records["adam.step." + name][0])
    return params, meta
