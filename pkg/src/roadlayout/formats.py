"""Binary and JSON interchange formats.

TVMP is the top-view map container: a 16-byte little-endian header
(magic "TVMP", u16 height, u16 width, u16 channels, u16 flags, u32 reserved)
followed by row-major float32 data of shape (H, W, C).

fields.bin stores the per-frame displacement fields of one sequence as a u16
count followed by that many TVMP payloads with C=2 (row offset, col offset).

Point clouds travel as ASCII PLY with a per-vertex integer label plus a JSON
sidecar mapping point index -> [[frame_id, u, v], ...] pixel visibility.
"""

import json
import struct

import numpy as np

TVMP_MAGIC = b"TVMP"
_TVMP_HEADER = struct.Struct("<4sHHHHI")


def write_tvmp_bytes(data: np.ndarray, flags: int = 0) -> bytes:
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError("TVMP data must be (H, W, C)")
    h, w, c = data.shape
    header = _TVMP_HEADER.pack(TVMP_MAGIC, h, w, c, flags, 0)
    return header + np.ascontiguousarray(data, dtype="<f4").tobytes()


def read_tvmp_bytes(buf: bytes, offset: int = 0):
    """Returns (data float32 (H,W,C), flags, bytes consumed)."""
    magic, h, w, c, flags, _ = _TVMP_HEADER.unpack_from(buf, offset)
    if magic != TVMP_MAGIC:
        raise ValueError("bad TVMP magic %r" % (magic,))
    n = h * w * c
    start = offset + _TVMP_HEADER.size
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=start).reshape(h, w, c)
    return data.astype(np.float32), flags, _TVMP_HEADER.size + 4 * n


def write_tvmp(path, data: np.ndarray, flags: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(write_tvmp_bytes(data, flags))


def read_tvmp(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    data, _, used = read_tvmp_bytes(buf)
    if used != len(buf):
        raise ValueError("trailing bytes after TVMP payload in %s" % path)
    return data


def write_fields(path, fields: np.ndarray) -> None:
    """fields: (T-1, h, w, 2) float array."""
    fields = np.asarray(fields)
    if fields.ndim != 4 or fields.shape[3] != 2:
        raise ValueError("fields must be (T-1, h, w, 2)")
    out = [struct.pack("<H", fields.shape[0])]
    for k in range(fields.shape[0]):
        out.append(write_tvmp_bytes(fields[k]))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def read_fields(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (count,) = struct.unpack_from("<H", buf, 0)
    offset = 2
    fields = []
    for _ in range(count):
        data, _, used = read_tvmp_bytes(buf, offset)
        offset += used
        fields.append(data)
    if offset != len(buf):
        raise ValueError("trailing bytes after fields payload in %s" % path)
    if not fields:
        return np.zeros((0, 0, 0, 2), dtype=np.float32)
    return np.stack(fields)


def write_labeled_ply(path, points: np.ndarray, labels: np.ndarray) -> None:
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) != len(labels):
        raise ValueError("need (N,3) points and (N,) labels")
    lines = [
        "ply",
        "format ascii 1.0",
        "element vertex %d" % len(points),
        "property float x",
        "property float y",
        "property float z",
        "property int label",
        "end_header",
    ]
    for p, lab in zip(points, labels):
        lines.append("%.9g %.9g %.9g %d" % (p[0], p[1], p[2], lab))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_labeled_ply(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise ValueError("not a PLY file: %s" % path)
    n = None
    body_at = None
    for i, ln in enumerate(lines):
        if ln.startswith("element vertex"):
            n = int(ln.split()[-1])
        if ln == "end_header":
            body_at = i + 1
            break
    if n is None or body_at is None:
        raise ValueError("malformed PLY header in %s" % path)
    rows = [ln.split() for ln in lines[body_at : body_at + n]]
    points = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows])
    labels = np.array([int(r[3]) for r in rows], dtype=np.int64)
    return points, labels


def write_visibility(path, visibility) -> None:
    """visibility: list of [[frame_id, u, v], ...] per point."""
    obj = {str(i): [[int(f), int(u), int(v)] for f, u, v in vis] for i, vis in enumerate(visibility)}
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)


def read_visibility(path, n_points: int):
    with open(path) as fh:
        obj = json.load(fh)
    out = [[] for _ in range(n_points)]
    for key, vis in obj.items():
        out[int(key)] = [(int(f), int(u), int(v)) for f, u, v in vis]
    return out


def write_poses(path, poses) -> None:
    """poses: iterable of objects with frame_id, rotation (3,3), translation (3,)."""
    records = []
    for p in poses:
        records.append(
            {
                "frame_id": int(p.frame_id),
                "R": [float(v) for v in np.asarray(p.rotation).reshape(9)],
                "t": [float(v) for v in np.asarray(p.translation).reshape(3)],
            }
        )
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1, sort_keys=True)


def read_poses(path):
    from .bev_global import CameraPose

    with open(path) as fh:
        records = json.load(fh)
    poses = []
    for rec in records:
        poses.append(
            CameraPose(
                rotation=np.array(rec["R"], dtype=np.float64).reshape(3, 3),
                translation=np.array(rec["t"], dtype=np.float64),
                frame_id=int(rec["frame_id"]),
            )
        )
    return poses
