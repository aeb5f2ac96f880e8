"""Binary file formats: datasets (LMPD), checkpoints (LMPC) and retrieval indices (LMPI).

All formats are little-endian, start with a 4-byte magic, a u32 format version, the
u64 config hash and u64 seed of the run that wrote them, and end with an 8-byte
BLAKE2b checksum of every preceding byte. Readers validate all of it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ParameterError

FORMAT_VERSION = 1
CHECKSUM_BYTES = 8


def checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_BYTES).digest()


def array_fingerprint(x: np.ndarray) -> int:
    """u64 digest of an array's float32 little-endian bytes."""
    raw = np.ascontiguousarray(x, dtype="<f4").tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


class _Writer:
    def __init__(self, magic: bytes, config_hash: int, seed: int):
        self.parts = [magic, struct.pack("<IQQ", FORMAT_VERSION, config_hash & (2**64 - 1), seed & (2**64 - 1))]

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def raw(self, b: bytes) -> None:
        self.parts.append(b)

    def array(self, x, dtype: str) -> None:
        self.parts.append(np.ascontiguousarray(x, dtype=dtype).tobytes())

    def finish(self) -> bytes:
        body = b"".join(self.parts)
        return body + checksum(body)


class _Reader:
    def __init__(self, blob: bytes, magic: bytes, what: str):
        if len(blob) < len(magic) + 20 + CHECKSUM_BYTES:
            raise DataFormatError(f"{what}: file too short")
        if blob[: len(magic)] != magic:
            raise DataFormatError(f"{what}: bad magic {blob[:len(magic)]!r}")
        body, tail = blob[:-CHECKSUM_BYTES], blob[-CHECKSUM_BYTES:]
        if checksum(body) != tail:
            raise DataFormatError(f"{what}: checksum mismatch (file corrupt or truncated)")
        self.buf, self.pos, self.what = body, len(magic), what
        version, self.config_hash, self.seed = self.unpack("IQQ")
        if version != FORMAT_VERSION:
            raise DataFormatError(f"{what}: unsupported format version {version}")

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.buf):
            raise DataFormatError(f"{self.what}: truncated header")
        out = struct.unpack_from("<" + fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataFormatError(f"{self.what}: truncated payload")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.raw(size), dtype=dtype).copy()

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise DataFormatError(f"{self.what}: {len(self.buf) - self.pos} unexpected trailing bytes")


def write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
    except OSError as exc:
        raise ParameterError(f"cannot write {path}: {exc}") from exc


def read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"{path} does not exist")
    return path.read_bytes()


# -- LMPD: trajectory datasets ---------------------------------------------------------------


@dataclass
class DatasetFile:
    trajectories: np.ndarray
    returns: np.ndarray
    horizon: int
    state_dim: int
    action_dim: int
    config_hash: int = 0
    seed: int = 0

    @property
    def N(self) -> int:
        return len(self.trajectories)


def encode_dataset(ds: DatasetFile) -> bytes:
    traj = np.asarray(ds.trajectories)
    d = ds.horizon * (ds.state_dim + ds.action_dim)
    if traj.ndim != 2 or traj.shape[1] != d or len(ds.returns) != len(traj):
        raise ParameterError("dataset arrays do not match the declared layout")
    w = _Writer(b"LMPD", ds.config_hash, ds.seed)
    w.pack("QIII", len(traj), ds.horizon, ds.state_dim, ds.action_dim)
    w.array(traj, "<f4")
    w.array(ds.returns, "<f4")
    return w.finish()


def decode_dataset(blob: bytes) -> DatasetFile:
    r = _Reader(blob, b"LMPD", "dataset")
    n, T, sd, ad = r.unpack("QIII")
    d = T * (sd + ad)
    if d == 0:
        raise DataFormatError("dataset: empty trajectory layout")
    traj = r.array("<f4", n * d).reshape(n, d).astype(np.float64)
    rets = r.array("<f4", n).astype(np.float64)
    r.done()
    return DatasetFile(traj, rets, T, sd, ad, r.config_hash, r.seed)


def write_dataset(path, ds: DatasetFile) -> None:
    write_bytes(path, encode_dataset(ds))


def read_dataset(path) -> DatasetFile:
    return decode_dataset(read_bytes(path))


# -- LMPC: checkpoints --------------------------------------------------------------------------


@dataclass
class CheckpointFile:
    """Canonical-JSON metadata plus named float32 tensors."""

    meta: dict
    tensors: dict = field(default_factory=dict)
    config_hash: int = 0
    seed: int = 0


def encode_checkpoint(ck: CheckpointFile) -> bytes:
    w = _Writer(b"LMPC", ck.config_hash, ck.seed)
    meta = canonical_json(ck.meta)
    w.pack("I", len(meta))
    w.raw(meta)
    names = list(ck.tensors)
    w.pack("I", len(names))
    arrays = []
    for name in names:
        arr = np.asarray(ck.tensors[name], dtype=np.float64)
        enc = name.encode()
        w.pack("H", len(enc))
        w.raw(enc)
        w.pack("B", arr.ndim)
        w.pack(f"{arr.ndim}Q", *arr.shape)
        arrays.append(arr)
    for arr in arrays:
        w.array(arr, "<f4")
    return w.finish()


def decode_checkpoint(blob: bytes) -> CheckpointFile:
    r = _Reader(blob, b"LMPC", "checkpoint")
    (meta_len,) = r.unpack("I")
    try:
        meta = json.loads(r.raw(meta_len))
    except ValueError as exc:
        raise DataFormatError(f"checkpoint: metadata is not valid JSON ({exc})") from exc
    (count,) = r.unpack("I")
    table = []
    for _ in range(count):
        (nlen,) = r.unpack("H")
        name = r.raw(nlen).decode()
        (ndim,) = r.unpack("B")
        shape = r.unpack(f"{ndim}Q") if ndim else ()
        table.append((name, tuple(shape)))
    tensors = {}
    for name, shape in table:
        tensors[name] = r.array("<f4", int(np.prod(shape, dtype=np.int64))).reshape(shape).astype(np.float64)
    r.done()
    return CheckpointFile(meta, tensors, r.config_hash, r.seed)


def write_checkpoint(path, ck: CheckpointFile) -> None:
    write_bytes(path, encode_checkpoint(ck))


def read_checkpoint(path) -> CheckpointFile:
    return decode_checkpoint(read_bytes(path))


# -- LMPI: retrieval index ------------------------------------------------------------------


@dataclass
class IndexFile:
    """Centroids (float64), inverted lists and a fingerprint of the indexed rows."""

    centroids: np.ndarray
    lists: list
    n_rows: int
    data_fingerprint: int
    config_hash: int = 0
    seed: int = 0


def encode_index(ix: IndexFile) -> bytes:
    cent = np.asarray(ix.centroids, dtype=np.float64)
    lists = [np.asarray(l, dtype=np.int64) for l in ix.lists]
    if len(lists) != len(cent):
        raise ParameterError("one inverted list per centroid required")
    w = _Writer(b"LMPI", ix.config_hash, ix.seed)
    w.pack("IIQQ", cent.shape[0], cent.shape[1], ix.n_rows, ix.data_fingerprint)
    w.array(cent, "<f8")
    offsets = np.concatenate([[0], np.cumsum([len(l) for l in lists])]).astype(np.uint64)
    w.array(offsets, "<u8")
    w.array(np.concatenate(lists) if lists else np.zeros(0), "<u8")
    return w.finish()


def decode_index(blob: bytes) -> IndexFile:
    r = _Reader(blob, b"LMPI", "index")
    n_list, d, n, fp = r.unpack("IIQQ")
    cent = r.array("<f8", n_list * d).reshape(n_list, d)
    offsets = r.array("<u8", n_list + 1).astype(np.int64)
    ids = r.array("<u8", n).astype(np.int64)
    r.done()
    if offsets[0] != 0 or offsets[-1] != n or np.any(np.diff(offsets) < 0):
        raise DataFormatError("index: inconsistent list offsets")
    lists = [ids[offsets[c]:offsets[c + 1]] for c in range(n_list)]
    return IndexFile(cent, lists, n, fp, r.config_hash, r.seed)


def write_index(path, ix: IndexFile) -> None:
    write_bytes(path, encode_index(ix))


def read_index(path) -> IndexFile:
    return decode_index(read_bytes(path))


def index_file(index, config_hash: int = 0, seed: int = 0) -> IndexFile:
    """Persistable part of an :class:`~lomap.index.AnnIndex`; rows are referenced by fingerprint."""
    return IndexFile(index.centroids, index.lists, index.size, array_fingerprint(index.data), config_hash, seed)


def restore_index(ix: IndexFile, data):
    """Rebuild an index over ``data``, refusing rows that differ from the ones indexed."""
    from .index import AnnIndex

    data = np.asarray(data, dtype=float)
    if len(data) != ix.n_rows or array_fingerprint(data) != ix.data_fingerprint:
        raise DataFormatError("index: rows do not match the indexed dataset")
    if ix.centroids.shape[1] != data.shape[1]:
        raise DataFormatError("index: centroid dimension does not match the rows")
    return AnnIndex.from_parts(data, ix.centroids, ix.lists, ix.seed)
