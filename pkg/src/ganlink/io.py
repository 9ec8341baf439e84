"""Binary formats: MMTE tensors and CGHL checkpoints.

MMTE layout (little endian)::

    b"MMTE" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u32 ndim | u64 dims... | elements

CGHL layout::

    b"CGHL" | u32 version=1 | u8 len + kind | u32 len + canonical JSON config
    | u32 tensor count | (u16 len + name, u64 len + MMTE payload)... | u64 seed | u32 epochs
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, MagicError, TruncationError, VersionError

MMTE_MAGIC = b"MMTE"
MMTE_VERSION = 1
CKPT_MAGIC = b"CGHL"
CKPT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError(f"{self.what}: needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def mmte_bytes(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    code = _CODES[arr.dtype]
    header = MMTE_MAGIC + struct.pack("<IBI", MMTE_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def _read_mmte(reader: _Reader) -> np.ndarray:
    if reader.take(4) != MMTE_MAGIC:
        raise MagicError(f"{reader.what}: not an MMTE tensor (bad magic)")
    version, code, ndim = reader.unpack("<IBI")
    if version != MMTE_VERSION:
        raise VersionError(f"{reader.what}: unsupported MMTE version {version}")
    if code not in _DTYPES:
        raise VersionError(f"{reader.what}: unsupported MMTE dtype code {code}")
    dims = reader.unpack(f"<{ndim}Q") if ndim else ()
    dtype = _DTYPES[code]
    count = int(np.prod(dims)) if dims else 1
    raw = reader.take(count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc


def parse_mmte(buf: bytes, what: str = "MMTE") -> np.ndarray:
    return _read_mmte(_Reader(buf, what))


def write_mmte(path, array) -> None:
    Path(path).write_bytes(mmte_bytes(array))


def read_mmte(path) -> np.ndarray:
    path = Path(path)
    return parse_mmte(_read_bytes(path), str(path))


def write_embeddings(path, ids, matrix) -> None:
    """Embedding matrix as MMTE plus a sidecar ``<path>.ids`` listing one id per line."""
    path = Path(path)
    write_mmte(path, matrix)
    Path(str(path) + ".ids").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    matrix = read_mmte(path)
    sidecar = Path(str(path) + ".ids")
    if not sidecar.exists():
        raise DataError(f"missing id sidecar {sidecar}")
    ids = sidecar.read_text(encoding="utf-8").splitlines()
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise DataError(f"{path}: {len(ids)} ids for matrix of shape {matrix.shape}")
    return ids, matrix


# ---------------------------------------------------------------------------
# checkpoints


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(bundle, path) -> None:
    kind = bundle.kind.encode("ascii")
    config = _canonical(bundle.config_dict()).encode("utf-8")
    tensors = []
    for group, params in bundle.params.items():
        for name, tensor in params.items():
            tensors.append((f"{group}/{name}", tensor.data))
    for name, state in bundle.bn.items():
        tensors.append((f"bn/{name}/mean", state.mean))
        tensors.append((f"bn/{name}/var", state.var))

    parts = [CKPT_MAGIC, struct.pack("<IB", CKPT_VERSION, len(kind)), kind,
             struct.pack("<I", len(config)), config, struct.pack("<I", len(tensors))]
    for name, data in tensors:
        raw_name = name.encode("utf-8")
        payload = mmte_bytes(data)
        parts += [struct.pack("<H", len(raw_name)), raw_name, struct.pack("<Q", len(payload)), payload]
    parts.append(struct.pack("<QI", int(bundle.seed), int(bundle.epochs)))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    from . import models

    path = Path(path)
    reader = _Reader(_read_bytes(path), str(path))
    if reader.take(4) != CKPT_MAGIC:
        raise MagicError(f"{path}: not a checkpoint (bad magic)")
    version, kind_len = reader.unpack("<IB")
    if version != CKPT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    kind = reader.take(kind_len).decode("ascii")
    (config_len,) = reader.unpack("<I")
    config = json.loads(reader.take(config_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (payload_len,) = reader.unpack("<Q")
        tensors[name] = parse_mmte(reader.take(payload_len), f"{path}:{name}")
    seed, epochs = reader.unpack("<QI")

    configs = configs_from_dict(kind, config)
    bundle = models.build(kind, configs, seed)
    bundle.epochs = epochs
    for group, params in bundle.params.items():
        for name, tensor in params.items():
            key = f"{group}/{name}"
            if key not in tensors:
                raise TruncationError(f"{path}: checkpoint lacks tensor {key}")
            data = tensors[key]
            if data.shape != tensor.shape:
                raise DataError(f"{path}: tensor {key} has shape {data.shape}, config implies {tensor.shape}")
            tensor.data = data.copy()
    for name, state in bundle.bn.items():
        state.mean = tensors[f"bn/{name}/mean"].copy()
        state.var = tensors[f"bn/{name}/var"].copy()
    return bundle


def configs_from_dict(kind: str, config: dict) -> dict:
    from . import models

    types = {"generator": models.GeneratorConfig, "discriminator": models.DiscriminatorConfig,
             "ae": models.AEConfig, "bidnn": models.BiDNNConfig}
    out = {}
    for group, values in config.items():
        if group not in types:
            raise ConfigError(f"unknown config section {group!r} for {kind}")
        out[group] = types[group](**values)
    return out
