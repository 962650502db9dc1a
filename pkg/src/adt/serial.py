"""Binary tensor files and checkpoint directories.

Tensor container layout (all integers little-endian):

    magic   4 bytes  b"ADTN"
    version u8       currently 1
    dtype   u8       0 = float32, 1 = float64, 2 = int64
    rank    u8
    extents u64 * rank
    payload raw C-order values, little-endian

A checkpoint is a directory holding one ``.adtn`` file per named tensor, a
``manifest.txt`` with one tensor name per line, and a ``config.txt`` snapshot
of ``key=value`` pairs describing the run that produced it.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

_MAGIC = b"ADTN"
_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
          np.dtype(np.int64): 2}


def write_tensor(path: str, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype not in _CODES:
        raise FormatError(
            f"{path}: unsupported dtype {array.dtype} "
            "(use float32, float64, or int64)"
        )
    code = _CODES[array.dtype]
    header = _MAGIC + struct.pack("<BBB", _VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array).astype(_DTYPES[code]).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_tensor(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise FormatError(
            f"{path}: cannot read tensor file ({e.strerror})"
        ) from None
    if len(blob) < 7 or blob[:4] != _MAGIC:
        raise FormatError(f"{path}: not a tensor container (bad magic)")
    version, code, rank = struct.unpack("<BBB", blob[4:7])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    offset = 7 + 8 * rank
    if len(blob) < offset:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack(f"<{rank}Q", blob[7:offset])
    dtype = _DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {expected}"
        )
    data = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape)
    return data.astype(dtype.newbyteorder("="))


def _tensor_filename(name: str) -> str:
    # Tensor names use dots as scope separators; keep them, they are legal
    # in filenames on every platform we target.
    if "/" in name or "\\" in name or name in ("", ".", ".."):
        raise FormatError(f"illegal tensor name {name!r}")
    return name + ".adtn"


def save_checkpoint(path: str, tensors: dict, config: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    names = sorted(tensors)
    for name in names:
        write_tensor(os.path.join(path, _tensor_filename(name)), tensors[name])
    with open(os.path.join(path, "manifest.txt"), "w") as f:
        for name in names:
            f.write(name + "\n")
    if config is not None:
        with open(os.path.join(path, "config.txt"), "w") as f:
            for key in sorted(config):
                f.write(f"{key}={config[key]}\n")


def load_checkpoint(path: str) -> tuple[dict, dict]:
    manifest = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest):
        raise FormatError(f"{path}: missing manifest.txt, not a checkpoint")
    with open(manifest) as f:
        names = [line.strip() for line in f if line.strip()]
    tensors = {}
    for name in names:
        tensors[name] = read_tensor(os.path.join(path, _tensor_filename(name)))
    config = {}
    config_path = os.path.join(path, "config.txt")
    if os.path.isfile(config_path):
        with open(config_path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, value = line.partition("=")
                config[key] = value
    return tensors, config
