"""File formats: WAV audio and the manifest + raw float32 array container.

The array container is a short UTF-8 text header followed by the payloads::

    NNIVA <kind> <version>
    scalar <name> <value>
    ...
    array <name> <real|complex> <dim0> <dim1> ...
    ...
    end

Payloads are little-endian 32-bit floats, row-major, in header order.
Complex arrays are stored with interleaved (re, im) pairs.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .exceptions import FormatError, ParameterError

MAGIC = "NNIVA"
_F32 = np.dtype("<f4")


def read_wav(path) -> tuple[int, np.ndarray]:
    """Return ``(sample_rate, data)`` with data as float64 ``(channels, samples)``.

    Integer PCM is scaled to [-1, 1).
    """
    rate, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(float) / float(-np.iinfo(data.dtype).min)
    else:
        data = data.astype(float)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return int(rate), np.ascontiguousarray(data)


def write_wav(path, sample_rate: int, data: np.ndarray, subtype: str = "float32") -> None:
    """Write ``(channels, samples)`` or 1-D data as PCM16 or float32 WAV."""
    x = np.asarray(data, dtype=float)
    if x.ndim == 2:
        x = x[0] if x.shape[0] == 1 else x.T
    if subtype == "pcm16":
        out = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif subtype == "float32":
        out = x.astype(np.float32)
    else:
        raise ParameterError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(str(path), int(sample_rate), out)


def write_arrays(path, kind: str, version: int, scalars: dict, arrays: dict) -> None:
    lines = [f"{MAGIC} {kind} {int(version)}"]
    for name, value in scalars.items():
        lines.append(f"scalar {name} {value}")
    payloads = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if np.iscomplexobj(arr):
            tag = "complex"
            flat = np.stack([arr.real, arr.imag], axis=-1)
        else:
            tag = "real"
            flat = arr
        lines.append(" ".join(["array", name, tag, *map(str, arr.shape)]))
        payloads.append(np.ascontiguousarray(flat, dtype=_F32).tobytes())
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(header + b"".join(payloads))


def read_arrays(path, kind: str) -> tuple[int, dict, dict]:
    """Parse a container written by :func:`write_arrays`.

    Returns ``(version, scalars, arrays)``; scalar values are left as strings.
    """
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    stop = raw.find(marker)
    if stop < 0:
        raise FormatError(f"{path}: missing header terminator")
    try:
        header = raw[:stop].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not text") from exc
    body = raw[stop + len(marker):]

    first = header[0].split()
    if len(first) != 3 or first[0] != MAGIC or first[1] != kind:
        raise FormatError(f"{path}: expected a {kind!r} file, header reads {header[0]!r}")
    try:
        version = int(first[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad version field") from exc

    scalars, specs = {}, []
    for line in header[1:]:
        parts = line.split()
        if len(parts) == 3 and parts[0] == "scalar":
            scalars[parts[1]] = parts[2]
        elif len(parts) >= 3 and parts[0] == "array" and parts[2] in ("real", "complex"):
            try:
                shape = tuple(int(p) for p in parts[3:])
            except ValueError as exc:
                raise FormatError(f"{path}: bad array dimensions in {line!r}") from exc
            if any(d < 0 for d in shape):
                raise FormatError(f"{path}: negative dimension in {line!r}")
            specs.append((parts[1], parts[2], shape))
        else:
            raise FormatError(f"{path}: unrecognized header line {line!r}")

    arrays, offset = {}, 0
    for name, tag, shape in specs:
        count = int(np.prod(shape, dtype=np.int64)) * (2 if tag == "complex" else 1)
        nbytes = count * _F32.itemsize
        if offset + nbytes > len(body):
            raise FormatError(f"{path}: payload truncated while reading {name!r}")
        flat = np.frombuffer(body, dtype=_F32, count=count, offset=offset).astype(np.float32)
        offset += nbytes
        if tag == "complex":
            pairs = flat.reshape(*shape, 2)
            arrays[name] = (pairs[..., 0] + 1j * pairs[..., 1]).astype(np.complex64)
        else:
            arrays[name] = flat.reshape(shape)
    if offset != len(body):
        raise FormatError(f"{path}: {len(body) - offset} trailing payload bytes")
    return version, scalars, arrays
