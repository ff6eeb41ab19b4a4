"""WAV files, raw float32 dumps with text sidecars, and parameter checkpoints.

A dump is a headerless little-endian float32 file in row-major order. Its
sidecar lives next to it with a ``.hdr`` suffix and holds one line such as
``shape=47,80;sr=24000;hop=1024``. A checkpoint is a directory with one dump
per named tensor plus ``manifest.txt``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DomainError, ShapeError

FORMAT_VERSION = 1
MANIFEST = "manifest.txt"


def read_wav(path, expected_rate=None):
    """Read a mono 16-bit PCM or 32-bit float WAV as float64 in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise DomainError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if expected_rate is not None and rate != expected_rate:
        raise DomainError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DomainError(f"{path}: unsupported sample format {data.dtype}")
    return samples, rate


def write_wav(path, samples, sample_rate, fmt="pcm16"):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise DomainError("only mono audio can be written")
    if fmt == "pcm16":
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = samples.astype(np.float32)
    else:
        raise DomainError(f"unknown wav format {fmt!r}")
    wavfile.write(path, int(sample_rate), data)


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".hdr")


def format_header(fields):
    return ";".join(f"{k}={v}" for k, v in fields.items())


def parse_header(text):
    fields = {}
    for part in text.strip().split(";"):
        if part:
            key, _, value = part.partition("=")
            fields[key.strip()] = value.strip()
    if "shape" not in fields:
        raise ShapeError("header is missing the shape field")
    return fields


def write_dump(path, array, **fields):
    """Write ``array`` as raw little-endian float32 plus its sidecar header."""
    array = np.ascontiguousarray(array, dtype="<f4")
    Path(path).write_bytes(array.tobytes())
    header = {"shape": ",".join(str(d) for d in array.shape), **fields}
    _sidecar(path).write_text(format_header(header) + "\n")


def read_dump(path):
    """Return ``(array, header_fields)`` for a dump written by :func:`write_dump`."""
    fields = parse_header(_sidecar(path).read_text())
    shape = tuple(int(d) for d in fields["shape"].split(",") if d != "")
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape).astype(np.float64), fields


def write_spectrogram(path, values, sample_rate, hop):
    write_dump(path, values, sr=int(sample_rate), hop=int(hop))


def save_checkpoint(directory, tensors, config=None):
    """Save named arrays (e.g. a ``state_dict``) and an optional config dict."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"format_version={FORMAT_VERSION}"]
    if config is not None:
        lines.append("config=" + json.dumps(config, sort_keys=True))
    for name, value in tensors.items():
        array = np.asarray(value.detach().cpu().numpy() if hasattr(value, "detach") else value)
        write_dump(directory / f"{name}.f32", array, dtype=str(array.dtype))
        lines.append(f"tensor={name};shape={','.join(str(d) for d in array.shape)}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    return directory


def load_checkpoint(directory):
    """Return ``(tensors, config)``; integer tensors regain their dtype."""
    directory = Path(directory)
    lines = (directory / MANIFEST).read_text().splitlines()
    version = None
    config = None
    tensors = {}
    for line in lines:
        key, _, value = line.partition("=")
        if key == "format_version":
            version = int(value)
        elif key == "config":
            config = json.loads(value)
        elif key == "tensor":
            name = value.split(";", 1)[0]
            array, fields = read_dump(directory / f"{name}.f32")
            dtype = np.dtype(fields.get("dtype", "float32"))
            tensors[name] = array.astype(dtype) if dtype.kind in "iub" else array
    if version != FORMAT_VERSION:
        raise DomainError(f"unsupported checkpoint format version {version}")
    return tensors, config
