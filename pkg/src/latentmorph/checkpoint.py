"""Checkpoint file format.

Layout (all integers little-endian)::

    bytes 0-7     magic b"LMORPHCK"
    bytes 8-15    uint64 header length H
    next H bytes  UTF-8 JSON header
    rest          float64 little-endian parameters

The header carries ``format_version``, ``latent_dim``, the generator and feature
network specs (generator may be null), ``metadata`` and ``param_count``.
Parameters are stored generator first, then feature network, each layer as
weight (row-major) followed by bias.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointParseError, UnsupportedVersionError
from .networks import MlpParams, MlpSpec

MAGIC = b"LMORPHCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    generator: object  # MlpParams or None in generator-free mode
    features: MlpParams
    latent_dim: int
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def copy(self):
        return Checkpoint(
            None if self.generator is None else self.generator.copy(),
            self.features.copy(),
            self.latent_dim,
            json.loads(json.dumps(self.metadata)),
            self.version,
        )

    def equals(self, other):
        if (self.generator is None) != (other.generator is None):
            return False
        gen_ok = self.generator is None or self.generator.equals(other.generator)
        return gen_ok and self.features.equals(other.features) and self.latent_dim == other.latent_dim


def _nets(ckpt):
    return [n for n in (ckpt.generator, ckpt.features) if n is not None]


def to_bytes(ckpt):
    params = [a for net in _nets(ckpt) for a in net.arrays()]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params)
    header = {
        "format_version": FORMAT_VERSION,
        "latent_dim": int(ckpt.latent_dim),
        "generator": None if ckpt.generator is None else ckpt.generator.spec.to_dict(),
        "features": ckpt.features.spec.to_dict(),
        "metadata": ckpt.metadata,
        "param_count": int(sum(a.size for a in params)),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + blob


def save_checkpoint(ckpt, path):
    data = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def _read_net(spec_dict, blob, pos, offset0):
    spec = MlpSpec.from_dict(spec_dict)
    layers = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        arrs = []
        for shape in ((fan_in, fan_out), (fan_out,)):
            count = int(np.prod(shape))
            end = pos + 8 * count
            if end > len(blob):
                raise CheckpointParseError("parameter blob truncated", offset0 + len(blob))
            arrs.append(np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(shape))
            pos = end
        layers.append(arrs)
    return MlpParams(spec, layers), pos


def from_bytes(data):
    if len(data) < 16:
        raise CheckpointParseError("file too short for checkpoint preamble", len(data))
    if data[:8] != MAGIC:
        raise CheckpointParseError("bad magic bytes", 0)
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise CheckpointParseError(f"header length {hlen} runs past end of file", len(data))
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CheckpointParseError("header is not UTF-8", 16 + exc.start)
    except json.JSONDecodeError as exc:
        raise CheckpointParseError(f"header JSON invalid: {exc.msg}", 16 + exc.pos)
    if not isinstance(header, dict):
        raise CheckpointParseError("header is not a JSON object", 16)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version, FORMAT_VERSION)
    offset0 = 16 + hlen
    blob = data[offset0:]
    expected = 8 * int(header.get("param_count", -1))
    if expected != len(blob):
        raise CheckpointParseError(
            f"parameter blob has {len(blob)} bytes, header declares {expected}",
            offset0 + min(len(blob), max(expected, 0)),
        )
    try:
        pos = 0
        generator = None
        if header["generator"] is not None:
            generator, pos = _read_net(header["generator"], blob, pos, offset0)
        features, pos = _read_net(header["features"], blob, pos, offset0)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointParseError):
            raise
        raise CheckpointParseError(f"malformed header: {exc}", 16)
    if pos != len(blob):
        raise CheckpointParseError("trailing bytes after parameters", offset0 + pos)
    return Checkpoint(generator, features, int(header["latent_dim"]), header.get("metadata", {}))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
