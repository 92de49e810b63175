"""Binary checkpoints.

Layout::

    b"FPFM1" | u32 version | u32 header length | JSON header | float64 payload

All integers and floats are little-endian.  The JSON header records the method
tag, the architecture of every stored network (layer dims and activation), the
basis size, the data dimension, a config snapshot and the seed.  The payload is
each network's ``W0, b0, W1, b1, ...`` in header order, so a round trip is
bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet
from .exceptions import CheckpointError
from .nn import Mlp

MAGIC = b"FPFM1"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    method: str
    nets: dict
    n: int
    k: int = 0
    config: dict = field(default_factory=dict)
    seed: int = 0
    extra: dict = field(default_factory=dict)
    version: int = VERSION

    def basis(self):
        """Rebuild the :class:`BasisSet` of an FP-FM checkpoint."""
        if "basis" not in self.nets:
            raise CheckpointError(f"checkpoint for {self.method!r} holds no basis")
        return BasisSet(self.nets["basis"], self.k, self.n, self.nets.get("mean"))

    def payload_bytes(self):
        return b"".join(_net_bytes(net) for net in self.nets.values())


def _net_bytes(net):
    return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params)


def save(path, ckpt):
    header = {
        "method": ckpt.method,
        "n": int(ckpt.n),
        "k": int(ckpt.k),
        "seed": int(ckpt.seed),
        "config": ckpt.config,
        "extra": ckpt.extra,
        "nets": [{"name": name, "layer_dims": net.layer_dims, "activation": net.activation}
                 for name, net in ckpt.nets.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U32.pack(VERSION))
        fh.write(_U32.pack(len(blob)))
        fh.write(blob)
        fh.write(ckpt.payload_bytes())


def _take(buf, pos, count, what):
    end = pos + count
    if end > len(buf):
        raise CheckpointError(f"truncated checkpoint: {what} needs {count} bytes at offset "
                              f"{pos}, file has {len(buf)}")
    return buf[pos:end], end


def load(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an FPFM checkpoint")
    pos = len(MAGIC)
    raw, pos = _take(buf, pos, 4, "version")
    version = _U32.unpack(raw)[0]
    if version > VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is newer than the "
                              f"supported version {VERSION}")
    if version < 1:
        raise CheckpointError(f"{path}: invalid checkpoint version {version}")
    raw, pos = _take(buf, pos, 4, "header length")
    raw, pos = _take(buf, pos, _U32.unpack(raw)[0], "header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    nets = {}
    for spec in header["nets"]:
        dims = spec["layer_dims"]
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            raw, pos = _take(buf, pos, 8 * d_in * d_out, f"{spec['name']} weights")
            weights.append(np.frombuffer(raw, dtype="<f8").reshape(d_in, d_out)
                           .astype(np.float64))
            raw, pos = _take(buf, pos, 8 * d_out, f"{spec['name']} biases")
            biases.append(np.frombuffer(raw, dtype="<f8").astype(np.float64))
        nets[spec["name"]] = Mlp(weights, biases, spec["activation"])
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after payload")
    return Checkpoint(header["method"], nets, header["n"], header["k"], header["config"],
                      header["seed"], header.get("extra", {}), version)
