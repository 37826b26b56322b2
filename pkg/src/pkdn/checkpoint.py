"""Binary checkpoint format.

Layout (all integers little-endian)::

    offset 0   5 bytes   magic b"PKDN1"  ("PKDN" + format version digit)
    offset 5   4 bytes   uint32 header length L
    offset 9   L bytes   UTF-8 JSON header
    offset 9+L           parameter blobs, then optional Adam moment blobs

Header fields:

``format``        1
``role``          "teacher" or "student"
``cfg``           every NetConfig field (includes ``element_mode`` and ``seed``)
``element_mode``  "float32" or "float64" (repeated for readers that skip cfg)
``tensors``       list of ``{"name", "shape", "dtype", "offset", "nbytes"}`` in
                  blob order; ``offset`` is relative to the end of the header.
                  Parameter names come first in network order, followed by
                  ``adam.m/<name>`` and ``adam.v/<name>`` entries when present.
``train_state``   null or ``{"step", "adam_t", "seed", "history"}``

Blob dtypes are ``"<f4"`` or ``"<f8"``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .networks import NetConfig, PKDNet

MAGIC_PREFIX = b"PKDN"
VERSION = 1
MAGIC = MAGIC_PREFIX + str(VERSION).encode()


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownVersionError(CheckpointError):
    pass


def save(net: PKDNet, path, train_state: dict | None = None, with_moments: bool = False) -> None:
    params = net.named_parameters()
    entries, blobs = [], []
    offset = 0

    def push(name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    params = list(params)
    for name, p in params:
        push(name, p.data)
    if with_moments:
        for name, p in params:
            push(f"adam.m/{name}", p.m)
        for name, p in params:
            push(f"adam.v/{name}", p.v)
    header = {
        "format": VERSION,
        "role": net.role,
        "cfg": net.cfg.to_dict(),
        "element_mode": net.cfg.element_mode,
        "tensors": entries,
        "train_state": train_state,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def read_header(buf: bytes, path="checkpoint") -> tuple[dict, int]:
    if len(buf) < 5:
        raise TruncatedCheckpointError(f"{path}: file too short for the magic string")
    if buf[:4] != MAGIC_PREFIX:
        raise CheckpointError(f"{path}: not a PKDN checkpoint (bad magic {buf[:5]!r})")
    if buf[:5] != MAGIC:
        raise UnknownVersionError(f"{path}: unsupported checkpoint version {buf[4:5]!r}")
    if len(buf) < 9:
        raise TruncatedCheckpointError(f"{path}: header length missing")
    (hlen,) = struct.unpack("<I", buf[5:9])
    if len(buf) < 9 + hlen:
        raise TruncatedCheckpointError(f"{path}: header truncated ({len(buf) - 9} of {hlen} bytes)")
    try:
        header = json.loads(buf[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format") != VERSION:
        raise UnknownVersionError(f"{path}: unsupported header format {header.get('format')!r}")
    return header, 9 + hlen


def _tensors(buf: bytes, header: dict, base: int, path) -> dict:
    out = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        end = start + e["nbytes"]
        if end > len(buf):
            raise TruncatedCheckpointError(f"{path}: tensor {e['name']!r} truncated")
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=start)
        out[e["name"]] = arr.reshape(e["shape"])
    return out


def load(path, cfg: NetConfig | None = None, role: str | None = None) -> tuple[PKDNet, dict | None]:
    """Rebuild a network from ``path``; returns (net, train_state).

    When ``cfg`` is given it must equal the stored configuration.
    """
    path = Path(path)
    buf = path.read_bytes()
    header, base = read_header(buf, path)
    stored = NetConfig.from_dict(header["cfg"])
    if cfg is not None and cfg != stored:
        diff = {k: (v, getattr(stored, k)) for k, v in cfg.to_dict().items() if getattr(stored, k) != v}
        raise ConfigMismatchError(f"{path}: config mismatch (expected, stored): {diff}")
    if role is not None and header["role"] != role:
        raise ConfigMismatchError(f"{path}: holds a {header['role']} network, expected {role}")
    net = PKDNet(stored, header["role"])
    tensors = _tensors(buf, header, base, path)
    for name, p in net.named_parameters():
        if name not in tensors:
            raise ConfigMismatchError(f"{path}: parameter {name!r} missing")
        arr = tensors[name]
        if arr.shape != p.shape:
            raise ConfigMismatchError(f"{path}: parameter {name!r} has shape {arr.shape}, expected {p.shape}")
        p.data[...] = arr
        if f"adam.m/{name}" in tensors:
            p.m[...] = tensors[f"adam.m/{name}"]
            p.v[...] = tensors[f"adam.v/{name}"]
    return net, header.get("train_state")


def checkpoint_save(net: PKDNet, path) -> None:
    save(net, path)


def checkpoint_load(cfg: NetConfig, path) -> PKDNet:
    return load(path, cfg)[0]
