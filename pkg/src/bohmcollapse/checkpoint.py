"""Binary checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"BCOLCKP\\0"
    u32       format version
    u32       header length H
    32 bytes  sha256 of (header bytes + payload bytes)
    H bytes   UTF-8 JSON header
    payload   amplitudes ('<c16'), positions ('<f8'), time-series rows ('<f8')

The header records the configuration, grid, particle count, time, step,
seed, collapse-detector state and the element counts of the three payload
arrays. Amplitudes are stored in full double precision so that a resumed
run is bit-identical to an uninterrupted one.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"BCOLCKP\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sII32s")


@dataclass
class Checkpoint:
    header: dict
    amplitudes: np.ndarray
    positions: np.ndarray
    rows: np.ndarray


def write_checkpoint(path, header: dict, amplitudes: np.ndarray, positions: np.ndarray,
                     rows: np.ndarray) -> None:
    amps = np.ascontiguousarray(amplitudes, dtype="<c16").ravel()
    pos = np.ascontiguousarray(positions, dtype="<f8").ravel()
    rws = np.ascontiguousarray(rows, dtype="<f8")
    head = dict(header)
    head["counts"] = {"amplitudes": int(amps.size), "positions": int(pos.size),
                      "rows": list(rws.shape)}
    head_bytes = json.dumps(head, sort_keys=True).encode()
    payload = amps.tobytes() + pos.tobytes() + rws.tobytes()
    digest = hashlib.sha256(head_bytes + payload).digest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, VERSION, len(head_bytes), digest))
            fh.write(head_bytes)
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen, digest = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    body = data[_PREFIX.size:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupted or truncated file)")
    if hlen > len(body):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(body[:hlen].decode())
        counts = header["counts"]
        n_amp, n_pos = counts["amplitudes"], counts["positions"]
        shape = tuple(counts["rows"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc
    off = hlen
    amps = np.frombuffer(body, "<c16", n_amp, off).astype(complex)
    off += 16 * n_amp
    pos = np.frombuffer(body, "<f8", n_pos, off).astype(float)
    off += 8 * n_pos
    n_rows = int(np.prod(shape)) if shape else 0
    if off + 8 * n_rows != len(body):
        raise CheckpointError(f"{path}: payload size does not match the header")
    rows = np.frombuffer(body, "<f8", n_rows, off).astype(float).reshape(shape)
    return Checkpoint(header, amps, pos, rows)
