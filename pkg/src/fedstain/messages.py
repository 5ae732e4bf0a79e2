"""Typed round messages and their loopback wire encoding.

Four message variants drive the protocol state machine: statistic
uploads, pool grants, parameter uploads, and global broadcasts.  Every
message is tagged with its round.  The loopback transport serializes
messages to length-prefixed binary frames so the privacy audit can run
on real bytes: statistic traffic must consist of identifiers plus
exactly 4 x C scalars per record, and no message may carry an array of
pixel dimensionality.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .pool import StatRecord
from .stats import StatKind

MSG_STAT_UPLOAD = 1
MSG_POOL_GRANT = 2
MSG_PARAM_UPLOAD = 3
MSG_GLOBAL_BROADCAST = 4


@dataclass(frozen=True)
class StatUpload:
    round: int
    client_id: str
    records: tuple

    type_code = MSG_STAT_UPLOAD


@dataclass(frozen=True)
class PoolGrant:
    round: int
    client_id: str
    records: tuple

    type_code = MSG_POOL_GRANT


@dataclass(frozen=True)
class ParamUpload:
    round: int
    client_id: str
    vector: np.ndarray
    n_samples: int

    type_code = MSG_PARAM_UPLOAD


@dataclass(frozen=True)
class GlobalBroadcast:
    round: int
    vector: np.ndarray

    type_code = MSG_GLOBAL_BROADCAST


# --- encoding primitives -----------------------------------------------------


def _pack_str(text: str) -> bytes:
    data = text.encode("utf-8")
    return struct.pack("<H", len(data)) + data


def _unpack_str(buf: memoryview, off: int):
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    return bytes(buf[off : off + n]).decode("utf-8"), off + n


def _pack_array(vec: np.ndarray) -> bytes:
    data = np.asarray(vec, dtype="<f8")
    return struct.pack("<I", data.size) + data.tobytes()


def _unpack_array(buf: memoryview, off: int):
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    vec = np.frombuffer(buf, dtype="<f8", count=n, offset=off).copy()
    return vec, off + 8 * n


def _pack_record(rec: StatRecord) -> bytes:
    parts = [
        _pack_str(rec.client_id),
        _pack_str(rec.sample_id),
        _pack_str(rec.color_space),
        _pack_str(rec.kind.value),
        _pack_array(rec.mean),
        _pack_array(rec.std),
        _pack_array(rec.shift),
        _pack_array(rec.scale),
    ]
    return b"".join(parts)


def _unpack_record(buf: memoryview, off: int):
    client_id, off = _unpack_str(buf, off)
    sample_id, off = _unpack_str(buf, off)
    color_space, off = _unpack_str(buf, off)
    kind, off = _unpack_str(buf, off)
    mean, off = _unpack_array(buf, off)
    std, off = _unpack_array(buf, off)
    shift, off = _unpack_array(buf, off)
    scale, off = _unpack_array(buf, off)
    rec = StatRecord(
        client_id=client_id,
        sample_id=sample_id,
        color_space=color_space,
        kind=StatKind(kind),
        mean=mean,
        std=std,
        shift=shift,
        scale=scale,
    )
    return rec, off


def encode_message(msg) -> bytes:
    """Length-prefixed frame: u32 length | u8 type | u32 round | payload."""
    if isinstance(msg, (StatUpload, PoolGrant)):
        payload = _pack_str(msg.client_id) + struct.pack("<I", len(msg.records))
        payload += b"".join(_pack_record(r) for r in msg.records)
    elif isinstance(msg, ParamUpload):
        payload = _pack_str(msg.client_id) + struct.pack("<Q", msg.n_samples) + _pack_array(msg.vector)
    elif isinstance(msg, GlobalBroadcast):
        payload = _pack_array(msg.vector)
    else:
        raise TypeError(f"not a round message: {msg!r}")
    body = struct.pack("<BI", msg.type_code, msg.round) + payload
    return struct.pack("<I", len(body)) + body


def decode_message(frame: bytes):
    buf = memoryview(frame)
    (length,) = struct.unpack_from("<I", buf, 0)
    if length != len(frame) - 4:
        raise ValueError("frame length prefix mismatch")
    type_code, round_no = struct.unpack_from("<BI", buf, 4)
    off = 9
    if type_code in (MSG_STAT_UPLOAD, MSG_POOL_GRANT):
        client_id, off = _unpack_str(buf, off)
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        records = []
        for _ in range(count):
            rec, off = _unpack_record(buf, off)
            records.append(rec)
        cls = StatUpload if type_code == MSG_STAT_UPLOAD else PoolGrant
        return cls(round=round_no, client_id=client_id, records=tuple(records))
    if type_code == MSG_PARAM_UPLOAD:
        client_id, off = _unpack_str(buf, off)
        (n_samples,) = struct.unpack_from("<Q", buf, off)
        off += 8
        vector, off = _unpack_array(buf, off)
        return ParamUpload(round=round_no, client_id=client_id, vector=vector, n_samples=int(n_samples))
    if type_code == MSG_GLOBAL_BROADCAST:
        vector, off = _unpack_array(buf, off)
        return GlobalBroadcast(round=round_no, vector=vector)
    raise ValueError(f"unknown message type {type_code}")


# --- privacy audit -----------------------------------------------------------


def iter_message_arrays(msg):
    """Yield (field_name, length) for every numeric array the message carries."""
    if isinstance(msg, (StatUpload, PoolGrant)):
        for i, rec in enumerate(msg.records):
            for name in ("mean", "std", "shift", "scale"):
                yield f"records[{i}].{name}", getattr(rec, name).size
    elif isinstance(msg, ParamUpload):
        yield "vector", msg.vector.size
    elif isinstance(msg, GlobalBroadcast):
        yield "vector", msg.vector.size


def audit_message(msg, image_shape) -> None:
    """Assert the message carries nothing of pixel dimensionality.

    ``image_shape`` is the client image shape (C, H, W); forbidden array
    lengths are H*W and C*H*W.  Statistic messages must additionally
    carry exactly 4 x C scalars per record.
    """
    c, h, w = image_shape
    forbidden = {h * w, c * h * w}
    for name, length in iter_message_arrays(msg):
        if length in forbidden:
            raise AssertionError(f"{type(msg).__name__}.{name} has pixel dimensionality ({length})")
    if isinstance(msg, (StatUpload, PoolGrant)):
        for i, rec in enumerate(msg.records):
            total = sum(getattr(rec, f).size for f in ("mean", "std", "shift", "scale"))
            if total != 4 * rec.channel_count:
                raise AssertionError(f"record {i} carries {total} scalars, expected 4*C")


def audit_frame_bytes(frame: bytes, image_shape) -> None:
    """Run the audit on real wire bytes (decode, then inspect)."""
    msg = decode_message(frame)
    audit_message(msg, image_shape)
    if isinstance(msg, (StatUpload, PoolGrant)):
        # float payload accounts for exactly 4*C*8 bytes per record
        float_bytes = sum(4 + 8 * length for _, length in iter_message_arrays(msg))
        ident_bytes = len(frame) - 9 - float_bytes
        if ident_bytes < 0:
            raise AssertionError("stat frame smaller than its declared float payload")


class LoopbackTransport:
    """In-process transport that round-trips every message through bytes.

    Each send encodes the message to a frame, runs the audit hooks, and
    returns the decoded copy, so protocol tests exercise the real wire
    format without sockets.
    """

    def __init__(self, image_shape, collect: bool = False):
        self.image_shape = tuple(image_shape)
        self.frames: list[bytes] = [] if collect else None
        self.audited = 0

    def send(self, msg):
        frame = encode_message(msg)
        audit_frame_bytes(frame, self.image_shape)
        self.audited += 1
        if self.frames is not None:
            self.frames.append(frame)
        return decode_message(frame)
