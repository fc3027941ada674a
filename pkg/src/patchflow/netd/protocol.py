"""Length-prefixed binary framing for the live daemons.

Wire layout (all integers big-endian, no padding)::

    u32 length      bytes that follow this field
    u8  type_code
    u16 body_len
    body            canonical JSON (UTF-8, sorted keys)
    filler          PATCH / FRAME only: size_bytes bytes of 0xAB

The filler stands in for pixel data; it is counted and skipped, never read.
"""

from __future__ import annotations

import asyncio
import enum
import json
import struct
from dataclasses import dataclass, field
from typing import Any

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
MAX_BODY = 0xFFFF
FILLER_BYTE = 0xAB

_LEN = struct.Struct(">I")
_HDR = struct.Struct(">BH")


class MsgType(enum.IntEnum):
    HELLO = 0x01
    PROBE = 0x02
    PROBE_ACK = 0x03
    PATCH = 0x04
    RESULT = 0x05
    FRAME = 0x06
    STATS = 0x07


FILLER_TYPES = (MsgType.PATCH, MsgType.FRAME)

_REQUIRED: dict[MsgType, dict[str, type | tuple]] = {
    MsgType.HELLO: {"version": int, "node_id": str},
    MsgType.PROBE_ACK: {"occupancy": int, "n_max": int},
    MsgType.PATCH: {"patch_id": str, "size_bytes": int},
    MsgType.FRAME: {"camera_id": str, "frame_id": int, "size_bytes": int},
    MsgType.RESULT: {"patch_id": str, "plate_text": str, "processed_by": str},
}


class ProtocolError(ValueError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class OversizeFrame(ProtocolError):
    pass


@dataclass(frozen=True)
class Message:
    type: MsgType
    body: dict[str, Any] = field(default_factory=dict)

    @property
    def filler_size(self) -> int:
        return int(self.body["size_bytes"]) if self.type in FILLER_TYPES else 0


def canonical_json(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def check_body(mtype: MsgType, body: Any) -> None:
    if not isinstance(body, dict):
        raise ProtocolError(f"{mtype.name} body must be a JSON object")
    for key, kind in _REQUIRED.get(mtype, {}).items():
        v = body.get(key)
        if not isinstance(v, kind) or isinstance(v, bool):
            raise ProtocolError(f"{mtype.name} body needs {key}")
    if mtype in FILLER_TYPES and body["size_bytes"] < 1:
        raise ProtocolError(f"{mtype.name} size_bytes must be positive")
    if mtype is MsgType.PROBE_ACK and (body["occupancy"] < 0 or body["n_max"] < 0):
        raise ProtocolError("PROBE_ACK counts must be non-negative")


def encode(msg: Message) -> bytes:
    check_body(msg.type, msg.body)
    body = canonical_json(msg.body)
    if len(body) > MAX_BODY:
        raise ProtocolError(f"body of {len(body)} bytes exceeds {MAX_BODY}")
    filler = msg.filler_size
    length = _HDR.size + len(body) + filler
    if length > MAX_FRAME:
        raise OversizeFrame(f"frame of {length} bytes exceeds {MAX_FRAME}")
    return b"".join((_LEN.pack(length), _HDR.pack(msg.type, len(body)), body, bytes([FILLER_BYTE]) * filler))


def wire_size(msg: Message) -> int:
    return _LEN.size + _HDR.size + len(canonical_json(msg.body)) + msg.filler_size


def _decode_payload(payload: bytes | memoryview) -> Message:
    if len(payload) < _HDR.size:
        raise TruncatedFrame("frame shorter than its type and body-length fields")
    code, body_len = _HDR.unpack_from(payload)
    try:
        mtype = MsgType(code)
    except ValueError:
        raise ProtocolError(f"unknown type code 0x{code:02x}") from None
    if _HDR.size + body_len > len(payload):
        raise TruncatedFrame("body extends past the frame")
    try:
        body = json.loads(bytes(payload[_HDR.size:_HDR.size + body_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed body: {exc}") from None
    check_body(mtype, body)
    msg = Message(mtype, body)
    filler = len(payload) - _HDR.size - body_len
    if filler != msg.filler_size:
        raise ProtocolError(f"{mtype.name} carries {filler} filler bytes, expected {msg.filler_size}")
    return msg


def decode(data: bytes) -> Message:
    """Decode exactly one frame."""
    if len(data) < _LEN.size:
        raise TruncatedFrame("missing length prefix")
    (length,) = _LEN.unpack_from(data)
    if length > MAX_FRAME:
        raise OversizeFrame(f"declared length {length} exceeds {MAX_FRAME}")
    if len(data) - _LEN.size < length:
        raise TruncatedFrame(f"expected {length} bytes after prefix, got {len(data) - _LEN.size}")
    if len(data) - _LEN.size > length:
        raise ProtocolError("trailing bytes after frame")
    return _decode_payload(memoryview(data)[_LEN.size:])


async def read_message(reader: asyncio.StreamReader) -> tuple[Message, int]:
    """Read one frame; returns the message and its size on the wire.

    Raises ``asyncio.IncompleteReadError`` on a clean EOF before a frame.
    """
    prefix = await reader.readexactly(_LEN.size)
    (length,) = _LEN.unpack(prefix)
    if length > MAX_FRAME:
        raise OversizeFrame(f"declared length {length} exceeds {MAX_FRAME}")
    try:
        payload = await reader.readexactly(length)
    except asyncio.IncompleteReadError as exc:
        raise TruncatedFrame(f"connection closed after {len(exc.partial)} of {length} bytes") from None
    return _decode_payload(payload), _LEN.size + length


def hello(node_id: str, version: int = PROTOCOL_VERSION) -> Message:
    return Message(MsgType.HELLO, {"version": version, "node_id": node_id})
