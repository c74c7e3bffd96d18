"""Server-side message framing for the PNPD wire protocol.

Frames are length-prefixed: a u32 LE byte count followed by the frame body
"PNPD" + version 0x01 + opcode + payload. Request payloads carry grids as
{sigma: f64 LE, height: u32 LE, width: u32 LE, float32 LE row-major pixels};
replies carry {height, width, pixels}. Errors are opcode 0x7F with a u32 LE
code and a UTF-8 message.
"""

from __future__ import annotations

import struct
from typing import Optional, Tuple

import numpy as np

MAGIC = b"PNPD"
VERSION = 0x01

OP_HANDSHAKE = 0x01
OP_DENOISE_REQ = 0x02
OP_DENOISE_REP = 0x03
OP_VJP_REQ = 0x04
OP_VJP_REP = 0x05
OP_ERROR = 0x7F

CAP_VJP = 0x01

ERR_PROTOCOL = 1
ERR_MODEL = 2

MAX_FRAME_BYTES = 1 << 28


class FrameError(Exception):
    """Malformed frame content (the stream itself is still in sync)."""


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    body = MAGIC + bytes([VERSION, opcode]) + payload
    return struct.pack("<I", len(body)) + body


def encode_error(code: int, message: str) -> bytes:
    return encode_frame(OP_ERROR, struct.pack("<I", code) + message.encode("utf-8"))


def encode_grid_reply(opcode: int, data: np.ndarray) -> bytes:
    h, w = data.shape
    pixels = np.ascontiguousarray(data, dtype="<f4")
    return encode_frame(opcode, struct.pack("<II", h, w) + pixels.tobytes())


def split_frame(body: bytes) -> Tuple[int, bytes]:
    if len(body) < 6:
        raise FrameError("frame shorter than its fixed header")
    if body[:4] != MAGIC:
        raise FrameError("bad magic bytes")
    if body[4] != VERSION:
        raise FrameError(f"unsupported protocol version {body[4]}")
    return body[5], body[6:]


def parse_denoise_request(payload: bytes) -> Tuple[float, np.ndarray]:
    if len(payload) < 16:
        raise FrameError("denoise payload shorter than its header")
    sigma, h, w = struct.unpack_from("<dII", payload)
    expected = 16 + 4 * h * w
    if len(payload) != expected:
        raise FrameError(f"denoise payload is {len(payload)} bytes, expected {expected}")
    x = np.frombuffer(payload, dtype="<f4", count=h * w, offset=16).reshape(h, w)
    return sigma, x


def parse_vjp_request(payload: bytes) -> Tuple[float, np.ndarray, np.ndarray]:
    if len(payload) < 16:
        raise FrameError("vjp payload shorter than its header")
    sigma, h, w = struct.unpack_from("<dII", payload)
    expected = 16 + 8 * h * w
    if len(payload) != expected:
        raise FrameError(f"vjp payload is {len(payload)} bytes, expected {expected}")
    x = np.frombuffer(payload, dtype="<f4", count=h * w, offset=16).reshape(h, w)
    u = np.frombuffer(payload, dtype="<f4", count=h * w, offset=16 + 4 * h * w)
    return sigma, x, u.reshape(h, w)


def read_exact(rd, n: int) -> Optional[bytes]:
    """Read exactly n bytes, or None on a clean EOF / mid-read close."""
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = rd.read(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
