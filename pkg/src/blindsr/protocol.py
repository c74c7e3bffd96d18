"""Client side of the external denoiser wire protocol ("PNPD").

Every message is a length-prefixed binary frame on a byte stream:

    u32 LE length | "PNPD" | version 0x01 | opcode | payload

The length counts the bytes after the prefix (magic through payload).
Opcodes: 0x01 HANDSHAKE (empty request; reply payload is a u32 LE capability
bitmask, bit0 = endpoint supports VJP), 0x02 DENOISE request, 0x03 DENOISE
reply, 0x04 VJP request, 0x05 VJP reply, 0x7F ERROR {u32 LE code, UTF-8
message}. A DENOISE request carries {sigma: f64 LE, height: u32 LE, width:
u32 LE, pixels: h*w float32 LE row-major}; a VJP request carries the same
header followed by the x pixels then the u pixels; replies carry {height,
width, pixels}. Pixels travel as float32 exactly as given (no rescaling);
the caller upcasts to float64 on receipt.

Connection descriptors: ``tcp:HOST:PORT``, ``unix:/path/to.sock``, or
``exec:CMDLINE`` (spawn a child process and speak over its stdio pipes).
A connection carries one request at a time.
"""

from __future__ import annotations

import shlex
import socket
import struct
import subprocess
from typing import BinaryIO, Optional, Tuple

import numpy as np

from .errors import TransportError

__all__ = [
    "MAGIC",
    "VERSION",
    "OP_HANDSHAKE",
    "OP_DENOISE_REQ",
    "OP_DENOISE_REP",
    "OP_VJP_REQ",
    "OP_VJP_REP",
    "OP_ERROR",
    "CAP_VJP",
    "encode_frame",
    "decode_frame",
    "pack_grid",
    "unpack_grid",
    "ExternalDenoiserClient",
]

MAGIC = b"PNPD"
VERSION = 0x01

OP_HANDSHAKE = 0x01
OP_DENOISE_REQ = 0x02
OP_DENOISE_REP = 0x03
OP_VJP_REQ = 0x04
OP_VJP_REP = 0x05
OP_ERROR = 0x7F

CAP_VJP = 0x01

MAX_FRAME_BYTES = 1 << 28  # refuse absurd length prefixes before allocating


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    body = MAGIC + bytes([VERSION, opcode]) + payload
    return struct.pack("<I", len(body)) + body


def decode_frame(body: bytes) -> Tuple[int, bytes]:
    """Split a frame body (after the length prefix) into (opcode, payload)."""
    if len(body) < 6 or body[:4] != MAGIC:
        raise TransportError("frame", "bad magic bytes")
    if body[4] != VERSION:
        raise TransportError("frame", f"unsupported protocol version {body[4]}")
    return body[5], body[6:]


def pack_grid(data: np.ndarray) -> bytes:
    h, w = data.shape
    pixels = np.ascontiguousarray(data, dtype="<f4")
    return struct.pack("<II", h, w) + pixels.tobytes()


def unpack_grid(payload: bytes, phase: str) -> np.ndarray:
    if len(payload) < 8:
        raise TransportError(phase, "grid payload shorter than its header")
    h, w = struct.unpack_from("<II", payload)
    expected = 8 + 4 * h * w
    if len(payload) != expected:
        raise TransportError(
            phase, f"grid payload is {len(payload)} bytes, expected {expected}"
        )
    pixels = np.frombuffer(payload, dtype="<f4", count=h * w, offset=8)
    return pixels.reshape(h, w).astype(np.float64)


def pack_denoise_request(x: np.ndarray, sigma: float) -> bytes:
    return struct.pack("<d", sigma) + pack_grid(x)


def pack_vjp_request(x: np.ndarray, u: np.ndarray, sigma: float) -> bytes:
    h, w = x.shape
    pixels_x = np.ascontiguousarray(x, dtype="<f4").tobytes()
    pixels_u = np.ascontiguousarray(u, dtype="<f4").tobytes()
    return struct.pack("<dII", sigma, h, w) + pixels_x + pixels_u


def unpack_error(payload: bytes) -> Tuple[int, str]:
    if len(payload) < 4:
        return (0, "malformed error payload")
    (code,) = struct.unpack_from("<I", payload)
    return code, payload[4:].decode("utf-8", errors="replace")


class _Stream:
    """Duplex byte stream over a socket or a child process's stdio."""

    def __init__(
        self,
        sock: Optional[socket.socket] = None,
        rd: Optional[BinaryIO] = None,
        wr: Optional[BinaryIO] = None,
        proc: Optional[subprocess.Popen] = None,
    ):
        self._sock = sock
        self._rd = rd
        self._wr = wr
        self._proc = proc

    def write(self, data: bytes):
        if self._sock is not None:
            self._sock.sendall(data)
        else:
            self._wr.write(data)
            self._wr.flush()

    def read_exact(self, n: int, phase: str) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            if self._sock is not None:
                chunk = self._sock.recv(remaining)
            else:
                chunk = self._rd.read(remaining)
            if not chunk:
                raise TransportError(phase, "connection closed mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


def _open_stream(descriptor: str) -> _Stream:
    kind, _, rest = descriptor.partition(":")
    try:
        if kind == "tcp":
            host, _, port = rest.rpartition(":")
            sock = socket.create_connection((host, int(port)), timeout=30)
            return _Stream(sock=sock)
        if kind == "unix":
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.connect(rest)
            return _Stream(sock=sock)
        if kind == "exec":
            proc = subprocess.Popen(
                shlex.split(rest),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
            return _Stream(rd=proc.stdout, wr=proc.stdin, proc=proc)
    except (OSError, ValueError) as exc:
        raise TransportError("connect", f"cannot open '{descriptor}': {exc}") from exc
    raise TransportError("connect", f"unknown descriptor kind '{kind}'")


class ExternalDenoiserClient:
    """One connection to an external denoiser endpoint.

    The handshake runs on construction; requests on a connection are strictly
    serial, so concurrent solver runs need separate clients.
    """

    def __init__(self, descriptor: str):
        self.descriptor = descriptor
        self._stream = _open_stream(descriptor)
        self.capabilities = self._handshake()

    @property
    def supports_vjp(self) -> bool:
        return bool(self.capabilities & CAP_VJP)

    def _roundtrip(self, opcode: int, payload: bytes, phase: str) -> Tuple[int, bytes]:
        self._stream.write(encode_frame(opcode, payload))
        (length,) = struct.unpack("<I", self._stream.read_exact(4, phase))
        if length < 6 or length > MAX_FRAME_BYTES:
            raise TransportError(phase, f"implausible reply frame length {length}")
        op, reply = decode_frame(self._stream.read_exact(length, phase))
        if op == OP_ERROR:
            code, message = unpack_error(reply)
            raise TransportError(phase, f"endpoint error {code}: {message}")
        return op, reply

    def _handshake(self) -> int:
        op, reply = self._roundtrip(OP_HANDSHAKE, b"", "handshake")
        if op != OP_HANDSHAKE or len(reply) != 4:
            raise TransportError("handshake", f"unexpected reply opcode 0x{op:02x}")
        (caps,) = struct.unpack("<I", reply)
        return caps

    def denoise(self, x: np.ndarray, sigma: float) -> np.ndarray:
        op, reply = self._roundtrip(
            OP_DENOISE_REQ, pack_denoise_request(x, sigma), "denoise"
        )
        if op != OP_DENOISE_REP:
            raise TransportError("denoise", f"unexpected reply opcode 0x{op:02x}")
        return unpack_grid(reply, "denoise")

    def vjp(self, x: np.ndarray, u: np.ndarray, sigma: float) -> np.ndarray:
        if not self.supports_vjp:
            raise TransportError("vjp", "endpoint does not advertise VJP support")
        op, reply = self._roundtrip(OP_VJP_REQ, pack_vjp_request(x, u, sigma), "vjp")
        if op != OP_VJP_REP:
            raise TransportError("vjp", f"unexpected reply opcode 0x{op:02x}")
        return unpack_grid(reply, "vjp")

    def close(self):
        self._stream.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
