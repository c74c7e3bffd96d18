"""Connection handling for the denoiser endpoint.

Listens on TCP, a unix socket, or its own stdio, and answers HANDSHAKE,
DENOISE and VJP frames. Requests on one connection are strictly serial; each
socket connection gets its own worker thread. Malformed-but-in-sync frames
get an ERROR reply (protocol code) and the connection stays open; frames
whose declared length is implausible poison the stream, so the reply is an
ERROR followed by a close. Model failures reply with a distinct error code
and keep the connection.
"""

from __future__ import annotations

import socket
import struct
import sys
import threading
from dataclasses import dataclass
from typing import Optional

from . import framing as fr


@dataclass
class EndpointConfig:
    listen: str = "stdio"  # stdio | tcp:HOST:PORT | unix:/path.sock
    model: str = "classical"
    weights: Optional[str] = None
    device: str = "cpu"
    advertise_vjp: bool = True
    sigma_min: Optional[float] = None  # clamp policy; None honors requests
    sigma_max: Optional[float] = None

    def clamp_sigma(self, sigma: float) -> float:
        if self.sigma_min is not None:
            sigma = max(sigma, self.sigma_min)
        if self.sigma_max is not None:
            sigma = min(sigma, self.sigma_max)
        return sigma


class Endpoint:
    def __init__(self, cfg: EndpointConfig, denoiser):
        self.cfg = cfg
        self.denoiser = denoiser
        self.supports_vjp = cfg.advertise_vjp and denoiser.supports_vjp

    def _reply(self, opcode: int, payload: bytes) -> bytes:
        try:
            if opcode == fr.OP_HANDSHAKE:
                caps = fr.CAP_VJP if self.supports_vjp else 0
                return fr.encode_frame(fr.OP_HANDSHAKE, struct.pack("<I", caps))
            if opcode == fr.OP_DENOISE_REQ:
                sigma, x = fr.parse_denoise_request(payload)
                out = self._run_model(lambda: self.denoiser.denoise(
                    x, self.cfg.clamp_sigma(sigma)))
                return fr.encode_grid_reply(fr.OP_DENOISE_REP, out)
            if opcode == fr.OP_VJP_REQ:
                if not self.supports_vjp:
                    return fr.encode_error(fr.ERR_PROTOCOL, "vjp not supported")
                sigma, x, u = fr.parse_vjp_request(payload)
                out = self._run_model(lambda: self.denoiser.vjp(
                    x, u, self.cfg.clamp_sigma(sigma)))
                return fr.encode_grid_reply(fr.OP_VJP_REP, out)
            return fr.encode_error(fr.ERR_PROTOCOL, f"unknown opcode 0x{opcode:02x}")
        except fr.FrameError as exc:
            return fr.encode_error(fr.ERR_PROTOCOL, str(exc))
        except _ModelFailure as exc:
            return fr.encode_error(fr.ERR_MODEL, str(exc))

    @staticmethod
    def _run_model(fn):
        try:
            return fn()
        except Exception as exc:  # surface any inference failure as ERR_MODEL
            raise _ModelFailure(str(exc)) from exc

    def serve_stream(self, rd, wr):
        """Answer frames until EOF or an unrecoverable framing fault."""
        while True:
            head = fr.read_exact(rd, 4)
            if head is None:
                return
            (length,) = struct.unpack("<I", head)
            if length < 6 or length > fr.MAX_FRAME_BYTES:
                # cannot trust the stream position any more
                wr.write(fr.encode_error(fr.ERR_PROTOCOL,
                                         f"implausible frame length {length}"))
                wr.flush()
                return
            body = fr.read_exact(rd, length)
            if body is None:
                return
            try:
                opcode, payload = fr.split_frame(body)
            except fr.FrameError as exc:
                wr.write(fr.encode_error(fr.ERR_PROTOCOL, str(exc)))
                wr.flush()
                continue
            wr.write(self._reply(opcode, payload))
            wr.flush()


class _ModelFailure(Exception):
    pass


def _serve_socket(endpoint: Endpoint, sock: socket.socket):
    while True:
        try:
            conn, _ = sock.accept()
        except OSError:
            return
        threading.Thread(
            target=_serve_connection, args=(endpoint, conn), daemon=True
        ).start()


def _serve_connection(endpoint: Endpoint, conn: socket.socket):
    with conn:
        rd = conn.makefile("rb")
        wr = conn.makefile("wb")
        try:
            endpoint.serve_stream(rd, wr)
        except (OSError, ValueError):
            pass  # client vanished mid-reply


def open_listener(descriptor: str) -> socket.socket:
    kind, _, rest = descriptor.partition(":")
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, int(port)))
        sock.listen(8)
        return sock
    if kind == "unix":
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.bind(rest)
        sock.listen(8)
        return sock
    raise ValueError(f"unknown listen descriptor '{descriptor}'")


def serve(cfg: EndpointConfig, denoiser=None, ready_fh=None) -> None:
    """Run the endpoint until the peer disconnects (stdio) or forever (sockets).

    `ready_fh`, when given, receives one line with the bound address once the
    endpoint accepts connections (handy for tests binding port 0).
    """
    if denoiser is None:
        from .denoisers import build_denoiser

        denoiser = build_denoiser(cfg.model, cfg.weights, cfg.device)
    endpoint = Endpoint(cfg, denoiser)
    if cfg.listen == "stdio":
        if ready_fh is not None:
            ready_fh.write("stdio\n")
            ready_fh.flush()
        endpoint.serve_stream(sys.stdin.buffer, sys.stdout.buffer)
        return
    sock = open_listener(cfg.listen)
    if ready_fh is not None:
        if sock.family == socket.AF_INET:
            host, port = sock.getsockname()
            ready_fh.write(f"tcp:{host}:{port}\n")
        else:
            ready_fh.write(f"unix:{sock.getsockname()}\n")
        ready_fh.flush()
    _serve_socket(endpoint, sock)
