"""Protocol-conformance gate: the super-resolution client against this bridge.

Prints one [PASS]/[FAIL] line per criterion (visible with `pytest -s`).
Requires the `blindsr` package, whose protocol client is the counterparty.
"""

import socket
import struct
import subprocess
import sys
import time

import numpy as np
import pytest

from blindsr import ExternalDenoiserClient

from pnpd_bridge.denoisers import MedianGaussianDenoiser


def report(name: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"[{tag}] {name}{suffix}")
    assert ok, f"{name}: {detail}"


def smooth_field(n, seed, amplitude=1.0):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, n))
    d = np.minimum(np.arange(n), n - np.arange(n))
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * 2.0**2))
    k /= k.sum()
    field = np.fft.ifft2(np.fft.fft2(noise) * np.fft.fft2(k)).real
    return amplitude * field / np.abs(field).max()


@pytest.fixture(scope="module")
def tcp_bridge():
    """The bridge as a real subprocess listening on an ephemeral TCP port."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "pnpd_bridge",
         "--listen", "tcp:127.0.0.1:0", "--announce-ready"],
        stderr=subprocess.PIPE,
    )
    line = proc.stderr.readline().decode().strip()
    assert line.startswith("tcp:"), f"unexpected announcement {line!r}"
    yield proc, line
    proc.terminate()
    proc.wait(timeout=10)


def test_roundtrips_through_primary_client(tcp_bridge):
    _, descriptor = tcp_bridge
    rng = np.random.default_rng(0)
    local = MedianGaussianDenoiser()
    errors = 0
    with ExternalDenoiserClient(descriptor) as client:
        assert client.supports_vjp
        for i in range(100):
            x = rng.random((16, 16)).astype(np.float32).astype(np.float64)
            got = client.denoise(x, sigma=0.06)
            ref = local.denoise(x.astype(np.float32), 0.06)
            if not np.array_equal(got.astype(np.float32), ref):
                errors += 1
        for i in range(100):
            x = rng.random((16, 16)).astype(np.float32).astype(np.float64)
            u = rng.standard_normal((16, 16)).astype(np.float32).astype(np.float64)
            got = client.vjp(x, u, sigma=0.06)
            ref = local.vjp(x.astype(np.float32), u.astype(np.float32), 0.06)
            if not np.array_equal(got.astype(np.float32), ref):
                errors += 1
    report(
        "handshake + 100 DENOISE + 100 VJP round-trips",
        errors == 0,
        f"{errors} mismatching replies",
    )


def test_vjp_directional_derivative_over_the_wire(tcp_bridge):
    _, descriptor = tcp_bridge
    rng = np.random.default_rng(1)
    x = smooth_field(16, 2, amplitude=2.0)
    u = rng.standard_normal((16, 16)) * 0.5
    w = rng.standard_normal((16, 16))
    eps = 1e-3
    with ExternalDenoiserClient(descriptor) as client:
        nx = client.denoise(x, sigma=0.05)
        nxe = client.denoise(x + eps * u, sigma=0.05)
        jw = client.vjp(x, w, sigma=0.05)
    lhs = float(np.vdot((nxe - nx) / eps, w))
    rhs = float(np.vdot(u, jw))
    rel = abs(lhs - rhs) / abs(rhs)
    report("VJP directional derivative at float32 tolerance", rel <= 1e-2,
           f"relative error {rel:.2e}")


def _fuzz_frames(rng):
    """Corrupted frame generator: 500 deterministic, in-budget mutations."""
    frames = []
    for i in range(500):
        mode = i % 8
        if mode == 0:  # random junk with an honest length prefix
            body = rng.bytes(rng.integers(0, 64))
            frames.append(struct.pack("<I", len(body)) + body)
        elif mode == 1:  # bad magic
            frames.append(struct.pack("<I", 6) + b"JUNK\x01\x01")
        elif mode == 2:  # wrong version
            frames.append(struct.pack("<I", 6) + b"PNPD\x09\x01")
        elif mode == 3:  # unknown opcode
            frames.append(struct.pack("<I", 6) + b"PNPD\x01\x66")
        elif mode == 4:  # size-inconsistent grid payload
            payload = struct.pack("<dII", 0.1, 1000, 1000) + b"\x00" * 32
            body = b"PNPD\x01\x02" + payload
            frames.append(struct.pack("<I", len(body)) + body)
        elif mode == 5:  # absurd declared length
            frames.append(struct.pack("<I", 0xFFFFFFF0))
        elif mode == 6:  # truncated body: claim more bytes than sent
            frames.append(struct.pack("<I", 64) + b"PNPD\x01\x02\x00")
        else:  # zero-length frame
            frames.append(struct.pack("<I", 0))
    return frames


def test_fuzzing_never_crashes_the_server(tcp_bridge):
    proc, descriptor = tcp_bridge
    host, port = descriptor.split(":")[1], int(descriptor.split(":")[2])
    rng = np.random.default_rng(2)
    sent = 0
    for frame in _fuzz_frames(rng):
        # fire and hang up; replies (if any) are the server's problem
        with socket.create_connection((host, port), timeout=10) as conn:
            conn.sendall(frame)
        sent += 1
    time.sleep(0.2)
    alive = proc.poll() is None
    # the endpoint still serves valid traffic afterwards
    responsive = False
    if alive:
        with ExternalDenoiserClient(descriptor) as client:
            out = client.denoise(np.zeros((4, 4)), sigma=0.0)
            responsive = out.shape == (4, 4) and np.all(np.isfinite(out))
    report(
        "500-frame corruption fuzz leaves the server serving",
        sent == 500 and alive and responsive,
        f"{sent} frames, alive={alive}, responsive={responsive}",
    )


def test_stdio_bridge_through_primary_client():
    descriptor = f"exec:{sys.executable} -m pnpd_bridge --listen stdio"
    with ExternalDenoiserClient(descriptor) as client:
        assert client.supports_vjp
        x = smooth_field(8, 4)
        out = client.denoise(x, sigma=0.06)
        assert out.shape == (8, 8)
        assert np.all(np.isfinite(out))
    report("stdio child-process transport", True)


def test_error_replies_parse_under_primary_client(tcp_bridge):
    _, descriptor = tcp_bridge
    from blindsr import TransportError
    from blindsr.protocol import OP_VJP_REQ, encode_frame

    # drive a raw VJP request with a broken payload through the client socket
    host, port = descriptor.split(":")[1], int(descriptor.split(":")[2])
    with socket.create_connection((host, port), timeout=10) as conn:
        conn.sendall(encode_frame(OP_VJP_REQ, b"\x00" * 4))
        head = conn.recv(4)
        (length,) = struct.unpack("<I", head)
        body = b""
        while len(body) < length:
            body += conn.recv(length - len(body))
    from blindsr.protocol import decode_frame, unpack_error

    opcode, payload = decode_frame(body)
    assert opcode == 0x7F
    code, message = unpack_error(payload)
    assert code == 1 and message
    report("ERROR frames parse under the primary client", True,
           f"code {code}: {message}")
