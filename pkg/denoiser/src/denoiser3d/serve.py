"""Plugin server: answers DNRQ denoising requests with DNRS responses.

Wire format (little-endian, strictly alternating request/response):
  request:  "DNRQ" | u32 nx ny nz | f32 noise_level | nx*ny*nz f32 (x fastest)
  response: "DNRS" | u32 nx ny nz | nx*ny*nz f32
A malformed request terminates the connection without a response.
"""

from __future__ import annotations

import socket
import struct
import sys

import numpy as np
import torch

from .model import UNet3D

REQUEST_MAGIC = b"DNRQ"
RESPONSE_MAGIC = b"DNRS"
_HEADER = struct.Struct("<3If")


class ProtocolViolation(Exception):
    pass


def _read_exact(read, n):
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = read(remaining)
        if not chunk:
            raise EOFError
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def handle_stream(read, write, model: UNet3D, log=lambda msg: None) -> None:
    """Serve one connection until EOF or a protocol violation."""
    while True:
        try:
            magic = _read_exact(read, len(REQUEST_MAGIC))
        except EOFError:
            return
        if magic != REQUEST_MAGIC:
            log(f"protocol error: bad request magic {magic!r}")
            raise ProtocolViolation(f"bad request magic {magic!r}")
        nx, ny, nz, level = _HEADER.unpack(_read_exact(read, _HEADER.size))
        payload = _read_exact(read, 4 * nx * ny * nz)
        volume = np.frombuffer(payload, dtype="<f4").reshape((nx, ny, nz), order="F")
        out = model.denoise(torch.from_numpy(volume.copy()), level).numpy()
        write(RESPONSE_MAGIC + struct.pack("<3I", nx, ny, nz)
              + np.asfortranarray(out).ravel(order="F").astype("<f4").tobytes())


def serve_stdio(model: UNet3D) -> int:
    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer

    def write(blob):
        stdout.write(blob)
        stdout.flush()

    try:
        handle_stream(stdin.read, write, model, log=lambda m: print(m, file=sys.stderr))
    except ProtocolViolation:
        return 1
    return 0


def serve_tcp(model: UNet3D, host: str, port: int, ready=None, max_connections=None) -> int:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    if ready is not None:
        ready(srv.getsockname()[1])
    print(f"listening on {srv.getsockname()[0]}:{srv.getsockname()[1]}", file=sys.stderr)
    served = 0
    try:
        while max_connections is None or served < max_connections:
            conn, peer = srv.accept()
            served += 1
            with conn:
                def write(blob, _conn=conn):
                    _conn.sendall(blob)

                try:
                    handle_stream(conn.recv, write, model,
                                  log=lambda m: print(m, file=sys.stderr))
                except ProtocolViolation:
                    continue  # drop this connection, keep serving
    finally:
        srv.close()
    return 0
