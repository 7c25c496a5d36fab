"""Magnitude denoisers, the complex magnitude-prox combinator, and the plugin client.

A denoiser here is any map taking a nonnegative magnitude volume and a strength
parameter to a denoised magnitude volume of the same shape. Lifting such a map
to complex data is exact for priors that depend only on the magnitude: denoise
the magnitudes, reattach the original per-voxel phase.
"""

from __future__ import annotations

import math
import shlex
import socket
import struct
import subprocess

import numpy as np

from .core import ComplexVolume, MagnitudeVolume, combine, magnitude, phase

DNRQ_MAGIC = b"DNRQ"
DNRS_MAGIC = b"DNRS"
_REQ_HEADER = struct.Struct("<3If")
_RSP_HEADER = struct.Struct("<3I")

DENOISER_KINDS = ("identity", "soft_threshold", "tv_chambolle", "external")

# Dual ascent step for the 3D total-variation prox; 1/(2*d*L^2) with L^2 = 2
# per axis keeps the fixed-point iteration contractive in three dimensions.
_TV_DUAL_STEP = 1.0 / 12.0


class ProtocolError(RuntimeError):
    """Plugin wire-protocol violation (bad magic, wrong dims, timeout, dead peer)."""


def denoise_identity(m: MagnitudeVolume, level: float = 0.0) -> MagnitudeVolume:
    """Null prior: returns the input unchanged (``level`` is ignored)."""
    return m


def denoise_soft_threshold(m: MagnitudeVolume, alpha: float) -> MagnitudeVolume:
    """max(m - alpha, 0): the prox of alpha * l1 on the nonnegative orthant."""
    if alpha < 0:
        raise ValueError("soft-threshold level must be >= 0")
    return m.with_data(np.maximum(m.data - alpha, 0.0))


def denoise_tv_chambolle(m: MagnitudeVolume, alpha: float, inner_iters: int = 5) -> MagnitudeVolume:
    """Approximate prox of alpha * isotropic TV via Chambolle's dual fixed point.

    Runs ``inner_iters`` dual iterations from a zero dual field; the discrete
    gradient uses forward differences with replicate (Neumann) boundaries.
    The result is clamped at zero.
    """
    if alpha < 0:
        raise ValueError("TV weight must be >= 0")
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")
    if alpha == 0:
        return m
    f = m.as_grid()
    scaled = f / alpha
    p = np.zeros((3,) + f.shape)
    for _ in range(inner_iters):
        g = _tv_grad(_tv_div(p) - scaled)
        p = (p + _TV_DUAL_STEP * g) / (1.0 + _TV_DUAL_STEP * np.sqrt(np.sum(g * g, axis=0)))
    out = np.maximum(f - alpha * _tv_div(p), 0.0)
    return m.with_data(out.ravel(order="F"))


def total_variation(volume_3d: np.ndarray) -> float:
    """Isotropic discrete TV with the same gradient convention as the denoiser."""
    g = _tv_grad(np.asarray(volume_3d, dtype=np.float64))
    return float(np.sum(np.sqrt(np.sum(g * g, axis=0))))


def _tv_grad(u: np.ndarray) -> np.ndarray:
    g = np.zeros((3,) + u.shape)
    g[0, :-1, :, :] = u[1:, :, :] - u[:-1, :, :]
    g[1, :, :-1, :] = u[:, 1:, :] - u[:, :-1, :]
    g[2, :, :, :-1] = u[:, :, 1:] - u[:, :, :-1]
    return g


def _tv_div(p: np.ndarray) -> np.ndarray:
    # Negative adjoint of _tv_grad, so <grad u, p> == -<u, div p>.
    out = np.zeros(p.shape[1:])
    for ax in range(3):
        comp = p[ax]
        n = comp.shape[ax]
        if n == 1:
            continue
        idx = lambda sl: tuple(sl if a == ax else slice(None) for a in range(3))  # noqa: E731
        out[idx(slice(0, 1))] += comp[idx(slice(0, 1))]
        out[idx(slice(1, n - 1))] += comp[idx(slice(1, n - 1))] - comp[idx(slice(0, n - 2))]
        out[idx(slice(n - 1, n))] -= comp[idx(slice(n - 2, n - 1))]
    return out


class PluginClient:
    """One strictly alternating request/response channel to an external denoiser.

    ``endpoint`` is either ``host:port`` (TCP) or a command line to spawn as a
    child process speaking the protocol over its standard I/O pipes.
    """

    def __init__(self, endpoint: str, timeout: float = 300.0):
        self.endpoint = endpoint
        self._timeout = timeout
        self._proc = None
        self._sock = None
        tcp = _parse_host_port(endpoint)
        if tcp is not None:
            self._sock = socket.create_connection(tcp, timeout=timeout)
        else:
            argv = shlex.split(endpoint)
            if not argv:
                raise ValueError("empty plugin endpoint")
            self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def request(self, dims, noise_level: float, payload_f32: np.ndarray) -> np.ndarray:
        """Send one denoising request; returns the raw response volume (float32)."""
        nx, ny, nz = (int(d) for d in dims)
        body = np.ascontiguousarray(payload_f32, dtype="<f4")
        if body.size != nx * ny * nz:
            raise ValueError("payload size does not match dims")
        self._write(DNRQ_MAGIC + _REQ_HEADER.pack(nx, ny, nz, float(noise_level)) + body.tobytes())
        magic = self._read(len(DNRS_MAGIC))
        if magic != DNRS_MAGIC:
            raise ProtocolError(f"expected response magic {DNRS_MAGIC!r}, got {magic!r}")
        rx, ry, rz = _RSP_HEADER.unpack(self._read(_RSP_HEADER.size))
        if (rx, ry, rz) != (nx, ny, nz):
            raise ProtocolError(f"plugin echoed dims ({rx}, {ry}, {rz}), expected ({nx}, {ny}, {nz})")
        data = np.frombuffer(self._read(4 * nx * ny * nz), dtype="<f4")
        return data.astype(np.float64)

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
        if self._proc is not None:
            proc, self._proc = self._proc, None
            try:
                proc.stdin.close()
                proc.wait(timeout=10)
            except Exception:
                proc.kill()
                proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _write(self, blob: bytes):
        try:
            if self._sock is not None:
                self._sock.sendall(blob)
            else:
                self._proc.stdin.write(blob)
                self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"plugin connection lost while sending: {exc}") from exc

    def _read(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            try:
                if self._sock is not None:
                    chunk = self._sock.recv(remaining)
                else:
                    chunk = self._proc.stdout.read(remaining)
            except socket.timeout as exc:
                raise ProtocolError(f"plugin response timed out after {self._timeout} s") from exc
            except OSError as exc:
                raise ProtocolError(f"plugin connection lost while reading: {exc}") from exc
            if not chunk:
                raise ProtocolError("plugin closed the connection mid-response")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)


def denoise_external(client: PluginClient, m: MagnitudeVolume, noise_level: float) -> MagnitudeVolume:
    """Denoise through a plugin: peak-scale in, plugin, clamp at 0, scale back out.

    Magnitudes are divided by their maximum before transmission (the plugin
    sees data in [0, 1]) and the response is rescaled; a zero volume bypasses
    the plugin entirely.
    """
    scale = float(m.data.max(initial=0.0))
    if scale == 0.0:
        return m.with_data(np.zeros_like(m.data))
    out = client.request(m.dims, noise_level, m.data / scale)
    return m.with_data(np.maximum(out, 0.0) * scale)


class DenoiserHandle:
    """The plug-and-play slot: dispatches a magnitude volume to one denoiser kind.

    ``denoise(m, alpha)`` hands each backend its native parameterization:
    analytic proxes consume ``alpha`` directly as their threshold/weight, the
    external plugin receives ``sqrt(alpha)`` as its noise-level input.
    """

    def __init__(self, kind: str, *, tv_inner_iters: int = 5,
                 endpoint: str | None = None, timeout: float = 300.0):
        if kind not in DENOISER_KINDS:
            raise ValueError(f"unknown denoiser kind {kind!r}; expected one of {DENOISER_KINDS}")
        if kind == "external" and not endpoint:
            raise ValueError("external denoiser requires a plugin endpoint")
        self.kind = kind
        self.tv_inner_iters = tv_inner_iters
        self.endpoint = endpoint
        self._timeout = timeout
        self._client = None

    def denoise(self, m: MagnitudeVolume, alpha: float) -> MagnitudeVolume:
        if self.kind == "identity":
            out = denoise_identity(m, alpha)
        elif self.kind == "soft_threshold":
            out = denoise_soft_threshold(m, alpha)
        elif self.kind == "tv_chambolle":
            out = denoise_tv_chambolle(m, alpha, self.tv_inner_iters)
        elif m.data.max(initial=0.0) == 0.0:
            # All-zero volumes never reach the plugin (nothing to scale by).
            out = m.with_data(np.zeros_like(m.data))
        else:
            out = denoise_external(self._connect(), m, math.sqrt(alpha))
        if out.dims != m.dims:
            raise ProtocolError(f"denoiser changed dims {m.dims} -> {out.dims}")
        return out

    def close(self):
        if self._client is not None:
            self._client.close()
            self._client = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _connect(self) -> PluginClient:
        if self._client is None:
            self._client = PluginClient(self.endpoint, timeout=self._timeout)
        return self._client


def complex_magnitude_prox(p: ComplexVolume, denoiser: DenoiserHandle, alpha: float) -> ComplexVolume:
    """Prox of a magnitude-only regularizer at a complex point.

    The minimizer of ``alpha * R(|v|) + 0.5 * ||v - p||^2`` keeps the phase of
    ``p`` unchanged and applies the real prox (denoiser) to ``|p|``, so this
    composes exactly: denoised magnitudes, original phases.
    """
    return combine(denoiser.denoise(magnitude(p), alpha), phase(p))


def _parse_host_port(endpoint: str):
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit():
        return None
    if any(ch.isspace() or ch == "/" for ch in host):
        return None
    return host, int(port)
