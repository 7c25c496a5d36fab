"""Shared domain types: voxel grids, complex volumes, imaging geometry, measurements."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299792458.0

CVOL_MAGIC = b"CVOL1"
KIND_COMPLEX = 0
KIND_MAGNITUDE = 1
_CVOL_HEADER = struct.Struct("<3I6dB")

# Minimum antenna-to-voxel-center separation; the imaging kernel has a
# 1/(d_tx * d_rx) factor that must stay finite.
_COINCIDENCE_TOL = 1e-12


class NumericalError(RuntimeError):
    """Raised when an input is numerically degenerate for the requested operation."""


def _triple(values, caster, name):
    out = tuple(caster(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"{name} must have exactly 3 components, got {len(out)}")
    return out


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def linear_index(dims, ix, iy, iz):
    """Lexicographic (x-fastest) flat index of voxel (ix, iy, iz)."""
    nx, ny, nz = dims
    if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
        raise IndexError(f"voxel ({ix}, {iy}, {iz}) outside dims {tuple(dims)}")
    return ix + nx * (iy + ny * iz)


def voxel_indices(dims, m):
    """Inverse of :func:`linear_index`: flat index -> (ix, iy, iz)."""
    nx, ny, nz = dims
    if not 0 <= m < nx * ny * nz:
        raise IndexError(f"flat index {m} outside volume of {nx * ny * nz} voxels")
    ix = m % nx
    rem = m // nx
    return ix, rem % ny, rem // ny


@dataclass(frozen=True)
class Grid:
    """Regular voxel lattice: counts, spacing (m), and the center of voxel (0,0,0)."""

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "dims", _triple(self.dims, int, "dims"))
        object.__setattr__(self, "voxel_size", _triple(self.voxel_size, float, "voxel_size"))
        object.__setattr__(self, "origin", _triple(self.origin, float, "origin"))
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        if any(v <= 0 for v in self.voxel_size):
            raise ValueError(f"voxel_size components must be strictly positive, got {self.voxel_size}")

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def centers(self) -> np.ndarray:
        """All voxel centers as an (N, 3) array, lexicographic x-fastest."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        steps = np.stack([ix.ravel(order="F"), iy.ravel(order="F"), iz.ravel(order="F")], axis=1)
        return np.asarray(self.origin) + steps * np.asarray(self.voxel_size)


def voxel_center(grid, ix, iy, iz):
    """Center coordinates (m) of voxel (ix, iy, iz); raises IndexError out of range."""
    linear_index(grid.dims, ix, iy, iz)
    x0, y0, z0 = grid.origin
    dx, dy, dz = grid.voxel_size
    return (x0 + ix * dx, y0 + iy * dy, z0 + iz * dz)


@dataclass(frozen=True)
class ComplexVolume:
    """3D complex reflectivity on a regular grid, stored flat, x-fastest."""

    dims: tuple[int, int, int]
    data: np.ndarray
    voxel_size: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __post_init__(self):
        grid = Grid(self.dims, self.voxel_size, self.origin)
        object.__setattr__(self, "dims", grid.dims)
        object.__setattr__(self, "voxel_size", grid.voxel_size)
        object.__setattr__(self, "origin", grid.origin)
        data = np.array(self.data, dtype=np.complex128).ravel()
        if data.size != grid.n_voxels:
            raise ValueError(f"data length {data.size} != nx*ny*nz = {grid.n_voxels}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def grid(self) -> Grid:
        return Grid(self.dims, self.voxel_size, self.origin)

    @property
    def n_voxels(self) -> int:
        return self.data.size

    def as_grid(self) -> np.ndarray:
        """Read-only 3D view of shape ``dims`` (x-fastest layout preserved)."""
        return self.data.reshape(self.dims, order="F")

    def with_data(self, data) -> "ComplexVolume":
        return ComplexVolume(self.dims, data, self.voxel_size, self.origin)

    @classmethod
    def from_grid_array(cls, arr, voxel_size, origin) -> "ComplexVolume":
        arr = np.asarray(arr)
        return cls(arr.shape, arr.ravel(order="F"), voxel_size, origin)


@dataclass(frozen=True)
class MagnitudeVolume:
    """Real nonnegative volume (reflectivity magnitudes), same layout as ComplexVolume."""

    dims: tuple[int, int, int]
    data: np.ndarray
    voxel_size: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __post_init__(self):
        grid = Grid(self.dims, self.voxel_size, self.origin)
        object.__setattr__(self, "dims", grid.dims)
        object.__setattr__(self, "voxel_size", grid.voxel_size)
        object.__setattr__(self, "origin", grid.origin)
        data = np.array(self.data, dtype=np.float64).ravel()
        if data.size != grid.n_voxels:
            raise ValueError(f"data length {data.size} != nx*ny*nz = {grid.n_voxels}")
        if not np.all(data >= 0):
            raise ValueError("magnitude volume entries must all be >= 0")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def grid(self) -> Grid:
        return Grid(self.dims, self.voxel_size, self.origin)

    @property
    def n_voxels(self) -> int:
        return self.data.size

    def as_grid(self) -> np.ndarray:
        return self.data.reshape(self.dims, order="F")

    def with_data(self, data) -> "MagnitudeVolume":
        return MagnitudeVolume(self.dims, data, self.voxel_size, self.origin)

    @classmethod
    def from_grid_array(cls, arr, voxel_size, origin) -> "MagnitudeVolume":
        arr = np.asarray(arr)
        return cls(arr.shape, arr.ravel(order="F"), voxel_size, origin)


def magnitude(v: ComplexVolume) -> MagnitudeVolume:
    """Per-voxel magnitudes of a complex volume."""
    return MagnitudeVolume(v.dims, np.abs(v.data), v.voxel_size, v.origin)


def phase(v: ComplexVolume) -> np.ndarray:
    """Per-voxel phase angles in (-pi, pi]; the phase of a zero entry is 0."""
    return np.angle(v.data)


def combine(mag: MagnitudeVolume, phases: np.ndarray) -> ComplexVolume:
    """Rebuild a complex volume from magnitudes and phase angles."""
    phases = np.asarray(phases, dtype=np.float64).ravel()
    if phases.size != mag.data.size:
        raise ValueError(f"phase length {phases.size} != magnitude length {mag.data.size}")
    return ComplexVolume(mag.dims, mag.data * np.exp(1j * phases), mag.voxel_size, mag.origin)


@dataclass(frozen=True)
class ImagingGeometry:
    """Antenna positions, wavenumbers, scene grid, and the channel ordering.

    Measurement channel ``m`` is the (tx, rx, wavenumber) triple
    ``channel_map[m]``; indices refer to ``tx_positions``, ``rx_positions``
    and ``wavenumbers`` respectively.
    """

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    wavenumbers: np.ndarray
    grid: Grid
    channel_map: np.ndarray

    def __post_init__(self):
        tx = np.array(self.tx_positions, dtype=np.float64).reshape(-1, 3)
        rx = np.array(self.rx_positions, dtype=np.float64).reshape(-1, 3)
        ks = np.array(self.wavenumbers, dtype=np.float64).ravel()
        cm = np.array(self.channel_map, dtype=np.int64).reshape(-1, 3)
        if tx.shape[0] < 1 or rx.shape[0] < 1:
            raise ValueError("need at least one transmit and one receive antenna")
        if ks.size < 1 or not np.all(ks > 0):
            raise ValueError("wavenumbers must be a non-empty strictly positive list")
        if cm.shape[0] < 1:
            raise ValueError("channel_map must contain at least one channel")
        for col, bound, what in ((0, tx.shape[0], "tx"), (1, rx.shape[0], "rx"), (2, ks.size, "wavenumber")):
            if cm[:, col].min() < 0 or cm[:, col].max() >= bound:
                raise ValueError(f"channel_map {what} index out of range")
        self._check_no_coincidence(tx, "transmit")
        self._check_no_coincidence(rx, "receive")
        for name, arr in (("tx_positions", tx), ("rx_positions", rx),
                          ("wavenumbers", ks), ("channel_map", cm)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _check_no_coincidence(self, positions, label):
        # A regular lattice lets us test only the nearest voxel center of each antenna.
        dims = np.asarray(self.grid.dims)
        origin = np.asarray(self.grid.origin)
        step = np.asarray(self.grid.voxel_size)
        nearest = np.clip(np.rint((positions - origin) / step), 0, dims - 1)
        d = np.linalg.norm(positions - (origin + nearest * step), axis=1)
        if np.any(d < _COINCIDENCE_TOL):
            raise ValueError(f"a {label} antenna coincides with a grid voxel center")

    @property
    def n_channels(self) -> int:
        return self.channel_map.shape[0]

    def digest(self) -> bytes:
        """16-byte checksum binding measurements to this exact geometry."""
        h = hashlib.md5()
        h.update(struct.pack("<4I", self.tx_positions.shape[0], self.rx_positions.shape[0],
                             self.wavenumbers.size, self.n_channels))
        h.update(np.asarray(self.grid.dims, dtype="<u4").tobytes())
        h.update(np.asarray(self.grid.voxel_size, dtype="<f8").tobytes())
        h.update(np.asarray(self.grid.origin, dtype="<f8").tobytes())
        for arr, dt in ((self.tx_positions, "<f8"), (self.rx_positions, "<f8"),
                        (self.wavenumbers, "<f8"), (self.channel_map, "<u4")):
            h.update(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return h.digest()

    @classmethod
    def full_cross_product(cls, tx_positions, rx_positions, wavenumbers, grid) -> "ImagingGeometry":
        """Geometry with one channel per (tx, rx, wavenumber) triple, wavenumber fastest."""
        ntx = np.asarray(tx_positions).reshape(-1, 3).shape[0]
        nrx = np.asarray(rx_positions).reshape(-1, 3).shape[0]
        nk = np.asarray(wavenumbers).ravel().size
        t, r, k = np.meshgrid(np.arange(ntx), np.arange(nrx), np.arange(nk), indexing="ij")
        cm = np.stack([t.ravel(), r.ravel(), k.ravel()], axis=1)
        return cls(tx_positions, rx_positions, wavenumbers, grid, cm)


@dataclass(frozen=True)
class MeasurementSet:
    """Complex measurement vector bound to a geometry by digest."""

    values: np.ndarray
    geometry_digest: bytes
    noise_sigma: float | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128).ravel()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        digest = bytes(self.geometry_digest)
        if len(digest) != 16:
            raise ValueError(f"geometry digest must be 16 bytes, got {len(digest)}")
        object.__setattr__(self, "geometry_digest", digest)
        if self.noise_sigma is not None:
            sigma = float(self.noise_sigma)
            if sigma < 0:
                raise ValueError("noise_sigma must be nonnegative")
            object.__setattr__(self, "noise_sigma", sigma)

    @property
    def n_channels(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SolverConfig:
    """Every free parameter of the ADMM reconstruction loop.

    ``kappa`` is the ratio of the two augmented-Lagrangian penalties and
    ``alpha`` the denoiser strength (reciprocal of the magnitude penalty);
    the raw penalties are never needed individually.
    """

    kappa: float
    alpha: float
    epsilon: float
    max_iters: int = 500
    cg_iters: int = 5
    rel_change_tol: float = 5e-4
    rng_seed: int = 0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        # alpha = 0 is allowed: the magnitude prox degenerates to the identity.
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.cg_iters < 1:
            raise ValueError("cg_iters must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def write_cvol(path, volume) -> None:
    """Write a ComplexVolume or MagnitudeVolume in the CVOL binary container."""
    if isinstance(volume, ComplexVolume):
        kind, payload = KIND_COMPLEX, volume.data.astype("<c8").tobytes()
    elif isinstance(volume, MagnitudeVolume):
        kind, payload = KIND_MAGNITUDE, volume.data.astype("<f4").tobytes()
    else:
        raise TypeError(f"cannot serialize {type(volume).__name__} as CVOL")
    header = _CVOL_HEADER.pack(*volume.dims, *volume.voxel_size, *volume.origin, kind)
    with open(path, "wb") as fh:
        fh.write(CVOL_MAGIC)
        fh.write(header)
        fh.write(payload)


def read_cvol(path):
    """Read a CVOL file; returns ComplexVolume or MagnitudeVolume per the kind byte."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CVOL_MAGIC))
        if magic != CVOL_MAGIC:
            raise ValueError(f"{path}: not a CVOL file (magic {magic!r})")
        header = fh.read(_CVOL_HEADER.size)
        if len(header) != _CVOL_HEADER.size:
            raise ValueError(f"{path}: truncated CVOL header")
        nx, ny, nz, dx, dy, dz, x0, y0, z0, kind = _CVOL_HEADER.unpack(header)
        n = nx * ny * nz
        payload = fh.read()
    if kind == KIND_COMPLEX:
        data = np.frombuffer(payload, dtype="<c8", count=-1)
        cls = ComplexVolume
    elif kind == KIND_MAGNITUDE:
        data = np.frombuffer(payload, dtype="<f4", count=-1)
        cls = MagnitudeVolume
    else:
        raise ValueError(f"{path}: unknown CVOL kind byte {kind}")
    if data.size != n:
        raise ValueError(f"{path}: payload has {data.size} samples, header says {n}")
    return cls((nx, ny, nz), data, (dx, dy, dz), (x0, y0, z0))
