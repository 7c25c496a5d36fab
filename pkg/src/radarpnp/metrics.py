"""Reconstruction quality metrics: 3D PSNR, compression level, empirical SNR."""

from __future__ import annotations

import math

import numpy as np

from .core import ComplexVolume, MagnitudeVolume, NumericalError

_GT_RANGE_TOL = 1e-9


def psnr(gt: MagnitudeVolume, recon) -> float:
    """Peak signal-to-noise ratio, 10*log10(1/MSE), in dB.

    The reconstruction magnitudes are normalized by their maximum before
    comparison; the ground truth is used as-is and must already lie in [0, 1]
    (dataset scenes do by construction). Returns ``math.inf`` on an exact
    match.
    """
    if isinstance(recon, ComplexVolume):
        rec = np.abs(recon.data)
        dims = recon.dims
    elif isinstance(recon, MagnitudeVolume):
        rec = recon.data
        dims = recon.dims
    else:
        raise TypeError(f"recon must be a volume, got {type(recon).__name__}")
    if dims != gt.dims:
        raise ValueError(f"dims mismatch: gt {gt.dims} vs recon {dims}")
    if gt.data.max(initial=0.0) > 1.0 + _GT_RANGE_TOL:
        raise ValueError("ground truth magnitudes exceed 1; normalize explicitly before scoring")
    peak = rec.max(initial=0.0)
    if peak == 0.0:
        raise NumericalError("reconstruction is identically zero")
    mse = float(np.mean((gt.data - rec / peak) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def compression_level(m: int, n: int) -> float:
    """Fraction of the unknown's dimension not covered by measurements, 1 - M/N."""
    if n <= 0:
        raise ValueError("N must be > 0")
    return 1.0 - m / n


def data_fraction(m: int, n: int) -> float:
    """M/N, the complement of the compression level."""
    if n <= 0:
        raise ValueError("N must be > 0")
    return m / n


def empirical_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Measured 10*log10(||clean||^2 / ||noisy - clean||^2) in dB."""
    clean = np.asarray(clean).ravel()
    noisy = np.asarray(noisy).ravel()
    if clean.size != noisy.size:
        raise ValueError(f"length mismatch: {clean.size} vs {noisy.size}")
    noise_energy = float(np.sum(np.abs(noisy - clean) ** 2))
    if noise_energy == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(np.abs(clean) ** 2)) / noise_energy)


def format_db(value: float) -> str:
    """Render a dB value for reports; infinities become the string 'inf'."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.2f}"
