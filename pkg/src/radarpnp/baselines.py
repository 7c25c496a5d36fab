"""Direct-inversion baseline: normalized adjoint back-projection."""

from __future__ import annotations

import numpy as np

from .core import MagnitudeVolume, MeasurementSet, NumericalError


def back_projection(y: MeasurementSet, op) -> MagnitudeVolume:
    """Peak-normalized |A^H y|: the canonical back-projected image for this model."""
    if y.geometry_digest != op.geometry.digest():
        raise ValueError("measurement set was recorded for a different geometry (digest mismatch)")
    vol = op.adjoint(y.values)
    mags = np.abs(vol.data)
    peak = mags.max(initial=0.0)
    if peak == 0.0:
        raise NumericalError("back-projection of an all-zero adjoint image")
    return MagnitudeVolume(vol.dims, mags / peak, vol.voxel_size, vol.origin)
