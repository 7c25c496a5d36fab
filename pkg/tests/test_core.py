import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radarpnp.core import (
    ComplexVolume,
    Grid,
    ImagingGeometry,
    MagnitudeVolume,
    MeasurementSet,
    SolverConfig,
    combine,
    linear_index,
    magnitude,
    phase,
    read_cvol,
    voxel_center,
    voxel_indices,
    write_cvol,
)

GRID = Grid((4, 4, 4), (0.01, 0.01, 0.01), (0.0, 0.0, 0.0))


def test_voxel_center_identity():
    assert voxel_center(GRID, 0, 0, 0) == (0.0, 0.0, 0.0)


def test_voxel_center_hand_value():
    g = Grid((25, 25, 49), (0.0125, 0.0125, 0.00625), (-0.15, -0.15, 0.35))
    assert voxel_center(g, 1, 0, 0) == pytest.approx((-0.1375, -0.15, 0.35), abs=1e-15)


def test_voxel_center_out_of_range():
    with pytest.raises(IndexError):
        voxel_center(GRID, 4, 0, 0)
    with pytest.raises(IndexError):
        voxel_center(GRID, 0, -1, 0)


@given(st.integers(0, 4 * 5 * 6 - 1))
def test_index_bijection(m):
    dims = (4, 5, 6)
    assert linear_index(dims, *voxel_indices(dims, m)) == m


def test_index_x_fastest():
    assert linear_index((4, 5, 6), 1, 0, 0) == 1
    assert linear_index((4, 5, 6), 0, 1, 0) == 4
    assert linear_index((4, 5, 6), 0, 0, 1) == 20


def test_magnitude_phase_pythagoras():
    v = ComplexVolume((1, 1, 1), [3 + 4j], (1, 1, 1), (0, 0, 0))
    assert magnitude(v).data[0] == pytest.approx(5.0)
    assert phase(v)[0] == pytest.approx(math.atan2(4, 3))


def test_zero_phase_convention():
    v = ComplexVolume((1, 1, 1), [0.0], (1, 1, 1), (0, 0, 0))
    assert magnitude(v).data[0] == 0.0
    assert phase(v)[0] == 0.0


def test_combine_round_trip():
    rng = np.random.default_rng(0)
    v = ComplexVolume(GRID.dims, rng.standard_normal(64) + 1j * rng.standard_normal(64),
                      GRID.voxel_size, GRID.origin)
    back = combine(magnitude(v), phase(v))
    assert np.max(np.abs(back.data - v.data)) < 1e-12


def test_combine_dim_mismatch():
    m = MagnitudeVolume((2, 1, 1), [1.0, 2.0], (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        combine(m, np.zeros(3))


def test_volume_validation():
    with pytest.raises(ValueError):
        ComplexVolume((2, 2, 2), np.zeros(7), (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        ComplexVolume((2, 2, 2), np.zeros(8), (1, 0, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        MagnitudeVolume((1, 1, 1), [-0.5], (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        MagnitudeVolume((1, 1, 1), [float("nan")], (1, 1, 1), (0, 0, 0))


def test_volume_data_read_only():
    v = ComplexVolume((1, 1, 1), [1.0], (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        v.data[0] = 2.0


def test_grid_array_layout_round_trip():
    rng = np.random.default_rng(1)
    arr = rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5))
    v = ComplexVolume.from_grid_array(arr, (1, 1, 1), (0, 0, 0))
    assert v.data[linear_index((3, 4, 5), 2, 1, 3)] == arr[2, 1, 3]
    np.testing.assert_array_equal(v.as_grid(), arr)


@pytest.mark.parametrize("complex_", [True, False])
def test_cvol_round_trip(tmp_path, complex_):
    rng = np.random.default_rng(2)
    if complex_:
        data = (rng.standard_normal(64) + 1j * rng.standard_normal(64)).astype(np.complex64)
        vol = ComplexVolume(GRID.dims, data, GRID.voxel_size, GRID.origin)
    else:
        data = np.abs(rng.standard_normal(64)).astype(np.float32)
        vol = MagnitudeVolume(GRID.dims, data, GRID.voxel_size, GRID.origin)
    path = tmp_path / "vol.cvol"
    write_cvol(path, vol)
    back = read_cvol(path)
    assert type(back) is type(vol)
    assert back.dims == vol.dims
    assert back.voxel_size == vol.voxel_size
    assert back.origin == vol.origin
    np.testing.assert_array_equal(back.data, vol.data)


def test_cvol_header_layout(tmp_path):
    vol = MagnitudeVolume((1, 1, 1), [0.5], (1.0, 2.0, 3.0), (4.0, 5.0, 6.0))
    path = tmp_path / "v.cvol"
    write_cvol(path, vol)
    blob = path.read_bytes()
    assert blob[:5] == b"CVOL1"
    assert np.frombuffer(blob[5:17], dtype="<u4").tolist() == [1, 1, 1]
    assert np.frombuffer(blob[17:65], dtype="<f8").tolist() == [1, 2, 3, 4, 5, 6]
    assert blob[65] == 1  # magnitude kind
    assert np.frombuffer(blob[66:], dtype="<f4")[0] == np.float32(0.5)


def test_cvol_rejects_garbage(tmp_path):
    path = tmp_path / "bad.cvol"
    path.write_bytes(b"NOTCVOL")
    with pytest.raises(ValueError):
        read_cvol(path)
    good = tmp_path / "trunc.cvol"
    vol = MagnitudeVolume((2, 2, 2), np.ones(8), (1, 1, 1), (0, 0, 0))
    write_cvol(good, vol)
    good.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_cvol(good)


def test_solver_config_validation():
    SolverConfig(kappa=1.0, alpha=0.0, epsilon=0.0)
    with pytest.raises(ValueError):
        SolverConfig(kappa=0.0, alpha=1.0, epsilon=0.0)
    with pytest.raises(ValueError):
        SolverConfig(kappa=1.0, alpha=-1.0, epsilon=0.0)
    with pytest.raises(ValueError):
        SolverConfig(kappa=1.0, alpha=1.0, epsilon=-0.1)
    with pytest.raises(ValueError):
        SolverConfig(kappa=1.0, alpha=1.0, epsilon=0.0, cg_iters=0)


def test_measurement_set_validation():
    MeasurementSet(np.zeros(3, complex), b"\0" * 16)
    with pytest.raises(ValueError):
        MeasurementSet(np.zeros(3, complex), b"\0" * 8)
    with pytest.raises(ValueError):
        MeasurementSet(np.zeros(3, complex), b"\0" * 16, noise_sigma=-1.0)


def _geometry(**overrides):
    kw = dict(
        tx_positions=[[0.0, 0.0, 0.0]],
        rx_positions=[[0.1, 0.0, 0.0]],
        wavenumbers=[80.0, 120.0],
        grid=Grid((2, 2, 2), (0.01, 0.01, 0.01), (0.0, 0.0, 0.5)),
        channel_map=[[0, 0, 0], [0, 0, 1]],
    )
    kw.update(overrides)
    return ImagingGeometry(**kw)


def test_geometry_validation():
    _geometry()
    with pytest.raises(ValueError):
        _geometry(wavenumbers=[80.0, 0.0])
    with pytest.raises(ValueError):
        _geometry(channel_map=np.zeros((0, 3), int))
    with pytest.raises(ValueError):
        _geometry(channel_map=[[0, 0, 2]])
    with pytest.raises(ValueError):
        _geometry(channel_map=[[1, 0, 0]])


def test_geometry_rejects_antenna_on_voxel():
    with pytest.raises(ValueError):
        _geometry(tx_positions=[[0.01, 0.0, 0.5]])


def test_geometry_digest_sensitivity():
    a, b = _geometry(), _geometry()
    assert a.digest() == b.digest()
    assert len(a.digest()) == 16
    c = _geometry(wavenumbers=[80.0, 121.0])
    assert a.digest() != c.digest()
    d = _geometry(channel_map=[[0, 0, 1], [0, 0, 0]])
    assert a.digest() != d.digest()


def test_full_cross_product_order():
    g = ImagingGeometry.full_cross_product(
        [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]], [[0.1, 0.0, 0.0]], [80.0, 120.0, 160.0],
        Grid((2, 2, 2), (0.01, 0.01, 0.01), (0.0, 0.0, 0.5)))
    assert g.n_channels == 6
    # wavenumber index varies fastest, then rx, then tx
    np.testing.assert_array_equal(g.channel_map[:, 2], [0, 1, 2, 0, 1, 2])
    np.testing.assert_array_equal(g.channel_map[:, 0], [0, 0, 0, 1, 1, 1])
