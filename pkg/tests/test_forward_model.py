import math

import numpy as np
import pytest

from radarpnp.core import (
    SPEED_OF_LIGHT,
    ComplexVolume,
    Grid,
    ImagingGeometry,
    MeasurementSet,
    NumericalError,
)
from radarpnp.forward_model import (
    DenseOperator,
    ForwardOperator,
    load_geometry,
    read_cmea,
    save_geometry,
    simulate_measurements,
    wavenumber_from_freq,
    write_cmea,
)
from radarpnp.metrics import empirical_snr

from conftest import random_volume, small_geometry


def _single_voxel_op(voxel_z=0.5, k=None, tx=(0.0, 0.0, 0.0), rx=(0.0, 0.0, 0.0)):
    grid = Grid((1, 1, 1), (0.01, 0.01, 0.01), (0.0, 0.0, voxel_z))
    k = wavenumber_from_freq(4e9) if k is None else k
    geom = ImagingGeometry([list(tx)], [list(rx)], [k], grid, [[0, 0, 0]])
    return ForwardOperator(geom)


def test_kernel_hand_value():
    op = _single_voxel_op()
    k = wavenumber_from_freq(4e9)
    assert k == pytest.approx(2 * math.pi * 4e9 / SPEED_OF_LIGHT)
    val = op.kernel_eval(0, 0)
    assert abs(val) == pytest.approx(1.0 / (4 * math.pi * 0.25), rel=1e-12)
    expected_phase = (-k * 1.0) % (2 * math.pi)
    assert np.angle(val) % (2 * math.pi) == pytest.approx(expected_phase, abs=1e-9)


def test_kernel_small_k_is_real():
    op = _single_voxel_op(k=1e-9)
    val = op.kernel_eval(0, 0)
    assert val.real == pytest.approx(1.0 / (4 * math.pi * 0.25), rel=1e-9)
    assert abs(val.imag) < 1e-9


def test_kernel_inverse_distance_scaling():
    near = _single_voxel_op(voxel_z=0.5)
    far = _single_voxel_op(voxel_z=1.0)
    assert abs(near.kernel_eval(0, 0)) == pytest.approx(4 * abs(far.kernel_eval(0, 0)), rel=1e-12)


def test_kernel_tx_rx_swap_symmetry():
    a = _single_voxel_op(tx=(0.1, 0.0, 0.0), rx=(-0.05, 0.02, 0.0))
    b = _single_voxel_op(tx=(-0.05, 0.02, 0.0), rx=(0.1, 0.0, 0.0))
    assert abs(a.kernel_eval(0, 0)) == pytest.approx(abs(b.kernel_eval(0, 0)), rel=1e-12)


def test_kernel_index_bounds():
    op = _single_voxel_op()
    with pytest.raises(IndexError):
        op.kernel_eval(1, 0)
    with pytest.raises(IndexError):
        op.kernel_eval(0, 1)


def test_pulse_spectrum_length_checked():
    geom = small_geometry(n_freq=4)
    with pytest.raises(ValueError):
        ForwardOperator(geom, pulse_spectrum=np.ones(3))


def test_apply_zero_and_unit_voxel():
    grid = Grid((3, 3, 3), (0.02, 0.02, 0.02), (-0.02, -0.02, 0.4))
    op = ForwardOperator(small_geometry(n_freq=3, grid=grid))
    zero = ComplexVolume(grid.dims, np.zeros(27), grid.voxel_size, grid.origin)
    np.testing.assert_array_equal(op.apply(zero), np.zeros(op.n_channels))
    n = 13
    e_n = ComplexVolume(grid.dims, np.eye(27)[n], grid.voxel_size, grid.origin)
    col = op.apply(e_n)
    expected = np.array([op.kernel_eval(m, n) for m in range(op.n_channels)])
    np.testing.assert_allclose(col, expected, rtol=1e-13)


def test_apply_superposition_and_homogeneity():
    grid = Grid((5, 5, 5), (0.02, 0.02, 0.02), (-0.04, -0.04, 0.4))
    op = ForwardOperator(small_geometry(n_freq=4, grid=grid))
    s1 = random_volume(grid, 11)
    s2 = random_volume(grid, 12)
    both = s1.with_data(s1.data + s2.data)
    lhs = op.apply(both)
    rhs = op.apply(s1) + op.apply(s2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)
    c = 0.7 - 1.3j
    np.testing.assert_allclose(op.apply(s1.with_data(c * s1.data)), c * op.apply(s1), rtol=1e-12)


def test_apply_dim_mismatch():
    op = ForwardOperator(small_geometry())
    bad = ComplexVolume((2, 2, 2), np.ones(8), (0.01, 0.01, 0.01), (0, 0, 0.4))
    with pytest.raises(ValueError):
        op.apply(bad)
    with pytest.raises(ValueError):
        op.adjoint(np.ones(op.n_channels + 1))


def test_adjoint_identity_7cube():
    grid = Grid((7, 7, 7), (0.02, 0.02, 0.02), (-0.06, -0.06, 0.4))
    geom = ImagingGeometry.full_cross_product(
        np.array([[-0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.08, -0.03, 0.0]]),
        np.array([[0.05, 0.05, 0.0], [-0.06, 0.02, 0.0]]),
        wavenumber_from_freq(np.linspace(4e9, 16e9, 10)), grid)
    op = ForwardOperator(geom)
    assert op.n_channels == 60
    rng = np.random.default_rng(3)
    for _ in range(5):
        s = random_volume(grid, rng.integers(1 << 30))
        y = rng.standard_normal(60) + 1j * rng.standard_normal(60)
        a_s = op.apply(s)
        aty = op.adjoint(y)
        lhs = np.vdot(y, a_s)
        rhs = np.vdot(aty.data, s.data)
        err = abs(lhs - rhs) / (np.linalg.norm(a_s) * np.linalg.norm(y))
        assert err < 1e-10


def test_adjoint_basis_vectors(small_op):
    m = 7
    e_m = np.zeros(small_op.n_channels, complex)
    e_m[m] = 1.0
    col = small_op.adjoint(e_m)
    expected = np.conj([small_op.kernel_eval(m, n) for n in range(small_op.n_voxels)])
    np.testing.assert_allclose(col.data, expected, rtol=1e-12, atol=1e-15)
    zero = small_op.adjoint(np.zeros(small_op.n_channels))
    np.testing.assert_array_equal(zero.data, np.zeros(small_op.n_voxels))


@pytest.mark.parametrize("dtype,rtol", [(np.complex128, 1e-12), (np.complex64, 2e-5)])
def test_dense_matches_matrix_free(dtype, rtol):
    grid = Grid((5, 5, 5), (0.02, 0.02, 0.02), (-0.04, -0.04, 0.4))
    op = ForwardOperator(small_geometry(n_freq=4, grid=grid))
    dense = DenseOperator(op, dtype)
    s = random_volume(grid, 21)
    y = np.random.default_rng(22).standard_normal(op.n_channels) * (1 + 0.5j)
    np.testing.assert_allclose(dense.apply(s), op.apply(s), rtol=rtol, atol=1e-7)
    np.testing.assert_allclose(dense.adjoint(y).data, op.adjoint(y).data, rtol=rtol, atol=1e-7)
    assert dense.kernel_eval(3, 5) == pytest.approx(op.kernel_eval(3, 5), rel=rtol)


def test_apply_cols_matches_apply(small_op, small_scene):
    cols = np.stack([small_scene.data, 2j * small_scene.data], axis=1)
    out = small_op.apply_cols(cols)
    np.testing.assert_allclose(out[:, 0], small_op.apply(small_scene), rtol=1e-12)
    np.testing.assert_allclose(out[:, 1], 2j * small_op.apply(small_scene), rtol=1e-12)


def test_simulate_noiseless_and_deterministic(small_op, small_scene):
    clean = simulate_measurements(small_op, small_scene, math.inf, seed=9)
    np.testing.assert_array_equal(clean.values, small_op.apply(small_scene))
    assert clean.noise_sigma == 0.0
    a = simulate_measurements(small_op, small_scene, 20.0, seed=9)
    b = simulate_measurements(small_op, small_scene, 20.0, seed=9)
    np.testing.assert_array_equal(a.values, b.values)
    c = simulate_measurements(small_op, small_scene, 20.0, seed=10)
    assert not np.array_equal(a.values, c.values)


def test_simulate_zero_scene_rejected(small_op):
    grid = small_op.geometry.grid
    zero = ComplexVolume(grid.dims, np.zeros(grid.n_voxels), grid.voxel_size, grid.origin)
    with pytest.raises(NumericalError):
        simulate_measurements(small_op, zero, 20.0, seed=0)
    # but noiseless synthesis of an empty scene is fine
    out = simulate_measurements(small_op, zero, math.inf, seed=0)
    assert np.all(out.values == 0)


def test_simulate_snr_calibration_large_m():
    # one geometry with > 1e5 channels: 10 tx x 10 rx x 1000 freqs on a small grid
    grid = Grid((3, 3, 3), (0.02, 0.02, 0.02), (-0.02, -0.02, 0.4))
    span = np.linspace(-0.14, 0.14, 10)
    tx = np.stack([span, span, np.zeros(10)], axis=1)
    rx = np.stack([span, -span, np.zeros(10)], axis=1)
    geom = ImagingGeometry.full_cross_product(
        tx, rx, wavenumber_from_freq(np.linspace(4e9, 16e9, 1000)), grid)
    op = ForwardOperator(geom)
    assert op.n_channels == 100_000
    scene = random_volume(grid, 5)
    clean = op.apply(scene)
    for target in (0.0, 10.0, 20.0, 30.0):
        noisy = simulate_measurements(op, scene, target, seed=int(target))
        measured = empirical_snr(clean, noisy.values)
        assert abs(measured - target) < 0.3
        expected_sigma = math.sqrt(
            np.sum(np.abs(clean) ** 2) / (op.n_channels * 10 ** (target / 10)))
        assert noisy.noise_sigma == pytest.approx(expected_sigma, rel=1e-12)


def test_geometry_file_round_trip(tmp_path):
    geom = small_geometry(n_freq=5)
    path = tmp_path / "geom.json"
    save_geometry(path, geom)
    back = load_geometry(path)
    assert back.digest() == geom.digest()
    # a second save of the loaded geometry is byte-identical (stable digests)
    path2 = tmp_path / "geom2.json"
    save_geometry(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_geometry_file_default_channels(tmp_path):
    geom = small_geometry(n_freq=2)
    path = tmp_path / "geom.json"
    save_geometry(path, geom)
    import json

    doc = json.loads(path.read_text())
    del doc["channels"]
    path.write_text(json.dumps(doc))
    back = load_geometry(path)
    assert back.n_channels == geom.n_channels
    np.testing.assert_array_equal(back.channel_map, geom.channel_map)
    del doc["freqs_hz"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_geometry(path)


def test_cmea_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    values = (rng.standard_normal(33) + 1j * rng.standard_normal(33)).astype(np.complex64)
    m = MeasurementSet(values, bytes(range(16)), noise_sigma=0.125)
    path = tmp_path / "m.cmea"
    write_cmea(path, m)
    back = read_cmea(path)
    np.testing.assert_array_equal(back.values, m.values)
    assert back.geometry_digest == m.geometry_digest
    assert back.noise_sigma == 0.125
    unknown = MeasurementSet(values, bytes(16), noise_sigma=None)
    write_cmea(path, unknown)
    assert read_cmea(path).noise_sigma is None
    path.write_bytes(b"JUNK")
    with pytest.raises(ValueError):
        read_cmea(path)
