import json
import math

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import kstest

from radarpnp.core import magnitude, phase, read_cvol
from radarpnp.metrics import compression_level
from radarpnp.scene_gen import (
    DEFAULT_GRID,
    SceneRecipe,
    generate_dataset,
    generate_scene,
    load_manifest,
    mills_cross_array,
)


def test_recipe_validation():
    with pytest.raises(ValueError):
        SceneRecipe(n_points=0)
    with pytest.raises(ValueError):
        SceneRecipe(gaussian_sigma_voxels=0.0)
    with pytest.raises(ValueError):
        generate_scene(SceneRecipe(dims=(2, 2, 2), n_points=9))


def test_scene_deterministic():
    a = generate_scene(SceneRecipe(seed=42))
    b = generate_scene(SceneRecipe(seed=42))
    np.testing.assert_array_equal(a.data, b.data)
    c = generate_scene(SceneRecipe(seed=43))
    assert not np.array_equal(a.data, c.data)


def test_scene_magnitude_range_and_target():
    for seed in range(5):
        mags = magnitude(generate_scene(SceneRecipe(seed=seed))).data
        assert mags.min() >= 0.0
        assert mags.max() <= 1.0
        assert mags.max() > 0.5  # a target exists


def test_scene_delta_kernel_limit():
    # sigma -> 0: the blur degenerates to a delta, one voxel survives
    recipe = SceneRecipe(dims=(6, 6, 6), n_points=1, gaussian_sigma_voxels=1e-6, seed=3)
    mags = magnitude(generate_scene(recipe)).data
    peak = 2.0 * (expit(recipe.sigmoid_gain) - 0.5)
    assert np.count_nonzero(mags) == 1
    assert mags.max() == pytest.approx(peak, rel=1e-12)


def test_scene_phases_uniform():
    # pool phases of nonzero voxels across scenes; KS against U[0, 2pi)
    samples = []
    seed = 0
    while len(samples) < 10_000:
        scene = generate_scene(SceneRecipe(seed=seed))
        mags = magnitude(scene).data
        samples.extend(np.mod(phase(scene)[mags > 0], 2 * math.pi))
        seed += 1
    samples = np.asarray(samples[:10_000])
    result = kstest(samples / (2 * math.pi), "uniform")
    assert result.pvalue > 0.01


def test_dataset_generation(tmp_path):
    recipe = SceneRecipe(dims=(8, 8, 8), n_points=2, seed=7)
    rows = generate_dataset(recipe, (2, 1, 1), tmp_path)
    assert len(rows) == 4
    assert [r["split"] for r in rows] == ["train", "train", "val", "test"]
    assert [r["seed"] for r in rows] == [7, 8, 9, 10]
    manifest = load_manifest(tmp_path / "manifest.jsonl")
    assert manifest == rows
    for row in rows:
        vol = read_cvol(tmp_path / row["path"])
        assert vol.dims == (8, 8, 8)
    # regeneration is byte-identical
    blob = (tmp_path / rows[0]["path"]).read_bytes()
    generate_dataset(recipe, (2, 1, 1), tmp_path)
    assert (tmp_path / rows[0]["path"]).read_bytes() == blob


def test_dataset_recipe_hash_ignores_seed(tmp_path):
    a = SceneRecipe(seed=1).content_hash()
    b = SceneRecipe(seed=2).content_hash()
    c = SceneRecipe(seed=1, n_points=14).content_hash()
    assert a == b != c


def test_mills_cross_channel_count():
    geom = mills_cross_array(n_freq=20)
    n = geom.grid.n_voxels
    assert geom.n_channels == 12 * 13 * 20 == 3120
    assert n == 25 * 25 * 49 == 30625
    assert compression_level(geom.n_channels, n) == pytest.approx(0.898, abs=5e-4)


def test_mills_cross_antenna_layout():
    geom = mills_cross_array(n_freq=1)
    assert geom.tx_positions.shape == (12, 3)
    assert geom.rx_positions.shape == (13, 3)
    assert np.all(geom.tx_positions[:, 2] == 0.0)
    assert np.all(geom.rx_positions[:, 2] == 0.0)
    # tx on the y = x diagonal, rx on y = -x
    assert np.max(np.abs(geom.tx_positions[:, 1] - geom.tx_positions[:, 0])) < 1e-12
    assert np.max(np.abs(geom.rx_positions[:, 1] + geom.rx_positions[:, 0])) < 1e-12
    assert geom.tx_positions[:, 0].min() == -0.15
    assert geom.tx_positions[:, 0].max() == 0.15
    assert geom.wavenumbers.size == 1
    assert np.all(geom.channel_map[:, 2] == 0)


def test_mills_cross_default_grid():
    geom = mills_cross_array(n_freq=2)
    assert geom.grid == DEFAULT_GRID
    assert geom.grid.voxel_size == (0.0125, 0.0125, 0.00625)
    assert geom.grid.origin == (-0.15, -0.15, 0.35)


def test_mills_cross_frequency_endpoints():
    geom = mills_cross_array(n_freq=5, f_lo=4e9, f_hi=16e9)
    from radarpnp.forward_model import freq_from_wavenumber

    freqs = freq_from_wavenumber(geom.wavenumbers)
    np.testing.assert_allclose(freqs, np.linspace(4e9, 16e9, 5), rtol=1e-12)
