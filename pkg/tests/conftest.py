import numpy as np
import pytest

from radarpnp.core import ComplexVolume, Grid
from radarpnp.forward_model import DenseOperator, ForwardOperator
from radarpnp.scene_gen import SceneRecipe, generate_scene, mills_cross_array

SMALL_GRID = Grid((9, 9, 9), (0.025, 0.025, 0.02), (-0.1, -0.1, 0.4))


def small_geometry(n_freq=8, grid=SMALL_GRID):
    return mills_cross_array(n_tx=5, n_rx=5, n_freq=n_freq, grid=grid)


def random_volume(grid, seed, complex_=True):
    rng = np.random.default_rng(seed)
    n = grid.n_voxels
    data = rng.standard_normal(n) + (1j * rng.standard_normal(n) if complex_ else 0)
    return ComplexVolume(grid.dims, data, grid.voxel_size, grid.origin)


@pytest.fixture(scope="session")
def small_op():
    """Exact (complex128) dense operator on the 9^3 test geometry, 200 channels."""
    return DenseOperator(ForwardOperator(small_geometry()), np.complex128)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneRecipe(dims=SMALL_GRID.dims, n_points=3, seed=4,
                                      voxel_size=SMALL_GRID.voxel_size,
                                      origin=SMALL_GRID.origin))
