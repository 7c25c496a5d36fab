"""Synthetic random extended-target scenes and canonical array presets."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .core import ComplexVolume, Grid, ImagingGeometry, write_cvol
from .forward_model import wavenumber_from_freq

# Imaging cube used throughout the simulated benchmarks: 30 cm per side,
# centered 50 cm from the array plane, half-resolution voxels.
DEFAULT_GRID = Grid(
    dims=(25, 25, 49),
    voxel_size=(0.0125, 0.0125, 0.00625),
    origin=(-0.15, -0.15, 0.35),
)


@dataclass(frozen=True)
class SceneRecipe:
    """Parameters of the random volumetric target generator."""

    dims: tuple[int, int, int] = (25, 25, 49)
    n_points: int = 15
    gaussian_sigma_voxels: float = 1.0
    sigmoid_gain: float = 6.0
    seed: int = 0
    voxel_size: tuple[float, float, float] = DEFAULT_GRID.voxel_size
    origin: tuple[float, float, float] = DEFAULT_GRID.origin

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.gaussian_sigma_voxels <= 0:
            raise ValueError("gaussian_sigma_voxels must be > 0")

    def content_hash(self) -> str:
        """Hash of every field except the seed; identifies the generator family."""
        fields = asdict(self)
        fields.pop("seed")
        blob = json.dumps(fields, sort_keys=True).encode()
        return hashlib.md5(blob).hexdigest()


def generate_scene(recipe: SceneRecipe) -> ComplexVolume:
    """One random extended target as a complex volume.

    Unit impulses at ``n_points`` distinct random voxels are blurred with an
    isotropic 3D Gaussian (truncated at 3 sigma), peak-normalized, squashed
    into [0, 1] with ``m -> 2*(logistic(gain*m) - 1/2)`` so that empty voxels
    stay exactly zero, and given i.i.d. uniform phase in [0, 2*pi) per voxel.
    Deterministic for a fixed seed.
    """
    grid = Grid(recipe.dims, recipe.voxel_size, recipe.origin)
    n = grid.n_voxels
    if recipe.n_points > n:
        raise ValueError(f"n_points {recipe.n_points} exceeds voxel count {n}")
    rng = np.random.default_rng(recipe.seed)
    impulses = np.zeros(n)
    impulses[rng.choice(n, size=recipe.n_points, replace=False)] = 1.0
    blurred = ndimage.gaussian_filter(
        impulses.reshape(grid.dims, order="F"),
        sigma=recipe.gaussian_sigma_voxels,
        truncate=3.0,
        mode="constant",
    )
    # Peak-normalize before the sigmoid so the strongest blob maps near 1.
    mag = 2.0 * (expit(recipe.sigmoid_gain * blurred / blurred.max()) - 0.5)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n)
    data = mag.ravel(order="F") * np.exp(1j * phases)
    return ComplexVolume(grid.dims, data, grid.voxel_size, grid.origin)


def generate_dataset(recipe: SceneRecipe, counts, out_dir) -> list[dict]:
    """Write train/val/test scene files plus a JSONL manifest; returns the manifest rows.

    Scene ``i`` (global, ordered train, val, test) uses seed ``recipe.seed + i``,
    so regeneration is byte-identical and scenes can be produced in parallel.
    """
    n_train, n_val, n_test = (int(c) for c in counts)
    os.makedirs(out_dir, exist_ok=True)
    recipe_hash = recipe.content_hash()
    rows = []
    index = 0
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        for _ in range(count):
            seed = recipe.seed + index
            scene = generate_scene(_with_seed(recipe, seed))
            name = f"scene_{index:05d}.cvol"
            write_cvol(os.path.join(out_dir, name), scene)
            rows.append({"path": name, "split": split, "seed": seed, "recipe": recipe_hash})
            index += 1
    with open(os.path.join(out_dir, "manifest.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return rows


def load_manifest(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _with_seed(recipe: SceneRecipe, seed: int) -> SceneRecipe:
    fields = asdict(recipe)
    fields["seed"] = seed
    return SceneRecipe(**fields)


def mills_cross_array(width_m: float = 0.3, n_tx: int = 12, n_rx: int = 13,
                      f_lo: float = 4e9, f_hi: float = 16e9, n_freq: int = 20,
                      grid: Grid | None = None) -> ImagingGeometry:
    """Cross-shaped MIMO aperture: tx on one diagonal of the square, rx on the other.

    Antennas sit in the z=0 plane, uniformly spaced (endpoints included) along
    the two diagonals of a ``width_m`` x ``width_m`` aperture; frequencies are
    uniform over [f_lo, f_hi]. Channels are the full tx*rx*frequency product.
    The default grid is the standard 30 cm imaging cube (DEFAULT_GRID).
    """
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    if n_tx < 1 or n_rx < 1:
        raise ValueError("need at least one antenna per side")
    half = width_m / 2.0
    tx_diag = np.linspace(-half, half, n_tx)
    rx_diag = np.linspace(-half, half, n_rx)
    tx = np.stack([tx_diag, tx_diag, np.zeros(n_tx)], axis=1)
    rx = np.stack([rx_diag, -rx_diag, np.zeros(n_rx)], axis=1)
    freqs = np.linspace(f_lo, f_hi, n_freq)
    ks = wavenumber_from_freq(freqs)
    return ImagingGeometry.full_cross_product(tx, rx, ks, grid or DEFAULT_GRID)
