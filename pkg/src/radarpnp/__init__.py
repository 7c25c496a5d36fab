"""radarpnp: 3D complex-valued radar image reconstruction with plug-and-play magnitude priors."""

from .baselines import back_projection
from .core import (
    SPEED_OF_LIGHT,
    ComplexVolume,
    Grid,
    ImagingGeometry,
    MagnitudeVolume,
    MeasurementSet,
    NumericalError,
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
from .denoise import (
    DenoiserHandle,
    PluginClient,
    ProtocolError,
    complex_magnitude_prox,
    denoise_external,
    denoise_identity,
    denoise_soft_threshold,
    denoise_tv_chambolle,
)
from .forward_model import (
    DenseOperator,
    ForwardOperator,
    load_geometry,
    read_cmea,
    save_geometry,
    simulate_measurements,
    write_cmea,
)
from .metrics import compression_level, data_fraction, empirical_snr, psnr
from .scene_gen import SceneRecipe, generate_dataset, generate_scene, mills_cross_array
from .solver import (
    IterationTrace,
    SolverState,
    cg_normal_solve,
    default_epsilon,
    experimental_epsilon,
    project_epsilon_ball,
    reconstruct,
    reconstruct_batch,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
