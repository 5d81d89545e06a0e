"""Voxel-to-hexahedron material mapping and modulus-sensitivity studies.

The package turns an oriented T2 raster volume into element-wise dynamic
moduli on a hexahedral mesh (nearest-neighbor or volume-weighted transfer),
solves desk-scale compressible neo-Hookean models, and reports how the top
stress/strain percentiles respond to perturbations of the T2-modulus line.
"""

from t2fem.raster import (
    EchoSeries,
    VoxelGrid,
    fit_t2,
    smooth_anisotropic_diffusion,
    world_to_index,
)
from t2fem.mesh import HexMesh, RigidTransform, apply_pose
from t2fem.transfer import (
    AgreementStats,
    ElementField,
    agreement,
    assign_nearest_neighbor,
    assign_volume_weighted,
    hex_box_overlap_volume,
    texture_stats,
)
from t2fem.material import (
    ElasticConstants,
    LinearRelation,
    alter_slope,
    clamp_t2,
    e_d_from_t2,
    lame_from_young_poisson,
    shift_modulus,
)
from t2fem.fem import (
    FEModel,
    SolutionState,
    StepSchedule,
    cauchy_stress,
    principal_and_shear,
    solve_static,
    strain_energy_density,
)
from t2fem.sensitivity import (
    StudyConfig,
    StudyReport,
    exceedance_count,
    percent_change,
    run_study,
    top1_threshold_and_mean,
)

__version__ = "0.1.0"
