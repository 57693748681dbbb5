"""Adaptive splat surface modeling of outdoor point clouds, spinning-LiDAR
simulation over the splat model, and cloud-to-cloud evaluation.
"""

from .cloud import (GroupMapping, PointCloud, Splat, SplatSet, SurfaceGroup,
                    map_semantic_groups)
from .errors import (ConfigError, DegenerateNeighborhoodError, FormatError,
                     SplatsimError, StructuralError)
from .evaluate import (EvalReport, c2c_distance, c2c_per_class, coverage_fraction,
                       density_stats, plane_distance)
from .features import (PcaFrame, ScaleStats, classify_by_descriptors,
                       compute_scale_stats, estimate_normals, neighborhood_pca,
                       prepare_cloud)
from .io import load_cloud, load_splats, save_cloud, save_splats
from .lidar import (Pose, Scan, SensorModel, SimOptions, generate_revolution_rays,
                    linear_trajectory, load_trajectory, offset_trajectory,
                    sensor_preset, simulate_scan, simulate_trajectory,
                    splat_dynamic_frames, weighted_return)
from .resample import (DensityStats, compute_density, denoise, resample_cloud,
                       run_adaptive_pipeline)
from .spatial import (Bvh, Hit, PointIndex, Ray, build_bvh, build_point_index,
                      bvh_all_hits, bvh_first_hit, restricted_neighborhood)
from .splatgen import (GenConfig, GroupParams, Variant, generate_splats,
                       group_params, grow_splat)

__version__ = "0.1.0"

__all__ = [
    "Bvh", "ConfigError", "DegenerateNeighborhoodError", "DensityStats",
    "EvalReport", "FormatError", "GenConfig", "GroupMapping", "GroupParams",
    "Hit", "PcaFrame", "PointCloud", "PointIndex", "Pose", "Ray", "ScaleStats",
    "Scan", "SensorModel", "SimOptions", "Splat", "SplatSet", "SplatsimError",
    "StructuralError", "SurfaceGroup", "Variant",
    "build_bvh", "build_point_index", "bvh_all_hits", "bvh_first_hit",
    "c2c_distance", "c2c_per_class", "classify_by_descriptors",
    "compute_density", "compute_scale_stats", "coverage_fraction", "denoise",
    "density_stats", "estimate_normals", "generate_revolution_rays",
    "generate_splats", "group_params", "grow_splat", "linear_trajectory",
    "load_cloud", "load_splats", "load_trajectory", "map_semantic_groups",
    "neighborhood_pca", "offset_trajectory", "plane_distance", "prepare_cloud",
    "resample_cloud", "restricted_neighborhood", "run_adaptive_pipeline",
    "save_cloud", "save_splats", "sensor_preset", "simulate_scan",
    "simulate_trajectory", "splat_dynamic_frames", "weighted_return",
]
