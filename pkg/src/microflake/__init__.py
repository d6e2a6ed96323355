"""Differentiable SGGX microflake volume rendering with SG environment light.

Modules:
    sggx      -- SGGX matrices, NDF, projected area, visible-normal sampling
    phase     -- specular and diffuse microflake phase functions
    lighting  -- spherical Gaussians, environment light, visibility fields
    field     -- voxel grid, appearance decoder, grid file format
    renderer  -- ray marching, shading, and the exact adjoint pass
    inverse   -- losses, Adam, and the staged optimizer
    cli       -- the ``microflake`` command
"""

__version__ = "0.1.0"

from .camera import Camera, camera_rays, psnr, read_pfm, ring_cameras, write_pfm, write_png
from .field import AppearanceDecoder, VolumeGrid, load_grid, sample_field, save_grid
from .inverse import LossWeights, OptimizeConfig, TrainView, optimize
from .lighting import EnvLight, SgLobe, VisibilityField, compute_visibility_field, load_env_sg, save_env_sg
from .phase import PhaseWeights
from .renderer import GradientBuffer, RenderSettings, backward_rays, render_image, render_rays
from .scenes import make_preset
from .sggx import MicroflakeParams, SggxMatrix, build_sggx

__all__ = [
    "AppearanceDecoder", "Camera", "EnvLight", "GradientBuffer", "LossWeights", "MicroflakeParams",
    "OptimizeConfig", "PhaseWeights", "RenderSettings", "SggxMatrix", "SgLobe", "TrainView",
    "VisibilityField", "VolumeGrid", "backward_rays", "build_sggx", "camera_rays",
    "compute_visibility_field", "load_env_sg", "load_grid", "make_preset", "optimize", "psnr",
    "read_pfm", "render_image", "render_rays", "ring_cameras", "sample_field", "save_env_sg",
    "save_grid", "write_pfm", "write_png",
]
