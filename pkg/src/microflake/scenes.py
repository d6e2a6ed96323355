"""Synthetic ground-truth scenes used as round-trip fixtures."""

import numpy as np

from .camera import ring_cameras
from .field import AppearanceDecoder, VolumeGrid, inverse_softplus, logit
from .lighting import EnvLight

PRESETS = ("sphere", "two-material-blob", "occluder-slab")

SPHERE_RADIUS = 0.55
SURFACE_WIDTH = 0.06
DENSITY_INSIDE = 14.0
RAW_OUTSIDE = -5.0


class UnknownPresetError(ValueError):
    pass


def _material_decoder(latent_dim, materials):
    """Decoder whose latent channel ``i`` selects material ``i`` (albedo rgb, tau)."""
    weight = np.zeros((4, latent_dim))
    base = logit(np.array([0.5, 0.5, 0.5, 0.5]))
    targets = [np.concatenate([logit(np.asarray(a)), logit(np.array([(t - 1e-3) / (1.0 - 1e-3)]))])
               for a, t in materials]
    # channel i carries a unit code for material i
    for i, tgt in enumerate(targets):
        weight[:, i] = tgt - base
    return AppearanceDecoder(weight, base)


def default_env(n_lobes=16, seed=7, sun_axis=(0.3, 0.4, 0.866)):
    """Sky-like SG environment: soft colored fill plus one bright sun lobe."""
    rng = np.random.default_rng(seed)
    env = EnvLight.fibonacci(n_lobes, sharpness=4.0)
    amp = 0.25 + 0.15 * rng.uniform(size=(n_lobes, 3))
    amp *= np.array([0.9, 1.0, 1.15])
    sun = np.argmax(env.axes @ (np.asarray(sun_axis) / np.linalg.norm(sun_axis)))
    amp[sun] = [1.6, 1.45, 1.2]
    return EnvLight(env.axes, env.sharpness, amp)


def relight_env(n_lobes=16, seed=11):
    """A held-out environment: different colors and sun direction, same lobe layout."""
    return default_env(n_lobes, seed=seed, sun_axis=(-0.6, 0.2, 0.5))


def _smooth_inside(sdf, width=SURFACE_WIDTH):
    return 1.0 / (1.0 + np.exp(sdf / width))


def _density_from_occupancy(occ):
    sigma = np.maximum(DENSITY_INSIDE * occ, 0.0)
    raw = np.where(sigma > 1e-6, inverse_softplus(np.maximum(sigma, 1e-6)), RAW_OUTSIDE)
    return np.maximum(raw, RAW_OUTSIDE)


def sphere_scene(resolution=16, latent_dim=8):
    grid = VolumeGrid.zeros((resolution,) * 3, latent_dim)
    c = grid.voxel_centers()
    r = np.linalg.norm(c, axis=-1)
    grid.raw_density = _density_from_occupancy(_smooth_inside(r - SPHERE_RADIUS))
    grid.raw_normal = c / r[..., None]
    grid.latent[..., 0] = 1.0
    decoder = _material_decoder(latent_dim, [((0.75, 0.45, 0.3), 0.35)])
    return grid, decoder


def two_material_blob(resolution=16, latent_dim=8):
    grid = VolumeGrid.zeros((resolution,) * 3, latent_dim)
    c = grid.voxel_centers()
    centers = np.array([[-0.25, 0.0, 0.0], [0.3, 0.05, 0.1]])
    radii = np.array([0.45, 0.38])
    d = np.linalg.norm(c[..., None, :] - centers, axis=-1) - radii
    sdf = -np.log(np.sum(np.exp(-d / 0.08), axis=-1)) * 0.08
    grid.raw_density = _density_from_occupancy(_smooth_inside(sdf))
    nearest = np.argmin(d, axis=-1)
    out = c - centers[nearest]
    grid.raw_normal = out / np.linalg.norm(out, axis=-1, keepdims=True)
    grid.latent[..., 0] = nearest == 0
    grid.latent[..., 1] = nearest == 1
    decoder = _material_decoder(latent_dim, [((0.8, 0.3, 0.25), 0.6), ((0.3, 0.5, 0.8), 0.2)])
    return grid, decoder


def occluder_slab(resolution=16, latent_dim=8):
    """Sphere beside a dense vertical wall on its +x side; the wall blocks the +x light."""
    grid = VolumeGrid.zeros((resolution,) * 3, latent_dim)
    c = grid.voxel_centers()
    center = np.array([-0.2, 0.0, 0.0])
    r = np.linalg.norm(c - center, axis=-1)
    sphere = _smooth_inside(r - 0.42)
    wall_sdf = np.maximum(np.abs(c[..., 0] - 0.62) - 0.1,
                          np.maximum(np.abs(c[..., 1]), np.abs(c[..., 2])) - 0.75)
    wall = _smooth_inside(wall_sdf)
    grid.raw_density = _density_from_occupancy(np.maximum(sphere, wall))
    out = c - center
    normal = out / np.linalg.norm(out, axis=-1, keepdims=True)
    wall_normal = np.zeros_like(c)
    wall_normal[..., 0] = np.sign(c[..., 0] - 0.62 + 1e-9)
    grid.raw_normal = np.where((wall > sphere)[..., None], wall_normal, normal)
    grid.latent[..., 0] = 1.0
    decoder = _material_decoder(latent_dim, [((0.7, 0.7, 0.7), 0.5)])
    return grid, decoder


def occluder_env(n_lobes=16):
    """Dim fill with two strong opposing lights along +x and -x."""
    env = EnvLight.fibonacci(n_lobes, sharpness=4.0, amplitude=0.08)
    amp = env.amplitude.copy()
    amp[np.argmax(env.axes[:, 0])] = 2.5
    amp[np.argmin(env.axes[:, 0])] = 2.5
    return EnvLight(env.axes, env.sharpness, amp)


def make_preset(name, n_views=24, resolution=16, image_size=32, latent_dim=8, n_lobes=16):
    """Ground truth ``(grid, decoder, env, cameras)`` for a named preset."""
    if name == "sphere":
        grid, decoder = sphere_scene(resolution, latent_dim)
        env = default_env(n_lobes)
    elif name == "two-material-blob":
        grid, decoder = two_material_blob(resolution, latent_dim)
        env = default_env(n_lobes)
    elif name == "occluder-slab":
        grid, decoder = occluder_slab(resolution, latent_dim)
        env = occluder_env(n_lobes)
    else:
        raise UnknownPresetError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    cams = ring_cameras(n_views, width=image_size, height=image_size)
    return grid, decoder, env, cams
