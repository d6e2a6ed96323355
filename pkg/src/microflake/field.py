"""Explicit voxel microflake field with a shared linear appearance decoder."""

import json
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sggx import TAU_MIN

GRID_MAGIC = b"MFGRID\x00\x00"
GRID_VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<8sI3I6fI")
NORMAL_EPS = 1e-6
GRADIENT_EPS = 1e-8


class GridFormatError(ValueError):
    pass


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class VolumeGrid:
    raw_density: np.ndarray
    raw_normal: np.ndarray
    latent: np.ndarray
    bounds: np.ndarray = dc_field(default_factory=lambda: np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]))

    def __post_init__(self):
        self.raw_density = np.asarray(self.raw_density, dtype=np.float64)
        self.raw_normal = np.asarray(self.raw_normal, dtype=np.float64)
        self.latent = np.asarray(self.latent, dtype=np.float64)
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)
        res = self.raw_density.shape
        if len(res) != 3 or min(res) < 2:
            raise ValueError(f"grid needs at least 2 voxels per axis, got {res}")
        if self.raw_normal.shape != res + (3,) or self.latent.shape[:3] != res:
            raise ValueError("raw_normal/latent shapes disagree with raw_density")
        if np.any(self.bounds[1] <= self.bounds[0]):
            raise ValueError("degenerate bounds")
        self.reproject_normals()

    @classmethod
    def zeros(cls, resolution, latent_dim=8, bounds=None):
        res = tuple(int(r) for r in resolution)
        normal = np.zeros(res + (3,))
        normal[..., 2] = 1.0
        kw = {} if bounds is None else {"bounds": bounds}
        return cls(np.zeros(res), normal, np.zeros(res + (latent_dim,)), **kw)

    @property
    def resolution(self):
        return self.raw_density.shape

    @property
    def latent_dim(self):
        return self.latent.shape[-1]

    @property
    def num_voxels(self):
        return self.raw_density.size

    @property
    def spacing(self):
        return (self.bounds[1] - self.bounds[0]) / np.array(self.resolution)

    def voxel_centers(self):
        axes = [self.bounds[0, a] + (np.arange(n) + 0.5) * self.spacing[a]
                for a, n in enumerate(self.resolution)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def density(self):
        return softplus(self.raw_density)

    def reproject_normals(self):
        """Rescale raw normals shorter than 1e-6 back onto that radius; idempotent."""
        n = np.linalg.norm(self.raw_normal, axis=-1, keepdims=True)
        short = n < NORMAL_EPS
        if np.any(short):
            fallback = np.zeros_like(self.raw_normal)
            fallback[..., 2] = NORMAL_EPS
            scaled = self.raw_normal * (NORMAL_EPS / np.maximum(n, 1e-300))
            self.raw_normal = np.where(short, np.where(n > 0.0, scaled, fallback), self.raw_normal)

    def channels(self):
        """All raw parameters flattened to ``(num_voxels, 4 + K)``."""
        v = self.num_voxels
        return np.concatenate([self.raw_density.reshape(v, 1), self.raw_normal.reshape(v, 3),
                               self.latent.reshape(v, -1)], axis=1)

    def copy(self):
        return VolumeGrid(self.raw_density.copy(), self.raw_normal.copy(), self.latent.copy(),
                          self.bounds.copy())


@dataclass
class AppearanceDecoder:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != 4 or self.bias.shape != (4,):
            raise ValueError("decoder expects weight (4, K) and bias (4,)")

    @classmethod
    def zeros(cls, latent_dim=8):
        return cls(np.zeros((4, latent_dim)), np.zeros(4))

    @property
    def latent_dim(self):
        return self.weight.shape[1]

    def copy(self):
        return AppearanceDecoder(self.weight.copy(), self.bias.copy())


def decode_appearance(decoder, z):
    """Affine map then sigmoid: albedo in (0,1)^3, roughness in (1e-3, 1]."""
    y = np.asarray(z, dtype=np.float64) @ decoder.weight.T + decoder.bias
    albedo = sigmoid(y[..., :3])
    tau = TAU_MIN + (1.0 - TAU_MIN) * sigmoid(y[..., 3])
    return albedo, np.maximum(tau, TAU_MIN)


def decode_appearance_jacobian(decoder, z):
    """d(albedo_r, albedo_g, albedo_b, tau)/dz, shape (..., 4, K)."""
    y = np.asarray(z, dtype=np.float64) @ decoder.weight.T + decoder.bias
    s = sigmoid(y)
    ds = s * (1.0 - s)
    ds[..., 3] *= 1.0 - TAU_MIN
    return ds[..., :, None] * decoder.weight


def trilinear(grid, x):
    """Corner indices, weights and inside mask for points ``x`` (..., 3).

    Voxel values live at voxel centers; points in the half-voxel rim replicate
    the edge value.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample position")
    res = np.array(grid.resolution)
    g = (x - grid.bounds[0]) / grid.spacing - 0.5
    i0 = np.clip(np.floor(g), 0, res - 2).astype(np.int64)
    f = np.clip(g - i0, 0.0, 1.0)
    inside = np.all((x >= grid.bounds[0]) & (x <= grid.bounds[1]), axis=-1)
    ny, nz = res[1], res[2]
    idx = []
    wts = []
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                idx.append(((i0[..., 0] + dx) * ny + (i0[..., 1] + dy)) * nz + i0[..., 2] + dz)
                wts.append(wx * wy * wz)
    return np.stack(idx, axis=-1), np.stack(wts, axis=-1), inside


def interpolation_matrix(grid, x, zero_outside=False):
    """Sparse ``(n_points, num_voxels)`` trilinear operator for flattened points."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    idx, w, inside = trilinear(grid, x)
    if zero_outside:
        w = w * inside[:, None]
    n = x.shape[0]
    indptr = np.arange(0, 8 * n + 1, 8)
    return sp.csr_matrix((w.ravel(), idx.ravel(), indptr), shape=(n, grid.num_voxels))


def _interp(grid, values, x):
    idx, w, inside = trilinear(grid, x)
    flat = values.reshape(grid.num_voxels, -1)
    out = np.einsum("...c,...ck->...k", w, flat[idx])
    return out, inside


def sample_field(grid, decoder, x):
    """Interpolate raw parameters at ``x`` then activate.

    Returns ``(sigma, albedo, omega_m, tau_m)``; sigma is 0 outside the bounds.
    """
    raw, inside = _interp(grid, grid.channels(), x)
    sigma = np.where(inside, softplus(raw[..., 0]), 0.0)
    rn = raw[..., 1:4]
    omega_m = rn / np.maximum(np.linalg.norm(rn, axis=-1, keepdims=True), 1e-12)
    albedo, tau = decode_appearance(decoder, raw[..., 4:])
    return sigma, albedo, omega_m, tau


def sample_density(grid, x):
    raw, inside = _interp(grid, grid.raw_density, x)
    return np.where(inside, softplus(raw[..., 0]), 0.0)


def density_gradient_normal(grid, x):
    """Normalized negative density gradient by central differences at the voxel spacing.

    Returns ``(normal, valid)``; ``valid`` is False where the gradient norm is
    below 1e-8 (the normal is then arbitrary).
    """
    x = np.asarray(x, dtype=np.float64)
    h = grid.spacing
    g = np.empty(x.shape)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h[a]
        g[..., a] = (sample_density(grid, x + e) - sample_density(grid, x - e)) / (2.0 * h[a])
    norm = np.linalg.norm(g, axis=-1)
    valid = norm >= GRADIENT_EPS
    normal = -g / np.where(valid, norm, 1.0)[..., None]
    return normal, valid


def is_interior(grid, x):
    """True where the point keeps one voxel of margin to every face."""
    x = np.asarray(x)
    h = grid.spacing
    return np.all((x - h >= grid.bounds[0]) & (x + h <= grid.bounds[1]), axis=-1)


def _sidecar(path):
    return Path(path).with_suffix(".json")


def save_grid(grid, decoder, path):
    """Write the binary grid plus a JSON sidecar holding the decoder.

    Payload: little-endian float32 raw_density, raw_normal, latent, each
    voxel-major with x varying fastest.
    """
    path = Path(path)
    nx, ny, nz = grid.resolution
    k = grid.latent_dim
    if decoder.latent_dim != k:
        raise GridFormatError(f"decoder latent dim {decoder.latent_dim} != grid latent dim {k}")
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, nx, ny, nz, *grid.bounds.ravel(), k)
    header = header.ljust(HEADER_SIZE, b"\x00")
    parts = [header]
    for arr in (grid.raw_density[..., None], grid.raw_normal, grid.latent):
        parts.append(np.ascontiguousarray(arr.transpose(2, 1, 0, 3)).astype("<f4").tobytes())
    path.write_bytes(b"".join(parts))
    meta = {
        "format": "microflake-decoder",
        "version": GRID_VERSION,
        "latent_dim": k,
        "resolution": [nx, ny, nz],
        "weight": decoder.weight.tolist(),
        "bias": decoder.bias.tolist(),
    }
    _sidecar(path).write_text(json.dumps(meta, indent=1))


def load_grid(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER_SIZE:
        raise GridFormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, nx, ny, nz, *rest = _HEADER.unpack_from(data)
    bounds, k = rest[:6], rest[6]
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    v = nx * ny * nz
    expected = HEADER_SIZE + v * (4 + k) * 4
    if len(data) != expected:
        raise GridFormatError(f"{path}: payload is {len(data) - HEADER_SIZE} bytes, "
                              f"expected {expected - HEADER_SIZE} for {nx}x{ny}x{nz}x(4+{k})")
    payload = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).astype(np.float64)
    off = 0
    arrays = []
    for c in (1, 3, k):
        chunk = payload[off:off + v * c].reshape(nz, ny, nx, c).transpose(2, 1, 0, 3)
        arrays.append(np.ascontiguousarray(chunk))
        off += v * c
    try:
        meta = json.loads(_sidecar(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GridFormatError(f"{_sidecar(path)}: cannot read decoder sidecar: {exc}") from exc
    if meta.get("version") != GRID_VERSION or meta.get("latent_dim") != k \
            or list(meta.get("resolution", [])) != [nx, ny, nz]:
        raise GridFormatError(f"{_sidecar(path)}: sidecar does not match grid "
                              f"(version/latent_dim/resolution)")
    grid = VolumeGrid(arrays[0][..., 0], arrays[1], arrays[2],
                      np.array(bounds, dtype=np.float32).astype(np.float64).reshape(2, 3))
    decoder = AppearanceDecoder(np.array(meta["weight"]), np.array(meta["bias"]))
    return grid, decoder
