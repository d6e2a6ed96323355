"""Spherical-Gaussian environment light, marched visibility and SG-fitted visibility."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import least_squares, nnls

from .field import softplus
from .quadrature import fibonacci_sphere

# Single SG approximating max(0, w.n): max error 0.133, near the best reachable with
# the peak within 0.1 of 1 and the hemisphere integral within 10% of pi.
COSINE_AMPLITUDE = 1.09
COSINE_SHARPNESS = 2.1

VISIBILITY_DIRECTIONS = 64
VISIBILITY_LOBES = 4
VISIBILITY_SHARPNESS_CANDIDATES = (0.5, 1.0, 2.0, 4.0)
SPECULAR_VISIBILITY_THRESHOLD = 0.5


class EnvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SgLobe:
    axis: np.ndarray
    sharpness: float
    amplitude: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-6:
            raise ValueError(f"SG axis must be a unit 3-vector, got {self.axis!r}")
        if not np.isfinite(self.sharpness) or self.sharpness < 0.0:
            raise ValueError(f"SG sharpness must be finite and >= 0, got {self.sharpness}")
        amp = np.asarray(self.amplitude, dtype=np.float64)
        if np.any(amp < 0.0) or not np.all(np.isfinite(amp)):
            raise ValueError("SG amplitude must be finite and >= 0")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "sharpness", float(self.sharpness))
        object.__setattr__(self, "amplitude", amp)

    def __call__(self, omega):
        return sg_eval(self, omega)


class EnvLight:
    """Sum of SG lobes stored as arrays: axes (J,3), sharpness (J,), amplitude (J,3)."""

    def __init__(self, axes, sharpness, amplitude):
        self.axes = np.array(axes, dtype=np.float64).reshape(-1, 3)
        self.sharpness = np.array(sharpness, dtype=np.float64).reshape(-1)
        self.amplitude = np.array(amplitude, dtype=np.float64).reshape(-1, 3)
        j = self.axes.shape[0]
        if j == 0:
            raise ValueError("environment light needs at least one lobe")
        if self.sharpness.shape != (j,) or self.amplitude.shape != (j, 3):
            raise ValueError("lobe parameter arrays disagree in length")
        if np.any(np.abs(np.linalg.norm(self.axes, axis=1) - 1.0) > 1e-6):
            raise ValueError("lobe axes must be unit vectors")
        if not (np.all(np.isfinite(self.sharpness)) and np.all(np.isfinite(self.amplitude))):
            raise ValueError("non-finite lobe parameters")

    @classmethod
    def from_lobes(cls, lobes):
        lobes = list(lobes)
        if not lobes:
            raise ValueError("environment light needs at least one lobe")
        return cls([l.axis for l in lobes], [l.sharpness for l in lobes],
                   [np.broadcast_to(l.amplitude, (3,)) for l in lobes])

    @classmethod
    def fibonacci(cls, n, sharpness=5.0, amplitude=0.5):
        axes, _ = fibonacci_sphere(n)
        axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        return cls(axes, np.full(n, float(sharpness)),
                   np.broadcast_to(np.asarray(amplitude, dtype=np.float64), (n, 3)))

    @property
    def lobes(self):
        return [SgLobe(a, s, m) for a, s, m in zip(self.axes, self.sharpness, self.amplitude)]

    def __len__(self):
        return self.axes.shape[0]

    def copy(self):
        return EnvLight(self.axes.copy(), self.sharpness.copy(), self.amplitude.copy())

    def rotated(self, rotation):
        axes = self.axes @ np.asarray(rotation).T
        return EnvLight(axes / np.linalg.norm(axes, axis=1, keepdims=True),
                        self.sharpness, self.amplitude)


def sg_eval(lobe, omega):
    omega = np.asarray(omega, dtype=np.float64)
    g = np.exp(lobe.sharpness * (omega @ lobe.axis - 1.0))
    return g[..., None] * lobe.amplitude if lobe.amplitude.ndim else g * lobe.amplitude


def env_eval(env, omega):
    """RGB radiance sum_j mu_j exp(lambda_j (w.xi_j - 1))."""
    omega = np.asarray(omega, dtype=np.float64)
    g = np.exp(env.sharpness * (omega @ env.axes.T - 1.0))
    return g @ env.amplitude


def env_lobe_matrix(env, directions):
    """exp(lambda_j (d_i.xi_j - 1)) for every direction/lobe pair."""
    return np.exp(env.sharpness * (np.asarray(directions) @ env.axes.T - 1.0))


SERIES_CUTOFF = 0.1


def sphere_kernel(d, e):
    """4 pi exp(-e) sinh(d)/d and its derivative in d, for 0 <= d <= e."""
    d = np.asarray(d, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if d.ndim == 0 and e.ndim == 0:
        k, dk = sphere_kernel(d[None], e[None])
        return k[0], dk[0]
    d, e = np.broadcast_arrays(d, e)
    small = d < SERIES_CUTOFF
    any_small = bool(small.any())
    ds = np.where(small, 1.0, d) if any_small else d
    ep = np.exp(ds - e)
    em = np.exp(-ds - e)
    inv = 1.0 / ds
    k = ep - em
    k *= 2.0 * np.pi * inv
    dk = ep
    dk += em
    dk *= 2.0 * np.pi
    dk -= k
    dk *= inv
    if any_small:
        # Taylor series of sinh(d)/d and its derivative; the closed forms
        # cancel badly for small d
        x = d[small]
        x2 = x * x
        base = 4.0 * np.pi * np.exp(-e[small])
        k[small] = base * (1.0 + x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0 * (1.0 + x2 / 72.0))))
        dk[small] = base * x / 3.0 * (1.0 + x2 / 10.0 * (1.0 + x2 / 28.0 * (1.0 + x2 / 54.0)))
    return k, dk


def sg_inner_product(a, b):
    """Closed-form integral of the product of two SG lobes over the sphere."""
    u = a.sharpness * a.axis + b.sharpness * b.axis
    k, _ = sphere_kernel(np.linalg.norm(u), a.sharpness + b.sharpness)
    return a.amplitude * b.amplitude * k


def sg_product(a, b):
    """The product of two SG lobes is itself an SG lobe."""
    u = a.sharpness * a.axis + b.sharpness * b.axis
    lam = float(np.linalg.norm(u))
    axis = u / lam if lam > 0.0 else np.array([0.0, 0.0, 1.0])
    scale = np.exp(lam - a.sharpness - b.sharpness)
    return SgLobe(axis, lam, a.amplitude * b.amplitude * scale)


def sg_triple_integral(a, b, c):
    u = a.sharpness * a.axis + b.sharpness * b.axis + c.sharpness * c.axis
    k, _ = sphere_kernel(np.linalg.norm(u), a.sharpness + b.sharpness + c.sharpness)
    return a.amplitude * b.amplitude * c.amplitude * k


def cosine_sg_approx(normal):
    return SgLobe(np.asarray(normal, dtype=np.float64), COSINE_SHARPNESS, COSINE_AMPLITUDE)


def diffuse_shade(albedo, omega_m, env, vis):
    """(a/pi) * sum over visibility and light lobes of the integral of V * L * cosine."""
    cos = cosine_sg_approx(omega_m)
    total = np.zeros(3)
    for v in vis:
        for light in env.lobes:
            total = total + sg_triple_integral(v, light, cos)
    return np.asarray(albedo, dtype=np.float64) / np.pi * np.maximum(total, 0.0)


# -- marched visibility ------------------------------------------------------

def ray_box_exit(bounds, origins, dirs):
    """Distance from points inside the box to its boundary along ``dirs``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (bounds[0] - origins) * inv
        t1 = (bounds[1] - origins) * inv
    tmax = np.where(np.isfinite(t0) & np.isfinite(t1), np.maximum(t0, t1), np.inf)
    return np.maximum(np.min(tmax, axis=-1), 0.0)


def march_transmittance(grid, origins, dirs, step, chunk=1 << 21):
    """exp(-sum sigma delta) from each origin to the grid boundary, midpoint rule."""
    if not step > 0.0:
        raise ValueError(f"march step must be positive, got {step}")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    t_exit = ray_box_exit(grid.bounds, origins, dirs)
    n_steps = max(int(np.ceil(np.max(t_exit, initial=0.0) / step)), 1)
    delta = t_exit / n_steps
    out = np.empty(origins.shape[0])
    rays_per_chunk = max(chunk // n_steps, 1)
    frac = np.arange(n_steps) + 0.5
    for s in range(0, origins.shape[0], rays_per_chunk):
        o, d, dl = origins[s:s + rays_per_chunk], dirs[s:s + rays_per_chunk], delta[s:s + rays_per_chunk]
        pts = o[:, None, :] + (dl[:, None] * frac)[..., None] * d[:, None, :]
        coords = (pts - grid.bounds[0]) / grid.spacing - 0.5
        raw = map_coordinates(grid.raw_density, coords.reshape(-1, 3).T, order=1, mode="nearest")
        sigma = softplus(raw).reshape(pts.shape[:2])
        out[s:s + rays_per_chunk] = np.exp(-sigma.sum(axis=1) * dl)
    return out


def compute_visibility(grid, x, omega_l, step):
    """Transmittance from ``x`` toward a distant light in direction ``omega_l``."""
    if not step > 0.0:
        raise ValueError(f"march step must be positive, got {step}")
    x = np.asarray(x, dtype=np.float64)
    omega_l = np.broadcast_to(np.asarray(omega_l, dtype=np.float64), x.shape)
    t = march_transmittance(grid, x.reshape(-1, 3), omega_l.reshape(-1, 3), step)
    return t.reshape(x.shape[:-1]) if x.ndim > 1 else float(t[0])


# -- SG visibility fit -------------------------------------------------------

def _basis(directions, axes, sharpness):
    return np.exp(np.asarray(sharpness) * (directions @ axes.T - 1.0))


def fit_amplitudes(directions, values, axes, sharpness):
    """Non-negative least-squares amplitudes for fixed lobes; ``values`` (..., n_dirs)."""
    a = _basis(directions, axes, sharpness)
    vals = np.asarray(values, dtype=np.float64).reshape(-1, directions.shape[0])
    amps = np.empty((vals.shape[0], axes.shape[0]))
    for i, v in enumerate(vals):
        if np.all(v == v[0]) and v[0] == 0.0:
            amps[i] = 0.0
        else:
            amps[i] = nnls(a, v)[0]
    resid = vals - amps @ a.T
    return amps.reshape(np.shape(values)[:-1] + (axes.shape[0],)), resid


def fit_visibility_sg(samples, k=VISIBILITY_LOBES):
    """Fit ``k`` SG lobes (axis, sharpness, amplitude) to ``(omega, visibility)`` samples.

    Starts from the best fixed-axis non-negative fit and refines every lobe
    parameter by nonlinear least squares. Returns a list of SgLobe with scalar
    amplitudes; evaluation is clamped to [0, 1] by callers.
    """
    dirs = np.array([s[0] for s in samples], dtype=np.float64)
    vals = np.array([s[1] for s in samples], dtype=np.float64)
    if dirs.shape[0] < 4 * k:
        raise ValueError(f"need at least {4 * k} samples for {k} lobes, got {dirs.shape[0]}")
    mean = float(np.clip(vals.mean(), 0.0, 1.0))
    constant = [SgLobe(np.array([0.0, 0.0, 1.0]), 0.0, mean)] + \
        [SgLobe(np.array([0.0, 0.0, 1.0]), 0.0, 0.0) for _ in range(k - 1)]
    if np.ptp(vals) < 1e-12 or np.linalg.matrix_rank(dirs) < 3:
        return constant

    axes, _ = fibonacci_sphere(k)
    best = None
    for kappa in VISIBILITY_SHARPNESS_CANDIDATES:
        amps, resid = fit_amplitudes(dirs, vals, axes, kappa)
        err = float(np.sum(resid ** 2))
        if best is None or err < best[0]:
            best = (err, kappa, amps)
    _, kappa, amps = best

    def unpack(p):
        p = p.reshape(k, 5)
        ax = p[:, :3] / np.maximum(np.linalg.norm(p[:, :3], axis=1, keepdims=True), 1e-12)
        return ax, np.exp(p[:, 3]), np.square(p[:, 4])

    def residual(p):
        ax, lam, mu = unpack(p)
        return np.exp(lam * (dirs @ ax.T - 1.0)) @ mu - vals

    p0 = np.concatenate([axes, np.full((k, 1), np.log(kappa)),
                         np.sqrt(np.maximum(amps, 1e-3))[:, None]], axis=1).ravel()
    sol = least_squares(residual, p0, method="lm", max_nfev=400 * k)
    if not np.all(np.isfinite(sol.x)) or np.sum(sol.fun ** 2) > best[0]:
        return [SgLobe(a, kappa, m) for a, m in zip(axes, amps)]
    ax, lam, mu = unpack(sol.x)
    return [SgLobe(a, l, m) for a, l, m in zip(ax, lam, mu)]


def eval_visibility_lobes(lobes, omega):
    total = sum(sg_eval(l, omega) for l in lobes)
    return np.clip(total, 0.0, 1.0)


class VisibilityField:
    """Per-voxel SG visibility on a shared lobe basis plus marched light-direction tables.

    ``amplitudes`` (nx, ny, nz, K_v) weight lobes with shared ``axes`` and
    ``sharpness``, so trilinear interpolation of amplitudes interpolates the
    visibility function itself. ``light_transmittance`` (nx, ny, nz, J) holds
    marched transmittance toward each of ``light_dirs``; thresholded per voxel
    it gives the binary specular visibility.
    """

    def __init__(self, axes, sharpness, amplitudes, light_dirs, light_transmittance,
                 threshold=SPECULAR_VISIBILITY_THRESHOLD):
        self.axes = np.asarray(axes, dtype=np.float64).reshape(-1, 3)
        self.sharpness = np.broadcast_to(np.asarray(sharpness, dtype=np.float64),
                                         (self.axes.shape[0],)).copy()
        self.amplitudes = np.asarray(amplitudes, dtype=np.float64)
        self.light_dirs = np.asarray(light_dirs, dtype=np.float64).reshape(-1, 3)
        self.light_transmittance = np.asarray(light_transmittance, dtype=np.float64)
        self.threshold = float(threshold)

    @classmethod
    def unoccluded(cls, resolution, light_dirs):
        res = tuple(resolution)
        return cls(np.array([[0.0, 0.0, 1.0]]), 0.0, np.ones(res + (1,)), light_dirs,
                   np.ones(res + (len(light_dirs),)))

    def light_visible(self):
        """Per-voxel 0/1 specular visibility toward each light direction."""
        return (self.light_transmittance >= self.threshold).astype(np.float64)

    @property
    def num_lobes(self):
        return self.axes.shape[0]

    def voxel_lobes(self, index):
        amps = self.amplitudes[tuple(index)]
        return [SgLobe(a, s, m) for a, s, m in zip(self.axes, self.sharpness, amps)]

    def evaluate(self, grid, x, omega):
        """SG visibility at points ``x`` toward ``omega``, clamped to [0, 1]."""
        from .field import trilinear
        idx, w, _ = trilinear(grid, x)
        amps = np.einsum("...c,...ck->...k", w, self.amplitudes.reshape(-1, self.num_lobes)[idx])
        basis = np.exp(self.sharpness * (np.asarray(omega) @ self.axes.T - 1.0))
        return np.clip(np.sum(amps * basis, axis=-1), 0.0, 1.0)


def compute_visibility_field(grid, light_dirs, k=VISIBILITY_LOBES, n_dirs=VISIBILITY_DIRECTIONS,
                             step=None, threshold=SPECULAR_VISIBILITY_THRESHOLD):
    """March from every voxel center and fit the shared-basis SG visibility."""
    step = float(np.min(grid.spacing)) * 0.5 if step is None else step
    centers = grid.voxel_centers().reshape(-1, 3)
    light_dirs = np.asarray(light_dirs, dtype=np.float64).reshape(-1, 3)
    dirs, _ = fibonacci_sphere(n_dirs)
    all_dirs = np.concatenate([dirs, light_dirs], axis=0)
    nd = all_dirs.shape[0]
    origins = np.repeat(centers, nd, axis=0)
    trans = march_transmittance(grid, origins, np.tile(all_dirs, (centers.shape[0], 1)), step)
    trans = trans.reshape(centers.shape[0], nd)
    samples, light_t = trans[:, :n_dirs], trans[:, n_dirs:]

    axes, _ = fibonacci_sphere(k)
    best = None
    for kappa in VISIBILITY_SHARPNESS_CANDIDATES:
        amps, resid = fit_amplitudes(dirs, samples, axes, kappa)
        err = float(np.sum(resid ** 2))
        if best is None or err < best[0]:
            best = (err, kappa, amps)
    _, kappa, amps = best
    res = grid.resolution
    return VisibilityField(axes, kappa, amps.reshape(res + (k,)), light_dirs,
                           light_t.reshape(res + (light_dirs.shape[0],)), threshold)


# -- environment files -------------------------------------------------------

def save_env_sg(env, path):
    lines = ["# axis_x axis_y axis_z sharpness mu_r mu_g mu_b"]
    for a, s, m in zip(env.axes, env.sharpness, env.amplitude):
        lines.append(" ".join(repr(float(v)) for v in (*a, s, *m)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_env_sg(path):
    fields = ("axis_x", "axis_y", "axis_z", "sharpness", "mu_r", "mu_g", "mu_b")
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != len(fields):
            raise EnvFormatError(f"{path}:{lineno}: expected {len(fields)} fields, got {len(parts)}")
        row = []
        for name, tok in zip(fields, parts):
            try:
                row.append(float(tok))
            except ValueError:
                raise EnvFormatError(f"{path}:{lineno}: field {name} is not a number: {tok!r}") from None
        if not np.all(np.isfinite(row)):
            raise EnvFormatError(f"{path}:{lineno}: non-finite value")
        if row[3] < 0.0:
            raise EnvFormatError(f"{path}:{lineno}: field sharpness must be >= 0")
        if abs(np.linalg.norm(row[:3]) - 1.0) > 1e-6:
            raise EnvFormatError(f"{path}:{lineno}: axis is not unit length")
        rows.append(row)
    if not rows:
        raise EnvFormatError(f"{path}: no lobes")
    arr = np.array(rows)
    return EnvLight(arr[:, :3], arr[:, 3], arr[:, 4:])
