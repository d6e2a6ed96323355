"""Inverse volume rendering: losses, their adjoints, and the staged optimizer."""

import json
import logging
from dataclasses import asdict, dataclass, field as dc_field, fields
from pathlib import Path

import numpy as np

from .camera import Camera, camera_rays, psnr
from .field import (GRADIENT_EPS, AppearanceDecoder, VolumeGrid, decode_appearance, interpolation_matrix,
                    is_interior, sigmoid, softplus)
from .lighting import EnvLight, VisibilityField, compute_visibility_field
from .renderer import GradientBuffer, RenderSettings, backward_rays, render_batch, render_rays
from .sggx import TAU_MIN

log = logging.getLogger(__name__)

SPARSITY_TARGET = 0.05
SMOOTHNESS_STD = 0.1  # variance 0.01
RHO_CLAMP = 1e-6


class OptimizationDiverged(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainView:
    camera: Camera
    image: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError("image shape does not match camera resolution")
        if not np.all(np.isfinite(self.image)) or np.any(self.image < 0.0):
            raise ValueError("training images must be finite and non-negative")


@dataclass
class LossWeights:
    w_c: float = 1.0
    w_sigma: float = 3e-4
    w_z: float = 1e-3
    w_s: float = 1e-3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0")


@dataclass
class LossBreakdown:
    L_c: float = 0.0
    L_sigma: float = 0.0
    L_z: float = 0.0
    L_s: float = 0.0
    total: float = 0.0


# -- individual losses -------------------------------------------------------

def loss_photometric(rendered, target):
    """Mean over rays of the squared L2 color error; returns ``(value, d/d rendered)``."""
    rendered = np.asarray(rendered, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if rendered.shape != target.shape:
        raise ValueError("rendered and target ray counts differ")
    diff = rendered - target
    n = max(rendered.shape[0], 1)
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def loss_sparsity(activations, rho=SPARSITY_TARGET):
    """Sum over channels of KL(rho || batch-mean activation); returns ``(value, d/d activations)``."""
    acts = np.asarray(activations, dtype=np.float64)
    acts = acts.reshape(-1, acts.shape[-1])
    n = acts.shape[0]
    raw_mean = acts.mean(axis=0)
    rho_hat = np.clip(raw_mean, RHO_CLAMP, 1.0 - RHO_CLAMP)
    kl = rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))
    d_rho = (-rho / rho_hat + (1.0 - rho) / (1.0 - rho_hat)) * (raw_mean == rho_hat)
    return float(np.sum(kl)), np.broadcast_to(d_rho / n, acts.shape).copy()


def _density_gradient_parts(grid, x):
    """Central-difference density gradient at ``x`` with the operators needed for its adjoint."""
    raw = grid.raw_density.reshape(-1)
    h = grid.spacing
    grad = np.zeros(x.shape)
    ops = []
    for a in range(3):
        e = np.zeros(3)
        e[a] = h[a]
        side = []
        for sgn in (1.0, -1.0):
            m = interpolation_matrix(grid, x + sgn * e, zero_outside=True)
            inside = np.asarray(m.sum(axis=1)).ravel() > 0.5
            r = m @ raw
            sig = softplus(r) * inside
            grad[:, a] += sgn * sig / (2.0 * h[a])
            side.append((sgn, m, sigmoid(r) * inside))
        ops.append(side)
    return grad, ops


def loss_density_normal(grid, positions, weights, normals, omega_i, n_rays, back_facing=True):
    """Compositing-weighted normal consistency plus orientation penalty.

    Per sample: ||n - n_rho||^2 + max(0, s <n, omega_i>) with n_rho the
    normalized negative density gradient. ``omega_i`` points back toward
    the camera, so s = -1 (``back_facing``) penalizes normals facing away
    from the viewer; s = +1 penalizes the opposite. Samples without one voxel
    of margin or with a vanishing gradient are skipped. Summed over samples,
    averaged over ``n_rays``.

    Returns ``(value, d/d weights, d/d normals, d/d raw_density)``.
    """
    x = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    wi = np.asarray(omega_i, dtype=np.float64).reshape(-1, 3)
    d_w = np.zeros_like(w)
    d_n = np.zeros_like(n)
    d_raw = np.zeros(grid.num_voxels)
    keep = is_interior(grid, x)
    if not np.any(keep):
        return 0.0, d_w, d_n, d_raw.reshape(grid.resolution)
    idx = np.nonzero(keep)[0]
    g, ops = _density_gradient_parts(grid, x[idx])
    gl = np.linalg.norm(g, axis=1)
    ok = gl >= GRADIENT_EPS
    idx, g, gl = idx[ok], g[ok], gl[ok]
    ops = [[(s, m[ok], sg[ok]) for s, m, sg in side] for side in ops]
    ghat = g / gl[:, None]
    n_rho = -ghat
    sgn = -1.0 if back_facing else 1.0
    diff = n[idx] - n_rho
    facing = sgn * np.sum(n[idx] * wi[idx], axis=1)
    term = np.sum(diff * diff, axis=1) + np.maximum(facing, 0.0)
    value = float(np.sum(w[idx] * term) / n_rays)

    d_w[idx] = term / n_rays
    wk = w[idx][:, None] / n_rays
    d_n[idx] = wk * (2.0 * diff + sgn * wi[idx] * (facing > 0.0)[:, None])
    d_nrho = -wk * 2.0 * diff
    d_ghat = -d_nrho
    d_g = (d_ghat - ghat * np.sum(ghat * d_ghat, axis=1, keepdims=True)) / gl[:, None]
    h = grid.spacing
    for a in range(3):
        for s, m, sg in ops[a]:
            d_raw += m.T @ (s * d_g[:, a] / (2.0 * h[a]) * sg)
    return value, d_w, d_n, d_raw.reshape(grid.resolution)


def loss_smoothness(grid, decoder, points, rng=None, eps_x=None, eps_z=None, std=SMOOTHNESS_STD):
    """Mean L1 change of normals under a position jitter plus of decoded appearance under a latent jitter.

    Jitters are Gaussian with the given standard deviation unless passed in
    explicitly. Returns ``(value, GradientBuffer-like dict)``.
    """
    x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = x.shape[0]
    k = grid.latent_dim
    if eps_x is None:
        eps_x = rng.normal(0.0, std, size=x.shape)
    if eps_z is None:
        eps_z = rng.normal(0.0, std, size=(n, k))
    grads = {"raw_normal": np.zeros((grid.num_voxels, 3)), "latent": np.zeros((grid.num_voxels, k)),
             "dec_weight": np.zeros_like(decoder.weight), "dec_bias": np.zeros_like(decoder.bias)}
    if n == 0:
        return 0.0, grads
    rn = grid.raw_normal.reshape(-1, 3)
    m0 = interpolation_matrix(grid, x)
    m1 = interpolation_matrix(grid, x + eps_x)
    r0, r1 = m0 @ rn, m1 @ rn
    l0 = np.maximum(np.linalg.norm(r0, axis=1, keepdims=True), 1e-12)
    l1 = np.maximum(np.linalg.norm(r1, axis=1, keepdims=True), 1e-12)
    n0, n1 = r0 / l0, r1 / l1
    dn = n0 - n1
    value = np.sum(np.abs(dn)) / n
    sg = np.sign(dn) / n

    def norm_back(g, nn, ll):
        return (g - nn * np.sum(g * nn, axis=1, keepdims=True)) / ll

    grads["raw_normal"] += m0.T @ norm_back(sg, n0, l0) - m1.T @ norm_back(sg, n1, l1)

    z = m0 @ grid.latent.reshape(-1, k)
    z1 = z + eps_z
    a0, t0 = decode_appearance(decoder, z)
    a1, t1 = decode_appearance(decoder, z1)
    da = np.concatenate([a0 - a1, (t0 - t1)[:, None]], axis=1)
    value += np.sum(np.abs(da)) / n
    ga = np.sign(da) / n

    def dec_back(zz, g):
        y = zz @ decoder.weight.T + decoder.bias
        s = sigmoid(y)
        gy = g * s * (1.0 - s)
        gy[:, 3] *= 1.0 - TAU_MIN
        return gy

    gy0, gy1 = dec_back(z, ga), dec_back(z1, -ga)
    grads["dec_weight"] += gy0.T @ z + gy1.T @ z1
    grads["dec_bias"] += gy0.sum(axis=0) + gy1.sum(axis=0)
    grads["latent"] += m0.T @ ((gy0 + gy1) @ decoder.weight)
    return float(value), grads


def total_loss(parts, weights):
    """Weighted sum of the four terms; ``parts`` maps L_c/L_sigma/L_z/L_s to values."""
    b = LossBreakdown(L_c=parts.get("L_c", 0.0), L_sigma=parts.get("L_sigma", 0.0),
                      L_z=parts.get("L_z", 0.0), L_s=parts.get("L_s", 0.0))
    b.total = (weights.w_c * b.L_c + weights.w_sigma * b.L_sigma
               + weights.w_z * b.L_z + weights.w_s * b.L_s)
    return b.total, b


# -- full objective on a ray batch -----------------------------------------------

def batch_objective(grid, decoder, env, vis, origins, dirs, targets, settings, weights,
                    rng=None, back_facing=True, smooth_points=512, eps=None, need_grad=True):
    """Render a ray batch, evaluate every loss term, and optionally backpropagate.

    Returns ``(LossBreakdown, GradientBuffer or None, rendered rgb)``.
    """
    rgb, _, tr = render_rays(grid, decoder, env, vis, origins, dirs, settings, record=True)
    n_rays = rgb.shape[0]
    parts = {}
    l_c, d_rgb = loss_photometric(rgb, targets)
    parts["L_c"] = l_c
    grads = GradientBuffer.zeros(grid, decoder, env) if need_grad else None
    d_weights = None
    d_sample = {}
    if tr.empty:
        _, b = total_loss(parts, weights)
        if need_grad:
            backward_rays(tr, weights.w_c * d_rgb, grads)
        return b, grads, rgb

    sel = tr.sel
    pos = tr.x.reshape(-1, 3)[sel]
    if weights.w_sigma:
        l_s, dw, dn, draw = loss_density_normal(grid, pos, tr.weights.ravel()[sel], tr.nrm, tr.wi,
                                                n_rays, back_facing)
        parts["L_sigma"] = l_s
        if need_grad:
            d_weights = np.zeros(tr.nh * tr.ns)
            d_weights[sel] = weights.w_sigma * dw
            d_weights = d_weights.reshape(tr.nh, tr.ns)
            d_sample["normal"] = weights.w_sigma * dn
            grads.raw_density += weights.w_sigma * draw
    if weights.w_z:
        acts = sigmoid(tr.z)
        l_z, d_act = loss_sparsity(acts)
        parts["L_z"] = l_z
        if need_grad:
            d_sample["latent"] = weights.w_z * d_act * acts * (1.0 - acts)
    if weights.w_s:
        if rng is None:
            rng = np.random.default_rng(0)
        take = np.sort(rng.choice(pos.shape[0], size=min(smooth_points, pos.shape[0]), replace=False))
        ex, ez = (None, None) if eps is None else eps
        l_sm, g_sm = loss_smoothness(grid, decoder, pos[take], rng=rng, eps_x=ex, eps_z=ez)
        parts["L_s"] = l_sm
        if need_grad:
            grads.raw_normal += weights.w_s * g_sm["raw_normal"].reshape(grads.raw_normal.shape)
            grads.latent += weights.w_s * g_sm["latent"].reshape(grads.latent.shape)
            grads.dec_weight += weights.w_s * g_sm["dec_weight"]
            grads.dec_bias += weights.w_s * g_sm["dec_bias"]
    _, b = total_loss(parts, weights)
    if need_grad:
        backward_rays(tr, weights.w_c * d_rgb, grads, d_weights=d_weights, d_sample=d_sample or None)
    return b, grads, rgb


def backward(trace, d_rgb, d_weights=None, d_sample=None, grads=None):
    """Adjoint of a recorded render: gradients of every raw parameter from dLoss/dColor."""
    if grads is None and getattr(trace, "empty", True) is False:
        grads = GradientBuffer(np.zeros(trace.grid_shape), np.zeros(trace.grid_shape + (3,)),
                               np.zeros(trace.grid_shape + (trace.kdim,)),
                               np.zeros_like(trace.decoder.weight), np.zeros_like(trace.decoder.bias),
                               np.zeros_like(trace.env.sharpness), np.zeros_like(trace.env.amplitude))
    return backward_rays(trace, d_rgb, grads, d_weights=d_weights, d_sample=d_sample)


# -- optimizer -------------------------------------------------------------------

class Adam:
    """Adaptive-moment updates with per-group step sizes."""

    def __init__(self, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self, name, param, grad, scale=1.0):
        lr = self.lrs[name] * scale
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
            self.t[name] = 0
        self.t[name] += 1
        t = self.t[name]
        m, v = self.m[name], self.v[name]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        mhat = m / (1.0 - self.beta1 ** t)
        vhat = v / (1.0 - self.beta2 ** t)
        param -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self):
        out = {}
        for k in self.m:
            out[f"adam_m_{k}"] = self.m[k]
            out[f"adam_v_{k}"] = self.v[k]
            out[f"adam_t_{k}"] = np.array(self.t[k])
        return out

    def load_state(self, arrays):
        for key in arrays:
            if key.startswith("adam_m_"):
                k = key[len("adam_m_"):]
                self.m[k] = np.array(arrays[key])
                self.v[k] = np.array(arrays[f"adam_v_{k}"])
                self.t[k] = int(arrays[f"adam_t_{k}"])


@dataclass
class OptimizeConfig:
    iterations: int = 1800
    batch_rays: int = 1024
    lr_grid: float = 5e-2
    lr_decoder: float = 1e-2
    lr_light: float = 1e-2
    lr_decay: float = 0.1
    loss_weights: LossWeights = dc_field(default_factory=LossWeights)
    seed: int = 0
    stage1_iterations: int = 100
    visibility_refresh: int = 300
    learn_light: bool = True
    steps_per_ray: int = 32
    visibility_mode: str = "sg-fit"
    back_facing: bool = True
    latent_dim: int = 8
    resolution: tuple = (16, 16, 16)
    smooth_points: int = 512
    checkpoint_every: int = 0
    init_light_amplitude: float = 0.5
    init_light_sharpness: float = 5.0

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "loss_weights" in d and not isinstance(d["loss_weights"], LossWeights):
            lw = d["loss_weights"]
            d["loss_weights"] = LossWeights(*lw) if isinstance(lw, (list, tuple)) else LossWeights(**lw)
        if "resolution" in d:
            r = d["resolution"]
            d["resolution"] = tuple(r) if isinstance(r, (list, tuple)) else (int(r),) * 3
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    def render_settings(self, **kw):
        return RenderSettings(steps_per_ray=self.steps_per_ray, visibility_mode=self.visibility_mode, **kw)


HISTORY_COLUMNS = ("iter", "L_c", "L_sigma", "L_z", "L_s", "total", "PSNR")


def init_scene(config, env_template, bounds=None, rng=None):
    """Random grid and decoder plus the gray starting light."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    res = tuple(config.resolution)
    k = config.latent_dim
    grid = VolumeGrid(rng.normal(0.0, 0.1, res), rng.normal(0.0, 1.0, res + (3,)),
                      rng.normal(0.0, 0.1, res + (k,)),
                      **({} if bounds is None else {"bounds": bounds}))
    decoder = AppearanceDecoder(rng.normal(0.0, 0.1, (4, k)), np.zeros(4))
    env = EnvLight(env_template.axes, np.full(len(env_template), config.init_light_sharpness),
                   np.full((len(env_template), 3), config.init_light_amplitude))
    return grid, decoder, env


def _batch_psnr(l_c):
    mse = l_c / 3.0
    return float("inf") if mse <= 0.0 else 10.0 * np.log10(1.0 / mse)


def _save_checkpoint(path, it, grid, decoder, env, vis, adam, history):
    arrays = dict(iteration=np.array(it), raw_density=grid.raw_density, raw_normal=grid.raw_normal,
                  latent=grid.latent, bounds=grid.bounds, dec_weight=decoder.weight,
                  dec_bias=decoder.bias, light_axes=env.axes, light_sharpness=env.sharpness,
                  light_amplitude=env.amplitude, history=np.array(history, dtype=np.float64).reshape(-1, 7),
                  vis_axes=vis.axes, vis_sharpness=vis.sharpness, vis_amplitudes=vis.amplitudes,
                  vis_light_dirs=vis.light_dirs, vis_light_transmittance=vis.light_transmittance,
                  vis_threshold=np.array(vis.threshold))
    arrays.update(adam.state())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    with np.load(path) as z:
        a = {k: z[k] for k in z.files}
    grid = VolumeGrid(a["raw_density"], a["raw_normal"], a["latent"], a["bounds"])
    decoder = AppearanceDecoder(a["dec_weight"], a["dec_bias"])
    env = EnvLight(a["light_axes"], a["light_sharpness"], a["light_amplitude"])
    vis = VisibilityField(a["vis_axes"], a["vis_sharpness"], a["vis_amplitudes"], a["vis_light_dirs"],
                          a["vis_light_transmittance"], float(a["vis_threshold"]))
    return int(a["iteration"]), grid, decoder, env, vis, a


def gather_rays(views):
    origins, dirs, colors = [], [], []
    for v in views:
        o, d = camera_rays(v.camera)
        origins.append(o)
        dirs.append(d)
        colors.append(v.image.reshape(-1, 3))
    return np.concatenate(origins), np.concatenate(dirs), np.concatenate(colors)


def optimize(views, config, env_init=None, init=None, checkpoint_dir=None, resume=None,
             callback=None):
    """Fit grid, decoder and (optionally) light to posed images.

    Iterations before ``stage1_iterations`` update density and normals only
    under the photometric and density-normal losses; afterwards every
    parameter is free and all four losses are active. Visibility is refit
    from the current density every ``visibility_refresh`` iterations.

    ``env_init`` fixes the light lobe layout (and its values when
    ``learn_light`` is False). Returns ``(grid, decoder, env, vis, history)``
    with one history row per iteration plus the final state.
    """
    if len(views) < 2:
        raise ValueError("optimize needs at least two views")
    if env_init is None:
        raise ValueError("optimize needs an env_init to fix the light lobe layout")
    origins, dirs, colors = gather_rays(views)
    n_total = origins.shape[0]
    batch = min(config.batch_rays, n_total)
    settings = config.render_settings()
    weights = config.loss_weights

    adam = Adam({"raw_density": config.lr_grid, "raw_normal": config.lr_grid, "latent": config.lr_grid,
                 "dec_weight": config.lr_decoder, "dec_bias": config.lr_decoder,
                 "light_sharpness": config.lr_light, "light_amplitude": config.lr_light})
    if resume is not None:
        start, grid, decoder, env, vis, arrays = load_checkpoint(resume)
        adam.load_state(arrays)
        history = [tuple(r) for r in arrays["history"]]
    else:
        if init is not None:
            grid, decoder, env = (init[0].copy(), init[1].copy(), init[2].copy())
        else:
            grid, decoder, env = init_scene(config, env_init)
        if not config.learn_light:
            env = env_init.copy()
        start = 0
        history = []
        vis = None

    spec_dirs = settings.specular_directions(env)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for it in range(start, config.iterations + 1):
        if vis is None or it % config.visibility_refresh == 0 or it == config.stage1_iterations:
            vis = compute_visibility_field(grid, spec_dirs)
        rng = np.random.default_rng([config.seed, it])
        idx = np.sort(rng.choice(n_total, size=batch, replace=False))
        stage1 = it < config.stage1_iterations
        w = LossWeights(weights.w_c, weights.w_sigma, 0.0, 0.0) if stage1 else weights
        final = it == config.iterations
        b, g, _ = batch_objective(grid, decoder, env, vis, origins[idx], dirs[idx], colors[idx],
                                  settings, w, rng=rng, back_facing=config.back_facing,
                                  smooth_points=config.smooth_points, need_grad=not final)
        row = (float(it), b.L_c, b.L_sigma, b.L_z, b.L_s, b.total, _batch_psnr(b.L_c))
        history.append(row)
        if not np.all(np.isfinite(row[1:6])):
            path = None
            if ckpt_dir is not None:
                path = _save_checkpoint(ckpt_dir / "diverged.npz", it, grid, decoder, env, vis, adam, history)
            raise OptimizationDiverged(f"loss became non-finite at iteration {it}", path)
        if callback is not None:
            callback(it, b)
        if final:
            break

        # exponential step-size decay down to lr_decay at the last iteration
        sc = config.lr_decay ** (it / max(config.iterations, 1))
        adam.step("raw_density", grid.raw_density, g.raw_density, sc)
        adam.step("raw_normal", grid.raw_normal, g.raw_normal, sc)
        if not stage1:
            adam.step("latent", grid.latent, g.latent, sc)
            adam.step("dec_weight", decoder.weight, g.dec_weight, sc)
            adam.step("dec_bias", decoder.bias, g.dec_bias, sc)
            if config.learn_light:
                adam.step("light_sharpness", env.sharpness, g.light_sharpness, sc)
                adam.step("light_amplitude", env.amplitude, g.light_amplitude, sc)
                np.maximum(env.sharpness, 0.0, out=env.sharpness)
                np.maximum(env.amplitude, 0.0, out=env.amplitude)
        grid.reproject_normals()

        nxt = it + 1
        if ckpt_dir is not None and config.checkpoint_every and nxt % config.checkpoint_every == 0:
            # visibility used at iteration nxt is refreshed on resume exactly as in a straight run
            _save_checkpoint(ckpt_dir / f"ckpt_{nxt:06d}.npz", nxt, grid, decoder, env, vis, adam, history)

    vis = compute_visibility_field(grid, spec_dirs)
    return grid, decoder, env, vis, history


def render_views_psnr(grid, decoder, env, vis, views, settings):
    """Mean PSNR over full renders of the given views."""
    vals = []
    for v in views:
        o, d = camera_rays(v.camera)
        rgb, _ = render_batch(grid, decoder, env, vis, o, d, settings)
        vals.append(psnr(rgb.reshape(v.image.shape), v.image))
    return float(np.mean(vals))


def write_history(history, path):
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join([str(int(row[0]))] + [repr(float(v)) for v in row[1:]]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_history(path):
    rows = Path(path).read_text().strip().splitlines()[1:]
    return [tuple(float(v) for v in r.split(",")) for r in rows]
