"""Deterministic single-scatter ray marching of the microflake field.

Every ray is cut into ``steps_per_ray`` equal segments across its overlap
with the grid bounds and shaded at segment midpoints. Per-sample radiance is
the weighted sum of a diffuse term (SG light x SG visibility x SG cosine,
integrated in closed form) and a specular term (the specular phase evaluated
against a fixed set of light directions with binary visibility). The forward
pass can record a trace from which :func:`backward_rays` computes exact
adjoints for every raw grid value, decoder weight, and light parameter.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .camera import camera_rays
from .field import decode_appearance, interpolation_matrix, sigmoid, softplus
from .lighting import (COSINE_AMPLITUDE, COSINE_SHARPNESS, SERIES_CUTOFF, VisibilityField, env_eval,
                       env_lobe_matrix, sphere_kernel)
from .phase import PhaseWeights
from .sggx import TAU_MIN

VISIBILITY_MODES = ("sg-fit", "marched", "off")


class TraceError(RuntimeError):
    pass


@dataclass
class RenderSettings:
    steps_per_ray: int = 64
    light_directions: np.ndarray = None  # None: use the env lobe axes
    weights: PhaseWeights = dc_field(default_factory=PhaseWeights)
    visibility_mode: str = "sg-fit"
    deterministic: bool = True
    early_termination: float = 1e-4  # None or 0 disables
    background: tuple = (0.0, 0.0, 0.0)
    chunk_rays: int = 4096
    threads: int = 1
    albedo_remap: tuple = None  # (3x3 matrix, 3-offset) applied to decoded albedo
    gradient_check: bool = False  # disables early termination

    def __post_init__(self):
        if int(self.steps_per_ray) < 2:
            raise ValueError("steps_per_ray must be >= 2")
        if self.visibility_mode not in VISIBILITY_MODES:
            raise ValueError(f"visibility mode must be one of {VISIBILITY_MODES}")
        self.steps_per_ray = int(self.steps_per_ray)

    def specular_directions(self, env):
        if self.light_directions is None:
            return env.axes
        return np.asarray(self.light_directions, dtype=np.float64).reshape(-1, 3)


@dataclass
class RadianceSample:
    position: np.ndarray
    transmittance: float
    density: float
    radiance: np.ndarray
    step: float


def ray_box(bounds, origins, dirs):
    """Entry/exit distances of rays against an axis-aligned box (entry clamped at 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (bounds[0] - origins) * inv
        t1 = (bounds[1] - origins) * inv
    lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    # Parallel rays outside a slab get (+inf, -inf) or (-inf, +inf) correctly above,
    # except for origins exactly on the slab plane, which count as inside.
    tn = np.maximum(np.max(lo, axis=-1), 0.0)
    tf = np.min(hi, axis=-1)
    return tn, tf


def _half_vectors(wi, dirs):
    """Per-ray half vectors toward each light direction; mask of defined ones."""
    h = wi[:, None, :] + dirs[None, :, :]
    hl = np.linalg.norm(h, axis=-1)
    ok = hl > 1e-9
    return h / np.where(ok, hl, 1.0)[..., None], ok


# -- shading kernels ---------------------------------------------------------

def _specular_forward(n, tau, wi, hvec, hok, light_rgb, vis_bin, dw):
    c = np.sum(n * wi, axis=-1)
    t2 = tau * tau
    pa = np.sqrt(t2 + (1.0 - t2) * c * c)
    hn = np.einsum("sc,sjc->sj", n, hvec)
    hn2 = hn * hn
    q = hn2 + (1.0 - hn2) / t2[:, None]
    dval = 1.0 / (np.pi * t2[:, None] * q * q)
    f = dval / (4.0 * pa[:, None]) * hok
    fb = f * vis_bin
    nu = dw * fb @ light_rgb
    cache = (c, t2, pa, hn, q, dval, f, fb)
    return nu, cache


def _specular_backward(g, n, tau, wi, hvec, light_rgb, vis_bin, dw, cache):
    c, t2, pa, hn, q, dval, f, fb = cache
    g_light = dw * fb.T @ g
    gf = dw * vis_bin * (g @ light_rgb.T)
    g_d = gf / (4.0 * pa[:, None])
    g_pa = -np.sum(gf * f, axis=1) / pa
    g_q = g_d * (-2.0 * dval / q)
    g_t2 = np.sum(g_d * (-dval / t2[:, None]), axis=1)
    g_hn = g_q * (2.0 * hn * (1.0 - 1.0 / t2[:, None]))
    g_t2 += np.sum(g_q * (-(1.0 - hn * hn) / (t2 * t2)[:, None]), axis=1)
    g_c = g_pa * (1.0 - t2) * c / pa
    g_t2 += g_pa * (1.0 - c * c) / (2.0 * pa)
    g_n = np.einsum("sj,sjc->sc", g_hn, hvec) + g_c[:, None] * wi
    g_tau = g_t2 * 2.0 * tau
    return g_n, g_tau, g_light


def _diffuse_sg_terms(env, vis_axes, vis_sharp):
    u = vis_sharp[:, None, None] * vis_axes[:, None, :] + env.sharpness[None, :, None] * env.axes[None, :, :]
    e = vis_sharp[:, None] + env.sharpness[None, :] + COSINE_SHARPNESS
    return u, e


def _diffuse_sg_forward(n, albedo, vis_amp, u, e, mu):
    kv, j = e.shape
    uf = u.reshape(-1, 3)
    un = n @ uf.T
    d2 = np.sum(uf * uf, axis=1)[None, :] + COSINE_SHARPNESS ** 2 + 2.0 * COSINE_SHARPNESS * un
    d = np.sqrt(np.maximum(d2, 0.0))
    k, dk = sphere_kernel(d, e.reshape(1, -1))
    tp = COSINE_AMPLITUDE * k
    a = np.einsum("sl,slj->sj", vis_amp, tp.reshape(-1, kv, j))
    q = a @ mu
    nu = albedo * q / np.pi
    return nu, (d, k, dk, tp, a, q)


def _diffuse_sg_backward(g, n, albedo, vis_amp, u, e, mu, cache):
    d, k, dk, tp, a, q = cache
    kv, j = e.shape
    g_albedo = g * q / np.pi
    g_q = g * albedo / np.pi
    g_mu = a.T @ g_q
    g_a = g_q @ mu.T
    g_tp = (vis_amp[:, :, None] * g_a[:, None, :]).reshape(-1, kv * j)
    g_k = COSINE_AMPLITUDE * g_tp
    g_e = -np.sum(g_k * k, axis=0).reshape(kv, j)
    # d(d)/dn = lambda_c u / d and d(d)/du = (u + lambda_c n) / d; dk/d stays finite as d -> 0.
    small = d < SERIES_CUTOFF
    if small.any():
        # dk/d from the series, finite at d = 0
        x2 = np.where(small, d * d, 0.0)
        ser = 4.0 * np.pi * np.exp(-np.broadcast_to(e.reshape(1, -1), d.shape)) / 3.0 * (
            1.0 + x2 / 10.0 * (1.0 + x2 / 28.0 * (1.0 + x2 / 54.0)))
        ratio = np.where(small, ser, dk / np.where(small, 1.0, d))
    else:
        ratio = dk / d
    r = g_k * ratio
    uf = u.reshape(-1, 3)
    g_n = COSINE_SHARPNESS * (r @ uf)
    g_u = uf * np.sum(r, axis=0)[:, None] + COSINE_SHARPNESS * (r.T @ n)
    g_u = g_u.reshape(kv, j, 3)
    return g_n, g_albedo, g_mu, g_u, g_e


def _diffuse_marched_forward(n, albedo, vis_t, dirs, light_rgb, dw):
    cos = n @ dirs.T
    cpos = np.maximum(cos, 0.0)
    wgt = vis_t * cpos
    q = dw * wgt @ light_rgb
    return albedo * q / np.pi, (cos, wgt, q)


def _diffuse_marched_backward(g, n, albedo, vis_t, dirs, light_rgb, dw, cache):
    cos, wgt, q = cache
    g_albedo = g * q / np.pi
    g_q = g * albedo / np.pi
    g_light = dw * wgt.T @ g_q
    g_w = dw * (g_q @ light_rgb.T)
    g_cos = g_w * vis_t * (cos > 0.0)
    g_n = g_cos @ dirs
    return g_n, g_albedo, g_light


# -- forward / backward over a ray batch -------------------------------------

class RayTrace:
    """Intermediate values of one forward pass, consumed by :func:`backward_rays`."""


def _light_at(env, dirs):
    e = env_lobe_matrix(env, dirs)
    return e @ env.amplitude, e


def render_rays(grid, decoder, env, vis, origins, dirs, settings, record=False):
    """March a batch of rays. Returns ``(rgb, final_transmittance, trace_or_None)``."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n_rays = origins.shape[0]
    bg = np.asarray(settings.background, dtype=np.float64)
    rgb = np.broadcast_to(bg, (n_rays, 3)).copy()
    t_final = np.ones(n_rays)

    spec_dirs = settings.specular_directions(env)
    mode = settings.visibility_mode
    if vis is None or mode == "off":
        vis = VisibilityField.unoccluded(grid.resolution, spec_dirs)
    elif vis.light_dirs.shape != spec_dirs.shape or np.max(np.abs(vis.light_dirs - spec_dirs)) > 1e-9:
        raise ValueError("visibility field was computed for different light directions")

    tn, tf = ray_box(grid.bounds, origins, dirs)
    hit = np.nonzero(tf > tn)[0]
    tr = RayTrace()
    tr.n_rays, tr.hit, tr.settings = n_rays, hit, settings
    if hit.size == 0:
        tr.empty = True
        return rgb, t_final, (tr if record else None)
    tr.empty = False

    ns = settings.steps_per_ray
    o, d = origins[hit], dirs[hit]
    nh = hit.size
    delta = (tf[hit] - tn[hit]) / ns
    t = tn[hit][:, None] + (np.arange(ns) + 0.5)[None, :] * delta[:, None]
    x = o[:, None, :] + t[..., None] * d[:, None, :]

    mat = interpolation_matrix(grid, x)
    kdim = grid.latent_dim
    kv = vis.num_lobes
    # visibility is binarized per voxel before interpolation so shading stays continuous in x
    vis_table = vis.light_transmittance if mode == "marched" else vis.light_visible()
    chans = np.concatenate([grid.channels(), vis.amplitudes.reshape(grid.num_voxels, kv),
                            vis_table.reshape(grid.num_voxels, -1)], axis=1)
    raw_all = mat @ chans
    raw_d = raw_all[:, 0].reshape(nh, ns)

    sigma = softplus(raw_d)
    tau_seg = sigma * delta[:, None]
    trans = np.exp(-np.concatenate([np.zeros((nh, 1)), np.cumsum(tau_seg, axis=1)[:, :-1]], axis=1))
    thr = None if settings.gradient_check else settings.early_termination
    if thr:
        active = trans >= thr
        tau_seg = tau_seg * active
        trans = np.exp(-np.concatenate([np.zeros((nh, 1)), np.cumsum(tau_seg, axis=1)[:, :-1]], axis=1))
    else:
        active = np.ones((nh, ns), dtype=bool)
    ext = np.exp(-tau_seg)
    alpha = 1.0 - ext
    weights = trans * alpha
    tfin = trans[:, -1] * ext[:, -1]

    sel = np.nonzero(active.ravel())[0]
    ray_of = sel // ns
    raw = raw_all[sel]
    rn = raw[:, 1:4]
    rn_len = np.linalg.norm(rn, axis=1)
    rn_len = np.maximum(rn_len, 1e-12)
    nrm = rn / rn_len[:, None]
    z = raw[:, 4:4 + kdim]
    albedo, tau = decode_appearance(decoder, z)
    if settings.albedo_remap is not None:
        mat3, off = settings.albedo_remap
        albedo = np.clip(albedo @ np.asarray(mat3, dtype=np.float64).T + np.asarray(off), 0.0, 1.0)
    vis_amp = raw[:, 4 + kdim:4 + kdim + kv]
    vis_t = raw[:, 4 + kdim + kv:]
    wi = -d[ray_of]

    light_rgb, light_e = _light_at(env, spec_dirs)
    dw = 4.0 * np.pi / spec_dirs.shape[0]
    wts = settings.weights

    nu = np.zeros((sel.size, 3))
    if wts.w_specular:
        hv_ray, hok_ray = _half_vectors(-d, spec_dirs)
        hvec, hok = hv_ray[ray_of], hok_ray[ray_of]
        if mode == "marched":
            vis_bin = interpolation_matrix(grid, x[active]) @ vis.light_visible().reshape(grid.num_voxels, -1)
        else:
            vis_bin = vis_t
        nu_s, spec_cache = _specular_forward(nrm, tau, wi, hvec, hok, light_rgb, vis_bin, dw)
        nu += wts.w_specular * nu_s
    if wts.w_diffuse:
        if mode == "marched":
            nu_d, diff_cache = _diffuse_marched_forward(nrm, albedo, vis_t, spec_dirs, light_rgb, dw)
        else:
            u, e = _diffuse_sg_terms(env, vis.axes, vis.sharpness)
            nu_d, diff_cache = _diffuse_sg_forward(nrm, albedo, vis_amp, u, e, env.amplitude)
        nu += wts.w_diffuse * nu_d

    w_sel = weights.ravel()[sel]
    contrib = np.zeros((nh * ns, 3))
    contrib[sel] = w_sel[:, None] * nu
    rgb[hit] = contrib.reshape(nh, ns, 3).sum(axis=1) + tfin[:, None] * bg
    t_final[hit] = tfin

    if not record:
        return rgb, t_final, None

    tr.__dict__.update(
        x=x, delta=delta, mat=mat, raw_d=raw_d, sigma=sigma, tau_seg=tau_seg, trans=trans,
        ext=ext, weights=weights, tfin=tfin, active=active, sel=sel, ray_of=ray_of,
        rn_len=rn_len, nrm=nrm, z=z, albedo=albedo, tau=tau, wi=wi, nu=nu, vis=vis,
        light_rgb=light_rgb, light_e=light_e, spec_dirs=spec_dirs, dw=dw, bg=bg,
        ns=ns, nh=nh, kdim=kdim, vis_amp=vis_amp, vis_t=vis_t, env=env, decoder=decoder,
        grid_shape=grid.resolution, num_voxels=grid.num_voxels, mode=mode,
    )
    if wts.w_specular:
        tr.hvec, tr.vis_bin, tr.spec_cache = hvec, vis_bin, spec_cache
    if wts.w_diffuse:
        tr.diff_cache = diff_cache
        if mode != "marched":
            tr.u, tr.e = u, e
    return rgb, t_final, tr


@dataclass
class GradientBuffer:
    raw_density: np.ndarray
    raw_normal: np.ndarray
    latent: np.ndarray
    dec_weight: np.ndarray
    dec_bias: np.ndarray
    light_sharpness: np.ndarray
    light_amplitude: np.ndarray

    NAMES = ("raw_density", "raw_normal", "latent", "dec_weight", "dec_bias",
             "light_sharpness", "light_amplitude")

    @classmethod
    def zeros(cls, grid, decoder, env):
        return cls(np.zeros_like(grid.raw_density), np.zeros_like(grid.raw_normal),
                   np.zeros_like(grid.latent), np.zeros_like(decoder.weight),
                   np.zeros_like(decoder.bias), np.zeros_like(env.sharpness),
                   np.zeros_like(env.amplitude))

    def items(self):
        return [(k, getattr(self, k)) for k in self.NAMES]

    def __iadd__(self, other):
        for k in self.NAMES:
            setattr(self, k, getattr(self, k) + getattr(other, k))
        return self

    def scale(self, s):
        for k in self.NAMES:
            setattr(self, k, getattr(self, k) * s)
        return self


def backward_rays(trace, d_rgb, grads, d_weights=None, d_sample=None):
    """Accumulate exact adjoints of one recorded forward pass into ``grads``.

    ``d_rgb`` (n_rays, 3) is dLoss/dColor. ``d_weights`` (hit rays, steps)
    adds dLoss/d(compositing weight) and ``d_sample`` adds per-shaded-sample
    gradients with keys ``normal``, ``latent``, ``albedo``, ``tau``.
    """
    if trace is None or not isinstance(trace, RayTrace):
        raise TraceError("backward needs a trace recorded with render_rays(..., record=True)")
    if trace.empty:
        return grads
    tr = trace
    nh, ns = tr.nh, tr.ns
    g_c = np.asarray(d_rgb, dtype=np.float64).reshape(tr.n_rays, 3)[tr.hit]
    sel, ray_of = tr.sel, tr.ray_of

    # compositing
    g_nu = tr.weights.ravel()[sel][:, None] * g_c[ray_of]
    g_w = np.zeros(nh * ns)
    g_w[sel] = np.sum(tr.nu * g_c[ray_of], axis=1)
    g_w = g_w.reshape(nh, ns)
    if d_weights is not None:
        g_w = g_w + d_weights
    g_tfin = g_c @ tr.bg
    gw_w = g_w * tr.weights
    suffix = np.cumsum(gw_w[:, ::-1], axis=1)[:, ::-1]
    after = np.concatenate([suffix[:, 1:], np.zeros((nh, 1))], axis=1)
    g_tau = g_w * tr.trans * tr.ext - after - (g_tfin * tr.tfin)[:, None]
    g_tau = g_tau * tr.active
    g_sigma = g_tau * tr.delta[:, None]
    g_rawd = g_sigma * sigmoid(tr.raw_d)

    # shading
    wts = tr.settings.weights
    env = tr.env
    g_n = np.zeros_like(tr.nrm)
    g_albedo = np.zeros_like(tr.albedo)
    g_tau_m = np.zeros_like(tr.tau)
    g_light = np.zeros_like(tr.light_rgb)
    g_mu = np.zeros_like(env.amplitude)
    g_lam = np.zeros_like(env.sharpness)
    if wts.w_specular:
        gn, gt, gl = _specular_backward(wts.w_specular * g_nu, tr.nrm, tr.tau, tr.wi, tr.hvec,
                                        tr.light_rgb, tr.vis_bin, tr.dw, tr.spec_cache)
        g_n += gn
        g_tau_m += gt
        g_light += gl
    if wts.w_diffuse:
        gd = wts.w_diffuse * g_nu
        if tr.mode == "marched":
            gn, ga, gl = _diffuse_marched_backward(gd, tr.nrm, tr.albedo, tr.vis_t, tr.spec_dirs,
                                                   tr.light_rgb, tr.dw, tr.diff_cache)
            g_light += gl
        else:
            gn, ga, gmu, g_u, g_e = _diffuse_sg_backward(gd, tr.nrm, tr.albedo, tr.vis_amp, tr.u,
                                                         tr.e, env.amplitude, tr.diff_cache)
            g_mu += gmu
            g_lam += np.einsum("ljc,jc->j", g_u, env.axes) + g_e.sum(axis=0)
        g_n += gn
        g_albedo += ga
    if d_sample:
        g_n += d_sample.get("normal", 0.0)
        g_albedo += d_sample.get("albedo", 0.0)
        g_tau_m += d_sample.get("tau", 0.0)

    # light radiance at the specular directions -> lobe parameters
    g_mu += tr.light_e.T @ g_light
    cosm = tr.spec_dirs @ env.axes.T - 1.0
    g_lam += np.sum((g_light @ env.amplitude.T) * tr.light_e * cosm, axis=0)

    # activations
    if tr.settings.albedo_remap is not None and np.any(g_albedo):
        raise TraceError("albedo remapping is a render-only edit and has no adjoint")
    g_rn = (g_n - tr.nrm * np.sum(g_n * tr.nrm, axis=1, keepdims=True)) / tr.rn_len[:, None]
    y = tr.z @ tr.decoder.weight.T + tr.decoder.bias
    s = sigmoid(y)
    g_y = np.empty_like(y)
    g_y[:, :3] = g_albedo * s[:, :3] * (1.0 - s[:, :3])
    g_y[:, 3] = g_tau_m * (1.0 - TAU_MIN) * s[:, 3] * (1.0 - s[:, 3])
    grads.dec_weight += g_y.T @ tr.z
    grads.dec_bias += g_y.sum(axis=0)
    g_z = g_y @ tr.decoder.weight
    if d_sample and "latent" in d_sample:
        g_z = g_z + d_sample["latent"]

    # scatter back to voxels
    g_raw = np.zeros((nh * ns, 4 + tr.kdim))
    g_raw[:, 0] = g_rawd.ravel()
    g_raw[sel, 1:4] = g_rn
    g_raw[sel, 4:] = g_z
    g_vox = tr.mat.T @ g_raw
    grads.raw_density += g_vox[:, 0].reshape(tr.grid_shape)
    grads.raw_normal += g_vox[:, 1:4].reshape(tr.grid_shape + (3,))
    grads.latent += g_vox[:, 4:].reshape(tr.grid_shape + (tr.kdim,))
    grads.light_amplitude += g_mu
    grads.light_sharpness += g_lam
    return grads


# -- public entry points ------------------------------------------------------

def _chunks(n, size):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def render_batch(grid, decoder, env, vis, origins, dirs, settings):
    """Render many rays in fixed-size chunks; identical output for any thread count."""
    n = origins.shape[0]
    spans = _chunks(n, settings.chunk_rays)

    def work(span):
        a, b = span
        return render_rays(grid, decoder, env, vis, origins[a:b], dirs[a:b], settings)[:2]

    if settings.threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            parts = list(pool.map(work, spans))
    else:
        parts = [work(s) for s in spans]
    rgb = np.concatenate([p[0] for p in parts], axis=0) if parts else np.zeros((0, 3))
    tf = np.concatenate([p[1] for p in parts], axis=0) if parts else np.zeros(0)
    return rgb, tf


def render_image(grid, decoder, camera, env, vis, settings):
    """HDR image (H, W, 3) by marching one ray through every pixel center."""
    o, d = camera_rays(camera)
    rgb, _ = render_batch(grid, decoder, env, vis, o, d, settings)
    return rgb.reshape(camera.height, camera.width, 3)


def march(grid, decoder, ray, env, vis, settings):
    """March one ray. Returns ``(rgb, final_transmittance, samples)``."""
    origin, direction = (np.asarray(v, dtype=np.float64).reshape(1, 3) for v in ray)
    rgb, tfin, tr = render_rays(grid, decoder, env, vis, origin, direction, settings, record=True)
    samples = []
    if not tr.empty:
        nu_full = np.zeros((tr.ns, 3))
        nu_full[tr.sel] = tr.nu
        for k in range(tr.ns):
            samples.append(RadianceSample(tr.x[0, k], float(tr.trans[0, k]), float(tr.sigma[0, k]),
                                          nu_full[k], float(tr.delta[0])))
    return rgb[0], float(tfin[0]), samples


def scatter_radiance(x, omega_i, sample, env, vis_lobes, vis_specular, settings):
    """Radiance scattered toward ``omega_i`` at one point.

    ``sample`` is ``(sigma, albedo, omega_m, tau_m)`` from ``sample_field``;
    ``vis_lobes`` are the point's SG visibility lobes (diffuse) and
    ``vis_specular`` the specular visibility toward each light direction: the
    per-voxel 0/1 table interpolated to ``x``, or None for no occlusion.
    """
    from .lighting import diffuse_shade
    from .phase import phase_specular_eval
    from .sggx import MicroflakeParams, build_sggx

    _, albedo, omega_m, tau_m = sample
    dirs = settings.specular_directions(env)
    dw = 4.0 * np.pi / dirs.shape[0]
    light = env_eval(env, dirs)
    out = np.zeros(3)
    w = settings.weights
    if w.w_specular:
        s = build_sggx(MicroflakeParams(np.asarray(omega_m), float(tau_m)))
        f = phase_specular_eval(s, np.broadcast_to(omega_i, dirs.shape), dirs)
        vbin = 1.0 if vis_specular is None else np.asarray(vis_specular, dtype=np.float64)
        out += w.w_specular * dw * (f * vbin) @ light
    if w.w_diffuse:
        out += w.w_diffuse * diffuse_shade(albedo, omega_m, env, vis_lobes)
    return out
