"""Diffuse and specular microflake phase functions.

Directions follow the renderer convention: ``omega_i`` points from the
scattering point toward the camera and ``omega_l`` toward the light.
"""

from dataclasses import dataclass

import numpy as np

from .quadrature import fibonacci_sphere
from .sggx import build_onb, ndf_eval, normalize, projected_area, sample_visible_normal

MAX_RESAMPLE = 8


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseWeights:
    w_diffuse: float = 1.0
    w_specular: float = 1.0

    def __post_init__(self):
        for v in (self.w_diffuse, self.w_specular):
            if not np.isfinite(v) or v < 0.0:
                raise ConfigurationError(f"phase weights must be finite and >= 0, got {v}")


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def phase_specular_eval(S, omega_i, omega_l):
    """D(h) / (4 sigma(omega_i)) with h the half vector; 0 when omega_l = -omega_i."""
    omega_i = np.asarray(omega_i, dtype=np.float64)
    omega_l = np.asarray(omega_l, dtype=np.float64)
    h = omega_i + omega_l
    hlen = np.linalg.norm(h, axis=-1)
    ok = hlen > 1e-9
    h = h / np.where(ok, hlen, 1.0)[..., None]
    h = np.where(ok[..., None], h, np.array([0.0, 0.0, 1.0]))
    val = ndf_eval(S, h) / (4.0 * projected_area(S, omega_i))
    return np.where(ok, val, 0.0)


def phase_diffuse_eval(S, omega_i, omega_l, nodes=5000):
    """Diffuse microflake phase by deterministic Fibonacci quadrature over normals."""
    if nodes < 16:
        raise ConfigurationError(f"need at least 16 quadrature nodes, got {nodes}")
    m, w = fibonacci_sphere(nodes)
    omega_i = np.asarray(omega_i, dtype=np.float64)
    omega_l = np.asarray(omega_l, dtype=np.float64)
    d = ndf_eval(S, m)
    ci = np.maximum(omega_i @ m.T, 0.0)
    cl = np.maximum(omega_l @ m.T, 0.0)
    integral = w * np.sum(ci * cl * d, axis=-1)
    return integral / (np.pi * projected_area(S, omega_i))


def phase_diffuse_estimate(S, omega_i, omega_l, u):
    """One-sample estimator of the diffuse phase via a visible normal."""
    m = sample_visible_normal(S, omega_i, u)
    return np.maximum(_dot(np.asarray(omega_l, dtype=np.float64), m), 0.0) / np.pi


def phase_combined_eval(S, omega_i, omega_l, weights=PhaseWeights(), nodes=5000):
    out = 0.0
    if weights.w_diffuse:
        out = out + weights.w_diffuse * phase_diffuse_eval(S, omega_i, omega_l, nodes)
    if weights.w_specular:
        out = out + weights.w_specular * phase_specular_eval(S, omega_i, omega_l)
    return out


def sample_phase_direction(S, omega_i, kind, u, nodes=5000):
    """Importance-sample a light direction for one phase lobe.

    ``u`` holds three uniforms for ``"specular"`` (the third is unused) and
    four for ``"diffuse"``. Returns ``(omega_l, pdf, valid)``; ``valid`` is
    False for a grazing reflection, in which case the caller draws fresh ``u``.
    """
    u = np.asarray(u, dtype=np.float64)
    omega_i = normalize(omega_i)
    m = sample_visible_normal(S, omega_i, u[..., :2])
    if kind == "specular":
        cos = _dot(omega_i, m)
        omega_l = 2.0 * cos[..., None] * m - omega_i
        omega_l = normalize(omega_l)
        valid = _dot(omega_l, m) > 1e-9
        # Reflecting visible normals samples exactly the specular phase.
        pdf = phase_specular_eval(S, omega_i, omega_l)
    elif kind == "diffuse":
        if u.shape[-1] < 4:
            raise ConfigurationError("diffuse sampling needs four uniforms")
        u3 = np.clip(u[..., 2], 0.0, 1.0 - 1e-12)
        u4 = u[..., 3]
        r = np.sqrt(u3)
        phi = 2.0 * np.pi * u4
        lz = np.sqrt(np.maximum(1.0 - u3, 0.0))
        tx, ty = build_onb(m)
        omega_l = normalize((r * np.cos(phi))[..., None] * tx
                            + (r * np.sin(phi))[..., None] * ty + lz[..., None] * m)
        valid = lz > 1e-9
        # Marginalizing the cosine lobe over visible normals gives the diffuse phase.
        pdf = phase_diffuse_eval(S, omega_i, omega_l, nodes)
    else:
        raise ConfigurationError(f"unknown phase kind {kind!r}")
    valid = valid & (pdf > 0.0)
    return omega_l, pdf, valid


def sample_phase_with_retry(S, omega_i, kind, us, nodes=5000):
    """Try up to eight uniform tuples; returns ``None`` when every draw is degenerate."""
    for u in np.asarray(us)[:MAX_RESAMPLE]:
        omega_l, pdf, valid = sample_phase_direction(S, omega_i, kind, u, nodes)
        if bool(valid):
            return omega_l, float(pdf)
    return None
