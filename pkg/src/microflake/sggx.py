"""SGGX microflake distributions.

Vectors are numpy arrays whose last axis has length 3; every function
broadcasts over leading axes.
"""

from dataclasses import dataclass

import numpy as np

TAU_MIN = 1e-3


class DomainError(ValueError):
    pass


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def normalize(v, eps=0.0):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, eps) if eps else v / n


@dataclass(frozen=True)
class MicroflakeParams:
    omega_m: np.ndarray
    tau_m: float

    def __post_init__(self):
        w = np.asarray(self.omega_m, dtype=np.float64)
        if w.shape != (3,) or abs(np.linalg.norm(w) - 1.0) > 1e-6:
            raise DomainError(f"omega_m must be a unit 3-vector, got {self.omega_m!r}")
        if not 0.0 < self.tau_m <= 1.0:
            raise DomainError(f"tau_m must lie in (0, 1], got {self.tau_m}")
        object.__setattr__(self, "omega_m", w)


@dataclass(frozen=True)
class SggxMatrix:
    s: np.ndarray
    det_s: float
    inv_s: np.ndarray

    @classmethod
    def from_matrix(cls, s):
        s = np.asarray(s, dtype=np.float64)
        s = 0.5 * (s + s.T)
        return cls(s=s, det_s=float(np.linalg.det(s)), inv_s=np.linalg.inv(s))


def build_onb(omega):
    """Right-handed tangent frame ``(omega_x, omega_y)`` around a unit vector.

    Uses the branchless construction of Duff et al. (2017), stable at both poles.
    """
    omega = np.asarray(omega, dtype=np.float64)
    norm = np.linalg.norm(omega, axis=-1)
    if np.any(~np.isfinite(norm)) or np.any(norm < 1e-12):
        raise DomainError("cannot build a frame around a zero-length vector")
    omega = omega / norm[..., None]
    x, y, z = omega[..., 0], omega[..., 1], omega[..., 2]
    sign = np.where(z >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + z)
    b = x * y * a
    ox = np.stack([1.0 + sign * x * x * a, sign * b, -sign * x], axis=-1)
    oy = np.stack([b, sign + y * y * a, -y], axis=-1)
    return ox, oy


def build_sggx(p):
    """S = B diag(tau^2, tau^2, 1) B^T with B = (omega_x, omega_y, omega_m)."""
    w = p.omega_m
    t2 = p.tau_m * p.tau_m
    # Equivalent to the basis form; the tangent frame drops out because the
    # two tangent eigenvalues are equal.
    s = t2 * np.eye(3) + (1.0 - t2) * np.outer(w, w)
    inv = np.eye(3) / t2 + (1.0 - 1.0 / t2) * np.outer(w, w)
    return SggxMatrix(s=s, det_s=t2 * t2, inv_s=inv)


def sggx_matrix_from_basis(p):
    """Reference construction through the explicit tangent frame."""
    ox, oy = build_onb(p.omega_m)
    basis = np.stack([ox, oy, p.omega_m], axis=1)
    t2 = p.tau_m * p.tau_m
    return basis @ np.diag([t2, t2, 1.0]) @ basis.T


def ndf_eval(S, omega):
    """D(w) = 1 / (pi sqrt|S| (w^T S^-1 w)^2)."""
    omega = np.asarray(omega, dtype=np.float64)
    if not np.all(np.isfinite(omega)):
        raise DomainError("non-finite direction")
    q = np.einsum("...i,ij,...j->...", omega, S.inv_s, omega)
    return 1.0 / (np.pi * np.sqrt(S.det_s) * q * q)


def projected_area(S, omega):
    """Projected area of the flake distribution seen from ``omega``: sqrt(w^T S w)."""
    omega = np.asarray(omega, dtype=np.float64)
    q = np.einsum("...i,ij,...j->...", omega, S.s, omega)
    return np.sqrt(np.maximum(q, 0.0))


def visible_ndf_pdf(S, omega_i, m):
    """Density of visible normals m seen from omega_i (solid-angle measure)."""
    cos = np.maximum(_dot(np.asarray(m), np.asarray(omega_i)), 0.0)
    return cos * ndf_eval(S, m) / projected_area(S, omega_i)


def sample_visible_normal(S, omega_i, u):
    """Draw a normal from the visible distribution seen from ``omega_i``.

    Heitz et al.'s SGGX algorithm: a uniform disk sample is lifted to the
    hemisphere and mapped through the Cholesky-like factor of S expressed in
    a frame aligned with ``omega_i``.
    """
    omega_i = normalize(omega_i)
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0 - 1e-12)
    u1, u2 = u[..., 0], u[..., 1]
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    su = r * np.cos(phi)
    sv = r * np.sin(phi)
    sw = np.sqrt(np.maximum(1.0 - su * su - sv * sv, 0.0))

    wk, wj = build_onb(omega_i)
    s = S.s

    def proj(a, b):
        return np.einsum("...i,ij,...j->...", a, s, b)

    s_kk, s_jj, s_ii = proj(wk, wk), proj(wj, wj), proj(omega_i, omega_i)
    s_kj, s_ki, s_ji = proj(wk, wj), proj(wk, omega_i), proj(wj, omega_i)

    sqrt_det = np.sqrt(np.abs(
        s_kk * s_jj * s_ii - s_kj * s_kj * s_ii - s_ki * s_ki * s_jj
        - s_ji * s_ji * s_kk + 2.0 * s_kj * s_ki * s_ji))
    inv_sqrt_ii = 1.0 / np.sqrt(s_ii)
    tmp = np.sqrt(s_jj * s_ii - s_ji * s_ji)

    mk = np.stack([sqrt_det / tmp, np.zeros_like(tmp), np.zeros_like(tmp)], axis=-1)
    mj = np.stack([-inv_sqrt_ii * (s_ki * s_ji - s_kj * s_ii) / tmp,
                   inv_sqrt_ii * tmp, np.zeros_like(tmp)], axis=-1)
    mi = np.stack([inv_sqrt_ii * s_ki, inv_sqrt_ii * s_ji, inv_sqrt_ii * s_ii], axis=-1)

    local = normalize(su[..., None] * mk + sv[..., None] * mj + sw[..., None] * mi)
    m = local[..., 0:1] * wk + local[..., 1:2] * wj + local[..., 2:3] * omega_i
    return normalize(m)


def random_params(rng, tau_range=(0.05, 1.0)):
    w = rng.normal(size=3)
    w /= np.linalg.norm(w)
    return MicroflakeParams(omega_m=w, tau_m=float(rng.uniform(*tau_range)))
