"""Reference computations the tests compare against.

Everything here is written from the defining formulas with plain numpy and
scipy, without calling into the package's own numerics.
"""

import numpy as np
from scipy import stats


def fib_nodes(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1), 4.0 * np.pi / n


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sggx_from_eig(omega_m, tau):
    """S assembled from an eigen-decomposition built with a QR frame."""
    w = np.asarray(omega_m, dtype=float)
    q, _ = np.linalg.qr(np.column_stack([w, np.eye(3)[np.argmin(np.abs(w))], np.ones(3)]))
    t1, t2 = q[:, 1], q[:, 2]
    b = np.column_stack([t1, t2, w])
    return b @ np.diag([tau * tau, tau * tau, 1.0]) @ b.T


def ndf_ref(s, m):
    inv = np.linalg.inv(s)
    q = np.einsum("...i,ij,...j->...", m, inv, m)
    return 1.0 / (np.pi * np.sqrt(np.linalg.det(s)) * q * q)


def vndf_ref(s, wi, m):
    cos = np.maximum(m @ wi, 0.0)
    return cos * ndf_ref(s, m) / np.sqrt(wi @ s @ wi)


def frame(w):
    """Any orthonormal frame (t, b, w); used only to bin directions."""
    a = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t = np.cross(a, w)
    t /= np.linalg.norm(t)
    return t, np.cross(w, t), w


def hemisphere_bins(n_mu, n_phi):
    """Bin edges in (cos theta, phi) for the hemisphere around a pole."""
    return np.linspace(0.0, 1.0, n_mu + 1), np.linspace(0.0, 2.0 * np.pi, n_phi + 1)


def bin_index(dirs, pole, mu_edges, phi_edges):
    t, b, w = frame(pole)
    mu = dirs @ w
    phi = np.mod(np.arctan2(dirs @ b, dirs @ t), 2.0 * np.pi)
    i = np.clip(np.searchsorted(mu_edges, mu, side="right") - 1, 0, len(mu_edges) - 2)
    j = np.clip(np.searchsorted(phi_edges, phi, side="right") - 1, 0, len(phi_edges) - 2)
    return i * (len(phi_edges) - 1) + j, mu >= 0.0


def bin_probabilities(pdf, pole, mu_edges, phi_edges, order=12):
    """Integrate a solid-angle pdf over every (cos theta, phi) bin by Gauss-Legendre."""
    t, b, w = frame(pole)
    x, gw = np.polynomial.legendre.leggauss(order)
    probs = []
    for m0, m1 in zip(mu_edges[:-1], mu_edges[1:]):
        mu = 0.5 * (m1 - m0) * x + 0.5 * (m1 + m0)
        for p0, p1 in zip(phi_edges[:-1], phi_edges[1:]):
            ph = 0.5 * (p1 - p0) * x + 0.5 * (p1 + p0)
            mm, pp = np.meshgrid(mu, ph, indexing="ij")
            st = np.sqrt(np.maximum(1.0 - mm * mm, 0.0))
            d = (st * np.cos(pp))[..., None] * t + (st * np.sin(pp))[..., None] * b + mm[..., None] * w
            vals = pdf(d.reshape(-1, 3)).reshape(mm.shape)
            probs.append(0.25 * (m1 - m0) * (p1 - p0) * np.einsum("i,j,ij->", gw, gw, vals))
    return np.array(probs)


def chi_square_pvalue(observed, expected, min_expected=5.0):
    """Pearson chi-square p-value after pooling bins with small expected counts."""
    keep = expected >= min_expected
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < min_expected:
        obs[-2] += obs[-1]
        exp[-2] += exp[-1]
        obs, exp = obs[:-1], exp[:-1]
    exp = exp * obs.sum() / exp.sum()
    return stats.chisquare(obs, exp).pvalue


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def composite(sigma, delta, radiance):
    """Alpha compositing of one ray from per-segment density and radiance."""
    tau = sigma * delta
    trans = np.exp(-np.concatenate([[0.0], np.cumsum(tau)[:-1]]))
    w = trans * (1.0 - np.exp(-tau))
    return (w[:, None] * radiance).sum(axis=0), w, trans[-1] * np.exp(-tau[-1])


def central_difference(f, x, idx, h):
    """d f / d x[idx] by central differences, restoring ``x`` afterwards."""
    flat = x.reshape(-1)
    old = flat[idx]
    flat[idx] = old + h
    fp = f()
    flat[idx] = old - h
    fm = f()
    flat[idx] = old
    return (fp - fm) / (2.0 * h)


def clamped_cosine_sphere_integral(n, vis, light, nodes=200000):
    """Brute force of int V(w) L(w) max(0, n.w) dw."""
    d, w = fib_nodes(nodes)
    return w * np.sum(vis(d) * light(d) * np.maximum(d @ n, 0.0)[:, None], axis=0)


def polar_gauss_nodes(pole, edges, per_panel, n_phi):
    """Product rule in (theta, phi) about ``pole``: Gauss-Legendre on each theta panel, midpoints in phi."""
    t, b, w = frame(pole)
    x, gw = np.polynomial.legendre.leggauss(per_panel)
    th = np.concatenate([0.5 * (c - a) * x + 0.5 * (c + a) for a, c in zip(edges[:-1], edges[1:])])
    tw = np.concatenate([0.5 * (c - a) * gw for a, c in zip(edges[:-1], edges[1:])])
    phi = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    T, P = np.meshgrid(th, phi, indexing="ij")
    d = (np.sin(T) * np.cos(P))[..., None] * t + (np.sin(T) * np.sin(P))[..., None] * b + np.cos(T)[..., None] * w
    return d.reshape(-1, 3), (tw[:, None] * np.sin(T) * 2.0 * np.pi / n_phi).ravel()


def flake_nodes(omega_m, tau, n_nodes=20000):
    """Nodes on the sphere with theta panels clustered around +-omega_m at the flake width ``tau``."""
    s = tau * np.array([0.5, 1.0, 2.0, 4.0, 8.0])
    edges = np.unique(np.clip(np.concatenate([[0.0], s, np.pi - s[::-1], [np.pi]]), 0.0, np.pi))
    per = 200 // (len(edges) - 1)
    return polar_gauss_nodes(omega_m, edges, per, n_nodes // (per * (len(edges) - 1)))


def polar_quadrature_of(f, omega_m, tau, n_nodes=20000):
    """Sphere integral of ``f`` on the flake-clustered nodes."""
    d, wt = flake_nodes(omega_m, tau, n_nodes)
    return float(np.sum(wt * f(d)))


def specular_phase_integral(phase, omega_m, tau, wi, n_nodes=20000):
    """Integral of ``phase(wl)`` over outgoing directions, taken over half vectors.

    The map h -> wl = 2 (wi.h) h - wi has Jacobian 4 (wi.h) on the hemisphere
    facing wi. Nodes cluster around +-omega_m, where the flake density
    concentrates, so narrow lobes are resolved with a fixed budget.
    """
    h, wt = flake_nodes(omega_m, tau, n_nodes)
    c = h @ wi
    keep = c > 0.0
    wl = 2.0 * c[keep, None] * h[keep] - wi
    return float(np.sum(wt[keep] * 4.0 * c[keep] * phase(wl)))
