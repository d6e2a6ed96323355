"""
A single SGGX microflake distribution
=====================================

Builds one flake distribution, checks that its specular phase function
integrates to one, and compares drawn visible normals against their density.
"""

import numpy as np

from microflake.phase import phase_specular_eval
from microflake.quadrature import fibonacci_sphere
from microflake.sggx import MicroflakeParams, build_sggx, projected_area, sample_visible_normal, visible_ndf_pdf

# a fairly glossy surface-like flake pointing up
S = build_sggx(MicroflakeParams(omega_m=np.array([0.0, 0.0, 1.0]), tau_m=0.3))
omega_i = np.array([0.6, 0.0, 0.8])

# projected area is largest face-on and shrinks toward tau at grazing angles
for theta in (0, 30, 60, 89):
    t = np.radians(theta)
    print(f"sigma at {theta:2d} deg: {projected_area(S, np.array([np.sin(t), 0.0, np.cos(t)])):.4f}")

# the specular phase is a density over outgoing directions
dirs, dw = fibonacci_sphere(200_000)
print("phase integral:", dw * phase_specular_eval(S, np.broadcast_to(omega_i, dirs.shape), dirs).sum())

# sampled normals follow the visible-normal density
rng = np.random.default_rng(0)
m = sample_visible_normal(S, np.broadcast_to(omega_i, (100_000, 3)), rng.random((100_000, 2)))
cos_bins = np.linspace(0.0, 1.0, 11)
hist, _ = np.histogram(m[:, 2], bins=cos_bins)
pdf = visible_ndf_pdf(S, omega_i, dirs)
expected = np.array([dw * (pdf * ((dirs[:, 2] >= a) & (dirs[:, 2] < b))).sum()
                     for a, b in zip(cos_bins[:-1], cos_bins[1:])])
for a, h, e in zip(cos_bins, hist / len(m), expected):
    print(f"cos in [{a:.1f}, {a + 0.1:.1f}): sampled {h:.4f}  expected {e:.4f}")
