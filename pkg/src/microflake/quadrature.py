"""Deterministic spherical quadrature rules."""

import numpy as np

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def fibonacci_sphere(n):
    """Return ``n`` near-uniform unit directions and the equal quadrature weight.

    The nodes sit on a Fibonacci spiral, z is stratified at cell centers so
    the rule is symmetric under z -> -z.
    """
    if n < 1:
        raise ValueError("node count must be positive")
    i = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * i
    nodes = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return nodes, 4.0 * np.pi / n


def integrate_sphere(f, n=20000):
    """Integrate ``f(directions) -> values`` over the unit sphere."""
    nodes, w = fibonacci_sphere(n)
    return w * np.sum(f(nodes), axis=0)
