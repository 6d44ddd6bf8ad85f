"""Separation-of-variables solution for a penetrable homogeneous sphere.

Used as an independent check of the volume integral solver.  The sphere of
radius ``a`` and constant ``c`` sits at ``center``; the incident wave is
``exp(+-ikz)``.
"""

import numpy as np
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from .core import WaveConvention


def _h1(n, x, derivative=False):
    return spherical_jn(n, x, derivative) + 1j * spherical_yn(n, x, derivative)


def sphere_coefficients(k, a, c, n_max):
    """Interior ``A_n`` and scattering ``B_n`` coefficients, n = 0..n_max."""
    k1 = k * np.sqrt(c)
    n = np.arange(n_max + 1)
    ja, dja = spherical_jn(n, k * a), spherical_jn(n, k * a, True)
    ha, dha = _h1(n, k * a), _h1(n, k * a, True)
    jb, djb = spherical_jn(n, k1 * a), spherical_jn(n, k1 * a, True)
    # continuity of u and du/dr at r = a
    B = (k1 * djb * ja - k * dja * jb) / (k * dha * jb - k1 * djb * ha)
    A = (ja + B * ha) / jb
    return A, B


def sphere_total_field(points, k, a, c, center=(0.0, 0.0, 0.0),
                       conv=WaveConvention.PLUS, n_max=None):
    """Total field at ``points`` (shape ``(m, 3)``) for a penetrable sphere."""
    conv = WaveConvention.parse(conv)
    pts = np.asarray(points, float).reshape(-1, 3) - np.asarray(center, float)
    if n_max is None:
        n_max = int(np.ceil(k * np.sqrt(c) * max(a, 1.0) + 4 * (k * a) ** (1 / 3) + 12))
    r = np.linalg.norm(pts, axis=1)
    cos_t = np.where(r > 0, pts[:, 2] / np.where(r > 0, r, 1.0), 1.0)
    A, B = sphere_coefficients(k, a, c, n_max)
    k1 = k * np.sqrt(c)
    inside = r < a
    total = np.zeros(len(pts), dtype=complex)
    for n in range(n_max + 1):
        w = (1j ** n) * (2 * n + 1) * eval_legendre(n, cos_t)
        inner = A[n] * spherical_jn(n, k1 * r)
        outer = spherical_jn(n, k * r) + B[n] * _h1(n, k * r)
        total += w * np.where(inside, inner, outer)
    # centre offset: incident phase at the centre
    total *= np.exp(1j * k * center[2])
    return total if conv is WaveConvention.PLUS else np.conj(total)
