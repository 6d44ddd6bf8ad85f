"""Angular-spectrum propagation of plane data.

Transforms follow ``F(v) = int f(x, y) exp(-i (x v1 + y v2)) dx dy``, sampled
on the FFT lattice of the plane grid.  For the ``PLUS`` convention a backscattered
field on the plane ``z = b`` continues to ``z = a`` as
``F_a(v) = F_b(v) exp(-i kappa (a - b))``; the ``MINUS`` convention conjugates
the phase.  Evanescent modes (``|v| > k``) are discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve

from .core import Grid2D, PlaneData, ValidationError, WaveConvention


@dataclass(frozen=True, eq=False)
class SpectralPlane:
    """Samples of the transverse Fourier transform on the FFT lattice."""

    grid: Grid2D
    wavenumber: float
    values: np.ndarray

    @property
    def frequencies(self):
        return tuple(2 * np.pi * sfft.fftfreq(n, h) for n, h in zip(self.grid.counts, self.grid.spacing))

    def radial_sq(self):
        v1, v2 = self.frequencies
        return v1[:, None] ** 2 + v2[None, :] ** 2

    def propagating(self):
        """Mask of ``v1^2 + v2^2 <= k^2`` (the circle itself counts as propagating)."""
        return self.radial_sq() <= self.wavenumber ** 2

    def kappa(self):
        """``sqrt(k^2 - |v|^2)`` on propagating nodes, ``i sqrt(|v|^2 - k^2)`` otherwise."""
        d = self.wavenumber ** 2 - self.radial_sq()
        return np.where(d >= 0, np.sqrt(np.abs(d)), 1j * np.sqrt(np.abs(d)))


def _origin_phase(grid):
    v1, v2 = (2 * np.pi * sfft.fftfreq(n, h) for n, h in zip(grid.counts, grid.spacing))
    o1, o2 = grid.origin
    return np.exp(-1j * (o1 * v1[:, None] + o2 * v2[None, :]))


def forward_transform(p):
    """Discrete analogue of the transverse Fourier transform of ``p``."""
    g = p.grid
    vals = sfft.fft2(p.values) * g.cell_area * _origin_phase(g)
    return SpectralPlane(g, p.wavenumber, vals)


def inverse_transform(s):
    g = s.grid
    vals = sfft.ifft2(s.values / (g.cell_area * _origin_phase(g)))
    return PlaneData(g, s.wavenumber, vals)


def _padded(p, pad):
    if pad == 1:
        return p
    n1, n2 = p.grid.counts
    m1, m2 = int(np.ceil(pad * n1)), int(np.ceil(pad * n2))
    vals = np.zeros((m1, m2), complex)
    vals[:n1, :n2] = p.values
    return PlaneData(Grid2D(p.grid.origin, p.grid.spacing, (m1, m2), p.grid.z_level),
                     p.wavenumber, vals)


def phase_factor(s, distance, conv):
    """Propagation multiplier for a signed distance ``a - b``; zero on evanescent nodes."""
    conv = WaveConvention.parse(conv)
    kap = np.real(s.kappa())
    return np.where(s.propagating(), np.exp(-1j * conv.sign * kap * distance), 0.0)


def propagate(g, target_z, conv=WaveConvention.PLUS, pad=2):
    """Move backscatter data from ``z = g.z_level`` to ``z = target_z``.

    ``pad`` zero-extends the plane by that factor per axis before transforming
    (the data are treated as zero outside their rectangle); the result is
    cropped back to the input grid.
    """
    distance = float(target_z) - g.grid.z_level
    if distance == 0:
        raise ValidationError("propagation distance must be nonzero")
    if pad < 1:
        raise ValidationError("pad must be >= 1")
    big = _padded(g, pad)
    s = forward_transform(big)
    s = SpectralPlane(s.grid, s.wavenumber, s.values * phase_factor(s, distance, conv))
    out = inverse_transform(s).values
    n1, n2 = g.grid.counts
    return PlaneData(g.grid.at_z(target_z), g.wavenumber, out[:n1, :n2])


def propagating_part(g):
    """Projection of ``g`` onto its propagating lattice modes (no padding)."""
    s = forward_transform(g)
    return inverse_transform(SpectralPlane(s.grid, s.wavenumber, s.values * s.propagating()))


def halfspace_oracle(phi, x3, k=None):
    """Double-layer potential of the half-space Dirichlet problem at ``z = x3 < 0``.

    Evaluates ``w(x) = -int dG/dy3(x, y)|_{y3=0} phi(y) dy1 dy2`` with
    ``G = Phi_k(x, y) - Phi_k(x, y')`` by the midpoint rule over the nodes of
    ``phi``; the outputs live on the same transverse grid.  On ``y3 = 0`` the
    normal derivative is ``-2 x3 Phi_k(r) (ik - 1/r) / r``.
    """
    if x3 >= 0:
        raise ValidationError("the oracle plane must satisfy x3 < 0")
    k = phi.wavenumber if k is None else float(k)
    g = phi.grid
    n1, n2 = g.counts
    h1, h2 = g.spacing
    d1 = np.arange(-(n1 - 1), n1) * h1
    d2 = np.arange(-(n2 - 1), n2) * h2
    r = np.sqrt(d1[:, None] ** 2 + d2[None, :] ** 2 + x3 ** 2)
    kernel = 2 * x3 * np.exp(1j * k * r) / (4 * np.pi * r) * (1j * k - 1 / r) / r
    w = fftconvolve(phi.values, kernel * g.cell_area, mode="full")
    w = w[n1 - 1:2 * n1 - 1, n2 - 1:2 * n2 - 1]
    return PlaneData(g.at_z(x3), k, w)


def theorem_check(phi, x3):
    """Relative L2 mismatch between the transformed oracle and ``phi_hat exp(-i kappa x3)``.

    Only propagating lattice nodes enter the comparison.
    """
    w = halfspace_oracle(phi, x3)
    s_w = forward_transform(w)
    s_phi = forward_transform(phi)
    mask = s_phi.propagating()
    expected = s_phi.values * np.exp(-1j * s_phi.kappa() * x3)
    err = np.linalg.norm((s_w.values - expected)[mask]) / np.linalg.norm(expected[mask])
    return float(err)
