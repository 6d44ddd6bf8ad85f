"""From raw multi-frequency plane data to inversion-ready boundary data.

Order of use: subtract the reference scene, propagate toward the target,
pick the stable frequency interval, locate ``z*``, truncate and smooth the
propagated data, derive the target footprint and complete the boundary data
on the faces of the inversion box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import correlate1d

from .core import (Coefficient, ComplexVolume, FlatResponseError, Grid2D, Grid3D,
                   NoStableIntervalError, PlaneData, ValidationError, WaveConvention,
                   ghz_to_k)
from .propagation import forward_transform, inverse_transform, phase_factor, propagate, SpectralPlane

TRUNCATION_FRACTION = 0.8
FOOTPRINT_THRESHOLD = 0.7
STABILITY_DELTA = 0.2
STABILITY_RADIUS = 1
SMOOTH_SIGMA = 0.65


@dataclass(frozen=True, eq=False)
class MultiFrequencyData:
    """Plane data at several frequencies on one grid; ``values[f, i, j]``."""

    grid: Grid2D
    frequencies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        f = np.array(self.frequencies, dtype=float).ravel()
        if f.size == 0 or np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValidationError("frequencies must be positive and strictly increasing")
        v = np.array(self.values, dtype=complex)
        if v.shape != (f.size,) + tuple(self.grid.counts):
            raise ValidationError(
                f"values shape {v.shape} does not match {f.size} planes of {self.grid.counts}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("plane values must be finite")
        f.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_planes(cls, planes, frequencies):
        grids = {p.grid for p in planes}
        if len(grids) != 1:
            raise ValidationError("all planes must share one grid")
        return cls(planes[0].grid, frequencies, np.stack([p.values for p in planes]))

    @property
    def wavenumbers(self):
        return np.atleast_1d(ghz_to_k(self.frequencies))

    def __len__(self):
        return self.frequencies.size

    def plane(self, index):
        return PlaneData(self.grid, self.wavenumbers[index], self.values[index])

    @property
    def planes(self):
        return [self.plane(i) for i in range(len(self))]

    def select(self, indices):
        indices = np.asarray(indices)
        return MultiFrequencyData(self.grid, self.frequencies[indices], self.values[indices])

    def __eq__(self, other):
        return (isinstance(other, MultiFrequencyData) and self.grid == other.grid
                and np.array_equal(self.frequencies, other.frequencies)
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class StableInterval:
    """Frequencies ``start:stop`` of the data, with the optimal one at ``optimal``."""

    start: int
    stop: int
    optimal: int
    frequencies: tuple

    @property
    def count(self):
        return self.stop - self.start

    @property
    def optimal_frequency(self):
        return self.frequencies[self.optimal - self.start]

    @property
    def k_low(self):
        return ghz_to_k(self.frequencies[0])

    @property
    def k_high(self):
        return ghz_to_k(self.frequencies[-1])

    @property
    def k_optimal(self):
        return ghz_to_k(self.optimal_frequency)

    def as_dict(self):
        return {
            "start": self.start, "stop": self.stop, "optimal": self.optimal,
            "frequencies_ghz": list(self.frequencies),
            "optimal_frequency_ghz": self.optimal_frequency,
            "k_low": self.k_low, "k_high": self.k_high, "k_optimal": self.k_optimal,
        }


@dataclass(frozen=True, eq=False)
class TargetFootprint:
    """Transverse target region ``Omega_T`` on ``grid`` and the plane ``z*``."""

    grid: Grid2D
    mask: np.ndarray
    z_star: float

    def centroid(self):
        X, Y = self.grid.mesh()
        return float(X[self.mask].mean()), float(Y[self.mask].mean())

    def __eq__(self, other):
        return (isinstance(other, TargetFootprint) and self.grid == other.grid
                and self.z_star == other.z_star and np.array_equal(self.mask, other.mask))


def subtract_reference(total, reference):
    """Target-scene data minus target-free data, frequency by frequency."""
    if total.grid != reference.grid:
        raise ValidationError("total and reference data live on different grids")
    if not np.array_equal(total.frequencies, reference.frequencies):
        raise ValidationError("total and reference data have different frequency lists")
    return MultiFrequencyData(total.grid, total.frequencies, total.values - reference.values)


def propagate_all(data, target_z, conv=WaveConvention.PLUS, pad=2):
    planes = [propagate(p, target_z, conv, pad) for p in data.planes]
    return MultiFrequencyData.from_planes(planes, data.frequencies)


def stability_curves(data):
    """Per-frequency max modulus and the (i, j) index where it is attained."""
    mod = np.abs(data.values).reshape(len(data), -1)
    flat = np.argmax(mod, axis=1)
    peaks = mod[np.arange(len(data)), flat]
    where = np.stack(np.unravel_index(flat, data.grid.counts), axis=1)
    return peaks, where


def median_index(start, stop):
    """Median of ``start..stop-1``; the lower middle one for even counts."""
    return start + (stop - start - 1) // 2


def select_stable_run(peaks, where, delta=STABILITY_DELTA, r_loc=STABILITY_RADIUS,
                      max_count=None):
    """Longest run of frequencies satisfying both stability criteria.

    Adjacent frequencies are compatible when their peak-modulus ratio lies in
    ``[1/(1+delta), 1+delta]`` and the peak location moves by at most ``r_loc``
    cells (Chebyshev distance).  Ties go to the lowest frequencies.  With
    ``max_count`` a longer run is cut to that many frequencies centred on its
    median.  Returns ``(start, stop, optimal)``.
    """
    peaks = np.asarray(peaks, float)
    where = np.asarray(where)
    n = peaks.size
    if n < 3:
        raise NoStableIntervalError("need at least 3 frequencies")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = peaks[1:] / peaks[:-1]
    ok = (ratio >= 1 / (1 + delta)) & (ratio <= 1 + delta) & (peaks[1:] > 0) & (peaks[:-1] > 0)
    ok &= np.abs(np.diff(where, axis=0)).max(axis=1) <= r_loc
    best = (0, 1)
    start = 0
    for i, good in enumerate(ok):
        if not good:
            start = i + 1
            continue
        if i + 2 - start > best[1] - best[0]:
            best = (start, i + 2)
    s, e = best
    if e - s < 3:
        raise NoStableIntervalError("no run of at least 3 stable frequencies")
    if max_count is not None and e - s > max_count:
        mid = median_index(s, e)
        s = max(s, mid - (max_count - 1) // 2)
        e = s + max_count
    return s, e, median_index(s, e)


def select_stable_interval(data, delta=STABILITY_DELTA, r_loc=STABILITY_RADIUS, max_count=None):
    """Stable frequency interval of already propagated data."""
    peaks, where = stability_curves(data)
    s, e, opt = select_stable_run(peaks, where, delta, r_loc, max_count)
    return StableInterval(s, e, opt, tuple(float(f) for f in data.frequencies[s:e]))


def truncate_plane(f, fraction=TRUNCATION_FRACTION):
    """Keep values with ``|f| >= fraction * max|f|``, zero the rest."""
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must lie in (0, 1]")
    mod = np.abs(f.values)
    top = mod.max()
    if top == 0:
        raise ValidationError("cannot truncate all-zero data")
    return f.with_values(np.where(mod >= fraction * top, f.values, 0))


def gaussian_kernel(sigma=SMOOTH_SIGMA, taps=3):
    x = np.arange(taps) - (taps - 1) / 2
    w = np.exp(-x ** 2 / (2 * sigma ** 2))
    return w / w.sum()


def smooth_array(a, sigma=SMOOTH_SIGMA, taps=3):
    """Separable normalized Gaussian filter with edge replication."""
    w = gaussian_kernel(sigma, taps)
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return smooth_array(a.real, sigma, taps) + 1j * smooth_array(a.imag, sigma, taps)
    out = np.asarray(a, float)
    for axis in range(out.ndim):
        out = correlate1d(out, w, axis=axis, mode="nearest")
    return out


def gaussian_smooth(p, sigma=SMOOTH_SIGMA, taps=3):
    """Smooth a PlaneData, ComplexVolume or Coefficient (the latter via ``c - 1``)."""
    if isinstance(p, PlaneData):
        return p.with_values(smooth_array(p.values, sigma, taps))
    if isinstance(p, ComplexVolume):
        return ComplexVolume(p.grid, smooth_array(p.values, sigma, taps))
    if isinstance(p, Coefficient):
        return Coefficient(p.grid, 1 + smooth_array(p.beta, sigma, taps), p.c_max)
    return smooth_array(p, sigma, taps)


def z_scan(plane, z_values, conv=WaveConvention.PLUS, pad=2):
    """Max modulus of ``plane`` propagated to each level in ``z_values``."""
    n1, n2 = plane.grid.counts
    big = np.zeros((pad * n1, pad * n2), complex)
    big[:n1, :n2] = plane.values
    bgrid = Grid2D(plane.grid.origin, plane.grid.spacing, big.shape, plane.grid.z_level)
    s = forward_transform(PlaneData(bgrid, plane.wavenumber, big))
    out = np.empty(len(z_values))
    for i, z in enumerate(z_values):
        d = z - plane.grid.z_level
        if d == 0:
            out[i] = np.abs(plane.values).max()
            continue
        moved = SpectralPlane(s.grid, s.wavenumber, s.values * phase_factor(s, d, conv))
        out[i] = np.abs(inverse_transform(moved).values[:n1, :n2]).max()
    return out


def estimate_z_star(data, k_probe, z_range=(-3.5, 3.5), conv=WaveConvention.PLUS,
                    step=0.1, pad=2, return_curve=False):
    """Level of the strongest propagated response at the wavenumber nearest ``k_probe``.

    Among equal maxima the level nearest the measurement plane wins.
    """
    lo, hi = z_range
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValidationError("z_range must be a finite increasing interval")
    if isinstance(data, MultiFrequencyData):
        plane = data.plane(int(np.argmin(np.abs(data.wavenumbers - k_probe))))
    else:
        plane = data
    zs = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    curve = z_scan(plane, zs, conv, pad)
    top = curve.max()
    if not top > 0 or np.ptp(curve) <= 1e-9 * top:
        raise FlatResponseError("flat response: no distinct maximum over the z scan")
    order = np.argsort(np.abs(zs - plane.grid.z_level), kind="stable")
    best = order[np.argmax(curve[order] >= top)]
    z_star = float(np.round(zs[best], 10))
    return (z_star, zs, curve) if return_curve else z_star


def target_footprint(f_smooth, k_tilde=None, threshold=FOOTPRINT_THRESHOLD):
    """``Omega_T``: nodes where ``|f| > threshold * max|f|`` (strict)."""
    mod = np.abs(f_smooth.values)
    top = mod.max()
    if top == 0:
        raise ValidationError("cannot build a footprint from all-zero data")
    return TargetFootprint(f_smooth.grid, mod > threshold * top, f_smooth.grid.z_level)


def resample_plane(p, grid):
    """Bilinear resampling onto ``grid``; zero outside the source rectangle."""
    axes = p.grid.axes()
    X, Y = grid.mesh()
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    interp = lambda part: RegularGridInterpolator(axes, part, bounds_error=False, fill_value=0.0)(pts)
    vals = (interp(p.values.real) + 1j * interp(p.values.imag)).reshape(grid.counts)
    return PlaneData(grid, p.wavenumber, vals)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Total-field data on every boundary node of ``grid`` at one wavenumber.

    Interior entries of ``values`` are unused.
    """

    grid: Grid3D
    wavenumber: float
    values: np.ndarray

    @property
    def mask(self):
        return self.grid.boundary_mask()


def incident_trace(grid, k, conv):
    conv = WaveConvention.parse(conv)
    z = grid.axes()[2]
    return np.broadcast_to(np.exp(1j * conv.sign * k * z), grid.counts).copy()


def complete_boundary_data(g, omega, k=None, conv=WaveConvention.PLUS):
    """Measured total field on the face ``z = z*`` and the incident wave elsewhere."""
    k = g.wavenumber if k is None else float(k)
    face = omega.face_grid(2, 0)
    if (g.grid.counts != face.counts or not np.allclose(g.grid.origin, face.origin)
            or not np.allclose(g.grid.spacing, face.spacing)
            or not np.isclose(g.grid.z_level, face.z_level)):
        raise ValidationError("measurement face does not coincide with the z = z* face of the domain")
    vals = incident_trace(omega, k, conv)
    vals[:, :, 0] = g.values
    return BoundaryData(omega, k, vals)


def interval_wavenumber_data(data, k_nodes):
    """Planes at the wavenumbers ``k_nodes``, linear in k between measured ones."""
    ks = data.wavenumbers
    out = []
    for k in k_nodes:
        if k < ks[0] - 1e-9 or k > ks[-1] + 1e-9:
            raise ValidationError(f"wavenumber {k} outside the data range [{ks[0]}, {ks[-1]}]")
        j = int(np.clip(np.searchsorted(ks, k) - 1, 0, len(ks) - 2))
        t = 0.0 if ks[j + 1] == ks[j] else (k - ks[j]) / (ks[j + 1] - ks[j])
        t = float(np.clip(t, 0, 1))
        if abs(t) < 1e-9:
            vals = data.values[j]
        elif abs(1 - t) < 1e-9:
            vals = data.values[j + 1]
        else:
            vals = (1 - t) * data.values[j] + t * data.values[j + 1]
        out.append(PlaneData(data.grid, k, vals))
    return out
