"""Simulate, preprocess and invert: the stages behind the command line."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .core import (ConvergenceError, Grid2D, Grid3D, NoStableIntervalError, PlaneData,
                   ValidationError, WaveConvention, build_partition)
from .forward import LSConfig, add_noise, scattered_on_plane, solve_lippmann_schwinger
from .inversion import InversionConfig, run_inversion, search_region
from .phantom import Phantom
from .preprocess import (MultiFrequencyData, StableInterval, TargetFootprint,
                         complete_boundary_data, estimate_z_star, gaussian_smooth,
                         interval_wavenumber_data, propagate_all, resample_plane,
                         select_stable_interval, stability_curves, subtract_reference,
                         target_footprint, truncate_plane)

log = logging.getLogger(__name__)


def frequency_grid(count=300, f_min=1.0, f_max=10.0):
    """Uniform frequency list in GHz."""
    return np.linspace(f_min, f_max, count)


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run; defaults reproduce the documented setup."""

    # measurement
    plane_extent: float = 5.0
    plane_counts: int = 51
    plane_z: float = -8.78
    f_min: float = 1.0
    f_max: float = 10.0
    f_count: int = 300
    f_first: int = 0
    f_last: int = 299
    convention: str = "MINUS"
    sim_spacing: float = 0.05
    seed: int = 0
    # preprocessing
    propagation_pad: int = 2
    preliminary_z: float = -0.8
    stability_delta: float = 0.2
    stability_radius: int = 1
    stable_max_count: int = 7
    truncation: float = 0.8
    footprint: float = 0.7
    z_scan_min: float = -3.5
    z_scan_max: float = 3.5
    z_scan_step: float = 0.1
    smooth_sigma: float = 0.65
    # inversion
    domain_half_width: float = 2.5
    domain_depth: float = 5.0
    grid_counts: int = 41
    partition_steps: int = 0
    z_search_max: float = 1.0
    max_outer: int = 5
    max_inner: int = 3
    inner_tol: float = 1e-6
    outer_tol: float = 5e-4
    linear_tol: float = 1e-8
    krylov_tolerance: float = 1e-6
    tail_guard: float = 1e-6
    c_max: float = 15.0
    q_boundary: str = "log"

    def __post_init__(self):
        for name in ("truncation", "footprint", "stability_delta"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValidationError(f"{name} must lie in (0, 1], got {v}")
        WaveConvention.parse(self.convention)
        if self.plane_counts < 2 or self.grid_counts < 5:
            raise ValidationError("grids are too small")
        if not 0 <= self.f_first <= self.f_last < self.f_count:
            raise ValidationError("frequency index range is invalid")
        if self.q_boundary not in ("log", "ratio"):
            raise ValidationError(f"q_boundary must be 'log' or 'ratio', got {self.q_boundary!r}")
        if self.partition_steps < 0:
            raise ValidationError("partition_steps must be nonnegative (0 = automatic)")

    @property
    def conv(self):
        return WaveConvention.parse(self.convention)

    @property
    def frequencies(self):
        return frequency_grid(self.f_count, self.f_min, self.f_max)[self.f_first:self.f_last + 1]

    def plane_grid(self):
        e = self.plane_extent
        n = self.plane_counts
        return Grid2D.from_bounds((-e, -e), (e, e), (n, n), self.plane_z)

    def domain(self, z_star):
        w = self.domain_half_width
        n = self.grid_counts
        return Grid3D.from_bounds((-w, -w, z_star), (w, w, z_star + self.domain_depth), (n, n, n))

    def inversion_config(self):
        return InversionConfig(max_inner=self.max_inner, inner_tol=self.inner_tol,
                               outer_tol=self.outer_tol, max_outer=self.max_outer,
                               linear_tol=self.linear_tol, guard=self.tail_guard,
                               c_max=self.c_max, sigma=self.smooth_sigma, z_max=self.z_search_max,
                               conv=self.conv, ls=LSConfig(self.krylov_tolerance),
                               q_boundary=self.q_boundary)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(d) - set(fields)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
        kw = {}
        for name, value in d.items():
            default = getattr(cls, name)
            try:
                kw[name] = type(default)(value)
            except (TypeError, ValueError):
                raise ValidationError(f"bad value {value!r} for {name}") from None
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    target: MultiFrequencyData
    reference: MultiFrequencyData
    truth: object


def simulate(phantom, cfg=RunConfig()):
    """Plane data with and without the phantom, plus the rasterized truth.

    The scene holds a plane wave and the phantom in air.  Noise is complex
    Gaussian, ``phantom.noise`` times the RMS of the scattered field at each
    frequency, added to the target scene only.
    """
    conv = cfg.conv
    plane = cfg.plane_grid()
    freqs = cfg.frequencies
    ks = np.atleast_1d(MultiFrequencyData(plane, freqs, np.zeros((len(freqs),) + plane.counts)).wavenumbers)
    rng = np.random.default_rng(cfg.seed)
    ref = np.exp(1j * conv.sign * ks * plane.z_level)[:, None, None] * np.ones(plane.counts)
    if phantom.empty:
        reference = MultiFrequencyData(plane, freqs, ref)
        return SimulatedDataset(reference, reference, None)
    truth = phantom.rasterize(phantom.simulation_grid(cfg.sim_spacing))
    ls = LSConfig(cfg.krylov_tolerance)
    tgt = np.empty_like(ref)
    for j, k in enumerate(ks):
        t0 = time.perf_counter()
        u = solve_lippmann_schwinger(truth, k, conv, ls)
        sc = scattered_on_plane(u, truth, k, plane, conv)
        noisy = add_noise(sc, phantom.noise, rng)
        tgt[j] = ref[j] + noisy.values
        log.debug("simulated f=%.4f GHz in %.2fs", freqs[j], time.perf_counter() - t0)
    return SimulatedDataset(MultiFrequencyData(plane, freqs, tgt),
                            MultiFrequencyData(plane, freqs, ref), truth)


@dataclass(frozen=True, eq=False)
class Preprocessed:
    """Everything the inversion needs, plus the curves behind the choices."""

    interval: StableInterval
    z_star: float
    footprint: TargetFootprint
    face_data: MultiFrequencyData
    peaks: np.ndarray
    z_values: np.ndarray
    z_curve: np.ndarray
    frequencies: np.ndarray


def _step(name, fn, *args):
    """Run one pipeline stage, prefixing any failure with the stage name."""
    try:
        return fn(*args)
    except (ValidationError, ConvergenceError, NoStableIntervalError) as err:
        err.args = (f"{name}: {err.args[0] if err.args else err}",) + err.args[1:]
        raise


def preprocess(target, reference, cfg=RunConfig()):
    """Subtract, propagate, select frequencies, locate and truncate.

    Returns the total field on the ``z = z*`` face of the inversion domain for
    every frequency of the stable interval.
    """
    conv = cfg.conv
    data = _step("subtracting the reference", subtract_reference, target, reference)
    near = _step("preliminary propagation", propagate_all, data, cfg.preliminary_z, conv,
                 cfg.propagation_pad)
    peaks, _ = stability_curves(near)
    interval = _step("selecting the stable interval", select_stable_interval, near,
                     cfg.stability_delta, cfg.stability_radius, cfg.stable_max_count or None)
    k_opt = interval.k_optimal
    z_star, zs, curve = _step("locating z*", estimate_z_star, data.plane(interval.optimal), k_opt,
                              (cfg.z_scan_min, cfg.z_scan_max), conv, cfg.z_scan_step,
                              cfg.propagation_pad, True)
    sel = data.select(np.arange(interval.start, interval.stop))
    at_star = _step("propagating to z*", propagate_all, sel, z_star, conv, cfg.propagation_pad)
    smooth = [gaussian_smooth(_step("truncating", truncate_plane, p, cfg.truncation),
                              cfg.smooth_sigma)
              for p in at_star.planes]
    opt = smooth[interval.optimal - interval.start]
    footprint = _step("building the footprint", target_footprint, opt, k_opt, cfg.footprint)
    face = cfg.domain(z_star).face_grid(2, 0)
    planes = []
    for p in smooth:
        moved = resample_plane(p, face)
        inc = np.exp(1j * conv.sign * p.wavenumber * z_star)
        planes.append(moved.with_values(moved.values + inc))
    face_data = MultiFrequencyData.from_planes(planes, sel.frequencies)
    return Preprocessed(interval, z_star, footprint, face_data, peaks, zs, curve,
                        data.frequencies)


def footprint_on(footprint, grid):
    """Nearest-node transfer of a footprint mask onto another transverse grid."""
    X, Y = grid.mesh()
    src = footprint.grid
    i = np.rint((X - src.origin[0]) / src.spacing[0]).astype(int)
    j = np.rint((Y - src.origin[1]) / src.spacing[1]).astype(int)
    inside = (i >= 0) & (i < src.counts[0]) & (j >= 0) & (j < src.counts[1])
    out = np.zeros(grid.counts, bool)
    out[inside] = footprint.mask[i[inside], j[inside]]
    return out


def invert(pre, cfg=RunConfig()):
    """Run the reconstruction on preprocessed data; returns ``(result, omega, partition)``."""
    omega = cfg.domain(pre.z_star)
    face = omega.face_grid(2, 0)
    face_data = pre.face_data
    if face_data.grid != face:
        # the bundle was prepared for another inversion grid
        moved = [resample_plane(p, face) for p in face_data.planes]
        face_data = MultiFrequencyData.from_planes(moved, face_data.frequencies)
    ks = face_data.wavenumbers
    steps = cfg.partition_steps or len(ks) - 1
    partition = build_partition(ks[0], ks[-1], steps)
    planes = interval_wavenumber_data(face_data, partition.nodes)
    data = [complete_boundary_data(p, omega, p.wavenumber, cfg.conv) for p in planes]
    mask = footprint_on(pre.footprint, face)
    region = search_region(omega, mask, pre.z_star, cfg.z_search_max)
    result = run_inversion(data, region, partition, cfg.inversion_config())
    return result, omega, partition
