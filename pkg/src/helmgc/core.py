"""Grids, field containers, wavenumber partitions and sign conventions.

All lengths are dimensionless with 1 unit = 10 cm.  Volumes are stored as
``(nx, ny, nz)`` arrays indexed ``[i, j, l]``; serialization flattens them
with x fastest (``order="F"``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

C_LIGHT = 299_792_458.0
LENGTH_UNIT_M = 0.1
C_MAX_DEFAULT = 15.0


class ValidationError(ValueError):
    """Invalid input to an operation (CLI exit status 2)."""


class ConvergenceError(RuntimeError):
    """A numerical solve did not reach its tolerance (CLI exit status 3)."""

    def __init__(self, message, residual=None, context=None):
        super().__init__(message)
        self.residual = residual
        self.context = context or {}


class WaveConvention(enum.Enum):
    """Which plane wave travels toward +z.

    ``PLUS``: exp(ikz) travels toward +z.  ``MINUS``: exp(-ikz) does.
    """

    PLUS = 1
    MINUS = -1

    @property
    def sign(self) -> int:
        return self.value

    @classmethod
    def parse(cls, text) -> "WaveConvention":
        if isinstance(text, cls):
            return text
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown wave convention {text!r}") from None


def _triple(values, kind, name):
    arr = np.asarray(values, dtype=kind)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got {arr.shape}")
    return tuple(arr.tolist())


def _pair(values, kind, name):
    arr = np.asarray(values, dtype=kind)
    if arr.shape != (2,):
        raise ValidationError(f"{name} must have 2 components, got {arr.shape}")
    return tuple(arr.tolist())


@dataclass(frozen=True)
class Grid3D:
    """Uniform node grid ``origin + (i, j, l) * spacing``."""

    origin: tuple
    spacing: tuple
    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", _triple(self.origin, float, "origin"))
        object.__setattr__(self, "spacing", _triple(self.spacing, float, "spacing"))
        object.__setattr__(self, "counts", _triple(self.counts, int, "counts"))
        if min(self.spacing) <= 0:
            raise ValidationError("grid spacing must be positive")
        if min(self.counts) < 2:
            raise ValidationError("grid needs at least 2 nodes per axis")

    @classmethod
    def from_bounds(cls, lower, upper, counts):
        """Node grid whose first and last nodes sit on ``lower`` and ``upper``."""
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        counts = np.asarray(counts, int)
        if np.any(upper <= lower):
            raise ValidationError("upper bounds must exceed lower bounds")
        return cls(lower, (upper - lower) / (counts - 1), counts)

    @classmethod
    def cell_centered(cls, lower, upper, counts):
        """Grid of cell centres for ``counts`` cells tiling the box."""
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        counts = np.asarray(counts, int)
        h = (upper - lower) / counts
        return cls(lower + h / 2, h, counts)

    @property
    def shape(self):
        return self.counts

    @property
    def size(self):
        return int(np.prod(self.counts))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return tuple(o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.counts))

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def node(self, i, j, l):
        idx = np.array([i, j, l], dtype=float)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def nearest_index(self, point):
        rel = (np.asarray(point, float) - np.asarray(self.origin)) / np.asarray(self.spacing)
        idx = np.rint(rel).astype(int)
        return tuple(np.clip(idx, 0, np.asarray(self.counts) - 1).tolist())

    def upper(self):
        return tuple(o + h * (n - 1) for o, h, n in zip(self.origin, self.spacing, self.counts))

    def boundary_mask(self):
        mask = np.zeros(self.counts, dtype=bool)
        mask[0, :, :] = mask[-1, :, :] = True
        mask[:, 0, :] = mask[:, -1, :] = True
        mask[:, :, 0] = mask[:, :, -1] = True
        return mask

    def face_grid(self, axis=2, index=0):
        """The Grid2D of the face ``z = const`` (only ``axis=2`` supported)."""
        if axis != 2:
            raise ValidationError("only z-faces are supported")
        z = self.origin[2] + index * self.spacing[2]
        return Grid2D(self.origin[:2], self.spacing[:2], self.counts[:2], z)


@dataclass(frozen=True)
class Grid2D:
    """Uniform node grid on the plane ``z = z_level``."""

    origin: tuple
    spacing: tuple
    counts: tuple
    z_level: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _pair(self.origin, float, "origin"))
        object.__setattr__(self, "spacing", _pair(self.spacing, float, "spacing"))
        object.__setattr__(self, "counts", _pair(self.counts, int, "counts"))
        object.__setattr__(self, "z_level", float(self.z_level))
        if min(self.spacing) <= 0:
            raise ValidationError("grid spacing must be positive")
        if min(self.counts) < 2:
            raise ValidationError("grid needs at least 2 nodes per axis")

    @classmethod
    def from_bounds(cls, lower, upper, counts, z_level):
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        counts = np.asarray(counts, int)
        return cls(lower, (upper - lower) / (counts - 1), counts, z_level)

    @property
    def shape(self):
        return self.counts

    @property
    def cell_area(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return tuple(o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.counts))

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def node(self, i, j):
        return np.asarray(self.origin) + np.array([i, j], float) * np.asarray(self.spacing)

    def nearest_index(self, point):
        rel = (np.asarray(point, float)[:2] - np.asarray(self.origin)) / np.asarray(self.spacing)
        idx = np.rint(rel).astype(int)
        return tuple(np.clip(idx, 0, np.asarray(self.counts) - 1).tolist())

    def at_z(self, z_level):
        return Grid2D(self.origin, self.spacing, self.counts, z_level)


def _check_values(values, shape, dtype, name):
    arr = np.array(values, dtype=dtype)
    if arr.shape != tuple(shape):
        raise ValidationError(f"{name}: values shape {arr.shape} does not match grid {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: values must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class ComplexVolume:
    grid: Grid3D
    values: np.ndarray

    def __post_init__(self):
        arr = _check_values(self.values, self.grid.counts, complex, "ComplexVolume")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __eq__(self, other):
        return (isinstance(other, ComplexVolume) and self.grid == other.grid
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class PlaneData:
    grid: Grid2D
    wavenumber: float
    values: np.ndarray

    def __post_init__(self):
        if not self.wavenumber > 0:
            raise ValidationError("wavenumber must be positive")
        object.__setattr__(self, "wavenumber", float(self.wavenumber))
        arr = _check_values(self.values, self.grid.counts, complex, "PlaneData")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def with_values(self, values, grid=None):
        return PlaneData(grid or self.grid, self.wavenumber, values)

    def __eq__(self, other):
        return (isinstance(other, PlaneData) and self.grid == other.grid
                and self.wavenumber == other.wavenumber
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class Coefficient:
    """Real dielectric constant on a grid, ``1 <= c <= c_max``.

    ``support`` is an optional ``(lower, upper)`` pair of 3-vectors; nodes
    outside it must equal 1.
    """

    grid: Grid3D
    values: np.ndarray
    c_max: float = C_MAX_DEFAULT
    support: tuple | None = None

    def __post_init__(self):
        arr = _check_values(self.values, self.grid.counts, float, "Coefficient")
        tol = 1e-12
        if arr.min() < 1 - tol or arr.max() > self.c_max + tol:
            raise ValidationError(
                f"coefficient must lie in [1, {self.c_max}], got [{arr.min()}, {arr.max()}]")
        if self.support is not None:
            lo, hi = (np.asarray(b, float) for b in self.support)
            X, Y, Z = self.grid.mesh()
            inside = ((X >= lo[0]) & (X <= hi[0]) & (Y >= lo[1]) & (Y <= hi[1])
                      & (Z >= lo[2]) & (Z <= hi[2]))
            if np.any(np.abs(arr[~inside] - 1) > tol):
                raise ValidationError("coefficient differs from 1 outside its support box")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def background(cls, grid, c_max=C_MAX_DEFAULT):
        return cls(grid, np.ones(grid.counts), c_max)

    @property
    def beta(self):
        return self.values - 1.0

    def support_box(self, pad=0):
        """Index slices of the bounding box of ``c != 1``, or ``None``."""
        nz = np.argwhere(self.values != 1.0)
        if nz.size == 0:
            return None
        lo = np.maximum(nz.min(axis=0) - pad, 0)
        hi = np.minimum(nz.max(axis=0) + pad + 1, np.asarray(self.grid.counts))
        return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))

    def __eq__(self, other):
        return (isinstance(other, Coefficient) and self.grid == other.grid
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class WavenumberPartition:
    """Uniform partition ``k_0 = k_max > k_1 > ... > k_N = k_min``."""

    k_min: float
    k_max: float
    count: int
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (0 < self.k_min < self.k_max):
            raise ValidationError("partition needs 0 < k_min < k_max")
        if int(self.count) != self.count or self.count < 1:
            raise ValidationError("partition count N must be a positive integer")
        nodes = self.k_max - np.arange(self.count + 1) * self.step
        nodes[-1] = self.k_min
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def step(self):
        return (self.k_max - self.k_min) / self.count

    def __len__(self):
        return self.count + 1

    def __getitem__(self, n):
        return float(self.nodes[n])


def build_partition(k_min, k_max, N):
    """Return the uniform wavenumber partition with ``N`` steps."""
    return WavenumberPartition(float(k_min), float(k_max), N)


def ghz_to_k(f_ghz):
    """Dimensionless wavenumber ``2 pi f / c * 10 cm`` for a frequency in GHz."""
    f = np.asarray(f_ghz, dtype=float)
    if np.any(~(f > 0)):
        raise ValidationError("frequency must be positive")
    k = 2 * math.pi * f * 1e9 / C_LIGHT * LENGTH_UNIT_M
    return float(k) if np.ndim(k) == 0 else k


def k_to_ghz(k):
    k = np.asarray(k, dtype=float)
    f = k * C_LIGHT / (2 * math.pi * LENGTH_UNIT_M * 1e9)
    return float(f) if np.ndim(f) == 0 else f


class NoStableIntervalError(RuntimeError):
    """No run of at least three stable frequencies exists (CLI exit status 4)."""


class FlatResponseError(ValidationError):
    """A scan produced no distinct maximum."""
