"""Synthetic targets: boxes and balls of constant dielectric constant in air."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import C_MAX_DEFAULT, Coefficient, Grid3D, ValidationError


@dataclass(frozen=True)
class Inclusion:
    """A box (``size`` = half-extents) or ball (``size`` = radius)."""

    shape: str
    center: tuple
    size: tuple
    value: float

    def __post_init__(self):
        if self.shape not in ("box", "ball"):
            raise ValidationError(f"unknown inclusion shape {self.shape!r}")
        center = tuple(float(x) for x in np.ravel(self.center))
        size = tuple(float(x) for x in np.ravel(self.size))
        if len(center) != 3:
            raise ValidationError("inclusion center needs 3 coordinates")
        if self.shape == "box" and len(size) != 3:
            raise ValidationError("box size needs 3 half-extents")
        if self.shape == "ball" and len(size) != 1:
            raise ValidationError("ball size is a single radius")
        if min(size) <= 0:
            raise ValidationError("inclusion size must be positive")
        if not 1 <= self.value <= C_MAX_DEFAULT:
            raise ValidationError(f"dielectric constant must lie in [1, {C_MAX_DEFAULT}]")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "value", float(self.value))

    def bounds(self):
        c = np.asarray(self.center)
        half = np.asarray(self.size if self.shape == "box" else self.size * 3)
        return c - half, c + half

    def fraction(self, grid, samples=4):
        """Volume fraction of every cell of the cell-centred ``grid`` inside the inclusion."""
        h = np.asarray(grid.spacing)
        if self.shape == "box":
            # product of exact 1D overlaps
            lo, hi = self.bounds()
            frac = np.ones(grid.counts)
            for ax, x in enumerate(grid.axes()):
                a = np.clip(np.minimum(x + h[ax] / 2, hi[ax]) - np.maximum(x - h[ax] / 2, lo[ax]), 0, None)
                shape = [1, 1, 1]
                shape[ax] = -1
                frac = frac * (a / h[ax]).reshape(shape)
            return frac
        offs = (np.arange(samples) + 0.5) / samples - 0.5
        X, Y, Z = grid.mesh()
        r2 = self.size[0] ** 2
        frac = np.zeros(grid.counts)
        for ox in offs:
            for oy in offs:
                for oz in offs:
                    d2 = ((X + ox * h[0] - self.center[0]) ** 2 + (Y + oy * h[1] - self.center[1]) ** 2
                          + (Z + oz * h[2] - self.center[2]) ** 2)
                    frac += d2 <= r2
        return frac / samples ** 3


@dataclass(frozen=True)
class Phantom:
    inclusions: tuple = ()
    noise: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        if self.noise < 0:
            raise ValidationError("noise level must be nonnegative")

    @property
    def empty(self):
        return len(self.inclusions) == 0

    def bounds(self):
        if self.empty:
            raise ValidationError("an empty phantom has no bounds")
        b = [inc.bounds() for inc in self.inclusions]
        return np.min([x[0] for x in b], axis=0), np.max([x[1] for x in b], axis=0)

    def center(self):
        """Volume-weighted centre of the inclusions."""
        w = []
        for inc in self.inclusions:
            vol = np.prod(2 * np.asarray(inc.size)) if inc.shape == "box" else 4 / 3 * np.pi * inc.size[0] ** 3
            w.append(vol)
        return np.average([inc.center for inc in self.inclusions], axis=0, weights=w)

    @property
    def max_value(self):
        return max((inc.value for inc in self.inclusions), default=1.0)

    def simulation_grid(self, spacing):
        """Cell-centred grid covering the inclusions, cells of size ``spacing`` at most."""
        lo, hi = self.bounds()
        counts = np.maximum(np.ceil((hi - lo) / spacing - 1e-9).astype(int), 2)
        return Grid3D.cell_centered(lo, hi, counts)

    def rasterize(self, grid, samples=4):
        """Partial-volume coefficient on a cell-centred grid; later inclusions win overlaps."""
        c = np.ones(grid.counts)
        for inc in self.inclusions:
            f = inc.fraction(grid, samples)
            c = c * (1 - f) + inc.value * f
        return Coefficient(grid, c)

    def to_dict(self):
        return {"name": self.name, "noise": self.noise,
                "inclusions": [{"shape": i.shape, "center": list(i.center), "size": list(i.size),
                                "value": i.value} for i in self.inclusions]}

    @classmethod
    def from_dict(cls, d):
        incs = [Inclusion(i["shape"], i["center"], i["size"], i["value"]) for i in d.get("inclusions", [])]
        return cls(tuple(incs), float(d.get("noise", 0.0)), d.get("name", "custom"))


# Front faces sit on z = 0; dielectric constants are the measured values of
# the six targets (bamboo, geode, rock, sycamore, wet wood, yellow pine).
PRESETS = {
    "object1": [Inclusion("box", (0.0, 0.0, 0.25), (0.7, 0.25, 0.25), 4.50)],
    "object2": [Inclusion("ball", (0.0, 0.0, 0.4), (0.4,), 5.45)],
    "object3": [Inclusion("box", (0.0, 0.0, 0.25), (0.35, 0.3, 0.25), 5.61)],
    "object4": [Inclusion("box", (0.0, 0.0, 0.25), (0.5, 0.25, 0.25), 4.89)],
    "object5": [Inclusion("box", (0.0, 0.0, 0.3), (0.5, 0.25, 0.3), 7.58)],
    "object6": [Inclusion("box", (0.5, -0.5, 0.3), (0.3, 0.3, 0.3), 4.80)],
    "empty": [],
}


def preset(name, noise=0.0):
    try:
        incs = PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown phantom preset {name!r}; choose from {sorted(PRESETS)}") from None
    return Phantom(tuple(incs), noise, name)
