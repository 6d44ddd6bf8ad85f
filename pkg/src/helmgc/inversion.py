"""Globally convergent reconstruction of the dielectric constant.

Write ``u = exp(v)`` and ``q = dv/dk``.  Eliminating the coefficient from
``lap v + grad v . grad v = -k^2 c`` gives a convection-diffusion equation
for ``q`` that is marched from the highest wavenumber ``k_0`` down the
partition.  Each sweep solves that equation on a regular finite-difference
grid, recovers ``c``, and refreshes the tail ``grad V = grad u / u`` with a
forward solve at ``k_0``.  Inner and outer loops stop by the relative-change
rules implemented in :func:`inner_stop` and :func:`outer_window`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import distance_transform_edt
from scipy.sparse.linalg import LinearOperator, gmres

from .core import (C_MAX_DEFAULT, Coefficient, ComplexVolume, ConvergenceError, Grid3D,
                   ValidationError, WaveConvention, WavenumberPartition)
from .forward import LSConfig, field_gradient, solve_lippmann_schwinger
from .preprocess import smooth_array

log = logging.getLogger(__name__)


# --- finite differences on node grids ---------------------------------------

def gradient(a, spacing):
    """Second-order central differences (one-sided second order on the faces)."""
    return tuple(np.gradient(a, *spacing, edge_order=2))


def divergence(vec, spacing):
    return sum(np.gradient(v, h, axis=ax, edge_order=2) for ax, (v, h) in enumerate(zip(vec, spacing)))


def laplacian(a, spacing):
    """7-point Laplacian on interior nodes; boundary entries are zero."""
    out = np.zeros_like(a)
    core = (slice(1, -1),) * 3
    for ax, h in enumerate(spacing):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[ax] = slice(None, -2)
        hi[ax] = slice(2, None)
        out[core] += (a[tuple(lo)] - 2 * a[core] + a[tuple(hi)]) / h ** 2
    return out


def _central(a, ax, h):
    lo = [slice(1, -1)] * 3
    hi = [slice(1, -1)] * 3
    lo[ax] = slice(None, -2)
    hi[ax] = slice(2, None)
    return (a[tuple(hi)] - a[tuple(lo)]) / (2 * h)


def _dst(a, inverse=False, axes=None):
    f = sfft.idstn if inverse else sfft.dstn
    if np.iscomplexobj(a):
        return f(a.real, type=1, axes=axes) + 1j * f(a.imag, type=1, axes=axes)
    return f(a, type=1, axes=axes)


def _dirichlet_eigenvalues(n_inner, h):
    j = np.arange(1, n_inner + 1)
    return -(2 - 2 * np.cos(np.pi * j / (n_inner + 1))) / h ** 2


def solve_laplace_dirichlet(boundary, spacing):
    """Discrete harmonic extension of the boundary entries of ``boundary``.

    Solves the 7-point ``lap w = 0`` on interior nodes with ``w = boundary``
    on the faces, exactly, with a type-I sine transform.
    """
    w = np.array(boundary, dtype=np.result_type(boundary, float))
    w[1:-1, 1:-1, 1:-1] = 0
    rhs = -laplacian(w, spacing)[1:-1, 1:-1, 1:-1]
    lam = [_dirichlet_eigenvalues(n - 2, h) for n, h in zip(w.shape, spacing)]
    ev = lam[0][:, None, None] + lam[1][None, :, None] + lam[2][None, None, :]
    w[1:-1, 1:-1, 1:-1] = _dst(_dst(rhs) / ev, inverse=True)
    return w


# --- the q boundary value problem -------------------------------------------

class _ConstantZPreconditioner:
    """Exact inverse of ``(k/2) lap + k b_z d/dz`` for a constant ``b_z``.

    Sine transforms in x and y reduce it to tridiagonal systems in z, one per
    transverse mode, factored once.
    """

    def __init__(self, shape, spacing, k, bz):
        mx, my, mz = shape
        hx, hy, hz = spacing
        lxy = (_dirichlet_eigenvalues(mx, hx)[:, None] + _dirichlet_eigenvalues(my, hy)[None, :]).ravel()
        self.shape = shape
        self.sub = k / 2 / hz ** 2 - k * bz / (2 * hz)
        sup = k / 2 / hz ** 2 + k * bz / (2 * hz)
        diag = k / 2 * (lxy - 2 / hz ** 2)
        self.piv = np.empty((mx * my, mz), complex)
        self.up = np.empty((mx * my, mz), complex)
        self.piv[:, 0] = diag
        self.up[:, 0] = sup / diag
        for j in range(1, mz):
            self.piv[:, j] = diag - self.sub * self.up[:, j - 1]
            self.up[:, j] = sup / self.piv[:, j]

    def __call__(self, r):
        mx, my, mz = self.shape
        t = _dst(r.reshape(self.shape), axes=(0, 1)).reshape(mx * my, mz)
        y = np.empty_like(t)
        y[:, 0] = t[:, 0] / self.piv[:, 0]
        for j in range(1, mz):
            y[:, j] = (t[:, j] - self.sub * y[:, j - 1]) / self.piv[:, j]
        for j in range(mz - 2, -1, -1):
            y[:, j] -= self.up[:, j] * y[:, j + 1]
        return _dst(y.reshape(self.shape), inverse=True, axes=(0, 1)).ravel()


def convection_diffusion(q, k, b, spacing):
    """Interior values of ``(k/2) lap q + k b . grad q`` (7-point and central differences)."""
    lap = laplacian(q, spacing)[1:-1, 1:-1, 1:-1]
    conv = sum(b[ax][1:-1, 1:-1, 1:-1] * _central(q, ax, h) for ax, h in enumerate(spacing))
    return k / 2 * lap + k * conv


def solve_convection_diffusion(grid, k, b, rhs, boundary, tol=1e-8, restart=250, max_restarts=10):
    """Solve ``(k/2) lap q + k b . grad q = rhs`` inside, ``q = boundary`` on the faces.

    ``b`` is a triple of full-grid arrays; ``rhs`` and ``boundary`` are
    full-grid arrays of which only the interior (resp. face) entries are read.
    GMRES is preconditioned by the exact solver for the mean axial convection.
    Raises ``ConvergenceError`` when the relative residual exceeds ``tol``.
    """
    spacing = grid.spacing
    shape = tuple(grid.counts)
    for arr in (*b, rhs, boundary):
        if np.shape(arr) != shape:
            raise ValidationError(f"array of shape {np.shape(arr)} does not match grid {shape}")
    inner = tuple(n - 2 for n in shape)
    if min(inner) < 1:
        raise ValidationError("grid has no interior nodes")
    lift = np.array(boundary, dtype=complex)
    lift[1:-1, 1:-1, 1:-1] = 0
    f = (np.asarray(rhs, complex)[1:-1, 1:-1, 1:-1] - convection_diffusion(lift, k, b, spacing)).ravel()
    work = np.zeros(shape, complex)

    def matvec(x):
        work[1:-1, 1:-1, 1:-1] = x.reshape(inner)
        return convection_diffusion(work, k, b, spacing).ravel()

    n = f.size
    A = LinearOperator((n, n), matvec=matvec, dtype=complex)
    bz = complex(np.mean(b[2][1:-1, 1:-1, 1:-1]))
    M = LinearOperator((n, n), matvec=_ConstantZPreconditioner(inner, spacing, k, bz), dtype=complex)
    fnorm = np.linalg.norm(f)
    out = lift.copy()
    if fnorm == 0:
        return out
    x, info = gmres(A, f, M=M, rtol=tol, atol=0.0, restart=min(restart, n), maxiter=max_restarts)
    resid = float(np.linalg.norm(matvec(x) - f) / fnorm)
    if resid > tol * 10:
        raise ConvergenceError(f"q-equation solve stalled at relative residual {resid:.2e}",
                               residual=resid, context={"k": k})
    out[1:-1, 1:-1, 1:-1] = x.reshape(inner)
    return out


# --- domain types -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TailField:
    """Gradient of the tail function and its discrete divergence."""

    grad: tuple
    div: ComplexVolume

    @classmethod
    def from_gradient(cls, grid, components, div=None):
        """Tail from its gradient; ``div`` defaults to the discrete divergence."""
        comps = tuple(ComplexVolume(grid, c) for c in components)
        if div is None:
            div = divergence([c.values for c in comps], grid.spacing)
        return cls(comps, ComplexVolume(grid, div))

    @property
    def grid(self):
        return self.div.grid

    def arrays(self):
        return tuple(c.values for c in self.grad)

    def conj(self):
        return TailField.from_gradient(self.grid, [np.conj(a) for a in self.arrays()])


@dataclass
class QSequence:
    """Accepted ``q_n`` and the running sum ``Q = h * sum q_j`` (``q_0 = 0``)."""

    grid: Grid3D
    step: float
    q: list = field(default_factory=list)
    Q: np.ndarray = None

    def __post_init__(self):
        if self.Q is None:
            self.Q = np.zeros(self.grid.counts, complex)

    def accept(self, q_n):
        self.q.append(q_n)
        self.Q = self.Q + self.step * q_n


@dataclass
class StoppingState:
    """Append-only record of relative errors and the coefficients they refer to.

    ``entries[n]`` holds ``(i, error, c)`` for inner iteration ``i`` of sweep
    ``n``; for ``i = 1`` the error is the bridge to the last iterate of sweep
    ``n - 1`` (``None`` on the first sweep).
    """

    entries: dict = field(default_factory=dict)

    def record(self, n, i, error, c):
        if error is not None and not error >= 0:
            raise ValidationError("relative errors must be nonnegative")
        self.entries.setdefault(n, []).append((i, error, c))

    def pair_sequence(self, n):
        """Errors (and coefficients) of sweeps ``n`` and ``n + 1`` in sequence order."""
        first = [e for e in self.entries.get(n, []) if e[0] >= 2]
        second = self.entries.get(n + 1, [])
        return [(err, c) for _, err, c in first + second if err is not None]


def relative_change(new, old):
    """``||new - old|| / ||old||`` in the discrete L2 sense."""
    return float(np.linalg.norm(np.asarray(new) - np.asarray(old)) / np.linalg.norm(old))


def inner_stop(i, error, tol=1e-6, max_inner=3):
    """Inner loop stops at ``i = 2`` when its error is below ``tol``, else at ``max_inner``."""
    if i >= max_inner:
        return True
    return i == 2 and error is not None and error < tol


def outer_window(errors, tol=5e-4, run=3):
    """Start of the first ``run`` consecutive errors ``<= tol``, or ``None``."""
    count = 0
    for j, e in enumerate(errors):
        count = count + 1 if e <= tol else 0
        if count == run:
            return j - run + 1
    return None


# --- the algorithm's steps ----------------------------------------------------

Q_BOUNDARY_FORMS = ("log", "ratio")


def boundary_q(data, partition, n, form="log"):
    """Face values of ``q_n``, a difference quotient of ``ln g`` in k; interior entries zero.

    ``form="log"`` gives ``(ln g(k_n) - ln g(k_{n+1})) / h`` with the
    principal logarithm of the ratio, exact for a plane wave.  ``form="ratio"``
    gives the first-order ``(g(k_n) - g(k_{n+1})) / (h g(k_n))``.
    ``data`` lists completed boundary data at every partition node.
    """
    if form not in Q_BOUNDARY_FORMS:
        raise ValidationError(f"unknown q boundary form {form!r}; choose from {Q_BOUNDARY_FORMS}")
    if len(data) != len(partition):
        raise ValidationError("need boundary data at every partition node")
    if not 0 <= n < len(partition) - 1:
        raise ValidationError(f"boundary_q needs 0 <= n < N, got n={n}")
    g0, g1 = data[n], data[n + 1]
    if g0.grid != g1.grid:
        raise ValidationError("boundary data live on different grids")
    mask = g0.mask
    bad = mask & ((np.abs(g0.values) == 0) | ((np.abs(g1.values) == 0) & (form == "log")))
    if bad.any():
        loc = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(f"boundary data vanish at node {loc} (k = {partition[n]:.4f})")
    out = np.zeros(g0.grid.counts, complex)
    a, b = g0.values[mask], g1.values[mask]
    if form == "log":
        out[mask] = np.log(a / b) / partition.step
    else:
        out[mask] = (a - b) / (partition.step * a)
    return out


def initial_tail(data, partition, conv=WaveConvention.MINUS, q_form="log"):
    """First approximation of ``grad V`` from the data at the highest wavenumber.

    On the measurement face the trace ``V ~ k_0 q(k_0)`` supplies the in-plane
    components by finite differences and the normal component by a one-sided
    difference of its harmonic extension; elsewhere the incident-wave value
    ``(0, 0, +-i k_0)`` is used.  Each component is then extended harmonically.
    """
    conv = WaveConvention.parse(conv)
    grid = data[0].grid
    h = grid.spacing
    k0 = partition[0]
    trace = k0 * boundary_q(data, partition, 0, q_form)
    ext = solve_laplace_dirichlet(trace, h)
    R = [np.zeros(grid.counts, complex) for _ in range(3)]
    R[2][...] = 1j * conv.sign * k0
    face = trace[:, :, 0]
    R[0][:, :, 0], R[1][:, :, 0] = np.gradient(face, h[0], h[1], edge_order=2)
    R[2][:, :, 0] = (-3 * ext[:, :, 0] + 4 * ext[:, :, 1] - ext[:, :, 2]) / (2 * h[2])
    comps = [solve_laplace_dirichlet(r, h) for r in R]
    return TailField.from_gradient(grid, comps)


def q_coefficients(tail, Q, spacing):
    """Convection field ``b = grad V - grad Q`` and the right-hand side of the q-equation."""
    gQ = gradient(Q, spacing)
    b = tuple(gv - gq for gv, gq in zip(tail.arrays(), gQ))
    rhs = -laplacian(Q, spacing) + tail.div.values + sum(x * x for x in b)
    return b, rhs


def solve_q_bvp(tail, Q, k_n, boundary, tol=1e-8):
    """``q_n`` from the linearized q-equation with Dirichlet data ``boundary``."""
    grid = tail.grid
    Q = np.asarray(Q.values if isinstance(Q, ComplexVolume) else Q)
    b, rhs = q_coefficients(tail, Q, grid.spacing)
    q = solve_convection_diffusion(grid, k_n, b, rhs, boundary, tol=tol)
    return ComplexVolume(grid, q)


def update_v_and_c(q, Q, tail, k_n, step):
    """``grad v`` of the current iterate and the raw complex coefficient.

    ``grad v = -(h grad q + grad Q) + grad V`` and
    ``c = -(lap v + grad v . grad v) / k_n^2`` on interior nodes.
    """
    grid = tail.grid
    sp = grid.spacing
    q = np.asarray(q.values if isinstance(q, ComplexVolume) else q)
    Q = np.asarray(Q.values if isinstance(Q, ComplexVolume) else Q)
    gq = gradient(q, sp)
    gQ = gradient(Q, sp)
    gv = tuple(-(step * a + b) + c for a, b, c in zip(gq, gQ, tail.arrays()))
    lap_v = -(step * laplacian(q, sp) + laplacian(Q, sp)) + tail.div.values
    c = -(lap_v + sum(x * x for x in gv)) / k_n ** 2
    return gv, c


def search_region(grid, footprint_mask, z_star=None, z_max=1.0):
    """Nodes of ``footprint x (z*, z_max)`` strictly inside the grid."""
    mask2 = np.asarray(footprint_mask, bool)
    if mask2.shape != tuple(grid.counts[:2]):
        raise ValidationError("footprint mask does not match the transverse grid")
    z = grid.axes()[2]
    z_star = grid.origin[2] if z_star is None else z_star
    zsel = (z > z_star + 1e-12) & (z < z_max)
    region = mask2[:, :, None] & zsel[None, None, :]
    region &= ~grid.boundary_mask()
    return region


def truncate_c(raw, region, grid=None, c_max=C_MAX_DEFAULT, smooth=True, sigma=0.65):
    """``max(|c|, 1)`` on ``region`` and 1 elsewhere, then smoothed and clipped.

    Smoothing acts on ``c - 1`` and the result is reset to 1 outside
    ``region`` so the coefficient keeps its support.
    """
    raw = np.asarray(raw.values if isinstance(raw, ComplexVolume) else raw)
    region = np.asarray(region, bool)
    c = np.where(region, np.maximum(np.abs(raw), 1.0), 1.0)
    if smooth:
        c = 1 + smooth_array(c - 1, sigma)
        c = np.where(region, c, 1.0)
    c = np.clip(c, 1.0, c_max)
    return c if grid is None else Coefficient(grid, c, c_max)


def update_tail(c, k0, conv=WaveConvention.MINUS, cfg=LSConfig(), guard=1e-6, full_output=False):
    """``grad V = grad u / u`` for the total field at ``k0`` of coefficient ``c``.

    Nodes where ``|u| < guard * max|u|`` take the value of the nearest
    unguarded node.  With ``full_output`` also returns the forward-solve
    result and the number of guarded nodes.
    """
    res = solve_lippmann_schwinger(c, k0, conv, cfg, full_output=True)
    u = res.field.values
    grads = field_gradient(res.field, c, k0, conv, cfg.padding_factor)
    small = np.abs(u) < guard * np.abs(u).max()
    safe_u = np.where(small, 1.0, u)
    comps = [g / safe_u for g in grads]
    if small.any():
        if small.all():
            raise ConvergenceError("total field vanishes everywhere", context={"k": k0})
        log.warning("tail guard active at %d nodes", int(small.sum()))
        idx = distance_transform_edt(small, return_distances=False, return_indices=True)
        comps = [a[tuple(idx)] for a in comps]
    # lap V = lap u / u - |grad V|^2 and lap u = -k0^2 c u: no differencing of
    # grad u / u, which varies too fast near interference minima of |u|
    div = -k0 ** 2 * c.values - sum(a * a for a in comps)
    tail = TailField.from_gradient(c.grid, comps, div)
    if full_output:
        return tail, res, int(small.sum())
    return tail


# --- driver -----------------------------------------------------------------

@dataclass(frozen=True)
class InversionConfig:
    max_inner: int = 3
    inner_tol: float = 1e-6
    outer_tol: float = 5e-4
    outer_run: int = 3
    max_outer: int = 5
    linear_tol: float = 1e-8
    guard: float = 1e-6
    c_max: float = C_MAX_DEFAULT
    smooth: bool = True
    sigma: float = 0.65
    z_max: float = 1.0
    conv: WaveConvention = WaveConvention.MINUS
    ls: LSConfig = LSConfig()
    q_boundary: str = "log"

    def __post_init__(self):
        if self.max_inner < 2:
            raise ValidationError("max_inner must be at least 2")
        if self.max_outer < 2:
            raise ValidationError("max_outer must be at least 2")
        for name in ("inner_tol", "outer_tol", "linear_tol", "guard"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        object.__setattr__(self, "conv", WaveConvention.parse(self.conv))
        if self.q_boundary not in Q_BOUNDARY_FORMS:
            raise ValidationError(f"q_boundary must be one of {Q_BOUNDARY_FORMS}")


@dataclass(eq=False)
class InversionResult:
    coefficient: Coefficient
    converged: bool
    sweeps: int
    window: tuple
    records: list

    @property
    def max_c(self):
        return float(self.coefficient.values.max())


def _best_window(state, last, run):
    best = None
    for n in range(1, last):
        seq = state.pair_sequence(n)
        for j in range(len(seq) - run + 1):
            worst = max(e for e, _ in seq[j:j + run])
            if best is None or worst < best[0]:
                best = (worst, n, j, seq[j:j + run])
    return best


def run_inversion(data, region, partition, cfg=InversionConfig()):
    """Reconstruct the coefficient from completed boundary data.

    Parameters
    ----------
    data : sequence of BoundaryData
        Completed total-field data at each node of ``partition`` (highest first).
    region : ndarray of bool
        Nodes where the coefficient may differ from 1 (see :func:`search_region`).
    partition : WavenumberPartition
    cfg : InversionConfig

    Returns
    -------
    InversionResult
        The averaged coefficient of the accepted error window, whether the
        outer stopping rule fired, and one diagnostic record per iteration.
    """
    if not isinstance(partition, WavenumberPartition):
        raise ValidationError("partition must be a WavenumberPartition")
    if len(data) != len(partition):
        raise ValidationError("need boundary data at every partition node")
    n_sweeps = min(len(partition) - 2, cfg.max_outer)
    if n_sweeps < 2:
        raise ValidationError("the partition needs N >= 3 so that two sweeps can be compared")
    grid = data[0].grid
    region = np.asarray(region, bool)
    if region.shape != tuple(grid.counts):
        raise ValidationError("search region does not match the data grid")
    h = partition.step
    k0 = partition[0]
    conv = cfg.conv

    tail = initial_tail(data, partition, conv, cfg.q_boundary)
    qs = QSequence(grid, h)
    state = StoppingState()
    records = []
    prev_c = None
    done = None
    for n in range(1, n_sweeps + 1):
        k_n = partition[n]
        bq = boundary_q(data, partition, n, cfg.q_boundary)
        i = 0
        while True:
            i += 1
            try:
                q = solve_q_bvp(tail, qs.Q, k_n, bq, tol=cfg.linear_tol)
                _, raw = update_v_and_c(q, qs.Q, tail, k_n, h)
                c = truncate_c(raw, region, grid, cfg.c_max, cfg.smooth, cfg.sigma)
                tail, ls, guarded = update_tail(c, k0, conv, cfg.ls, cfg.guard, full_output=True)
            except (ConvergenceError, ValidationError) as err:
                err.args = (f"sweep {n}, inner {i}: {err.args[0]}",) + err.args[1:]
                if isinstance(err, ConvergenceError):
                    err.context["records"] = records
                raise
            err = None if prev_c is None else relative_change(c.values, prev_c)
            state.record(n, i, err, c.values)
            rec = {
                "n": n, "i": i, "k": k_n, "error": err,
                "max_c": float(c.values.max()),
                "imag_max": float(np.abs(raw.imag[region]).max()) if region.any() else 0.0,
                "min_abs_u": ls.min_abs_u, "ls_residual": ls.residual,
                "ls_iterations": ls.iterations, "guarded_nodes": guarded,
            }
            records.append(rec)
            log.info("sweep %d inner %d: k=%.4f error=%s max c=%.4f", n, i, k_n,
                     "-" if err is None else f"{err:.3e}", rec["max_c"])
            prev_c = c.values
            if i >= 2 and inner_stop(i, err, cfg.inner_tol, cfg.max_inner):
                break
        qs.accept(q.values)
        if n >= 2:
            seq = state.pair_sequence(n - 1)
            j = outer_window([e for e, _ in seq], cfg.outer_tol, cfg.outer_run)
            if j is not None:
                done = (n - 1, j, seq[j:j + cfg.outer_run])
                break

    converged = done is not None
    if not converged:
        best = _best_window(state, n_sweeps, cfg.outer_run)
        done = best[1:]
        log.warning("outer stopping rule not met within %d sweeps", n_sweeps)
    pair, start, window = done
    avg = np.mean([c for _, c in window], axis=0)
    coef = Coefficient(grid, np.clip(avg, 1.0, cfg.c_max), cfg.c_max)
    return InversionResult(coef, converged, n, (pair, start), records)
