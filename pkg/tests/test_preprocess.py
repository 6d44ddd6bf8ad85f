import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from helmgc.core import (Coefficient, ComplexVolume, FlatResponseError, Grid2D, Grid3D,
                         NoStableIntervalError, PlaneData, ValidationError, WaveConvention,
                         ghz_to_k)
from helmgc.forward import green_function, scattered_on_plane, solve_lippmann_schwinger
from helmgc.phantom import Inclusion, Phantom, preset
from helmgc.preprocess import (MultiFrequencyData, complete_boundary_data, estimate_z_star,
                               gaussian_kernel, gaussian_smooth, incident_trace,
                               interval_wavenumber_data, propagate_all, resample_plane,
                               select_stable_interval, select_stable_run, subtract_reference,
                               target_footprint, truncate_plane, z_scan)
from helmgc.propagation import propagate

MINUS = WaveConvention.MINUS
G = Grid2D.from_bounds((-1, -1), (1, 1), (9, 9), 0.0)


def mfd(values, freqs=None):
    values = np.asarray(values, complex)
    freqs = np.linspace(2.0, 3.0, len(values)) if freqs is None else freqs
    return MultiFrequencyData(G, freqs, values)


def bump(center, width=0.3, grid=G, amp=1.0):
    X, Y = grid.mesh()
    return amp * np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2 * width ** 2))


# --- containers -------------------------------------------------------------------

def test_multi_frequency_validation():
    with pytest.raises(ValidationError):
        mfd(np.zeros((3, 9, 9)), [2.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        mfd(np.zeros((3, 9, 8)))
    d = mfd(np.ones((3, 9, 9)))
    assert len(d) == 3 and d.plane(1).wavenumber == pytest.approx(ghz_to_k(2.5))


# --- subtraction --------------------------------------------------------------------

def test_subtract_identical_gives_zero():
    d = mfd(np.random.default_rng(1).standard_normal((3, 9, 9)))
    np.testing.assert_array_equal(subtract_reference(d, d).values, 0)


def test_subtract_zero_reference_is_identity():
    d = mfd(np.random.default_rng(2).standard_normal((3, 9, 9)))
    np.testing.assert_array_equal(subtract_reference(d, mfd(np.zeros((3, 9, 9)))).values, d.values)


def test_subtract_rejects_mismatch():
    a = mfd(np.zeros((3, 9, 9)))
    with pytest.raises(ValidationError):
        subtract_reference(a, mfd(np.zeros((3, 9, 9)), [2.0, 2.5, 3.5]))
    other = MultiFrequencyData(G.at_z(1.0), a.frequencies, a.values)
    with pytest.raises(ValidationError):
        subtract_reference(a, other)


# integer-valued samples make float addition exact, so the inverse is bitwise
@given(arrays(np.int32, (2, 9, 9), elements=st.integers(-2**20, 2**20)),
       arrays(np.int32, (2, 9, 9), elements=st.integers(-2**20, 2**20)))
def test_subtract_inverts_adding_the_reference(a, r):
    x = a + 1j * np.flip(a)
    ref = r - 1j * r
    total = mfd(x + ref, [2.0, 3.0])
    out = subtract_reference(total, mfd(ref, [2.0, 3.0]))
    np.testing.assert_array_equal(out.values, x)


def test_subtraction_isolates_a_weak_target():
    k = 4.0
    plane = Grid2D.from_bounds((-2, -2), (2, 2), (11, 11), -3.0)
    grid = Grid3D.cell_centered((-1, -1, 0), (1, 1, 1.5), (16, 16, 12))
    sand = Inclusion("box", (0, 0, 1.25), (1.0, 1.0, 0.25), 1.03)
    target = Inclusion("ball", (0.3, 0, 0.4), (0.3,), 1.05)

    def data(*incs):
        c = Phantom(incs).rasterize(grid)
        return scattered_on_plane(solve_lippmann_schwinger(c, k), c, k, plane).values

    both, sand_only, alone = data(sand, target), data(sand), data(target)
    assert np.linalg.norm(both - sand_only - alone) / np.linalg.norm(alone) < 0.10


# --- stable interval ------------------------------------------------------------------

def test_identical_planes_select_everything():
    d = mfd(np.stack([bump((0.2, 0.1))] * 5))
    iv = select_stable_interval(d)
    assert (iv.start, iv.stop, iv.optimal) == (0, 5, 2)
    assert iv.optimal_frequency == d.frequencies[2]



def test_alternating_maxima_are_rejected():
    planes = [bump((0, 0), amp=1.0 if i % 2 else 2.0) for i in range(6)]
    with pytest.raises(NoStableIntervalError):
        select_stable_interval(mfd(planes))


def test_wandering_maximum_breaks_the_run():
    planes = [bump((0, 0))] * 3 + [bump((0.75, 0.75))] * 4
    iv = select_stable_interval(mfd(planes))
    assert (iv.start, iv.stop) == (3, 7)


def test_even_run_takes_lower_middle():
    peaks = np.ones(6)
    where = np.zeros((6, 2), int)
    assert select_stable_run(peaks, where) == (0, 6, 2)


def test_longest_run_wins_and_ties_go_low():
    peaks = np.array([1, 1, 1, 5, 5, 5, 25, 25, 25, 25], float)
    where = np.zeros((10, 2), int)
    assert select_stable_run(peaks, where)[:2] == (6, 10)
    peaks = np.array([1, 1, 1, 5, 5, 5], float)
    assert select_stable_run(peaks, where[:6])[:2] == (0, 3)


def test_max_count_centres_on_the_median():
    assert select_stable_run(np.ones(11), np.zeros((11, 2), int), max_count=5) == (3, 8, 5)


def test_too_few_frequencies():
    with pytest.raises(NoStableIntervalError):
        select_stable_run(np.ones(2), np.zeros((2, 2), int))


@given(st.lists(st.floats(0.1, 10), min_size=3, max_size=12), st.complex_numbers(min_magnitude=0.01, max_magnitude=100))
def test_stable_interval_scale_invariant(amps, scale):
    if scale == 0:
        return
    planes = np.stack([bump((0.25 * (i % 3 == 0), 0), amp=a) for i, a in enumerate(amps)])
    d = mfd(planes)
    try:
        ref = select_stable_interval(d)
    except NoStableIntervalError:
        with pytest.raises(NoStableIntervalError):
            select_stable_interval(mfd(planes * scale))
        return
    assert select_stable_interval(mfd(planes * scale)) == ref


# --- truncation and smoothing ---------------------------------------------------------

def test_truncate_fraction_one_keeps_the_peak():
    p = PlaneData(G, 1.0, bump((0.25, 0.25)))
    out = truncate_plane(p, 1.0)
    assert np.count_nonzero(out.values) == 1
    assert np.abs(out.values).max() == np.abs(p.values).max()


def test_truncate_drops_the_weaker_bump():
    vals = bump((-0.5, 0), 0.15) + bump((0.5, 0), 0.15, amp=0.5)
    out = truncate_plane(PlaneData(G, 1.0, vals), 0.8)
    X, _ = G.mesh()
    assert np.all(out.values[X > 0] == 0)
    assert np.any(out.values[X < 0] != 0)


def test_truncate_rejects_zero_and_bad_fraction():
    with pytest.raises(ValidationError):
        truncate_plane(PlaneData(G, 1.0, np.zeros((9, 9))))
    with pytest.raises(ValidationError):
        truncate_plane(PlaneData(G, 1.0, np.ones((9, 9))), 1.5)


@given(arrays(np.complex128, (9, 9), elements=st.complex_numbers(max_magnitude=5)),
       st.floats(0.05, 1.0))
def test_truncation_support_and_max(vals, fraction):
    if np.abs(vals).max() == 0:
        return
    out = truncate_plane(PlaneData(G, 1.0, vals), fraction)
    assert np.all((out.values != 0) <= (vals != 0))
    assert np.abs(out.values).max() == np.abs(vals).max()


def test_truncated_point_scatterer_data_surround_the_target():
    k, src = 5.5, np.array([0.6, -0.4, 0.5])
    g = Grid2D.from_bounds((-5, -5), (5, 5), (51, 51), -8.78)
    X, Y = g.mesh()
    r = np.sqrt((X - src[0]) ** 2 + (Y - src[1]) ** 2 + (g.z_level - src[2]) ** 2)
    near = propagate(PlaneData(g, k, green_function(k, r, MINUS)), -0.8, MINUS)
    kept = truncate_plane(near, 0.8).values != 0
    labels, count = ndimage.label(kept)
    assert count == 1
    cx, cy = X[kept].mean(), Y[kept].mean()
    assert np.hypot(cx - src[0], cy - src[1]) <= g.spacing[0]


def test_gaussian_kernel_has_unit_gain():
    w = gaussian_kernel()
    assert w.sum() == pytest.approx(1.0, abs=1e-15) and len(w) == 3 and w[1] > w[0] == w[2]


def test_smoothing_keeps_constants():
    p = PlaneData(G, 1.0, np.full((9, 9), 2 - 3j))
    np.testing.assert_allclose(gaussian_smooth(p).values, p.values, rtol=1e-15)


def test_smoothing_spreads_a_spike():
    vals = np.zeros((9, 9))
    vals[4, 4] = 1.0
    out = gaussian_smooth(PlaneData(G, 1.0, vals)).values
    assert out.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.abs(out).max() < 1.0


def test_smoothing_reduces_white_noise_variance(rng):
    noise = rng.standard_normal((1000, 9, 9)) + 1j * rng.standard_normal((1000, 9, 9))
    smoothed = np.stack([gaussian_smooth(PlaneData(G, 1.0, n)).values for n in noise])
    assert smoothed.var() < noise.var()
    assert np.all(smoothed.reshape(1000, -1).var(axis=1) < noise.reshape(1000, -1).var(axis=1))


def test_smoothing_volumes_and_coefficients():
    g3 = Grid3D((0, 0, 0), (1, 1, 1), (5, 5, 5))
    v = np.ones((5, 5, 5))
    v[2, 2, 2] = 3.0
    c = gaussian_smooth(Coefficient(g3, v))
    assert isinstance(c, Coefficient) and c.values.min() >= 1 and c.values.max() < 3
    cv = gaussian_smooth(ComplexVolume(g3, v + 0j))
    assert isinstance(cv, ComplexVolume)


# --- localisation ------------------------------------------------------------------------

def test_z_star_of_zero_data_is_flat():
    with pytest.raises(FlatResponseError):
        estimate_z_star(PlaneData(G.at_z(-8.78), 5.5, np.zeros((9, 9))), 5.5)


def test_z_star_rejects_bad_range():
    with pytest.raises(ValidationError):
        estimate_z_star(PlaneData(G, 5.5, np.ones((9, 9))), 5.5, (1.0, -1.0))


def test_z_star_matches_a_brute_force_scan():
    k = 5.5
    g = Grid2D.from_bounds((-5, -5), (5, 5), (51, 51), -8.78)
    X, Y = g.mesh()
    vals = 0
    for src, amp in (((0.5, 0, -1.0), 1.0), ((-0.5, 0, 1.0), 1.0)):
        r = np.sqrt((X - src[0]) ** 2 + (Y - src[1]) ** 2 + (g.z_level - src[2]) ** 2)
        vals = vals + amp * green_function(k, r, MINUS)
    p = PlaneData(g, k, vals)
    zs = np.round(np.arange(-35, 36) * 0.1, 10)
    brute = [np.abs(propagate(p, z, MINUS).values).max() for z in zs]
    assert estimate_z_star(p, k, (-3.5, 3.5), MINUS) == zs[int(np.argmax(brute))]


def test_z_star_tie_goes_to_the_nearer_plane(monkeypatch):
    import helmgc.preprocess as pp

    monkeypatch.setattr(pp, "z_scan", lambda plane, zs, conv, pad: np.where(np.isclose(np.abs(zs), 1.0), 2.0, 1.0))
    z = estimate_z_star(PlaneData(G.at_z(-8.78), 5.5, np.ones((9, 9))), 5.5, (-3.5, 3.5), MINUS)
    assert z == -1.0


def test_z_star_of_a_buried_cube():
    cfg_plane = Grid2D.from_bounds((-5, -5), (5, 5), (51, 51), -8.78)
    k = ghz_to_k(2.7458)
    ph = preset("object6")
    c = ph.rasterize(ph.simulation_grid(0.05))
    sc = scattered_on_plane(solve_lippmann_schwinger(c, k, MINUS), c, k, cfg_plane, MINUS)
    z = estimate_z_star(sc, k, (-3.5, 3.5), MINUS)
    assert -1.0 <= z <= -0.4
    near = gaussian_smooth(truncate_plane(propagate(sc, z, MINUS)))
    fp = target_footprint(near, k)
    cx, cy = fp.centroid()
    assert abs(cx - 0.5) <= 0.2 and abs(cy + 0.5) <= 0.2


def test_footprint_of_a_bump_is_a_disk():
    g = Grid2D.from_bounds((-1, -1), (1, 1), (41, 41), 0.0)
    X, Y = g.mesh()
    fp = target_footprint(PlaneData(g, 1.0, bump((0, 0), 0.4, g)))
    expected = np.exp(-(X ** 2 + Y ** 2) / (2 * 0.16)) > 0.7
    np.testing.assert_array_equal(fp.mask, expected)


def test_footprint_threshold_is_strict():
    vals = np.zeros((9, 9))
    vals[4, 4] = 1.0
    vals[0, 0] = 0.7
    fp = target_footprint(PlaneData(G, 1.0, vals), threshold=0.7)
    assert fp.mask.sum() == 1 and fp.mask[4, 4]


@given(arrays(np.complex128, (9, 9), elements=st.complex_numbers(max_magnitude=5)),
       st.complex_numbers(min_magnitude=0.01, max_magnitude=50))
def test_footprint_scale_invariant(vals, scale):
    if np.abs(vals).max() == 0 or scale == 0:
        return
    a = target_footprint(PlaneData(G, 1.0, vals)).mask
    b = target_footprint(PlaneData(G, 1.0, vals * scale)).mask
    # nodes sitting within rounding of the threshold may flip
    near = np.isclose(np.abs(vals), 0.7 * np.abs(vals).max(), rtol=1e-12)
    np.testing.assert_array_equal(a[~near], b[~near])


def test_footprint_rejects_zero():
    with pytest.raises(ValidationError):
        target_footprint(PlaneData(G, 1.0, np.zeros((9, 9))))


# --- completion ---------------------------------------------------------------------------

OMEGA = Grid3D.from_bounds((-1, -1, -0.6), (1, 1, 1.4), (9, 9, 9))


def test_completion_far_face_is_incident():
    k = 5.5
    g = PlaneData(OMEGA.face_grid(2, 0), k, np.full((9, 9), 3.0 + 1j))
    b = complete_boundary_data(g, OMEGA, k, MINUS)
    np.testing.assert_allclose(b.values[:, :, -1], np.exp(-1j * k * 1.4))
    np.testing.assert_array_equal(b.values[:, :, 0], g.values)


def test_completion_of_background_equals_incident_trace():
    k = 5.5
    g = PlaneData(OMEGA.face_grid(2, 0), k, np.full((9, 9), np.exp(-1j * k * -0.6)))
    b = complete_boundary_data(g, OMEGA, k, MINUS)
    trace = incident_trace(OMEGA, k, MINUS)
    mask = OMEGA.boundary_mask()
    np.testing.assert_allclose(b.values[mask], trace[mask], rtol=1e-15)


def test_completion_rejects_face_mismatch():
    g = PlaneData(OMEGA.face_grid(2, 1), 5.5, np.ones((9, 9)))
    with pytest.raises(ValidationError):
        complete_boundary_data(g, OMEGA, 5.5, MINUS)


@given(arrays(np.complex128, (9, 9), elements=st.complex_numbers(max_magnitude=5)))
def test_completion_is_identity_on_the_measured_face(vals):
    g = PlaneData(OMEGA.face_grid(2, 0), 5.0, vals)
    np.testing.assert_array_equal(complete_boundary_data(g, OMEGA).values[:, :, 0], vals)


# --- helpers -------------------------------------------------------------------------------

def test_interval_data_interpolates_linearly_in_k():
    vals = np.stack([np.full((9, 9), v) for v in (1.0, 3.0, 7.0)])
    d = mfd(vals, [2.0, 2.5, 3.0])
    ks = d.wavenumbers
    planes = interval_wavenumber_data(d, [ks[2], (ks[0] + ks[1]) / 2, ks[0]])
    assert planes[0].values[0, 0] == 7.0 and planes[2].values[0, 0] == 1.0
    assert planes[1].values[0, 0] == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        interval_wavenumber_data(d, [ks[2] + 0.1])


def test_resample_onto_the_same_grid_is_identity():
    vals = np.random.default_rng(4).standard_normal((9, 9)) + 0j
    out = resample_plane(PlaneData(G, 1.0, vals), G)
    np.testing.assert_allclose(out.values, vals, atol=1e-14)


def test_propagate_all_keeps_frequencies():
    d = mfd(np.stack([bump((0, 0))] * 3))
    out = propagate_all(d, 1.0, MINUS)
    np.testing.assert_array_equal(out.frequencies, d.frequencies)
    assert out.grid.z_level == 1.0
