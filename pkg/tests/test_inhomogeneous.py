import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import simpson
from scipy.optimize import brentq

from specdiff.inhomogeneous import (
    FWHM_PER_SIGMA,
    InhomDistribution,
    QuadratureSpec,
    RegimeWarning,
    averaged_count_rate,
    bunching_asymptote,
    bunching_asymptote_narrow_line,
    g2_diffusive,
    g2_diffusive_general,
    scan_fwhm,
)
from specdiff.tls import (
    DriveParams,
    EmitterParams,
    g2_homogeneous,
    homogeneous_fwhm,
    homogeneous_halfwidth,
    steady_state_population,
)

from conftest import INHOM_FWHM, T1, T2


def brute_bunching(drive, emitter, dist, nodes=100001):
    """Direct Simpson quadrature of <I^2>/<I>^2 on one uniform grid."""
    sig = dist.sigma
    x = np.linspace(-12 * sig, 12 * sig, nodes)
    p = np.exp(-0.5 * (x / sig) ** 2)
    c = steady_state_population(drive, emitter, x)
    return simpson(p * c * c, x=x) * simpson(p, x=x) / simpson(p * c, x=x) ** 2


def brute_g2_flat(tau, drive, emitter, half_range, nodes):
    d = np.linspace(-half_range, half_range, nodes)
    w = steady_state_population(drive, emitter, d) ** 2
    g = g2_homogeneous(np.atleast_1d(tau)[:, None], d[None, :], drive, emitter)
    return simpson(g * w, x=d, axis=1) / simpson(w, x=d)


def broad_emitter(t2_over_t1=1.0):
    return EmitterParams(T1, t2_over_t1 * T1, inhom_fwhm=math.inf)


# --- distributions and quadrature settings ------------------------------------

def test_quadrature_spec_validation():
    QuadratureSpec(5.0, 101)
    for span, nodes in [(4.9, 801), (8.0, 100), (8.0, 99), (8.0, 802)]:
        with pytest.raises(ValueError):
            QuadratureSpec(span, nodes)
    assert QuadratureSpec(8.0, 801).doubled().nodes == 1601


def test_gaussian_distribution():
    d = InhomDistribution.gaussian(INHOM_FWHM)
    assert d.sigma * FWHM_PER_SIGMA == pytest.approx(2 * math.pi * INHOM_FWHM)
    x = np.linspace(-10 * d.sigma, 10 * d.sigma, 20001)
    assert simpson(d.pdf(x), x=x) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        InhomDistribution.gaussian(0.0)


def test_tabulated_is_renormalized():
    f = np.linspace(-5, 5, 11)
    d = InhomDistribution.tabulated(f, 3.0 * np.exp(-f ** 2))
    assert np.trapezoid(d.density, d.freqs) == pytest.approx(1.0, abs=1e-12)
    for bad in [(f[::-1], np.ones(11)), (f, -np.ones(11)), (f, np.zeros(11)), (f[:1], np.ones(1))]:
        with pytest.raises(ValueError):
            InhomDistribution.tabulated(*bad)


def test_tabulated_sampling_follows_density():
    f = np.array([0.0, 1.0, 2.0, 4.0])
    p = np.array([0.0, 2.0, 1.0, 0.0])
    d = InhomDistribution.tabulated(f, p)
    x = d.sample(np.random.default_rng(3), 200000)

    def cdf(v):
        grid = np.linspace(0, 4, 4001)
        c = np.concatenate([[0], np.cumsum(0.5 * (d.pdf(grid[1:]) + d.pdf(grid[:-1])) * np.diff(grid))])
        return np.interp(v, grid, c)

    assert stats.kstest(x, cdf).pvalue > 0.01


def test_gaussian_sampling_ks():
    d = InhomDistribution.gaussian(INHOM_FWHM)
    x = d.sample(np.random.default_rng(5), 100000)
    assert stats.kstest(x, stats.norm(scale=d.sigma).cdf).pvalue > 0.01


def test_delta_distribution():
    d = InhomDistribution.delta()
    assert np.all(d.sample(np.random.default_rng(0), 10) == 0)
    with pytest.raises(ValueError):
        d.pdf(0.0)
    assert InhomDistribution.from_emitter(EmitterParams(T1, T2)).kind == "delta"


# --- averaged count rate ----------------------------------------------------------

def test_narrow_distribution_reduces_to_single_emitter(ref_emitter):
    d = DriveParams.from_saturation(1.0, ref_emitter)
    narrow = InhomDistribution.gaussian(1e-6 * homogeneous_fwhm(d, ref_emitter))
    for ell in (0.0, 2e8, -5e8):
        ref = steady_state_population(d, ref_emitter, ell)
        got = averaged_count_rate(d, ref_emitter, narrow, laser_freq=ell, check=False)
        assert got == pytest.approx(ref, rel=1e-4)
        assert averaged_count_rate(d, ref_emitter, InhomDistribution.delta(), laser_freq=ell) == ref


@pytest.mark.parametrize("s", [0.01, 1.0, 100.0])
def test_averaged_rate_symmetric_and_bounded(ref_emitter, ref_dist, s):
    d = DriveParams.from_saturation(s, ref_emitter)
    for ell in (1e9, 3e10):
        plus = averaged_count_rate(d, ref_emitter, ref_dist, laser_freq=ell)
        minus = averaged_count_rate(d, ref_emitter, ref_dist, laser_freq=-ell)
        assert plus == pytest.approx(minus, rel=1e-9)
    assert averaged_count_rate(d, ref_emitter, ref_dist) <= 0.5


def test_averaged_rate_against_brute_quadrature(ref_emitter, ref_dist):
    d = DriveParams.from_saturation(0.3, ref_emitter)
    sig = ref_dist.sigma
    x = np.linspace(-12 * sig, 12 * sig, 200001)
    ref = simpson(ref_dist.pdf(x) * steady_state_population(d, ref_emitter, x), x=x)
    assert averaged_count_rate(d, ref_emitter, ref_dist) == pytest.approx(ref, rel=1e-8)


def test_broad_line_rate_grows_like_s_over_sqrt_one_plus_s(ref_emitter, ref_dist):
    # Lorentzian area scales as S / sqrt(1 + S); the Gaussian is much wider than the line
    def rate(s):
        return averaged_count_rate(DriveParams.from_saturation(s, ref_emitter), ref_emitter, ref_dist)

    r0 = rate(1e-4) / 1e-4
    for s, frozen in ((0.1, 0.95257), (0.3, 0.87463), (1.0, 0.70127)):
        rel = rate(s) / (r0 * s)
        assert rel == pytest.approx(frozen, abs=2e-5)
        assert rel == pytest.approx(1 / math.sqrt(1 + s), rel=1e-2)


def test_saturation_half_maximum_point(ref_emitter, ref_dist):
    def f(ls):
        d = DriveParams.from_saturation(10 ** ls, ref_emitter)
        return 2 * averaged_count_rate(d, ref_emitter, ref_dist) - 0.5

    s_half = 10 ** brentq(f, 1, 4, xtol=1e-10)
    assert s_half == pytest.approx(573.72, rel=1e-4)


@pytest.mark.xfail(strict=True, reason="half-maximum sits at S = 574, 73% below the (pi dnu T2)^2 - 1 estimate")
def test_saturation_knee_estimate_within_20_percent(ref_emitter, ref_dist):
    def f(ls):
        d = DriveParams.from_saturation(10 ** ls, ref_emitter)
        return 2 * averaged_count_rate(d, ref_emitter, ref_dist) - 0.5

    s_half = 10 ** brentq(f, 1, 4, xtol=1e-10)
    knee = (math.pi * INHOM_FWHM * T2) ** 2 - 1
    assert abs(s_half / knee - 1) <= 0.2


# --- scan linewidth ------------------------------------------------------------------

def test_scan_fwhm_homogeneous_limit(ref_emitter):
    em = EmitterParams(T1, T2)
    for s in (0.01, 1.0, 3.0, 99.0):
        d = DriveParams.from_saturation(s, em)
        assert scan_fwhm(d, em, InhomDistribution.delta()) == pytest.approx(homogeneous_fwhm(d, em), rel=1e-12)
    d = DriveParams.from_saturation(1.0, em)
    narrow = InhomDistribution.gaussian(1e-6 * homogeneous_fwhm(d, em))
    assert scan_fwhm(d, em, narrow) == pytest.approx(homogeneous_fwhm(d, em), rel=1e-3)


def test_scan_fwhm_broad_line(ref_emitter, ref_dist):
    d = DriveParams.from_saturation(1.0, ref_emitter)
    w = scan_fwhm(d, ref_emitter, ref_dist)
    assert w == pytest.approx(INHOM_FWHM, rel=0.02)
    assert w / INHOM_FWHM == pytest.approx(1.01648, rel=1e-4)
    assert w >= max(homogeneous_fwhm(d, ref_emitter), 0.9 * INHOM_FWHM)


def test_scan_fwhm_power_broadening_dominates(ref_emitter, ref_dist):
    d = DriveParams.from_saturation(1e9, ref_emitter)
    hom = homogeneous_fwhm(d, ref_emitter)
    assert hom > 100 * INHOM_FWHM
    assert scan_fwhm(d, ref_emitter, ref_dist) == pytest.approx(hom, rel=2e-3)


def test_scan_fwhm_tabulated_off_center():
    em = EmitterParams(T1, T2)
    d = DriveParams.from_saturation(1.0, em)
    sig = 2 * math.pi * 1e9
    f = np.linspace(-4 * sig, 4 * sig, 801) + 3 * sig
    tab = InhomDistribution.tabulated(f, np.exp(-0.5 * ((f - 3 * sig) / sig) ** 2))
    ref = scan_fwhm(d, em, InhomDistribution.gaussian(1e9 * FWHM_PER_SIGMA))
    assert scan_fwhm(d, em, tab) == pytest.approx(ref, rel=1e-3)


# --- diffusion-averaged g2 ----------------------------------------------------------

def test_g2_diffusive_endpoints():
    em = broad_emitter()
    d = DriveParams(3 / T1)
    assert g2_diffusive(0.0, d, em) == 0.0
    assert g2_diffusive(40 * T1, d, em) == pytest.approx(1.0, abs=1e-8)
    assert g2_diffusive(-2e-9, d, em) == g2_diffusive(2e-9, d, em)


def test_g2_diffusive_damps_faster_with_shorter_period():
    em = broad_emitter()
    d = DriveParams(3 / T1)
    tau = np.linspace(0, 4 * T1, 4001)
    avg = g2_diffusive(tau, d, em)
    res = g2_homogeneous(tau, 0.0, d, em)

    def first_peak(y):
        i = np.nonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0][0] + 1
        return tau[i], y[i]

    t_avg, y_avg = first_peak(avg)
    t_res, y_res = first_peak(res)
    assert y_avg < y_res
    assert t_avg < t_res


def test_g2_diffusive_matches_wide_brute_force():
    em = broad_emitter()
    d = DriveParams(3 / T1)
    tau = np.array([0.5, 1.0, 2.0, 5.0]) * T1
    gamma = homogeneous_halfwidth(d, em)
    ref = brute_g2_flat(tau, d, em, 4000 * gamma, 2_000_001)
    assert np.allclose(g2_diffusive(tau, d, em), ref, atol=2e-6)


def test_g2_diffusive_quadrature_convergence():
    em = broad_emitter()
    d = DriveParams(3 / T1)
    tau = np.linspace(0, 15e-9, 61)
    coarse = g2_diffusive(tau, d, em, QuadratureSpec(5.0, 101))
    fine = g2_diffusive(tau, d, em, QuadratureSpec(10.0, 401))
    assert np.abs(coarse - fine).max() < 1e-4


def test_g2_diffusive_regime_warning():
    em = EmitterParams(T1, T1, inhom_fwhm=1e8)
    with pytest.warns(RegimeWarning):
        g2_diffusive(1e-9, DriveParams(3 / T1), em)


def test_general_reduces_to_homogeneous_for_delta_and_narrow():
    em = EmitterParams(T1, T1)
    d = DriveParams(3 / T1, laser_freq=2e8)
    tau = np.linspace(0, 10 * T1, 51)
    ref = g2_homogeneous(tau, 2e8, d, em)
    assert np.array_equal(g2_diffusive_general(tau, d, em, InhomDistribution.delta()), ref)
    narrow = InhomDistribution.gaussian(1e-6 * homogeneous_fwhm(d, em))
    assert np.abs(g2_diffusive_general(tau, d, em, narrow) - ref).max() < 1e-4
    assert g2_diffusive_general(0.0, d, em, narrow) == 0.0


@pytest.mark.parametrize("ratio", [10, 30, 100])
def test_general_approaches_flat_measure_as_inverse_square_width(ratio):
    em = broad_emitter()
    d = DriveParams(3 / T1)
    tau = np.linspace(0, 15e-9, 61)
    dist = InhomDistribution.gaussian(ratio * homogeneous_fwhm(d, em))
    diff = np.abs(g2_diffusive_general(tau, d, em, dist) - g2_diffusive(tau, d, em)).max()
    assert diff <= 1.0 / ratio ** 2
    if ratio >= 100:
        assert diff <= 1e-4


@pytest.mark.xfail(strict=True, reason="Gaussian weighting differs from the flat measure by ~0.3/ratio^2 (4e-4 at 30x)")
def test_general_matches_flat_measure_at_thirty_widths():
    em = broad_emitter()
    d = DriveParams(3 / T1)
    tau = np.linspace(0, 15e-9, 61)
    dist = InhomDistribution.gaussian(30 * homogeneous_fwhm(d, em))
    assert np.abs(g2_diffusive_general(tau, d, em, dist) - g2_diffusive(tau, d, em)).max() <= 1e-4


# --- bunching plateau -----------------------------------------------------------------

def test_bunching_low_power_against_brute_quadrature(ref_emitter, ref_dist):
    for s, frozen in ((0.01, 16.147258894883), (0.1, 15.499549917526)):
        d = DriveParams.from_saturation(s, ref_emitter)
        got = bunching_asymptote(d, ref_emitter, ref_dist)
        assert got == pytest.approx(brute_bunching(d, ref_emitter, ref_dist), rel=1e-9)
        assert got == pytest.approx(frozen, rel=1e-10)


def test_narrow_line_limit_is_leading_order(ref_emitter, ref_dist):
    d = DriveParams.from_saturation(0.01, ref_emitter)
    full = bunching_asymptote(d, ref_emitter, ref_dist)
    lead = bunching_asymptote_narrow_line(d, ref_emitter, ref_dist)
    assert lead == pytest.approx(15.5065, rel=1e-4)
    # next order of the Voigt expansion: (1 + 4 z / sqrt(pi)), z = gamma / (sigma sqrt 2)
    z = homogeneous_halfwidth(d, ref_emitter) / (ref_dist.sigma * math.sqrt(2))
    assert full == pytest.approx(lead * (1 + 4 * z / math.sqrt(math.pi)), rel=2e-3)


@pytest.mark.xfail(strict=True, reason="narrow-line closed form is 4.0% below the quadrature value at S = 0.01")
def test_narrow_line_limit_within_two_percent(ref_emitter, ref_dist):
    d = DriveParams.from_saturation(0.01, ref_emitter)
    full = bunching_asymptote(d, ref_emitter, ref_dist)
    assert bunching_asymptote_narrow_line(d, ref_emitter, ref_dist) == pytest.approx(full, rel=0.02)


def test_bunching_limits(ref_emitter, ref_dist):
    d = DriveParams.from_saturation(1e6, ref_emitter)
    assert abs(bunching_asymptote(d, ref_emitter, ref_dist) - 1) <= 1e-3
    assert bunching_asymptote(d, ref_emitter, InhomDistribution.delta()) == 1.0
    tiny = InhomDistribution.gaussian(1e-9 * homogeneous_fwhm(d, ref_emitter))
    assert bunching_asymptote(DriveParams.from_saturation(0.1, ref_emitter), ref_emitter, tiny,
                              check=False) == pytest.approx(1.0, abs=1e-6)


def test_bunching_monotone_in_power(ref_emitter, ref_dist):
    s = np.logspace(-2, 3, 26)
    vals = [bunching_asymptote(DriveParams.from_saturation(x, ref_emitter), ref_emitter, ref_dist) for x in s]
    assert np.all(np.diff(vals) <= 0)
    assert vals[-1] == pytest.approx(1.2375, rel=1e-4)


@settings(max_examples=40, deadline=None)
@given(s=st.floats(1e-3, 1e4), fwhm_ghz=st.floats(0.05, 20), ell_ghz=st.floats(-10, 10))
def test_bunching_at_least_one(s, fwhm_ghz, ell_ghz):
    em = EmitterParams(T1, T2)
    d = DriveParams.from_saturation(s, em)
    dist = InhomDistribution.gaussian(fwhm_ghz * 1e9)
    assert bunching_asymptote(d, em, dist, laser_freq=2 * math.pi * ell_ghz * 1e9, check=False) >= 1 - 1e-12


def test_quadrature_is_thread_stable(ref_emitter, ref_dist):
    from concurrent.futures import ThreadPoolExecutor

    d = DriveParams.from_saturation(0.1, ref_emitter)
    ref = bunching_asymptote(d, ref_emitter, ref_dist)
    with ThreadPoolExecutor(4) as pool:
        out = list(pool.map(lambda _: bunching_asymptote(d, ref_emitter, ref_dist), range(8)))
    assert all(v == ref for v in out)


def test_regime_warning_is_a_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        g2_diffusive(1e-9, DriveParams(3 / T1), broad_emitter())
