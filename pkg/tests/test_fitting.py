import math

import numpy as np
import pytest

from specdiff.correlator import G2Curve
from specdiff.fitting import (
    BiasTableRow,
    FitError,
    FitResult,
    bias_study,
    fit_exp_decay,
    fit_g2_short,
    fit_gaussian_line,
    g2_model,
    power_calibration,
    read_bias_csv,
    read_fit_json,
    synthetic_g2_curve,
    write_bias_csv,
    write_fit_json,
)
from specdiff.reproduce import BIAS_GRID, REFERENCE_BIAS

from conftest import T1, T2


def gaussian(f, fwhm, f0=0.0, amp=1.0, off=0.0):
    return amp * np.exp(-4 * math.log(2) * ((f - f0) / fwhm) ** 2) + off


# --- decay histograms ------------------------------------------------------------

def test_exp_decay_noiseless():
    t = np.linspace(0, 20e-9, 200)
    r = fit_exp_decay(t, 1000 * np.exp(-t / T1))
    assert r.value("t1") == pytest.approx(T1, rel=1e-6)
    assert r.value("amplitude") == pytest.approx(1000, rel=1e-6)
    assert abs(r.value("offset")) < 1e-4
    assert r.model_id == "exp_decay" and r.converged


def test_exp_decay_poisson_noise():
    t = np.linspace(0, 20e-9, 200)
    shape = np.exp(-t / T1)
    mean = 1e5 * shape / shape.sum()
    rng = np.random.default_rng(12)
    r = fit_exp_decay(t, rng.poisson(mean))
    assert abs(r.value("t1") - T1) <= 3 * r.error("t1")
    assert 0 < r.error("t1") < 0.05 * T1


def test_exp_decay_interval_coverage():
    # fraction of 200 Poisson replicas whose 1-sigma interval holds the truth
    t = np.linspace(0, 20e-9, 100)
    mean = 200 * np.exp(-t / T1) + 2
    rng = np.random.default_rng(99)
    hits = 0
    for _ in range(200):
        r = fit_exp_decay(t, rng.poisson(mean))
        hits += abs(r.value("t1") - T1) <= r.error("t1")
    assert 0.60 <= hits / 200 <= 0.75


def test_exp_decay_degenerate():
    t = np.linspace(0, 20e-9, 50)
    with pytest.raises(FitError):
        fit_exp_decay(t, np.full(50, 7.0))
    with pytest.raises(FitError):
        fit_exp_decay(t, np.zeros(50))
    with pytest.raises(ValueError):
        fit_exp_decay(t[:5], np.ones(5))
    with pytest.raises(ValueError):
        fit_exp_decay(t, -np.ones(50))


def test_exp_decay_flags_unresolved_lifetime():
    t = np.linspace(0, 20e-9, 50)
    y = 100.0 + (np.arange(50) % 2)
    r = fit_exp_decay(t, y)
    assert "t1_unresolved" in r.flags or not math.isfinite(r.error("t1")) or r.error("t1") > r.value("t1")


# --- laser scans ------------------------------------------------------------------

def test_gaussian_line_noiseless():
    f = np.linspace(-10e9, 10e9, 81) + 3e9
    r = fit_gaussian_line(f, gaussian(f, 4e9, 3e9, 500.0, 20.0))
    assert r.value("fwhm") == pytest.approx(4e9, rel=1e-6)
    assert r.value("center") == pytest.approx(3e9, rel=1e-6)
    assert r.value("amplitude") == pytest.approx(500, rel=1e-6)


def test_lorentzian_input_has_larger_residual():
    f = np.linspace(-10e9, 10e9, 81)
    g = fit_gaussian_line(f, gaussian(f, 4e9))
    lor = 1.0 / (1 + (2 * f / 4e9) ** 2)
    l = fit_gaussian_line(f, lor)
    assert l.converged
    assert l.residual_norm > 100 * g.residual_norm


def test_gaussian_line_degenerate():
    f = np.linspace(-1e9, 1e9, 11)
    with pytest.raises(FitError):
        fit_gaussian_line(f, np.ones(11))
    with pytest.raises(ValueError):
        fit_gaussian_line(f[:5], np.arange(5.0))


# --- short-delay g2 fits ----------------------------------------------------------

def test_diffusive_fit_recovers_truth():
    r = fit_g2_short(synthetic_g2_curve("diffusive", 3.0, 1.0), "diffusive")
    assert r.value("rabi_t1") == pytest.approx(3.0, rel=0.01)
    assert r.value("t2_over_t1") == pytest.approx(1.0, rel=0.01)
    assert r.value("rabi") == pytest.approx(3.0 / T1, rel=0.01)
    assert r.model_id == "g2_diffusive"


def test_zero_detuning_fit_bias_at_three():
    r = fit_g2_short(synthetic_g2_curve("diffusive", 3.0, 1.0), "zero_detuning")
    om, t2 = REFERENCE_BIAS[3.0]
    assert r.value("rabi_t1") == pytest.approx(om, rel=0.05)
    assert r.value("t2_over_t1") == pytest.approx(t2, rel=0.05)
    # frozen values of this implementation (bin centers, 300 bins over 15 ns, uniform weights)
    assert r.value("rabi_t1") == pytest.approx(3.5574, abs=2e-3)
    assert r.value("t2_over_t1") == pytest.approx(0.6026, abs=2e-3)


def test_zero_detuning_fit_rabi_at_six():
    r = fit_g2_short(synthetic_g2_curve("diffusive", 6.0, 1.0), "zero_detuning")
    assert r.value("rabi_t1") == pytest.approx(REFERENCE_BIAS[6.0][0], rel=0.05)
    assert r.value("t2_over_t1") == pytest.approx(0.4875, abs=2e-3)


@pytest.mark.xfail(strict=True, reason="fitted T2/T1 = 0.488 at Omega T1 = 6, 9.7% below the quoted 0.54")
def test_zero_detuning_fit_t2_at_six_matches_quote():
    r = fit_g2_short(synthetic_g2_curve("diffusive", 6.0, 1.0), "zero_detuning")
    assert r.value("t2_over_t1") == pytest.approx(REFERENCE_BIAS[6.0][1], rel=0.05)


IDENT_GRID = [(om, t2) for om in (1.0, 2.5, 4.0, 6.0) for t2 in (0.5, 1.0, 1.8)]


@pytest.mark.parametrize("model", ["zero_detuning", "diffusive"])
def test_round_trip_identifiability(model):
    assert len(IDENT_GRID) >= 12
    for om, t2 in IDENT_GRID:
        r = fit_g2_short(synthetic_g2_curve(model, om, t2), model)
        assert r.value("rabi_t1") == pytest.approx(om, rel=0.01), (om, t2)
        assert r.value("t2_over_t1") == pytest.approx(t2, rel=0.01), (om, t2)


def test_round_trip_identifiability_exp_and_gaussian():
    t = np.linspace(0, 30e-9, 150)
    for t1 in np.linspace(0.5e-9, 5e-9, 12):
        assert fit_exp_decay(t, 1e3 * np.exp(-t / t1) + 5).value("t1") == pytest.approx(t1, rel=0.01)
    f = np.linspace(-20e9, 20e9, 101)
    for w in np.linspace(1e9, 10e9, 12):
        assert fit_gaussian_line(f, gaussian(f, w, 1e9)).value("fwhm") == pytest.approx(w, rel=0.01)


def test_free_t1_fit_diffusive():
    curve = synthetic_g2_curve("diffusive", 3.0, 1.5, t1=2.2e-9)
    r = fit_g2_short(curve, "diffusive", t1=1.8e-9, free_t1=True)
    assert r.value("t1") == pytest.approx(2.2e-9, rel=0.01)
    assert r.value("t2") == pytest.approx(3.3e-9, rel=0.01)
    assert r.value("rabi") == pytest.approx(3.0 / 2.2e-9, rel=0.01)


def test_free_t1_is_degenerate_on_resonance():
    curve = synthetic_g2_curve("zero_detuning", 3.0, 1.5, t1=2.2e-9)
    r = fit_g2_short(curve, "zero_detuning", t1=1.8e-9, free_t1=True)
    # the resonant closed form sees T1 and T2 only through 1/T1 + 1/T2
    g1, g2 = 1 / r.value("t1"), 1 / r.value("t2")
    assert g1 + g2 == pytest.approx(1 / 2.2e-9 + 1 / 3.3e-9, rel=1e-6)
    assert r.value("rabi") == pytest.approx(3.0 / 2.2e-9, rel=1e-6)
    assert "singular_jacobian" in r.flags


def test_g2_fit_with_noise_and_errors():
    rng = np.random.default_rng(4)
    clean = synthetic_g2_curve("zero_detuning", 3.0, 1.0)
    err = np.full(len(clean.g2), 0.02)
    noisy = G2Curve(clean.bin_edges, np.abs(clean.g2 + rng.normal(0, 0.02, len(err))), clean.raw_counts, err)
    r = fit_g2_short(noisy, "zero_detuning")
    assert abs(r.value("rabi_t1") - 3.0) <= 4 * r.error("rabi_t1")
    assert abs(r.value("t2_over_t1") - 1.0) <= 4 * r.error("t2_over_t1")
    assert 0.7 < r.residual_norm < 1.3


def test_g2_fit_errors_and_flags():
    flat = G2Curve(np.linspace(0, 15e-9, 31), np.ones(30), np.zeros(30, int), np.zeros(30))
    with pytest.raises(FitError):
        fit_g2_short(flat)
    with pytest.raises(ValueError):
        fit_g2_short(synthetic_g2_curve("diffusive", 3.0, 1.0), "lorentzian")
    # no oscillation in the window: the Rabi frequency is not resolved
    weak = synthetic_g2_curve("zero_detuning", 0.05, 1.0, tau_max=3e-9, n_bins=30)
    r = fit_g2_short(weak, "zero_detuning")
    coarse = synthetic_g2_curve("zero_detuning", 20.0, 1.0, n_bins=20)
    assert "bins_coarse_for_rabi_period" in fit_g2_short(coarse, "zero_detuning").flags
    assert r.error("rabi_t1") >= 0


def test_g2_model_values():
    tau = np.linspace(0, 10e-9, 11)
    z = g2_model(tau, "zero_detuning", 3 / T1, T1, T1)
    assert z[0] == 0 and np.all(z >= 0)
    with pytest.raises(ValueError):
        g2_model(tau, "other", 1.0, 1.0, 1.0)


# --- bias study -------------------------------------------------------------------

@pytest.fixture(scope="module")
def bias_tables():
    return {r: bias_study(BIAS_GRID, r) for r in (1.0, 2.0)}


def test_bias_rows_complete(bias_tables):
    for rows in bias_tables.values():
        assert [r.true_omega_r_t1 for r in rows] == list(BIAS_GRID)
        assert all(not r.error and r.fitted_omega_r_t1 > 0 and r.fitted_t2_t1 > 0 for r in rows)


def test_bias_direction_and_bound(bias_tables):
    for t2r, rows in bias_tables.items():
        for r in rows:
            assert r.fitted_t2_t1 <= t2r
            assert 1.0 <= r.omega_ratio <= 1.2


def test_t2_underestimate_grows_with_power(bias_tables):
    for rows in bias_tables.values():
        assert np.all(np.diff([r.fitted_t2_t1 for r in rows]) < 0)


def test_small_drive_row():
    (row,) = bias_study([0.5], 1.0)
    assert row.omega_ratio == pytest.approx(1.1183, abs=2e-3)
    assert row.omega_ratio <= 1.2


def test_bias_study_validation_and_threads():
    with pytest.raises(ValueError):
        bias_study([0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        bias_study([1.0], 3.0)
    assert bias_study([3.0, 5.0], 1.0, threads=2) == bias_study([3.0, 5.0], 1.0)


# --- power calibration ------------------------------------------------------------

def test_power_calibration_exact():
    k = 3.7e26
    p = np.linspace(1e-9, 200e-9, 9)
    kk, psat = power_calibration(p, np.sqrt(k * p), T1, T2)
    assert kk == pytest.approx(k, rel=1e-12)
    assert psat == pytest.approx(1 / (k * T1 * T2), rel=1e-10)


def test_power_calibration_fifty_nanowatt():
    k = 1.0 / (50e-9 * T1 * T2)
    p = np.array([10e-9, 50e-9, 300e-9])
    assert power_calibration(p, np.sqrt(k * p), T1, T2)[1] == pytest.approx(50e-9, rel=1e-10)


def test_power_calibration_noisy():
    rng = np.random.default_rng(1)
    k = 1.0 / (50e-9 * T1 * T2)
    p = np.geomspace(5e-9, 500e-9, 12)
    om = np.sqrt(k * p) * (1 + 0.1 * rng.standard_normal(len(p)))
    assert power_calibration(p, om, T1, T2)[1] == pytest.approx(50e-9, rel=0.25)


def test_power_calibration_errors():
    with pytest.raises(FitError):
        power_calibration([-1e-9, -2e-9], [1e8, 2e8], T1, T2)
    with pytest.raises(ValueError):
        power_calibration([1e-9], [1e8], T1, T2)


# --- serialization ------------------------------------------------------------------

def test_fit_json_round_trip(tmp_path):
    r = fit_g2_short(synthetic_g2_curve("diffusive", 3.0, 1.0), "diffusive")
    write_fit_json(r, tmp_path / "fit.json")
    back = read_fit_json(tmp_path / "fit.json")
    assert back == r


def test_fit_result_validation():
    with pytest.raises(ValueError):
        FitResult({"a": (1.0, -1.0)}, "exp_decay", 0.0, True, 1)
    with pytest.raises(ValueError):
        FitResult({}, "spline", 0.0, True, 1)
    with pytest.raises(ValueError):
        FitResult({}, "exp_decay", -1.0, True, 1)


def test_bias_csv_round_trip(tmp_path):
    rows = [BiasTableRow(3.0, 1.0, 3.55, 0.6), BiasTableRow(6.0, 1.0, math.nan, math.nan, "no starting point converged")]
    write_bias_csv(rows, tmp_path / "b.csv")
    back = read_bias_csv(tmp_path / "b.csv")
    assert back[0] == rows[0]
    assert math.isnan(back[1].fitted_t2_t1) and back[1].error == rows[1].error
