"""Least-squares extraction of emitter parameters.

Every fit runs ``scipy.optimize.least_squares`` from several starting
points and keeps the lowest cost, since Rabi-oscillation fits have local
minima at aliased frequencies. Parameters are fitted in rescaled,
order-one units; uncertainties come from the Jacobian at the optimum.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .correlator import G2Curve
from .inhomogeneous import g2_diffusive
from .tls import DriveParams, EmitterParams, g2_homogeneous

__all__ = [
    "FitResult",
    "FitError",
    "BiasTableRow",
    "fit_exp_decay",
    "fit_gaussian_line",
    "fit_g2_short",
    "g2_model",
    "synthetic_g2_curve",
    "bias_study",
    "power_calibration",
    "write_fit_json",
    "read_fit_json",
    "write_bias_csv",
    "read_bias_csv",
    "DEFAULT_T1",
]

DEFAULT_T1 = 1.83e-9
MODEL_IDS = ("exp_decay", "gaussian_line", "g2_zero_detuning", "g2_diffusive")
_FWHM_GAUSS = 4.0 * math.log(2.0)
_MULTISTART = (1.0, 0.8, 1.25, 0.6, 1.6)


class FitError(RuntimeError):
    """The data cannot be fitted: degenerate input or no converged start."""


@dataclass(frozen=True)
class FitResult:
    """Fitted values with 1-sigma uncertainties.

    ``residual_norm`` is sqrt(chi2 / dof) for weighted fits and the rms
    residual relative to the largest data magnitude otherwise.
    """

    params: dict
    model_id: str
    residual_norm: float
    converged: bool
    iterations: int
    flags: tuple = ()

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise ValueError(f"unknown model {self.model_id!r}")
        clean = {}
        for name, (val, err) in self.params.items():
            err = float(err)
            if not (err >= 0 or math.isnan(err)):
                raise ValueError(f"negative uncertainty for {name}")
            clean[name] = (float(val), err)
        object.__setattr__(self, "params", clean)
        object.__setattr__(self, "flags", tuple(self.flags))
        if not (self.residual_norm >= 0):
            raise ValueError("residual_norm must be nonnegative")

    def value(self, name: str) -> float:
        return self.params[name][0]

    def error(self, name: str) -> float:
        return self.params[name][1]

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "params": {k: {"value": v, "sigma": e} for k, (v, e) in self.params.items()},
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        params = {k: (v["value"], v["sigma"]) for k, v in d["params"].items()}
        return cls(params, d["model_id"], d["residual_norm"], d["converged"], d["iterations"], tuple(d.get("flags", ())))


@dataclass(frozen=True)
class BiasTableRow:
    true_omega_r_t1: float
    true_t2_t1: float
    fitted_omega_r_t1: float
    fitted_t2_t1: float
    error: str = ""

    @property
    def omega_ratio(self) -> float:
        return self.fitted_omega_r_t1 / self.true_omega_r_t1

    @property
    def t2_ratio(self) -> float:
        return self.fitted_t2_t1 / self.true_t2_t1


@dataclass
class _Fit:
    x: np.ndarray
    cov: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    flags: list = field(default_factory=list)


def _weights(err, n):
    if err is None:
        return None
    err = np.asarray(err, dtype=float)
    if err.shape != (n,) or not np.all(err > 0) or not np.all(np.isfinite(err)):
        return None
    return 1.0 / err


def _least_squares(model: Callable, x_data, y, sigma_inv, guesses, bounds) -> _Fit:
    """Multi-start least squares; returns the best start with its covariance."""
    def resid(p):
        r = model(x_data, p) - y
        return r * sigma_inv if sigma_inv is not None else r

    best, failures = None, []
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    with np.errstate(invalid="ignore"):
        lo_in = np.where(np.isfinite(lo), lo + 1e-10 * (1 + np.abs(lo)), lo)
        hi_in = np.where(np.isfinite(hi), hi - 1e-10 * (1 + np.abs(hi)), hi)
    for g in guesses:
        g = np.clip(np.asarray(g, dtype=float), lo_in, hi_in)
        try:
            r = least_squares(resid, g, bounds=(lo, hi), method="trf", jac="3-point", diff_step=1e-6,
                              xtol=1e-8, ftol=1e-12, gtol=1e-12, max_nfev=500)
        except (ValueError, FloatingPointError) as exc:
            failures.append(str(exc))
            continue
        if not np.isfinite(r.cost):
            continue
        if best is None or r.cost < best.cost:
            best = r
    if best is None:
        raise FitError("no starting point converged" + (f": {failures[0]}" if failures else ""))

    m, n = len(y), len(best.x)
    dof = max(m - n, 1)
    chi2 = 2.0 * best.cost
    jac = best.jac
    flags = []
    try:
        jtj = jac.T @ jac
        if np.linalg.cond(jtj) > 1e14:
            raise np.linalg.LinAlgError
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((n, n), np.inf)
        flags.append("singular_jacobian")
    if sigma_inv is None:
        cov = cov * (chi2 / dof)
        scale = np.max(np.abs(y)) or 1.0
        rnorm = math.sqrt(chi2 / m) / scale
    else:
        rnorm = math.sqrt(chi2 / dof)
    return _Fit(best.x, cov, rnorm, bool(best.status > 0), int(best.nfev), flags)


def _sig(cov, i):
    v = cov[i, i]
    return math.sqrt(v) if np.isfinite(v) and v >= 0 else math.inf


def _check_xy(x, y, n_min, what):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"{what}: x and y must be 1-d arrays of equal length")
    if len(x) < n_min:
        raise ValueError(f"{what}: need at least {n_min} points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError(f"{what}: non-finite data")
    return x, y


def fit_exp_decay(t, counts, errors=None) -> FitResult:
    """Fit ``A exp(-t / t1) + B`` to a decay histogram.

    Parameters
    ----------
    t : array_like
        Bin times [s].
    counts : array_like
        Counts per bin (nonnegative).
    errors : array_like, optional
        1-sigma errors. By default Poisson errors are used: first
        ``sqrt(max(counts, 1))``, then refitted with the square root of the
        fitted model, which removes the low-count bias of data-based weights.
    """
    t, y = _check_xy(t, counts, 10, "decay histogram")
    if np.any(y < 0):
        raise ValueError("counts must be nonnegative")
    if np.ptp(y) == 0:
        raise FitError("degenerate histogram: all bins equal")
    poisson = errors is None
    if poisson:
        errors = np.sqrt(np.maximum(y, 1.0))
    t0, ts = t.min(), np.ptp(t)
    ys = np.max(np.abs(y))
    x = (t - t0) / ts
    yn = y / ys
    w = _weights(np.asarray(errors, dtype=float) / ys, len(y))

    def model(x, p):
        return p[0] * np.exp(-x / p[1]) + p[2]

    b0 = float(np.min(yn[-max(2, len(yn) // 10):]))
    a0 = max(float(yn[np.argmin(x)]) - b0, 1e-3)
    half = np.nonzero(yn - b0 < 0.37 * a0)[0]
    tau0 = float(x[half[0]]) if len(half) else 0.3
    tau0 = min(max(tau0, 1e-3), 10.0)
    guesses = [(a0, tau0 * f, b0) for f in _MULTISTART]
    bounds = ([0, 1e-6, -np.inf], [np.inf, 1e3, np.inf])
    fit = _least_squares(model, x, yn, w, guesses, bounds)
    if poisson:
        for _ in range(2):
            expected = np.maximum(model(x, fit.x) * ys, 1.0)
            w = ys / np.sqrt(expected)
            fit = _least_squares(model, x, yn, w, [fit.x], bounds)
    amp = fit.x[0] * ys * math.exp(t0 / (fit.x[1] * ts))
    flags = list(fit.flags)
    s_tau = _sig(fit.cov, 1) * ts
    if not math.isfinite(s_tau) or s_tau > fit.x[1] * ts:
        flags.append("t1_unresolved")
    params = {
        "t1": (fit.x[1] * ts, s_tau),
        "amplitude": (amp, _sig(fit.cov, 0) * ys * math.exp(t0 / (fit.x[1] * ts))),
        "offset": (fit.x[2] * ys, _sig(fit.cov, 2) * ys),
    }
    return FitResult(params, "exp_decay", fit.residual_norm, fit.converged, fit.iterations, tuple(flags))


def fit_gaussian_line(freq, rate, errors=None) -> FitResult:
    """Fit ``A exp(-4 ln2 (f - f0)^2 / fwhm^2) + B`` to a laser scan; frequencies in Hz."""
    f, y = _check_xy(freq, rate, 7, "line scan")
    if np.ptp(y) == 0:
        raise FitError("degenerate scan: constant rate")
    fs = np.ptp(f)
    if fs == 0:
        raise FitError("degenerate scan: single frequency")
    ys = np.max(np.abs(y))
    f0 = f[np.argmax(y)]
    x = (f - f0) / fs
    yn = y / ys
    w = _weights(None if errors is None else np.asarray(errors, dtype=float) / ys, len(y))

    def model(x, p):
        return p[0] * np.exp(-_FWHM_GAUSS * ((x - p[1]) / p[2]) ** 2) + p[3]

    b0 = float(np.min(yn))
    a0 = float(np.max(yn)) - b0
    above = x[yn - b0 >= 0.5 * a0]
    w0 = max(float(np.ptp(above)), 1.0 / len(x))
    guesses = [(a0, 0.0, w0 * s, b0) for s in _MULTISTART]
    fit = _least_squares(model, x, yn, w, guesses, ([0, -1, 1e-6, -np.inf], [np.inf, 1, 10, np.inf]))
    params = {
        "fwhm": (fit.x[2] * fs, _sig(fit.cov, 2) * fs),
        "center": (f0 + fit.x[1] * fs, _sig(fit.cov, 1) * fs),
        "amplitude": (fit.x[0] * ys, _sig(fit.cov, 0) * ys),
        "offset": (fit.x[3] * ys, _sig(fit.cov, 3) * ys),
    }
    return FitResult(params, "gaussian_line", fit.residual_norm, fit.converged, fit.iterations, tuple(fit.flags))


def g2_model(tau, model: str, rabi: float, t2: float, t1: float):
    """Short-delay g2 of either model at the given parameters.

    ``zero_detuning`` is the homogeneous curve at resonance; ``diffusive``
    averages over a detuning distribution much wider than the line.
    """
    emitter = EmitterParams(t1, t2, inhom_fwhm=math.inf)
    drive = DriveParams(rabi)
    tau = np.abs(np.asarray(tau, dtype=float))
    if model == "zero_detuning":
        return g2_homogeneous(tau, 0.0, drive, emitter)
    if model == "diffusive":
        return g2_diffusive(tau, drive, emitter)
    raise ValueError(f"unknown g2 model {model!r}")


def _first_peak(x, y):
    """Position of the first interior local maximum, or None."""
    inner = np.nonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]) & (y[1:-1] > 1.0))[0]
    return float(x[inner[0] + 1]) if len(inner) else None


def fit_g2_short(curve: G2Curve, model: str = "zero_detuning", t1: float = DEFAULT_T1,
                 init: Optional[dict] = None, free_t1: bool = False) -> FitResult:
    """Fit the short-delay g2 for T2 and the Rabi frequency.

    Parameters
    ----------
    curve : G2Curve
        Normalized curve with sub-ns bins covering delays up to ~15 ns;
        the model is evaluated at |bin center|.
    model : {"zero_detuning", "diffusive"}
    t1 : float
        Lifetime [s], held fixed unless ``free_t1``.
    init : dict, optional
        Starting values for ``rabi`` [rad/s] and ``t2`` [s].
    free_t1 : bool
        Fit T1 as well.
    """
    if model not in ("zero_detuning", "diffusive"):
        raise ValueError(f"unknown g2 model {model!r}")
    if not (t1 > 0):
        raise ValueError("t1 must be positive")
    tau = np.abs(curve.centers)
    y = curve.g2
    if len(y) < 5:
        raise ValueError("need at least 5 bins")
    if np.ptp(y) == 0:
        raise FitError("degenerate curve: constant g2")
    widths = np.diff(curve.bin_edges)
    x = tau / t1
    sigma_inv = _weights(curve.stat_err, len(y))
    init = dict(init or {})

    if "rabi" in init:
        om0 = init["rabi"] * t1
    else:
        peak = _first_peak(x, y)
        om0 = math.pi / peak if peak else 1.0
    t2r0 = init.get("t2", t1) / t1

    def model_fn(x, p):
        t1_eff = p[2] if free_t1 else 1.0
        return g2_model(x, model, p[0] / t1_eff, p[1] * t1_eff, t1_eff)

    guesses = []
    for k, f in enumerate(_MULTISTART):
        g = [om0 * f, min(t2r0 / f if k % 2 else t2r0, 1.999)]
        if free_t1:
            g.append(1.0)
        guesses.append(g)
    lo = [1e-3, 1e-3] + ([0.05] if free_t1 else [])
    hi = [1e3, 2.0] + ([20.0] if free_t1 else [])
    fit = _least_squares(model_fn, x, y, sigma_inv, guesses, (lo, hi))

    om_t1, t2r = fit.x[0], fit.x[1]
    s_om, s_t2r = _sig(fit.cov, 0), _sig(fit.cov, 1)
    t1_fit, s_t1 = (fit.x[2] * t1, _sig(fit.cov, 2) * t1) if free_t1 else (t1, 0.0)
    flags = list(fit.flags)
    if not (s_om < om_t1):
        flags.append("rabi_unresolved")
    if np.max(widths) * om_t1 / t1 > 1.0:
        flags.append("bins_coarse_for_rabi_period")
    # with T1 free the dimensionless pair refers to the fitted T1
    scale = fit.x[2] if free_t1 else 1.0
    params = {
        "rabi": (om_t1 / scale / t1, s_om / scale / t1),
        "t2": (t2r * scale * t1, s_t2r * scale * t1),
        "t1": (t1_fit, s_t1),
        "rabi_t1": (om_t1, s_om),
        "t2_over_t1": (t2r, s_t2r),
    }
    model_id = "g2_zero_detuning" if model == "zero_detuning" else "g2_diffusive"
    return FitResult(params, model_id, fit.residual_norm, fit.converged, fit.iterations, tuple(flags))


def synthetic_g2_curve(model: str, rabi_t1: float, t2_over_t1: float, t1: float = DEFAULT_T1,
                       tau_max: float = 15e-9, n_bins: int = 300) -> G2Curve:
    """Noiseless model curve on equal bins over [0, tau_max]; errors are left at zero."""
    edges = np.linspace(0.0, tau_max, n_bins + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    g2 = g2_model(centers, model, rabi_t1 / t1, t2_over_t1 * t1, t1)
    zeros = np.zeros(n_bins)
    meta = {"model": model, "rabi_t1": rabi_t1, "t2_over_t1": t2_over_t1, "t1_s": t1}
    return G2Curve(edges, g2, zeros.astype(np.int64), zeros, 1.0, meta)


def _bias_row(om, t2r, t1, tau_max, n_bins):
    try:
        curve = synthetic_g2_curve("diffusive", om, t2r, t1, tau_max, n_bins)
        fit = fit_g2_short(curve, "zero_detuning", t1=t1, init={"rabi": om / t1, "t2": t2r * t1})
        return BiasTableRow(om, t2r, fit.value("rabi_t1"), fit.value("t2_over_t1"))
    except (FitError, ValueError, FloatingPointError) as exc:
        return BiasTableRow(om, t2r, math.nan, math.nan, str(exc))


def bias_study(omega_grid: Sequence[float], t2_over_t1: float, t1: float = DEFAULT_T1,
               tau_max: float = 15e-9, n_bins: int = 300, threads: int = 1) -> list[BiasTableRow]:
    """Fit diffusive-generated curves with the zero-detuning model.

    Each row holds the generating and fitted (Omega T1, T2/T1). A failed
    fit yields NaN values and the error message instead of stopping the
    study.
    """
    grid = [float(o) for o in omega_grid]
    if any(not (o > 0) for o in grid):
        raise ValueError("omega grid values must be positive")
    if not (0 < t2_over_t1 <= 2):
        raise ValueError("t2_over_t1 must lie in (0, 2]")
    args = [(o, float(t2_over_t1), t1, tau_max, n_bins) for o in grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda a: _bias_row(*a), args))
    return [_bias_row(*a) for a in args]


def power_calibration(powers, fitted_omegas, t1: float, t2: float):
    """Slope of Omega^2 against power through the origin, and the saturation power.

    Returns
    -------
    power_cal : float
        k in Omega^2 = k P [rad^2 s^-2 W^-1].
    p_sat : float
        Power [W] at which Omega^2 T1 T2 = 1.
    """
    p = np.asarray(powers, dtype=float)
    om = np.asarray(fitted_omegas, dtype=float)
    if p.shape != om.shape or len(p) < 2:
        raise ValueError("need at least 2 matching (power, omega) points")
    k = float(np.sum(p * om ** 2) / np.sum(p * p))
    if not (k > 0):
        raise FitError(f"non-positive slope {k:.3g} of Omega^2 against power")
    return k, 1.0 / (k * t1 * t2)


def write_fit_json(result: FitResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fit_json(path) -> FitResult:
    with open(path) as fh:
        return FitResult.from_dict(json.load(fh))


_BIAS_COLUMNS = ("true_omega_r_t1", "true_t2_t1", "fitted_omega_r_t1", "fitted_t2_t1", "error")


def write_bias_csv(rows: Sequence[BiasTableRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_BIAS_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([repr(d[c]) if c != "error" else d[c] for c in _BIAS_COLUMNS])


def read_bias_csv(path) -> list[BiasTableRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [BiasTableRow(*(float(r[c]) for c in _BIAS_COLUMNS[:4]), r.get("error", "")) for r in rows]
