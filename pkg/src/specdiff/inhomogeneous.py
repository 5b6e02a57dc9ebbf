"""Observables averaged over a distribution of transition frequencies.

Frequencies of the distribution are offsets of the transition frequency
from ``EmitterParams.center_freq`` in rad/s; the laser enters through its
offset from the same center.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import sici

from .tls import (
    DriveParams,
    EmitterParams,
    envelope_rate,
    g2_homogeneous,
    homogeneous_fwhm,
    homogeneous_halfwidth,
    steady_state_population,
)

__all__ = [
    "InhomDistribution",
    "QuadratureSpec",
    "QuadratureError",
    "RegimeWarning",
    "FWHM_PER_SIGMA",
    "averaged_count_rate",
    "scan_fwhm",
    "g2_diffusive",
    "g2_diffusive_general",
    "bunching_asymptote",
    "bunching_asymptote_narrow_line",
]

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
_CONV_RTOL = 1e-6
_TAU_BLOCK = 256


class QuadratureError(RuntimeError):
    pass


class RegimeWarning(UserWarning):
    """Inhomogeneous width too small for the flat-measure average."""


@dataclass(frozen=True, eq=False)
class InhomDistribution:
    """Probability density of the transition-frequency offset.

    Use the constructors :meth:`gaussian`, :meth:`tabulated` and
    :meth:`delta`. Tabulated densities are linearly interpolated between
    grid points, zero outside, and renormalized to unit mass.
    """

    kind: str
    fwhm: float = 0.0
    freqs: Optional[np.ndarray] = field(default=None, repr=False)
    density: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "gaussian":
            if not (self.fwhm > 0):
                raise ValueError(f"gaussian fwhm must be > 0, got {self.fwhm!r}")
        elif self.kind == "tabulated":
            f = np.asarray(self.freqs, dtype=float)
            p = np.asarray(self.density, dtype=float)
            if f.ndim != 1 or f.shape != p.shape or len(f) < 2:
                raise ValueError("tabulated distribution needs matching 1-d grids of length >= 2")
            if np.any(np.diff(f) <= 0):
                raise ValueError("tabulated frequency grid must be strictly ascending")
            if np.any(p < 0):
                raise ValueError("tabulated density must be nonnegative")
            mass = np.trapezoid(p, f)
            if not (mass > 0):
                raise ValueError("tabulated density has zero mass")
            object.__setattr__(self, "freqs", f)
            object.__setattr__(self, "density", p / mass)
        elif self.kind != "delta":
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def gaussian(cls, fwhm: float) -> "InhomDistribution":
        """Gaussian of FWHM ``fwhm`` in Hz, centered on the emitter."""
        return cls("gaussian", fwhm=float(fwhm))

    @classmethod
    def tabulated(cls, freqs, density) -> "InhomDistribution":
        return cls("tabulated", freqs=freqs, density=density)

    @classmethod
    def delta(cls) -> "InhomDistribution":
        return cls("delta")

    @classmethod
    def from_emitter(cls, emitter: EmitterParams) -> "InhomDistribution":
        if emitter.inhom_fwhm > 0:
            return cls.gaussian(emitter.inhom_fwhm)
        return cls.delta()

    @property
    def sigma(self) -> float:
        """Standard deviation in rad/s (gaussian only)."""
        return 2 * math.pi * self.fwhm / FWHM_PER_SIGMA

    @property
    def width(self) -> float:
        """Characteristic FWHM in rad/s (0 for a delta)."""
        if self.kind == "gaussian":
            return 2 * math.pi * self.fwhm
        if self.kind == "tabulated":
            half = self.density.max() / 2
            above = self.freqs[self.density >= half]
            return float(above[-1] - above[0]) if len(above) > 1 else float(np.diff(self.freqs).min())
        return 0.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            s = self.sigma
            return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
        if self.kind == "tabulated":
            return np.interp(x, self.freqs, self.density, left=0.0, right=0.0)
        raise ValueError("a delta distribution has no density")

    def support(self, span: float) -> tuple[float, float]:
        if self.kind == "gaussian":
            half = span * self.width
            return -half, half
        if self.kind == "tabulated":
            return float(self.freqs[0]), float(self.freqs[-1])
        return 0.0, 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` offsets [rad/s]."""
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, size)
        if self.kind == "delta":
            return np.zeros(size)
        # exact inverse CDF of the piecewise-linear density
        f, p = self.freqs, self.density
        w = np.diff(f)
        seg_mass = 0.5 * (p[:-1] + p[1:]) * w
        cdf = np.concatenate([[0.0], np.cumsum(seg_mass)])
        u = rng.random(size) * cdf[-1]
        i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(w) - 1)
        m = u - cdf[i]
        p0, slope = p[i], (p[i + 1] - p[i]) / w[i]
        disc = np.sqrt(np.maximum(p0 * p0 + 2 * slope * m, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            quad_root = 2 * m / (p0 + disc)  # stable form of (disc - p0) / slope
        return f[i] + np.where(np.isfinite(quad_root), quad_root, 0.0)


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite-Simpson settings.

    ``span`` is the half-range of the detuning grid in units of the
    relevant width; ``nodes`` is the number of nodes per panel (a floor,
    refined automatically where the integrand oscillates in detuning).
    """

    span: float = 8.0
    nodes: int = 801

    def __post_init__(self):
        if not (self.span >= 5):
            raise ValueError(f"quadrature span must be >= 5, got {self.span!r}")
        if self.nodes < 101 or self.nodes % 2 == 0:
            raise ValueError(f"quadrature nodes must be odd and >= 101, got {self.nodes!r}")

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(self.span, 2 * self.nodes - 1)


# --- quadrature plumbing ----------------------------------------------------

def _simpson(a: float, b: float, n: int):
    x = np.linspace(a, b, n)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3.0 * (n - 1))


def _odd(n: float) -> int:
    n = int(math.ceil(n))
    return n if n % 2 else n + 1


def _panels(breaks, n_for_panel):
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            x, w = _simpson(a, b, n_for_panel(a, b))
            xs.append(x)
            ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _grid(dist: InhomDistribution, lor_center: float, hom_width: float, quad: QuadratureSpec,
          fine_step: Optional[float] = None):
    """Nodes and weights over the distribution support.

    A fine panel of half-width span * hom_width sits on the Lorentzian
    center; geometrically widening panels carry the grid out to the edges of
    the distribution.
    """
    lo, hi = dist.support(quad.span)
    inner = quad.span * hom_width
    cuts = {lo, hi}
    k = 0
    while True:
        r = inner * 2.0 ** k
        for c in (lor_center - r, lor_center + r):
            if lo < c < hi:
                cuts.add(c)
        if lor_center - r <= lo and lor_center + r >= hi:
            break
        k += 1
    breaks = sorted(cuts)

    def n_for_panel(a, b):
        n = quad.nodes
        if fine_step is not None and a >= lor_center - inner * (1 + 1e-12) and b <= lor_center + inner * (1 + 1e-12):
            n = max(n, _odd((b - a) / fine_step + 1))
        return n

    return _panels(breaks, n_for_panel)


def _wsum(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # numpy's pairwise summation keeps the reduction order fixed
    return np.sum(values * weights, axis=-1)


def _fine_step(emitter: EmitterParams) -> float:
    # resolves the detuning-oscillation of g2(tau, delta) wherever the
    # exp(-a tau) envelope is still large enough to matter at the 1e-6 level
    return 0.05 * envelope_rate(emitter)


def _check(value, refined, what: str):
    v, r = np.asarray(value), np.asarray(refined)
    change = np.max(np.abs(v - r) / np.maximum(np.abs(r), 1e-300))
    if change > _CONV_RTOL:
        raise QuadratureError(f"{what}: doubling nodes changed result by {change:.2e} (relative)")


def _laser_offset(drive: DriveParams, emitter: EmitterParams, laser_freq: Optional[float]) -> float:
    lf = drive.laser_freq if laser_freq is None else laser_freq
    return lf - emitter.center_freq


# --- count rate and linewidth ----------------------------------------------

def _avg_rate(drive, emitter, dist, ell, quad):
    if dist.kind == "delta":
        return steady_state_population(drive, emitter, ell)
    x, w = _grid(dist, ell, 2 * homogeneous_halfwidth(drive, emitter), quad)
    return float(_wsum(dist.pdf(x) * steady_state_population(drive, emitter, ell - x), w))


def averaged_count_rate(drive: DriveParams, emitter: EmitterParams, dist: InhomDistribution,
                        laser_freq: Optional[float] = None, quad: QuadratureSpec = QuadratureSpec(),
                        check: bool = True) -> float:
    """Steady-state population averaged over the transition-frequency distribution."""
    ell = _laser_offset(drive, emitter, laser_freq)
    value = _avg_rate(drive, emitter, dist, ell, quad)
    if check and dist.kind != "delta":
        _check(value, _avg_rate(drive, emitter, dist, ell, quad.doubled()), "averaged_count_rate")
    return value


def scan_fwhm(drive: DriveParams, emitter: EmitterParams, dist: InhomDistribution,
              quad: QuadratureSpec = QuadratureSpec()) -> float:
    """FWHM [Hz] of the averaged count rate as a function of laser frequency."""
    hom = 2 * homogeneous_halfwidth(drive, emitter)
    scale = max(hom, dist.width)

    def rate(ell):
        return _avg_rate(drive, emitter, dist, ell, quad)

    if dist.kind == "tabulated":
        # peak position is not known a priori
        grid = np.linspace(dist.freqs[0] - hom, dist.freqs[-1] + hom, 401)
        vals = [rate(g) for g in grid]
        i = int(np.argmax(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        phi = (math.sqrt(5) - 1) / 2
        for _ in range(80):
            c, d = b - phi * (b - a), a + phi * (b - a)
            if rate(c) >= rate(d):
                b = d
            else:
                a = c
        peak = 0.5 * (a + b)
    else:
        peak = 0.0
    top = rate(peak)
    if not (top > 0):
        raise QuadratureError("count rate vanishes at the peak; linewidth undefined")
    half = 0.5 * top

    def edge(sign):
        step = scale
        near, far = peak, peak + sign * step
        while rate(far) > half:
            near, far = far, far + sign * step
            step *= 2
            if step > 1e6 * scale:
                raise QuadratureError("half-maximum not bracketed; curve is not unimodal")
        for _ in range(200):
            mid = 0.5 * (near + far)
            if rate(mid) > half:
                near = mid
            else:
                far = mid
            if abs(far - near) <= 1e-13 * scale:
                break
        return 0.5 * (near + far)

    return (edge(+1) - edge(-1)) / (2 * math.pi)


# --- diffusion-averaged g2 --------------------------------------------------

def _flat_tail_shape(tau: np.ndarray, big_l: float, a: float) -> np.ndarray:
    """Normalized tail integral beyond |delta| = L of delta**-4 * g2(tau, delta).

    Uses the large-detuning form g2 ~ 1 - exp(-a tau)(cos(delta tau) +
    a/delta sin(delta tau)); returns 1 - exp(-a tau) * (3 L**3) *
    int_L^inf [cos + a/delta sin] / delta**4, which vanishes at tau = 0.
    """
    x = big_l * tau
    si, _ = sici(x)
    # 3 x**3 * int_x^inf cos(u)/u**4 du, written without cancellation
    f = np.cos(x) - 0.5 * x * np.sin(x) - 0.5 * x * x * np.cos(x) + 0.5 * x ** 3 * (0.5 * np.pi - si)
    sin_part = (a / big_l) * 0.25 * (3.0 * np.sin(x) + x * f)
    return 1.0 - np.exp(-a * tau) * (f + sin_part)


def _lorentz_sq_tail(big_l: float, gamma: float) -> float:
    """int_L^inf d(delta) / (delta**2 + gamma**2)**2."""
    return (math.atan(gamma / big_l) / gamma - big_l / (big_l ** 2 + gamma ** 2)) / (2 * gamma ** 2)


def g2_diffusive(tau, drive: DriveParams, emitter: EmitterParams,
                 quad: QuadratureSpec = QuadratureSpec()):
    """g2(tau) averaged over uniformly distributed detunings.

    Each detuning is weighted by the square of its steady-state population,
    since coincidences scale with the square of the emission rate. The
    integral over the whole detuning axis is truncated at span homogeneous
    FWHMs and the remainder added analytically.
    """
    tau = np.asarray(tau, dtype=float)
    scalar = tau.ndim == 0
    tau = np.abs(np.atleast_1d(tau))
    hom_hz = homogeneous_fwhm(drive, emitter)
    if emitter.inhom_fwhm < 3 * hom_hz:
        warnings.warn(
            f"inhomogeneous width {emitter.inhom_fwhm:.3g} Hz is below 3x the homogeneous "
            f"width {hom_hz:.3g} Hz; use g2_diffusive_general",
            RegimeWarning,
            stacklevel=2,
        )
    gamma = homogeneous_halfwidth(drive, emitter)
    a = envelope_rate(emitter)
    big_l = quad.span * 2 * gamma
    n = max(quad.nodes, _odd(2 * big_l / _fine_step(emitter) + 1))
    d, w = _simpson(-big_l, big_l, n)
    weight = w / (d * d + gamma * gamma) ** 2
    tail = 2 * _lorentz_sq_tail(big_l, gamma)
    norm = np.sum(weight) + tail
    out = np.empty_like(tau)
    for s in range(0, len(tau), _TAU_BLOCK):
        t = tau[s:s + _TAU_BLOCK]
        inner = np.sum(g2_homogeneous(t[:, None], d[None, :], drive, emitter) * weight, axis=1)
        out[s:s + _TAU_BLOCK] = (inner + tail * _flat_tail_shape(t, big_l, a)) / norm
    return float(out[0]) if scalar else out


def g2_diffusive_general(tau, drive: DriveParams, emitter: EmitterParams, dist: InhomDistribution,
                         laser_freq: Optional[float] = None, quad: QuadratureSpec = QuadratureSpec()):
    """g2(tau) averaged over the given transition-frequency distribution.

    Weight of each transition frequency: its probability density times the
    squared steady-state population at the resulting laser detuning.
    """
    tau = np.asarray(tau, dtype=float)
    scalar = tau.ndim == 0
    tau = np.abs(np.atleast_1d(tau))
    ell = _laser_offset(drive, emitter, laser_freq)
    if dist.kind == "delta":
        out = np.asarray(g2_homogeneous(tau, ell, drive, emitter), dtype=float)
        return float(out[0]) if scalar else out
    gamma = homogeneous_halfwidth(drive, emitter)
    x, w = _grid(dist, ell, 2 * gamma, quad, fine_step=_fine_step(emitter))
    det = ell - x
    weight = w * dist.pdf(x) * steady_state_population(drive, emitter, det) ** 2
    norm = np.sum(weight)
    if not (norm > 0):
        raise QuadratureError("coincidence weight vanishes over the distribution support")
    out = np.empty_like(tau)
    for s in range(0, len(tau), _TAU_BLOCK):
        t = tau[s:s + _TAU_BLOCK]
        out[s:s + _TAU_BLOCK] = np.sum(g2_homogeneous(t[:, None], det[None, :], drive, emitter) * weight, axis=1) / norm
    return float(out[0]) if scalar else out


# --- classical bunching level -------------------------------------------------

def _bunching(drive, emitter, dist, ell, quad):
    x, w = _grid(dist, ell, 2 * homogeneous_halfwidth(drive, emitter), quad)
    p = dist.pdf(x) * w
    c = steady_state_population(drive, emitter, ell - x)
    first = np.sum(p * c)
    if not (first > 0):
        raise QuadratureError("mean count rate vanishes; bunching level undefined")
    return float(np.sum(p * c * c) / first ** 2)


def bunching_asymptote(drive: DriveParams, emitter: EmitterParams, dist: InhomDistribution,
                       laser_freq: Optional[float] = None, quad: QuadratureSpec = QuadratureSpec(),
                       check: bool = True) -> float:
    """Short-delay bunching plateau <I^2>/<I>^2 of a slowly wandering line."""
    if dist.kind == "delta":
        return 1.0
    ell = _laser_offset(drive, emitter, laser_freq)
    value = _bunching(drive, emitter, dist, ell, quad)
    if check:
        _check(value, _bunching(drive, emitter, dist, ell, quad.doubled()), "bunching_asymptote")
    return value


def bunching_asymptote_narrow_line(drive: DriveParams, emitter: EmitterParams,
                                   dist: InhomDistribution) -> float:
    """Narrow-Lorentzian limit sigma / (gamma sqrt(2 pi)) of the bunching level.

    Valid on the distribution center for a Gaussian much wider than the
    power-broadened line.
    """
    if dist.kind != "gaussian":
        raise ValueError("narrow-line limit is defined for a gaussian distribution")
    return dist.sigma / (homogeneous_halfwidth(drive, emitter) * math.sqrt(2 * math.pi))
