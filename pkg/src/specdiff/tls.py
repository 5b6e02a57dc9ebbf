"""Two-level emitter under continuous-wave resonant drive.

Closed-form observables at a fixed laser-emitter detuning, and an
independent optical-Bloch-equation integrator that recomputes g2(tau)
through the quantum regression theorem.

All frequencies handled here are angular (rad/s); conversion to ordinary
frequency happens only in functions that say so in their name or docstring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "EmitterParams",
    "DriveParams",
    "BlochState",
    "ConvergenceError",
    "saturation_parameter",
    "steady_state_population",
    "homogeneous_fwhm",
    "homogeneous_halfwidth",
    "envelope_rate",
    "g2_homogeneous",
    "bloch_matrix",
    "bloch_steady_state",
    "integrate_master_equation",
    "bloch_trajectory",
]

_T2_BOUND_RTOL = 1e-12


class ConvergenceError(RuntimeError):
    """A numerical procedure did not reach its tolerance.

    ``steps`` and ``residual`` carry the diagnostics of the last attempt.
    """

    def __init__(self, message: str, steps: int = 0, residual: float = float("nan")):
        super().__init__(f"{message} (steps={steps}, residual={residual:.3e})")
        self.steps = steps
        self.residual = residual


@dataclass(frozen=True)
class EmitterParams:
    """Emitter constants.

    Parameters
    ----------
    t1 : float
        Excited-state lifetime [s].
    t2 : float
        Optical coherence time [s], at most ``2 * t1``.
    center_freq : float
        Mean transition angular frequency [rad/s]. Zero means a frame
        rotating at the mean transition frequency.
    inhom_fwhm : float
        FWHM of the Gaussian transition-frequency distribution, in Hz.
    """

    t1: float
    t2: float
    center_freq: float = 0.0
    inhom_fwhm: float = 0.0

    def __post_init__(self):
        if not (self.t1 > 0) or not math.isfinite(self.t1):
            raise ValueError(f"t1 must be positive, got {self.t1!r}")
        if not (self.t2 > 0) or not math.isfinite(self.t2):
            raise ValueError(f"t2 must be positive, got {self.t2!r}")
        if self.t2 > 2.0 * self.t1 * (1.0 + _T2_BOUND_RTOL):
            raise ValueError(
                f"t2 = {self.t2!r} exceeds 2*t1 = {2 * self.t1!r}; "
                "coherence cannot outlive twice the population lifetime"
            )
        if not (self.inhom_fwhm >= 0):
            raise ValueError(f"inhom_fwhm must be >= 0, got {self.inhom_fwhm!r}")

    @property
    def gamma1(self) -> float:
        return 1.0 / self.t1

    @property
    def gamma2(self) -> float:
        return 1.0 / self.t2

    @classmethod
    def from_ratio(cls, t1: float, t2_over_t1: float, **kw) -> "EmitterParams":
        return cls(t1=t1, t2=t2_over_t1 * t1, **kw)


@dataclass(frozen=True)
class DriveParams:
    """Laser drive.

    ``rabi`` is the Rabi angular frequency, ``laser_freq`` the laser angular
    frequency. ``power_cal`` optionally maps optical power P [W] to the
    squared Rabi frequency through ``rabi**2 = power_cal * P``.
    """

    rabi: float
    laser_freq: float = 0.0
    power_cal: Optional[float] = None

    def __post_init__(self):
        if not (self.rabi >= 0) or not math.isfinite(self.rabi):
            raise ValueError(f"rabi must be >= 0, got {self.rabi!r}")
        if self.power_cal is not None and not (self.power_cal > 0):
            raise ValueError(f"power_cal must be > 0 when given, got {self.power_cal!r}")

    @classmethod
    def from_saturation(cls, s: float, emitter: EmitterParams, laser_freq: Optional[float] = None,
                        power_cal: Optional[float] = None) -> "DriveParams":
        """Drive whose saturation parameter ``rabi**2 * t1 * t2`` equals ``s``."""
        if s < 0:
            raise ValueError(f"saturation parameter must be >= 0, got {s!r}")
        lf = emitter.center_freq if laser_freq is None else laser_freq
        return cls(rabi=math.sqrt(s / (emitter.t1 * emitter.t2)), laser_freq=lf, power_cal=power_cal)

    @classmethod
    def from_power(cls, power: float, power_cal: float, laser_freq: float = 0.0) -> "DriveParams":
        if power < 0:
            raise ValueError(f"power must be >= 0, got {power!r}")
        return cls(rabi=math.sqrt(power_cal * power), laser_freq=laser_freq, power_cal=power_cal)

    def detuning(self, emitter: EmitterParams) -> float:
        """Laser minus mean transition angular frequency."""
        return self.laser_freq - emitter.center_freq


@dataclass(frozen=True)
class BlochState:
    """Single-time density-matrix state: excited population and coherence."""

    rho_ee: float
    coh_re: float
    coh_im: float

    def is_physical(self, tol: float = 1e-9) -> bool:
        if not (-tol <= self.rho_ee <= 1 + tol):
            return False
        return self.coh_re ** 2 + self.coh_im ** 2 <= self.rho_ee * (1 - self.rho_ee) + tol


def saturation_parameter(drive: DriveParams, emitter: EmitterParams) -> float:
    return drive.rabi ** 2 * emitter.t1 * emitter.t2


def homogeneous_halfwidth(drive: DriveParams, emitter: EmitterParams) -> float:
    """Power-broadened Lorentzian half width at half maximum [rad/s]."""
    return math.sqrt(emitter.t2 ** -2 + drive.rabi ** 2 * emitter.t1 / emitter.t2)


def homogeneous_fwhm(drive: DriveParams, emitter: EmitterParams) -> float:
    """Power-broadened homogeneous linewidth (FWHM) in Hz."""
    return math.sqrt(1.0 + saturation_parameter(drive, emitter)) / (math.pi * emitter.t2)


def envelope_rate(emitter: EmitterParams) -> float:
    """Damping rate of the Rabi-oscillation envelope, (T1 + T2) / (2 T1 T2)."""
    return (emitter.t1 + emitter.t2) / (2.0 * emitter.t1 * emitter.t2)


def steady_state_population(drive: DriveParams, emitter: EmitterParams, detuning):
    """Steady-state excited-state population.

    ``detuning`` may be a scalar or an array (rad/s); the result has the same
    shape. Bounded in [0, 1/2) and even in the detuning.
    """
    d = np.asarray(detuning, dtype=float)
    drive_term = drive.rabi ** 2 * emitter.t1 / emitter.t2
    out = 0.5 * drive_term / (d * d + emitter.t2 ** -2 + drive_term)
    return float(out) if out.ndim == 0 else out


def g2_homogeneous(tau, detuning, drive: DriveParams, emitter: EmitterParams):
    """Second-order correlation of the fluorescence at a fixed detuning.

    The oscillation frequency is the generalized Rabi frequency
    ``sqrt(rabi**2 + detuning**2)``; ``tau`` and ``detuning`` broadcast
    against each other. Negative delays are folded by symmetry.

    The expression is exact for T2 = T1 and an approximation otherwise;
    :func:`integrate_master_equation` gives the exact answer.
    """
    tau = np.abs(np.asarray(tau, dtype=float))
    w = np.hypot(drive.rabi, np.asarray(detuning, dtype=float))
    a = envelope_rate(emitter)
    # sin(w tau)/w, finite at w = 0
    sin_over_w = tau * np.sinc(w * tau / np.pi)
    out = 1.0 - np.exp(-a * tau) * (np.cos(w * tau) + a * sin_over_w)
    return float(out) if out.ndim == 0 else out


# --- master-equation oracle -------------------------------------------------

def bloch_matrix(drive: DriveParams, emitter: EmitterParams, detuning: float):
    """Affine Bloch equations ``dx/dt = A x + b`` for x = (rho_ee, Re rho_eg, Im rho_eg).

    Rotating frame with H = -detuning/2 sigma_z + rabi/2 sigma_x, radiative
    decay at 1/T1 and total coherence decay at 1/T2.
    """
    om, d = drive.rabi, float(detuning)
    g1, g2 = emitter.gamma1, emitter.gamma2
    A = np.array([
        [-g1, 0.0, -om],
        [0.0, -g2, -d],
        [om, d, -g2],
    ])
    b = np.array([0.0, 0.0, -0.5 * om])
    return A, b


def _rk4_step_matrix(A: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for the affine system, as a 4x4 map on (x, 1)."""
    M = np.zeros((4, 4))
    M[:3, :3] = A
    M[:3, 3] = b

    def f(y):
        return M @ y

    y = np.eye(4)
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _base_step(drive: DriveParams, emitter: EmitterParams, detuning: float) -> float:
    w = math.hypot(drive.rabi, detuning)
    scales = [emitter.t1, emitter.t2]
    if w > 0:
        scales.append(2 * math.pi / w)
    return min(scales) / 50.0


def bloch_steady_state(drive: DriveParams, emitter: EmitterParams, detuning: float) -> BlochState:
    """Fixed point of the Bloch equations.

    Integrates from the ground state for 50 max(T1, T2) with RK4 and accepts
    the end point if |dx/dt| < 1e-10 / T1; otherwise falls back to solving
    the 3x3 linear system directly.
    """
    A, b = bloch_matrix(drive, emitter, detuning)
    h = _base_step(drive, emitter, detuning)
    t_end = 50.0 * max(emitter.t1, emitter.t2)
    n = int(math.ceil(t_end / h))
    P = np.linalg.matrix_power(_rk4_step_matrix(A, b, t_end / n), n)
    x = P[:3, 3]  # start from x = 0 (ground state)
    residual = float(np.linalg.norm(A @ x + b))
    if residual < 1e-10 * emitter.gamma1:
        return BlochState(*x)
    try:
        x = np.linalg.solve(A, -b)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("Bloch steady state not found", steps=n, residual=residual) from exc
    return BlochState(*x)


def _propagate(A, b, tau_grid, h):
    """RK4 states on ``tau_grid`` starting from the ground state at tau = 0."""
    states = np.empty((len(tau_grid), 3))
    y = np.array([0.0, 0.0, 0.0, 1.0])
    t = 0.0
    cache = {}
    steps = 0
    for i, target in enumerate(tau_grid):
        span = target - t
        if span > 0:
            n = max(1, int(math.ceil(span / h - 1e-9)))
            key = (n, span)
            M = cache.get(key)
            if M is None:
                M = np.linalg.matrix_power(_rk4_step_matrix(A, b, span / n), n)
                cache[key] = M
            y = M @ y
            steps += n
            t = target
        states[i] = y[:3]
    return states, steps


def bloch_trajectory(drive: DriveParams, emitter: EmitterParams, detuning: float,
                     duration: float, step: Optional[float] = None) -> list[BlochState]:
    """Every RK4 step of the Bloch evolution from the ground state."""
    A, b = bloch_matrix(drive, emitter, detuning)
    h = step or _base_step(drive, emitter, detuning)
    n = int(math.ceil(duration / h))
    M = _rk4_step_matrix(A, b, duration / n)
    y = np.array([0.0, 0.0, 0.0, 1.0])
    out = [BlochState(0.0, 0.0, 0.0)]
    for _ in range(n):
        y = M @ y
        out.append(BlochState(*y[:3]))
    return out


def integrate_master_equation(drive: DriveParams, emitter: EmitterParams, detuning: float,
                              tau_grid, tol: float = 1e-6, max_halvings: int = 10) -> np.ndarray:
    """g2(tau) from the Bloch equations and the quantum regression theorem.

    After a detection the emitter is reset to the ground state (no
    population, no coherence); the conditional excited population, divided
    by its steady-state value, is g2. The RK4 step starts at
    min(T1, T2, 2 pi / W) / 50 and is halved until the curve changes by less
    than ``tol``.

    With no drive the steady population vanishes and g2 is undefined; the
    zero-drive limit of the closed form is returned instead.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1:
        raise ValueError("tau_grid must be one-dimensional")
    if np.any(tau < 0) or np.any(np.diff(tau) < 0):
        raise ValueError("tau_grid must be sorted ascending and nonnegative")
    if drive.rabi == 0:
        return np.asarray(g2_homogeneous(tau, detuning, drive, emitter), dtype=float)

    ss = bloch_steady_state(drive, emitter, detuning)
    A, b = bloch_matrix(drive, emitter, detuning)
    h = _base_step(drive, emitter, detuning)
    prev = None
    change = float("inf")
    steps = 0
    for _ in range(max_halvings + 1):
        states, steps = _propagate(A, b, tau, h)
        curve = states[:, 0] / ss.rho_ee
        if prev is not None:
            change = float(np.max(np.abs(curve - prev))) if len(curve) else 0.0
            if change < tol:
                return curve
        prev = curve
        h /= 2
    raise ConvergenceError("g2 curve did not converge under step halving", steps=steps, residual=change)
