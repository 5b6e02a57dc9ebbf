"""Monte Carlo spectral wandering and photon detection records.

The transition frequency jumps at the events of a Poisson process: dwell
times are exponential with mean ``t_sd`` and each new frequency offset is
drawn independently from the inhomogeneous distribution. Photons are an
inhomogeneous Poisson process whose rate follows the steady-state
population at the momentary detuning, split at random between the two
detectors of a Hanbury Brown-Twiss arrangement.

The rate model ignores everything faster than T1, in particular
antibunching; it is meant for correlations at delays much longer than
the lifetime.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .inhomogeneous import InhomDistribution
from .rng import substream, validate_seed
from .streams import TICKS_PER_SECOND, PhotonStream
from .tls import DriveParams, EmitterParams, steady_state_population

__all__ = [
    "JumpProcessParams",
    "SpectralTrajectory",
    "PhotonStream",
    "simulate_trajectory",
    "emission_rates",
    "simulate_photon_stream",
    "simulate_poisson_stream",
    "MAX_PHOTONS_PER_LIFETIME",
]

MAX_PHOTONS_PER_LIFETIME = 0.1
JUMP_BLOCK = 1 << 16
SEGMENT_BLOCK = 1 << 16
POISSON_BLOCK_EVENTS = 1 << 20


@dataclass(frozen=True)
class JumpProcessParams:
    """Spectral jump process.

    ``t_sd`` is the mean dwell time between jumps. For this memoryless
    process the bunching decays as exp(-tau / t_sd), so it reaches half its
    initial excess at ``t_sd * ln 2``; :meth:`from_half_decay` builds the
    process from that half-decay time instead.

    ``t_sd2``/``weight2`` are reserved for a second, slower process and
    must stay unset.
    """

    t_sd: float
    dist: InhomDistribution
    seed: int = 0
    t_sd2: Optional[float] = None
    weight2: Optional[float] = None

    def __post_init__(self):
        if not (self.t_sd > 0) or not math.isfinite(self.t_sd):
            raise ValueError(f"t_sd must be positive, got {self.t_sd!r}")
        validate_seed(self.seed)

    @classmethod
    def from_half_decay(cls, half_decay: float, dist: InhomDistribution, seed: int = 0) -> "JumpProcessParams":
        return cls(t_sd=half_decay / math.log(2.0), dist=dist, seed=seed)

    @property
    def half_decay_time(self) -> float:
        return self.t_sd * math.log(2.0)


@dataclass(frozen=True, eq=False)
class SpectralTrajectory:
    """Piecewise-constant transition-frequency offset.

    ``detunings[0]`` holds from t = 0 to ``jump_times[0]``, ``detunings[k]``
    from ``jump_times[k-1]`` on. Offsets are in rad/s from the emitter's
    center frequency.
    """

    jump_times: np.ndarray
    detunings: np.ndarray
    duration: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        dt = np.asarray(self.detunings, dtype=float)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "detunings", dt)
        if not (self.duration > 0):
            raise ValueError("duration must be positive")
        if len(dt) != len(jt) + 1:
            raise ValueError("need exactly one more detuning than jump times")
        if jt.size:
            if jt[0] <= 0 or not np.all(jt[1:] > jt[:-1]) or jt[-1] >= self.duration:
                raise ValueError("jump times must be strictly ascending inside (0, duration)")

    @property
    def segment_starts(self) -> np.ndarray:
        return np.concatenate([[0.0], self.jump_times])

    @property
    def segment_ends(self) -> np.ndarray:
        return np.concatenate([self.jump_times, [self.duration]])

    def __eq__(self, other):
        if not isinstance(other, SpectralTrajectory):
            return NotImplemented
        return (self.duration == other.duration and np.array_equal(self.jump_times, other.jump_times)
                and np.array_equal(self.detunings, other.detunings))


def simulate_trajectory(params: JumpProcessParams, duration: float) -> SpectralTrajectory:
    """Draw a spectral trajectory of the given length [s].

    Jumps are generated in fixed blocks, each from its own substream, so
    the result depends only on ``params.seed``.
    """
    if not (duration > 0):
        raise ValueError("duration must be positive")
    if params.t_sd2 is not None or params.weight2 is not None:
        raise NotImplementedError("a second spectral-diffusion process is reserved but not modeled")
    times, offsets = [], []
    t0 = 0.0
    block = 0
    while t0 < duration:
        rng = substream(params.seed, "trajectory", block)
        dwell = rng.exponential(params.t_sd, JUMP_BLOCK)
        offsets.append(params.dist.sample(rng, JUMP_BLOCK))
        ends = t0 + np.cumsum(dwell)
        times.append(ends)
        t0 = ends[-1]
        block += 1
    ends = np.concatenate(times)
    n_jumps = int(np.searchsorted(ends, duration, side="left"))
    # every segment that starts before `duration` keeps its offset
    return SpectralTrajectory(ends[:n_jumps], np.concatenate(offsets)[:n_jumps + 1], duration)


def emission_rates(traj: SpectralTrajectory, drive: DriveParams, emitter: EmitterParams,
                   rate_scale: float, laser_freq: Optional[float] = None) -> np.ndarray:
    """Detected count rate [1/s] in every trajectory segment."""
    lf = drive.laser_freq if laser_freq is None else laser_freq
    laser_offset = lf - emitter.center_freq
    return rate_scale * steady_state_population(drive, emitter, laser_offset - traj.detunings)


def _sample_block(starts, ends, rates, rng, split):
    """Photons of one block of constant-rate segments, split into two channels."""
    mass = rates * (ends - starts)
    cum = np.cumsum(mass)
    total = float(cum[-1]) if len(cum) else 0.0
    n = int(rng.poisson(total)) if total > 0 else 0
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    # sorted uniform positions in integrated-rate space from exponential gaps
    gaps = rng.standard_exponential(n + 1)
    pos = np.cumsum(gaps)
    pos = pos[:n] * (total / pos[-1])
    seg = np.minimum(np.searchsorted(cum, pos, side="right"), len(cum) - 1)
    before = cum[seg] - mass[seg]
    t = starts[seg] + (pos - before) / rates[seg]
    ticks = np.floor(t * TICKS_PER_SECOND).astype(np.int64)
    to_a = rng.random(n) < split
    return ticks[to_a], ticks[~to_a]


def _make_strict(chunks, duration_ticks):
    """Concatenate ascending tick chunks, nudging equal ticks up by one."""
    out = []
    last = -1
    for ticks in chunks:
        if not len(ticks):
            continue
        idx = np.arange(len(ticks), dtype=np.int64)
        shifted = ticks - idx
        shifted[0] = max(shifted[0], last + 1)
        ticks = np.maximum.accumulate(shifted) + idx
        last = int(ticks[-1])
        out.append(ticks)
    ticks = np.concatenate(out) if out else np.empty(0, dtype=np.int64)
    return ticks[ticks < duration_ticks]


def _two_channel(blocks, rng_for_block, split, duration, threads):
    def work(i):
        starts, ends, rates = blocks(i)
        return _sample_block(starts, ends, rates, rng_for_block(i), split)

    n_blocks = blocks.count
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n_blocks)))
    else:
        results = [work(i) for i in range(n_blocks)]
    duration_ticks = int(round(duration * TICKS_PER_SECOND))
    a = _make_strict([r[0] for r in results], duration_ticks)
    b = _make_strict([r[1] for r in results], duration_ticks)
    return PhotonStream(a, "A", duration_ticks), PhotonStream(b, "B", duration_ticks)


class _SegmentBlocks:
    def __init__(self, starts, ends, rates, size):
        self.starts, self.ends, self.rates, self.size = starts, ends, rates, size
        self.count = max(1, -(-len(starts) // size))

    def __call__(self, i):
        s = slice(i * self.size, (i + 1) * self.size)
        return self.starts[s], self.ends[s], self.rates[s]


def _check_split(split):
    if not 0 < split < 1:
        raise ValueError(f"split must lie strictly between 0 and 1, got {split!r}")


def simulate_photon_stream(traj: SpectralTrajectory, drive: DriveParams, emitter: EmitterParams,
                           rate_scale: float, seed: int, split: float = 0.5,
                           laser_freq: Optional[float] = None, threads: int = 1):
    """Detection records of both HBT channels for a resonantly driven emitter.

    The detected rate is ``rate_scale`` times the steady-state population at
    the momentary detuning. ``rate_scale`` must keep the rate below
    0.1 photon per lifetime, where a rate description holds. Blocks of
    segments use their own random substreams, so ``threads`` does not
    change the output.
    """
    _check_split(split)
    if not (rate_scale > 0):
        raise ValueError("rate_scale must be positive")
    peak = rate_scale * steady_state_population(drive, emitter, 0.0) * emitter.t1
    if peak > MAX_PHOTONS_PER_LIFETIME:
        raise ValueError(
            f"rate_scale gives {peak:.3g} photons per lifetime on resonance; "
            f"the rate model needs <= {MAX_PHOTONS_PER_LIFETIME}"
        )
    validate_seed(seed)
    rates = emission_rates(traj, drive, emitter, rate_scale, laser_freq)
    blocks = _SegmentBlocks(traj.segment_starts, traj.segment_ends, rates, SEGMENT_BLOCK)
    return _two_channel(blocks, lambda i: substream(seed, "photons", i), split, traj.duration, threads)


def simulate_poisson_stream(rate: float, duration: float, seed: int, split: float = 0.5,
                            threads: int = 1):
    """Both HBT channels for a constant total detection rate [1/s].

    This is the record of an emitter whose intensity does not follow its
    transition frequency, e.g. under non-resonant pumping.
    """
    _check_split(split)
    if not (rate > 0) or not (duration > 0):
        raise ValueError("rate and duration must be positive")
    validate_seed(seed)
    step = POISSON_BLOCK_EVENTS / rate
    n = max(1, int(math.ceil(duration / step)))
    starts = np.arange(n) * step
    ends = np.minimum(starts + step, duration)
    rates = np.full(n, float(rate))
    blocks = _SegmentBlocks(starts, ends, rates, 1)
    return _two_channel(blocks, lambda i: substream(seed, "poisson", i), split, duration, threads)
